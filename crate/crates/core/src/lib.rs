//! Change-blindness redirected walking: virtual rooms larger than the tracked
//! space, with walls moved only while out of the user's view.

// `!(x > 0.0)` guards are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
#[macro_use]
mod test_util;

pub mod agent;
pub mod gain;
pub mod geometry;
pub mod layout;
pub mod redirection;
pub mod rng;
pub mod session;
pub mod simulator;

pub use gain::{
    detection_range, fit_psychometric, max_imperceptible_step, plan_threshold_session, pse, thresholds_at,
    wall_movement_gain, Direction, DistanceClass, GainThresholds, PsychometricFit, ResponseSample, Thresholds,
};
pub use geometry::{Bounds, Rect, Side, UserPose, Vec2, WallSegment};
pub use layout::{parse_layout, validate, Door, DoorState, RealSpace, Room, RoomId, VirtualLayout};
pub use redirection::{init_navigation, DoorCommand, EventKind, NavState, Phase, RedirectionConfig, RedirectionEvent};

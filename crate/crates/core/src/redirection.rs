//! The navigation state machine: restore the occupied room to its original
//! size at the center of the tracked space by moving only unseen walls, then
//! compress every neighbor into the tracked space behind closed doors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain::{max_imperceptible_step, Direction, GainThresholds};
use crate::geometry::{
    contains, fully_outside_fov, nearest_parallel_side, segment_outside_rect, shortest_distance, Bounds, Rect, Side,
    UserPose, Vec2, WallSegment,
};
use crate::layout::{validate, DoorState, LayoutViolation, RealSpace, RoomId, VirtualLayout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedirectionConfig {
    /// Compression never shrinks a room below this half-extent on either axis.
    pub min_half_extent: f64,
    /// Restore counts as complete once every wall is this close to its goal.
    pub converge_tol: f64,
}

impl Default for RedirectionConfig {
    fn default() -> Self {
        RedirectionConfig {
            min_half_extent: 0.25,
            converge_tol: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Restoring,
    Compressed,
}

/// Where the occupied room has to end up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestoreTarget {
    /// Original dims over current dims, per axis.
    pub scale: Vec2,
    /// Tracked-space center minus the room's current center.
    pub translation: Vec2,
    pub goal: Bounds,
}

impl RestoreTarget {
    pub fn goal_wall(&self, side: Side) -> WallSegment {
        self.goal.wall(side)
    }

    pub fn is_identity(&self) -> bool {
        self.scale == Vec2::new(1.0, 1.0) && self.translation == Vec2::ZERO
    }
}

/// Restore target for a room of original size `width` x `depth` currently
/// occupying `current`.
pub fn restore_target(current: &Rect, width: f64, depth: f64, real: &RealSpace) -> RestoreTarget {
    let goal = Rect::from_dims(real.center(), width, depth);
    RestoreTarget {
        scale: Vec2::new(width / current.width(), depth / current.depth()),
        translation: real.center() - current.center,
        goal: Bounds::of(&goal),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    EnterRoom,
    RestoreStep,
    RestoreComplete,
    Compress,
    CompressDeferred,
    DoorOpen,
    DoorClose,
    Violation,
    Pose,
    CoinCollected,
}

/// One trace record. Fields that do not apply to a kind are `None` and
/// serialize as `null`, so every line carries the same keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedirectionEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub room: Option<RoomId>,
    pub wall: Option<Side>,
    pub t_before: Option<f64>,
    pub t_after: Option<f64>,
    pub gain: Option<f64>,
    pub displacement: Option<f64>,
    pub pos: Option<[f64; 2]>,
    pub heading: Option<f64>,
    pub fov: Option<f64>,
    pub seg: Option<[[f64; 2]; 2]>,
    pub seg_to: Option<[[f64; 2]; 2]>,
    pub rect: Option<[f64; 4]>,
    pub door: Option<usize>,
    pub epoch: Option<u32>,
    pub reason: Option<String>,
}

impl RedirectionEvent {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        RedirectionEvent {
            tick,
            kind,
            room: None,
            wall: None,
            t_before: None,
            t_after: None,
            gain: None,
            displacement: None,
            pos: None,
            heading: None,
            fov: None,
            seg: None,
            seg_to: None,
            rect: None,
            door: None,
            epoch: None,
            reason: None,
        }
    }

    fn with_room(mut self, id: &RoomId) -> Self {
        self.room = Some(id.clone());
        self
    }

    fn with_pose(mut self, pose: &UserPose) -> Self {
        self.pos = Some(pose.position.to_array());
        self.heading = Some(pose.heading);
        self.fov = Some(pose.fov_half_angle);
        self
    }

    fn with_rect(mut self, r: &Rect) -> Self {
        self.rect = Some(r.to_array());
        self
    }

    fn with_reason(mut self, reason: &str) -> Self {
        self.reason = Some(reason.to_string());
        self
    }

    pub fn violation(tick: u64, reason: &str) -> Self {
        RedirectionEvent::new(tick, EventKind::Violation).with_reason(reason)
    }
}

/// Violation reasons used in traces.
pub mod reason {
    pub const BOUNDARY: &str = "boundary";
    pub const POSE_OUTSIDE_ROOM: &str = "pose_outside_room";
    pub const MIN_EXTENT: &str = "min_extent";
    pub const DOOR_REJECTED: &str = "door_rejected";
    pub const NOT_NEIGHBOR: &str = "not_neighbor";
    pub const DOOR_CLOSED: &str = "door_closed";
    pub const NOT_COMPRESSED: &str = "not_compressed";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoorCommand {
    pub door: usize,
    pub state: DoorState,
}

#[derive(Debug, Error)]
pub enum NavError {
    #[error("layout does not fit the tracked space: {}", join(.0))]
    InvalidLayout(Vec<LayoutViolation>),
    #[error("unknown start room {0:?}")]
    UnknownRoom(String),
}

fn join(v: &[LayoutViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Per-wall accounting for the current continuous out-of-view interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct WallEpoch {
    out_of_view: bool,
    start_distance: f64,
    spent: f64,
    moved: bool,
    /// Number of epochs in which this wall has moved since room entry.
    ordinal: u32,
}

/// Budget view of one wall of the occupied room, for overlays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallStatus {
    pub side: Side,
    pub goal: [[f64; 2]; 2],
    pub remaining: f64,
    pub out_of_view: bool,
    /// Displacement still allowed in the current epoch (0 while visible).
    pub budget: f64,
}

#[derive(Clone, Debug)]
pub struct NavState {
    layout: VirtualLayout,
    config: RedirectionConfig,
    placements: Vec<Bounds>,
    doors: Vec<DoorState>,
    phase: Phase,
    current: usize,
    target: RestoreTarget,
    epochs: [WallEpoch; 4],
    tick: u64,
    entered_tick: u64,
    restore_logged: bool,
    deferred_logged: bool,
}

/// Sets up the start room at the center of the tracked space and compresses
/// its neighbors. Returns the state and the tick-0 events.
pub fn init_navigation(
    layout: &VirtualLayout,
    start_room: &RoomId,
    config: RedirectionConfig,
) -> Result<(NavState, Vec<RedirectionEvent>), NavError> {
    let violations = validate(layout, &layout.real_space);
    if !violations.is_empty() {
        return Err(NavError::InvalidLayout(violations));
    }
    let current = layout
        .room_index(start_room)
        .ok_or_else(|| NavError::UnknownRoom(start_room.0.clone()))?;
    let real = layout.real_space;
    let room = &layout.rooms[current];
    let placed = room.original_at(real.center());
    let mut placements: Vec<Bounds> = layout.rooms.iter().map(|r| Bounds::of(&r.current_rect)).collect();
    placements[current] = Bounds::of(&placed);
    let mut state = NavState {
        layout: layout.clone(),
        config,
        placements,
        doors: vec![DoorState::Closed; layout.doors.len()],
        phase: Phase::Compressed,
        current,
        target: restore_target(&placed, room.width, room.depth, &real),
        epochs: [WallEpoch::default(); 4],
        tick: 0,
        entered_tick: 0,
        restore_logged: true,
        deferred_logged: false,
    };
    let mut events = vec![RedirectionEvent::new(0, EventKind::EnterRoom)
        .with_room(&room.id)
        .with_rect(&placed)];
    events.extend(state.compress_neighbors());
    Ok((state, events))
}

/// Maps a virtual-map point into a room's tracked-space placement,
/// proportionally along each axis.
fn map_point(virtual_rect: &Rect, placed: &Bounds, p: Vec2) -> Vec2 {
    let u = (p.x - virtual_rect.left()) / virtual_rect.width();
    let v = (p.y - virtual_rect.bottom()) / virtual_rect.depth();
    Vec2::new(placed.left + u * placed.width(), placed.bottom + v * placed.depth())
}

impl NavState {
    pub fn layout(&self) -> &VirtualLayout {
        &self.layout
    }

    pub fn config(&self) -> &RedirectionConfig {
        &self.config
    }

    pub fn real_space(&self) -> &RealSpace {
        &self.layout.real_space
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn current_room(&self) -> &RoomId {
        &self.layout.rooms[self.current].id
    }

    pub fn placement(&self, idx: usize) -> Bounds {
        self.placements[idx]
    }

    pub fn current_bounds(&self) -> Bounds {
        self.placements[self.current]
    }

    pub fn target(&self) -> &RestoreTarget {
        &self.target
    }

    pub fn door_state(&self, door: usize) -> DoorState {
        self.doors[door]
    }

    pub fn door_states(&self) -> &[DoorState] {
        &self.doors
    }

    /// Whether the door touches the occupied room.
    pub fn is_current_door(&self, door: usize) -> bool {
        self.layout.doors.get(door).is_some_and(|d| {
            let id = self.current_room();
            &d.room_a == id || &d.room_b == id
        })
    }

    /// Room on the far side of a door of the occupied room.
    pub fn door_target(&self, door: usize) -> Option<usize> {
        let d = self.layout.doors.get(door)?;
        d.other(self.current_room()).and_then(|id| self.layout.room_index(id))
    }

    /// Door opening in tracked space, drawn on the occupied room when the
    /// door touches it and on its first room otherwise.
    pub fn door_segment(&self, door: usize) -> WallSegment {
        let d = &self.layout.doors[door];
        let idx = if self.is_current_door(door) {
            self.current
        } else {
            self.layout.room_index(&d.room_a).expect("validated door")
        };
        let vr = &self.layout.rooms[idx].virtual_rect;
        let placed = &self.placements[idx];
        let a = map_point(vr, placed, d.segment.a);
        let b = map_point(vr, placed, d.segment.b);
        let side = if self.layout.rooms[idx].id == d.room_a {
            d.side
        } else {
            d.side.opposite()
        };
        WallSegment::new(a, b, side)
    }

    pub fn all_doors_closed(&self) -> bool {
        self.layout
            .doors_of(self.current)
            .iter()
            .all(|&i| self.doors[i] == DoorState::Closed)
    }

    pub fn restore_converged(&self) -> bool {
        let b = self.current_bounds();
        Side::ALL
            .iter()
            .all(|&s| (b.get(s) - self.target.goal.get(s)).abs() < self.config.converge_tol)
    }

    /// Budget view of each wall of the occupied room.
    pub fn wall_status(&self, pose: &UserPose, thresholds: &GainThresholds) -> [WallStatus; 4] {
        let b = self.current_bounds();
        Side::ALL.map(|side| {
            let e = &self.epochs[side.index()];
            let w = b.get(side);
            let goal = self.target.goal.get(side);
            let budget = if e.out_of_view && self.phase == Phase::Restoring {
                let dir = direction(side, w, goal, pose.position);
                (max_imperceptible_step(e.start_distance, dir, thresholds) - e.spent).max(0.0)
            } else {
                0.0
            };
            WallStatus {
                side,
                goal: self.target.goal_wall(side).to_array(),
                remaining: (goal - w).abs(),
                out_of_view: e.out_of_view,
                budget,
            }
        })
    }

    /// Abruptly compresses every neighbor of the occupied room into the
    /// tracked space. Deferred while any door of the occupied room is open.
    pub fn compress_neighbors(&mut self) -> Vec<RedirectionEvent> {
        let tick = self.tick;
        if !self.all_doors_closed() {
            return vec![
                RedirectionEvent::new(tick, EventKind::CompressDeferred).with_room(&self.layout.rooms[self.current].id)
            ];
        }
        let real = self.layout.real_space.rect;
        let floor = self.config.min_half_extent;
        let cur = &self.layout.rooms[self.current];
        let shift = self.placements[self.current].center() - cur.virtual_rect.center;
        let mut events = Vec::new();
        for q in self.layout.neighbor_indices(self.current) {
            let room = &self.layout.rooms[q];
            let placed = Bounds::of(&room.virtual_rect).translated(shift);
            let placed_rect = placed.rect();
            let mut fin = placed;
            let mut moves: Vec<(Side, f64)> = Vec::new();
            let mut floor_hit = Vec::new();
            for side in Side::ALL {
                let seg = placed.wall(side);
                if !segment_outside_rect(&real, &seg) {
                    continue;
                }
                let (real_side, _) = nearest_parallel_side(&real, &seg);
                let mut coord = real.wall_coord(real_side);
                // Keep at least the minimum extent against the opposite wall.
                let opp = fin.get(side.opposite());
                let min_extent = 2.0 * floor;
                let extent = match side {
                    Side::North | Side::East => coord - opp,
                    Side::South | Side::West => opp - coord,
                };
                if extent < min_extent {
                    coord = match side {
                        Side::North | Side::East => opp + min_extent,
                        Side::South | Side::West => opp - min_extent,
                    };
                    floor_hit.push(side);
                }
                fin.set(side, coord);
                moves.push((side, coord));
            }
            if fin == self.placements[q] {
                continue;
            }
            let fin_rect = fin.rect();
            for (side, coord) in moves {
                let seg = placed.wall(side);
                let to = seg.moved_to(coord);
                let mut ev = RedirectionEvent::new(tick, EventKind::Compress)
                    .with_room(&room.id)
                    .with_rect(&fin_rect);
                ev.wall = Some(side);
                ev.displacement = Some((coord - placed.get(side)).abs());
                ev.seg = Some(seg.to_array());
                ev.seg_to = Some(to.to_array());
                events.push(ev);
            }
            for side in floor_hit {
                let mut ev = RedirectionEvent::violation(tick, reason::MIN_EXTENT)
                    .with_room(&room.id)
                    .with_rect(&fin_rect);
                ev.wall = Some(side);
                events.push(ev);
            }
            if !contains(&real, &fin_rect) {
                tracing::warn!(room = %room.id, "compressed room not contained in the tracked space");
            }
            debug_assert!(placed_rect.is_valid());
            self.placements[q] = fin;
        }
        self.phase = Phase::Compressed;
        events
    }

    /// Switches the occupied room to `room` if it is a neighbor reached
    /// through an open door while compressed; otherwise logs a violation.
    pub fn on_room_enter(&mut self, room: &RoomId) -> Vec<RedirectionEvent> {
        let tick = self.tick;
        let Some(idx) = self.layout.room_index(room) else {
            return vec![RedirectionEvent::violation(tick, reason::NOT_NEIGHBOR).with_room(room)];
        };
        let cur_id = self.current_room().clone();
        let doors: Vec<usize> = self
            .layout
            .doors_of(self.current)
            .into_iter()
            .filter(|&i| self.layout.doors[i].connects(&cur_id, room))
            .collect();
        if doors.is_empty() {
            return vec![RedirectionEvent::violation(tick, reason::NOT_NEIGHBOR).with_room(room)];
        }
        if !doors.iter().any(|&i| self.doors[i] == DoorState::Open) {
            return vec![RedirectionEvent::violation(tick, reason::DOOR_CLOSED).with_room(room)];
        }
        if self.phase != Phase::Compressed {
            return vec![RedirectionEvent::violation(tick, reason::NOT_COMPRESSED).with_room(room)];
        }
        self.current = idx;
        self.phase = Phase::Restoring;
        let r = &self.layout.rooms[idx];
        let placed = self.placements[idx].rect();
        self.target = restore_target(&placed, r.width, r.depth, &self.layout.real_space);
        self.epochs = [WallEpoch::default(); 4];
        self.entered_tick = tick;
        self.restore_logged = false;
        self.deferred_logged = false;
        vec![RedirectionEvent::new(tick, EventKind::EnterRoom)
            .with_room(&r.id)
            .with_rect(&placed)]
    }

    /// Moves each unseen wall of the occupied room toward its goal within
    /// the current epoch's imperceptible budget.
    pub fn restore_step(&mut self, pose: &UserPose, thresholds: &GainThresholds) -> Vec<RedirectionEvent> {
        let tick = self.tick;
        let mut events = Vec::new();
        if self.phase != Phase::Restoring {
            return events;
        }
        let room_id = self.layout.rooms[self.current].id.clone();
        if !self.current_bounds().contains_point(pose.position) {
            events.push(
                RedirectionEvent::violation(tick, reason::POSE_OUTSIDE_ROOM)
                    .with_room(&room_id)
                    .with_pose(pose),
            );
            return events;
        }
        // Judge visibility with a hair-wider wedge so a wall on the edge of
        // view is never moved.
        let guarded = UserPose {
            fov_half_angle: pose.fov_half_angle + VIEW_GUARD,
            ..*pose
        };
        for side in Side::ALL {
            let bounds = self.placements[self.current];
            let seg = bounds.wall(side);
            let epoch = &mut self.epochs[side.index()];
            if !fully_outside_fov(&guarded, &seg) {
                epoch.out_of_view = false;
                continue;
            }
            let t_before = shortest_distance(pose.position, &seg);
            if !epoch.out_of_view {
                *epoch = WallEpoch {
                    out_of_view: true,
                    start_distance: t_before,
                    spent: 0.0,
                    moved: false,
                    ordinal: epoch.ordinal,
                };
            }
            let w = bounds.get(side);
            let goal = self.target.goal.get(side);
            let remaining = (goal - w).abs();
            if remaining == 0.0 || !(t_before > 0.0) {
                continue;
            }
            let dir = direction(side, w, goal, pose.position);
            let budget = max_imperceptible_step(epoch.start_distance, dir, thresholds) - epoch.spent;
            let cap = max_imperceptible_step(t_before, dir, thresholds);
            let allowed = budget.min(cap);
            if !(allowed > 0.0) {
                continue;
            }
            let full = if remaining <= allowed {
                goal
            } else {
                w + allowed * (goal - w).signum()
            };
            let Some(coord) = last_hidden_coord(&guarded, &seg, w, full) else {
                continue;
            };
            let moved = (coord - w).abs();
            let to = seg.moved_to(coord);
            let t_after = shortest_distance(pose.position, &to);
            epoch.spent += moved;
            if !epoch.moved {
                epoch.moved = true;
                epoch.ordinal += 1;
            }
            let ordinal = epoch.ordinal;
            self.placements[self.current].set(side, coord);

            let mut ev = RedirectionEvent::new(tick, EventKind::RestoreStep)
                .with_room(&room_id)
                .with_pose(pose);
            ev.wall = Some(side);
            ev.t_before = Some(t_before);
            ev.t_after = Some(t_after);
            ev.gain = Some(t_after / t_before);
            ev.displacement = Some(moved);
            ev.seg = Some(seg.to_array());
            ev.seg_to = Some(to.to_array());
            ev.epoch = Some(ordinal);
            events.push(ev);
        }
        events
    }

    /// Advances one step: door commands, boundary and room-entry checks,
    /// restore or compression, then a pose record.
    pub fn tick(
        &mut self,
        pose: &UserPose,
        commands: &[DoorCommand],
        thresholds: &GainThresholds,
    ) -> Vec<RedirectionEvent> {
        self.tick += 1;
        let tick = self.tick;
        let mut events = Vec::new();

        if self.phase == Phase::Restoring && tick == self.entered_tick + 1 {
            for i in self.layout.doors_of(self.current) {
                if self.doors[i] == DoorState::Open {
                    self.doors[i] = DoorState::Closed;
                    let mut ev = RedirectionEvent::new(tick, EventKind::DoorClose).with_reason("auto");
                    ev.door = Some(i);
                    events.push(ev);
                }
            }
        }

        for cmd in commands {
            events.extend(self.apply_door_command(cmd));
        }

        if !self.layout.real_space.rect.contains_point(pose.position) {
            events.push(RedirectionEvent::violation(tick, reason::BOUNDARY).with_pose(pose));
        }

        if !self.current_bounds().contains_point(pose.position) {
            let entered = self
                .layout
                .doors_of(self.current)
                .into_iter()
                .filter(|&i| self.doors[i] == DoorState::Open)
                .filter_map(|i| self.door_target(i))
                .find(|&q| self.placements[q].contains_point(pose.position));
            match entered {
                Some(q) => {
                    let id = self.layout.rooms[q].id.clone();
                    events.extend(self.on_room_enter(&id));
                }
                None => events.push(
                    RedirectionEvent::violation(tick, reason::POSE_OUTSIDE_ROOM)
                        .with_room(self.current_room())
                        .with_pose(pose),
                ),
            }
        }

        if self.phase == Phase::Restoring {
            if self.current_bounds().contains_point(pose.position) {
                events.extend(self.restore_step(pose, thresholds));
            }
            if self.restore_converged() {
                if !self.restore_logged {
                    self.restore_logged = true;
                    events.push(
                        RedirectionEvent::new(tick, EventKind::RestoreComplete)
                            .with_room(self.current_room())
                            .with_rect(&self.current_bounds().rect()),
                    );
                }
                if self.all_doors_closed() {
                    events.extend(self.compress_neighbors());
                } else if !self.deferred_logged {
                    self.deferred_logged = true;
                    events
                        .push(RedirectionEvent::new(tick, EventKind::CompressDeferred).with_room(self.current_room()));
                }
            }
        }

        events.push(
            RedirectionEvent::new(tick, EventKind::Pose)
                .with_room(self.current_room())
                .with_pose(pose),
        );
        events
    }

    fn apply_door_command(&mut self, cmd: &DoorCommand) -> Option<RedirectionEvent> {
        let tick = self.tick;
        let reject = |why: &str| {
            let mut ev = RedirectionEvent::violation(tick, reason::DOOR_REJECTED);
            ev.door = Some(cmd.door);
            ev.reason = Some(format!("{}: {why}", reason::DOOR_REJECTED));
            Some(ev)
        };
        if !self.is_current_door(cmd.door) {
            return reject("not a door of the current room");
        }
        if self.doors[cmd.door] == cmd.state {
            return None;
        }
        let kind = match cmd.state {
            DoorState::Open if self.phase != Phase::Compressed => {
                return reject("restore in progress");
            }
            DoorState::Open => EventKind::DoorOpen,
            DoorState::Closed => EventKind::DoorClose,
        };
        self.doors[cmd.door] = cmd.state;
        let mut ev = RedirectionEvent::new(tick, kind);
        ev.door = Some(cmd.door);
        Some(ev)
    }
}

/// Extra half-angle, in radians, added to the view wedge for movement decisions.
const VIEW_GUARD: f64 = 1e-9;

/// Toward when the goal lies on the user's side of the wall.
fn direction(side: Side, wall: f64, goal: f64, user: Vec2) -> Direction {
    let u = if side.is_horizontal() { user.y } else { user.x };
    if (goal - wall) * (u - wall) > 0.0 {
        Direction::Toward
    } else {
        Direction::Away
    }
}

/// Furthest coordinate between `from` and `to` at which `seg` stays out of
/// view, or `None` if even a tiny move would show it.
fn last_hidden_coord(pose: &UserPose, seg: &WallSegment, from: f64, to: f64) -> Option<f64> {
    if fully_outside_fov(pose, &seg.moved_to(to)) {
        return Some(to);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if fully_outside_fov(pose, &seg.moved_to(from + mid * (to - from))) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let coord = from + lo * (to - from);
    ((coord - from).abs() > 1e-9).then_some(coord)
}

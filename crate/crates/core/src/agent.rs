//! Scripted users: kinematic limits, observations, the coin task and the
//! policies that drive headless runs.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Bounds, Rect, Side, UserPose, Vec2, WallSegment};
use crate::layout::DoorState;
use crate::redirection::{DoorCommand, NavState, Phase};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kinematics {
    /// Meters per second.
    pub speed_cap: f64,
    /// Radians per second.
    pub turn_cap: f64,
    /// Seconds per tick.
    pub dt: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            speed_cap: 1.4,
            turn_cap: PI,
            dt: 1.0 / 30.0,
        }
    }
}

impl Kinematics {
    pub fn max_step(&self) -> f64 {
        self.speed_cap * self.dt
    }

    pub fn max_turn(&self) -> f64 {
        self.turn_cap * self.dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// World-frame displacement for this tick.
    pub movement: Vec2,
    /// Counterclockwise heading change for this tick.
    pub turn: f64,
    pub door_command: Option<DoorCommand>,
}

impl Action {
    pub const IDLE: Action = Action {
        movement: Vec2::ZERO,
        turn: 0.0,
        door_command: None,
    };

    /// The action with movement and turn cut to the kinematic caps.
    pub fn clamped(self, k: &Kinematics) -> Action {
        let turn = if self.turn.is_finite() {
            self.turn.clamp(-k.max_turn(), k.max_turn())
        } else {
            0.0
        };
        let movement = if self.movement.is_finite() {
            self.movement.clamp_length(k.max_step())
        } else {
            Vec2::ZERO
        };
        Action {
            movement,
            turn,
            door_command: self.door_command,
        }
    }

    pub fn within_caps(&self, k: &Kinematics) -> bool {
        // Tiny slack for the rounding in clamp_length's rescale.
        self.movement.length() <= k.max_step() * (1.0 + 1e-12) && self.turn.abs() <= k.max_turn()
    }
}

/// A door of the occupied room as the user sees it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoorView {
    pub index: usize,
    pub state: DoorState,
    /// Opening in tracked space.
    pub segment: WallSegment,
    /// Wall of the occupied room carrying the door.
    pub side: Side,
    pub target_room: usize,
    pub target_rect: Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub tick: u64,
    pub pose: UserPose,
    pub room: usize,
    pub room_rect: Rect,
    pub phase: Phase,
    pub doors: Vec<DoorView>,
    /// Remaining coins of the occupied room, in tracked space.
    pub coins: Vec<Vec2>,
}

impl Observation {
    pub fn capture(nav: &NavState, pose: UserPose, coins: Vec<Vec2>) -> Observation {
        let room = nav.current_index();
        let doors = nav
            .layout()
            .doors_of(room)
            .into_iter()
            .filter_map(|i| {
                let target_room = nav.door_target(i)?;
                let segment = nav.door_segment(i);
                Some(DoorView {
                    index: i,
                    state: nav.door_state(i),
                    segment,
                    side: segment.side,
                    target_room,
                    target_rect: nav.placement(target_room).rect(),
                })
            })
            .collect();
        Observation {
            tick: nav.tick_count(),
            pose,
            room,
            room_rect: nav.current_bounds().rect(),
            phase: nav.phase(),
            doors,
            coins,
        }
    }
}

/// Up to `count` points uniform over `room` shrunk by `margin`, capped by how
/// many coins `spacing` apart fit. Fewer than requested logs a warning.
pub fn spawn_coins(room: &Rect, count: usize, margin: f64, spacing: f64, rng: &mut StreamRng) -> Vec<Vec2> {
    let sw = room.width() - 2.0 * margin;
    let sd = room.depth() - 2.0 * margin;
    let capacity = if sw >= 0.0 && sd >= 0.0 && spacing > 0.0 {
        ((sw / spacing).floor() as usize + 1) * ((sd / spacing).floor() as usize + 1)
    } else {
        0
    };
    let n = count.min(capacity);
    if n < count {
        tracing::warn!(requested = count, placed = n, "room too small for the requested coins");
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            Vec2::new(room.left() + margin + u * sw, room.bottom() + margin + v * sd)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoinConfig {
    pub coins_per_room: usize,
    pub collect_radius: f64,
    pub margin: f64,
}

impl Default for CoinConfig {
    fn default() -> Self {
        CoinConfig {
            coins_per_room: 5,
            collect_radius: 0.3,
            margin: 0.3,
        }
    }
}

/// Coins are stored in coordinates normalized to the room, so they follow
/// the walls proportionally and never end up inside one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoinTask {
    pub config: CoinConfig,
    remaining: BTreeMap<usize, Vec<Vec2>>,
}

fn to_unit(r: &Rect, p: Vec2) -> Vec2 {
    Vec2::new((p.x - r.left()) / r.width(), (p.y - r.bottom()) / r.depth())
}

fn from_unit(b: &Bounds, u: Vec2) -> Vec2 {
    Vec2::new(b.left + u.x * b.width(), b.bottom + u.y * b.depth())
}

impl CoinTask {
    pub fn new(config: CoinConfig) -> Self {
        CoinTask {
            config,
            remaining: BTreeMap::new(),
        }
    }

    /// Replaces the room's coins with a fresh set spread over `reference`,
    /// the room at full size.
    pub fn spawn(&mut self, room: usize, reference: &Rect, rng: &mut StreamRng) -> usize {
        let c = &self.config;
        let coins = spawn_coins(reference, c.coins_per_room, c.margin, c.collect_radius, rng);
        let n = coins.len();
        self.remaining
            .insert(room, coins.into_iter().map(|p| to_unit(reference, p)).collect());
        n
    }

    pub fn positions(&self, room: usize, placed: &Bounds) -> Vec<Vec2> {
        self.remaining
            .get(&room)
            .map(|v| v.iter().map(|&u| from_unit(placed, u)).collect())
            .unwrap_or_default()
    }

    /// Removes and returns the coins within reach of `at`.
    pub fn collect(&mut self, room: usize, placed: &Bounds, at: Vec2) -> Vec<Vec2> {
        let r = self.config.collect_radius;
        let Some(coins) = self.remaining.get_mut(&room) else {
            return Vec::new();
        };
        let mut taken = Vec::new();
        coins.retain(|&u| {
            let p = from_unit(placed, u);
            if p.distance(at) <= r {
                taken.push(p);
                false
            } else {
                true
            }
        });
        taken
    }
}

pub trait Policy {
    fn act(&mut self, obs: &Observation, rng: &mut StreamRng) -> Action;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Idle;

impl Policy for Idle {
    fn act(&mut self, _: &Observation, _: &mut StreamRng) -> Action {
        Action::IDLE
    }
}

fn turn_toward(current: f64, desired: f64, k: &Kinematics) -> f64 {
    wrap_angle(desired - current).clamp(-k.max_turn(), k.max_turn())
}

/// Straight-line step toward `target`, turning to face the way of travel.
fn walk_to(pose: &UserPose, target: Vec2, k: &Kinematics) -> Action {
    let delta = target - pose.position;
    let dist = delta.length();
    let turn = if dist > 1e-9 {
        turn_toward(pose.heading, delta.angle(), k)
    } else {
        0.0
    };
    Action {
        movement: delta.clamp_length(k.max_step()),
        turn,
        door_command: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LookStage {
    Spin { turned: f64 },
    Face { index: usize, dwell_left: u32 },
}

/// Stays at the room center, turns a full circle, then faces North, East,
/// South and West in turn, and repeats.
#[derive(Clone, Debug)]
pub struct LookAround {
    kin: Kinematics,
    dwell_ticks: u32,
    stage: LookStage,
}

impl LookAround {
    pub fn new(kin: Kinematics, dwell_ticks: u32) -> Self {
        LookAround {
            kin,
            dwell_ticks,
            stage: LookStage::Spin { turned: 0.0 },
        }
    }

    fn facing(index: usize) -> f64 {
        [FRAC_PI_2, 0.0, -FRAC_PI_2, PI][index]
    }
}

impl Policy for LookAround {
    fn act(&mut self, obs: &Observation, _: &mut StreamRng) -> Action {
        let k = self.kin;
        let center = obs.room_rect.center;
        let movement = (center - obs.pose.position).clamp_length(k.max_step());
        let turn = match &mut self.stage {
            LookStage::Spin { turned } => {
                let t = k.max_turn().min(TAU - *turned);
                *turned += t;
                if *turned >= TAU - 1e-9 {
                    self.stage = LookStage::Face {
                        index: 0,
                        dwell_left: self.dwell_ticks,
                    };
                }
                t
            }
            LookStage::Face { index, dwell_left } => {
                let t = turn_toward(obs.pose.heading, Self::facing(*index), &k);
                if t.abs() < 1e-12 {
                    if *dwell_left == 0 {
                        self.stage = if *index == 3 {
                            LookStage::Spin { turned: 0.0 }
                        } else {
                            LookStage::Face {
                                index: *index + 1,
                                dwell_left: self.dwell_ticks,
                            }
                        };
                    } else {
                        *dwell_left -= 1;
                    }
                }
                t
            }
        };
        Action {
            movement,
            turn,
            door_command: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DoorPlan {
    Approach,
    Traverse,
}

/// Collects the room's coins nearest-first; once the room is cleared it
/// looks around until the room is restored, then walks through a randomly
/// chosen door of the room.
#[derive(Clone, Debug)]
pub struct CoinCollector {
    kin: Kinematics,
    look: LookAround,
    chosen: Option<(usize, usize, DoorPlan)>,
}

/// How far inside the room the user lines up before a door.
const APPROACH_DEPTH: f64 = 0.4;
/// How far past the door the user aims when walking through.
const TRAVERSE_DEPTH: f64 = 0.25;

impl CoinCollector {
    pub fn new(kin: Kinematics, dwell_ticks: u32) -> Self {
        CoinCollector {
            kin,
            look: LookAround::new(kin, dwell_ticks),
            chosen: None,
        }
    }
}

impl Policy for CoinCollector {
    fn act(&mut self, obs: &Observation, rng: &mut StreamRng) -> Action {
        let k = self.kin;
        let pose = &obs.pose;
        if let Some((room, _, _)) = self.chosen {
            if room != obs.room {
                self.chosen = None;
            }
        }
        if self.chosen.is_none() {
            let nearest = obs
                .coins
                .iter()
                .copied()
                .min_by(|a, b| a.distance(pose.position).total_cmp(&b.distance(pose.position)));
            if let Some(coin) = nearest {
                return walk_to(pose, coin, &k);
            }
            if obs.phase == Phase::Restoring || obs.doors.is_empty() {
                return self.look.act(obs, rng);
            }
            let pick = rng.random_range(0..obs.doors.len());
            self.chosen = Some((obs.room, obs.doors[pick].index, DoorPlan::Approach));
        }
        let (room, door_index, plan) = self.chosen.expect("door chosen");
        let Some(door) = obs.doors.iter().find(|d| d.index == door_index) else {
            self.chosen = None;
            return Action::IDLE;
        };
        let normal = door.side.outward_normal();
        let mid = door.segment.midpoint();
        match plan {
            DoorPlan::Approach => {
                let spot = obs.room_rect.clamp_point(mid - normal * APPROACH_DEPTH, 0.05);
                if pose.position.distance(spot) > 1e-6 {
                    return walk_to(pose, spot, &k);
                }
                self.chosen = Some((room, door_index, DoorPlan::Traverse));
                let turn = turn_toward(pose.heading, normal.angle(), &k);
                let door_command = (door.state == DoorState::Closed).then_some(DoorCommand {
                    door: door_index,
                    state: DoorState::Open,
                });
                Action {
                    movement: Vec2::ZERO,
                    turn,
                    door_command,
                }
            }
            DoorPlan::Traverse => {
                if door.state == DoorState::Closed {
                    return Action {
                        movement: Vec2::ZERO,
                        turn: 0.0,
                        door_command: Some(DoorCommand {
                            door: door_index,
                            state: DoorState::Open,
                        }),
                    };
                }
                let depth = if door.side.is_horizontal() {
                    door.target_rect.depth()
                } else {
                    door.target_rect.width()
                };
                walk_to(pose, mid + normal * TRAVERSE_DEPTH.min(depth / 2.0), &k)
            }
        }
    }
}

/// Steering input from a person: `move_intent` in the avatar frame (+y
/// forward, +x right), `turn_intent` in [-1, 1] with +1 turning right.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerInput {
    pub move_intent: [f64; 2],
    pub turn_intent: f64,
    pub door_toggle: Option<usize>,
}

/// The action a steering input produces at `heading`. Intents are clamped to
/// unit range first, so no input can exceed the kinematic caps.
pub fn action_from_input(input: &SteerInput, heading: f64, door_state: Option<DoorState>, k: &Kinematics) -> Action {
    let intent = Vec2::new(input.move_intent[0], input.move_intent[1]);
    let intent = if intent.is_finite() {
        intent.clamp_length(1.0)
    } else {
        Vec2::ZERO
    };
    let forward = Vec2::from_angle(heading);
    let right = Vec2::from_angle(heading - FRAC_PI_2);
    let movement = (right * intent.x + forward * intent.y) * k.max_step();
    let turn_intent = if input.turn_intent.is_finite() {
        input.turn_intent.clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let door_command = input.door_toggle.zip(door_state).map(|(door, state)| DoorCommand {
        door,
        state: match state {
            DoorState::Open => DoorState::Closed,
            DoorState::Closed => DoorState::Open,
        },
    });
    Action {
        movement,
        turn: -turn_intent * k.max_turn(),
        door_command,
    }
    .clamped(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::parse_layout;
    use crate::redirection::{init_navigation, RedirectionConfig};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn obs_with(pose: UserPose, coins: Vec<Vec2>, phase: Phase) -> Observation {
        Observation {
            tick: 0,
            pose,
            room: 0,
            room_rect: Rect::from_dims(Vec2::ZERO, 3.0, 3.0),
            phase,
            doors: vec![],
            coins,
        }
    }

    #[test]
    fn coin_step_is_speed_limited() {
        let k = Kinematics::default();
        let pose = UserPose::new(Vec2::ZERO, FRAC_PI_2, 1.0);
        let obs = obs_with(pose, vec![Vec2::new(0.0, 1.0)], Phase::Compressed);
        let a = CoinCollector::new(k, 5).act(&obs, &mut stream(1, Stream::Policy));
        assert_close!(a.movement.length(), 1.4 / 30.0, 1e-12);
        assert_close!(a.movement.y, 0.046667, 1e-6);
        assert_eq!(a.turn, 0.0);
    }

    #[test]
    fn idle_is_zero() {
        let pose = UserPose::new(Vec2::ZERO, 0.0, 1.0);
        let a = Idle.act(
            &obs_with(pose, vec![], Phase::Restoring),
            &mut stream(1, Stream::Policy),
        );
        assert_eq!(a, Action::IDLE);
    }

    #[test]
    fn spawn_in_bounds_and_reproducible() {
        let room = Rect::from_dims(Vec2::new(1.0, -1.0), 3.0, 3.0);
        let a = spawn_coins(&room, 5, 0.3, 0.3, &mut stream(9, Stream::CoinSpawn));
        let b = spawn_coins(&room, 5, 0.3, 0.3, &mut stream(9, Stream::CoinSpawn));
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for p in a {
            assert!(p.x >= room.left() + 0.3 && p.x <= room.right() - 0.3);
            assert!(p.y >= room.bottom() + 0.3 && p.y <= room.top() - 0.3);
        }
    }

    #[test]
    fn tiny_room_gets_fewer_coins() {
        let room = Rect::from_dims(Vec2::ZERO, 0.7, 0.7);
        let c = spawn_coins(&room, 5, 0.3, 0.3, &mut stream(1, Stream::CoinSpawn));
        assert!(c.len() < 5);
        let none = spawn_coins(
            &Rect::from_dims(Vec2::ZERO, 0.5, 0.5),
            5,
            0.3,
            0.3,
            &mut stream(1, Stream::CoinSpawn),
        );
        assert!(none.is_empty());
    }

    #[test]
    fn seeds_give_distinct_placements() {
        let room = Rect::from_dims(Vec2::ZERO, 3.0, 3.0);
        let sets: Vec<Vec<Vec2>> = (0..100)
            .map(|s| spawn_coins(&room, 5, 0.3, 0.3, &mut stream(s, Stream::CoinSpawn)))
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert_ne!(sets[i], sets[j]);
            }
        }
    }

    #[test]
    fn coins_follow_the_walls() {
        let full = Rect::from_dims(Vec2::ZERO, 3.0, 3.0);
        let mut task = CoinTask::new(CoinConfig::default());
        task.spawn(0, &full, &mut stream(3, Stream::CoinSpawn));
        let strip = Bounds {
            left: 1.5,
            right: 2.0,
            bottom: -1.5,
            top: 1.5,
        };
        for p in task.positions(0, &strip) {
            assert!(strip.contains_point(p));
        }
        let all = task.positions(0, &Bounds::of(&full));
        let got = task.collect(0, &Bounds::of(&full), all[0]);
        assert!(!got.is_empty());
        assert_eq!(task.positions(0, &Bounds::of(&full)).len(), 5 - got.len());
    }

    #[test]
    fn door_choice_is_seed_deterministic() {
        let layout = parse_layout(
            r##"{"real_space":{"width":4,"depth":4},
            "rooms":[{"id":"A","width":3,"depth":3,"x":0,"y":0,"color":"#a00"},
                     {"id":"B","width":3,"depth":3,"x":3,"y":0,"color":"#0a0"},
                     {"id":"C","width":3,"depth":3,"x":0,"y":3,"color":"#00a"}],
            "doors":[{"a":"A","b":"B","side":"East","offset":0,"width":1},
                     {"a":"A","b":"C","side":"North","offset":0,"width":1}]}"##,
        )
        .unwrap();
        let (nav, _) = init_navigation(&layout, &"A".into(), RedirectionConfig::default()).unwrap();
        let obs = Observation::capture(&nav, UserPose::new(Vec2::ZERO, 0.0, 1.0), vec![]);
        assert_eq!(obs.doors.len(), 2);
        let first_target = |seed| {
            let mut p = CoinCollector::new(Kinematics::default(), 5);
            let a = p.act(&obs, &mut stream(seed, Stream::Policy));
            a.movement
        };
        assert_eq!(first_target(4), first_target(4));
        let distinct: std::collections::HashSet<_> = (0..20).map(|s| format!("{:?}", first_target(s))).collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn look_around_spins_then_faces_walls() {
        let k = Kinematics::default();
        let mut p = LookAround::new(k, 2);
        let mut pose = UserPose::new(Vec2::ZERO, 0.0, 1.0);
        let mut total = 0.0;
        for _ in 0..60 {
            let a = p.act(
                &obs_with(pose, vec![], Phase::Restoring),
                &mut stream(0, Stream::Policy),
            );
            total += a.turn;
            pose = UserPose::new(pose.position, pose.heading + a.turn, 1.0);
        }
        assert_close!(total, TAU, 1e-9);
        // A quarter turn at pi/30 per tick.
        for _ in 0..15 {
            let a = p.act(
                &obs_with(pose, vec![], Phase::Restoring),
                &mut stream(0, Stream::Policy),
            );
            pose = UserPose::new(pose.position, pose.heading + a.turn, 1.0);
        }
        assert_close!(pose.heading, FRAC_PI_2, 1e-9);
    }

    #[test]
    fn input_mapping() {
        let k = Kinematics::default();
        let fwd = SteerInput {
            move_intent: [0.0, 1.0],
            ..Default::default()
        };
        let a = action_from_input(&fwd, FRAC_PI_2, None, &k);
        assert_close!(a.movement.y, k.max_step(), 1e-15);
        assert_close!(a.movement.x, 0.0, 1e-15);
        let right = SteerInput {
            turn_intent: 1.0,
            ..Default::default()
        };
        assert_eq!(action_from_input(&right, 0.0, None, &k).turn, -k.max_turn());
        let huge = SteerInput {
            move_intent: [5.0, 0.0],
            ..Default::default()
        };
        let a = action_from_input(&huge, 0.0, None, &k);
        assert_close!(a.movement.length(), k.max_step(), 1e-15);
        // Facing +x, the avatar's right is -y.
        assert!(a.movement.y < 0.0);
        let toggle = SteerInput {
            door_toggle: Some(2),
            ..Default::default()
        };
        let a = action_from_input(&toggle, 0.0, Some(DoorState::Closed), &k);
        assert_eq!(
            a.door_command,
            Some(DoorCommand {
                door: 2,
                state: DoorState::Open
            })
        );
    }

    proptest! {
        #[test]
        fn inputs_respect_caps(mx in -1e6..1e6f64, my in -1e6..1e6f64, t in -1e6..1e6f64, h in 0.0..TAU) {
            let k = Kinematics::default();
            let input = SteerInput { move_intent: [mx, my], turn_intent: t, door_toggle: None };
            prop_assert!(action_from_input(&input, h, None, &k).within_caps(&k));
        }

        #[test]
        fn policies_respect_caps(
            px in -1.4..1.4f64, py in -1.4..1.4f64, h in 0.0..TAU,
            coins in proptest::collection::vec((-1.4..1.4f64, -1.4..1.4f64), 0..4),
            restoring in any::<bool>(), seed in 0u64..50,
        ) {
            let k = Kinematics::default();
            let pose = UserPose::new(Vec2::new(px, py), h, 1.0);
            let phase = if restoring { Phase::Restoring } else { Phase::Compressed };
            let obs = obs_with(pose, coins.into_iter().map(|(x, y)| Vec2::new(x, y)).collect(), phase);
            let mut rng = stream(seed, Stream::Policy);
            prop_assert!(CoinCollector::new(k, 5).act(&obs, &mut rng).within_caps(&k));
            prop_assert!(LookAround::new(k, 5).act(&obs, &mut rng).within_caps(&k));
            prop_assert!(Idle.act(&obs, &mut rng).within_caps(&k));
        }
    }
}

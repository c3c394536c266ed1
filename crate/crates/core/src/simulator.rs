//! Fixed-step simulation loop, run configuration, JSONL traces, metrics and
//! the independent trace checker.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Action, CoinCollector, CoinConfig, CoinTask, Idle, Kinematics, LookAround, Observation, Policy};
use crate::gain::{thresholds_at, GainThresholds};
use crate::geometry::{contains_eps, fully_outside_fov, shortest_distance, Rect, Side, UserPose, Vec2, WallSegment};
use crate::layout::{parse_layout, DoorState, LayoutError, RoomId, VirtualLayout};
use crate::redirection::{
    init_navigation, reason, EventKind, NavError, NavState, Phase, RedirectionConfig, RedirectionEvent,
};
use crate::rng::{self, Stream, StreamRng};

pub const DEFAULT_FOV_HALF_ANGLE: f64 = 55.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_DURATION_S: f64 = 300.0;
/// Users keep this far from walls they are not passing through.
pub const WALL_CLEARANCE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Idle,
    LookAround {
        #[serde(default = "default_dwell")]
        dwell_ticks: u32,
    },
    CoinCollector {
        #[serde(default = "default_dwell")]
        dwell_ticks: u32,
    },
}

fn default_dwell() -> u32 {
    10
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::CoinCollector {
            dwell_ticks: default_dwell(),
        }
    }
}

impl PolicyConfig {
    pub fn build(&self, kin: Kinematics) -> Box<dyn Policy + Send> {
        match *self {
            PolicyConfig::Idle => Box::new(Idle),
            PolicyConfig::LookAround { dwell_ticks } => Box::new(LookAround::new(kin, dwell_ticks)),
            PolicyConfig::CoinCollector { dwell_ticks } => Box::new(CoinCollector::new(kin, dwell_ticks)),
        }
    }
}

fn default_fov() -> f64 {
    DEFAULT_FOV_HALF_ANGLE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Layout file; relative paths resolve against the config file.
    pub layout: PathBuf,
    /// Defaults to the first room of the layout.
    #[serde(default)]
    pub start_room: Option<String>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub thresholds: GainThresholds,
    #[serde(default)]
    pub seed: u64,
    /// Number of ticks; takes precedence over `duration_s`.
    #[serde(default)]
    pub ticks: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub kinematics: Kinematics,
    /// Half-angle of the view wedge in radians.
    #[serde(default = "default_fov")]
    pub fov_half_angle: f64,
    #[serde(default)]
    pub coins: CoinConfig,
    #[serde(default)]
    pub redirection: RedirectionConfig,
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    #[serde(default)]
    pub input_log: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("layout: {0}")]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
}

impl SimError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        SimError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl RunConfig {
    /// A config with defaults for everything but the layout path.
    pub fn new(layout: impl Into<PathBuf>) -> Self {
        RunConfig {
            layout: layout.into(),
            start_room: None,
            policy: PolicyConfig::default(),
            thresholds: GainThresholds::default(),
            seed: 0,
            ticks: None,
            duration_s: None,
            kinematics: Kinematics::default(),
            fov_half_angle: DEFAULT_FOV_HALF_ANGLE,
            coins: CoinConfig::default(),
            redirection: RedirectionConfig::default(),
            trace: None,
            metrics: None,
            input_log: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::Config(format!("{} (at {})", e.inner(), e.path())))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads the config and its layout; relative paths inside the config are
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<(RunConfig, VirtualLayout), SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.layout);
        for p in [&mut cfg.trace, &mut cfg.metrics, &mut cfg.input_log]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        let layout_text = fs::read_to_string(&cfg.layout).map_err(|e| SimError::io(&cfg.layout, e))?;
        let layout = parse_layout(&layout_text)?;
        Ok((cfg, layout))
    }

    pub fn check(&self) -> Result<(), SimError> {
        let k = &self.kinematics;
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(k.dt > 0.0 && k.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(k.speed_cap >= 0.0 && k.turn_cap >= 0.0) {
            return bad("kinematic caps must be non-negative");
        }
        if self.ticks == Some(0) {
            return bad("ticks must be positive");
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return bad("duration_s must be positive");
            }
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle < std::f64::consts::PI) {
            return bad("fov_half_angle must lie in (0, pi)");
        }
        if !(self.coins.collect_radius > 0.0 && self.coins.margin >= 0.0) {
            return bad("coin radius must be positive and margin non-negative");
        }
        if !(self.redirection.min_half_extent > 0.0 && self.redirection.converge_tol > 0.0) {
            return bad("redirection floor and tolerance must be positive");
        }
        Ok(())
    }

    pub fn tick_count(&self) -> u64 {
        match (self.ticks, self.duration_s) {
            (Some(t), _) => t,
            (None, d) => (d.unwrap_or(DEFAULT_DURATION_S) / self.kinematics.dt).round() as u64,
        }
    }
}

/// Tracked-space state of one simulated user in one layout.
pub struct Simulation {
    nav: NavState,
    pose: UserPose,
    kin: Kinematics,
    thresholds: GainThresholds,
    coins: CoinTask,
    coin_rng: StreamRng,
    policy_rng: StreamRng,
}

impl Simulation {
    /// Initializes navigation and the coin task; returns the tick-0 events.
    pub fn new(layout: &VirtualLayout, cfg: &RunConfig) -> Result<(Simulation, Vec<RedirectionEvent>), SimError> {
        cfg.check()?;
        let start = match &cfg.start_room {
            Some(id) => RoomId(id.clone()),
            None => layout
                .rooms
                .first()
                .map(|r| r.id.clone())
                .ok_or_else(|| SimError::Config("layout has no rooms".into()))?,
        };
        let (nav, events) = init_navigation(layout, &start, cfg.redirection)?;
        let center = nav.current_bounds().center();
        let mut sim = Simulation {
            pose: UserPose::new(center, FRAC_PI_2, cfg.fov_half_angle),
            nav,
            kin: cfg.kinematics,
            thresholds: cfg.thresholds.clone(),
            coins: CoinTask::new(cfg.coins),
            coin_rng: rng::stream(cfg.seed, Stream::CoinSpawn),
            policy_rng: rng::stream(cfg.seed, Stream::Policy),
        };
        sim.spawn_coins();
        Ok((sim, events))
    }

    pub fn nav(&self) -> &NavState {
        &self.nav
    }

    pub fn pose(&self) -> UserPose {
        self.pose
    }

    pub fn kinematics(&self) -> &Kinematics {
        &self.kin
    }

    pub fn thresholds(&self) -> &GainThresholds {
        &self.thresholds
    }

    pub fn coins(&self) -> Vec<Vec2> {
        let room = self.nav.current_index();
        self.coins.positions(room, &self.nav.current_bounds())
    }

    pub fn observation(&self) -> Observation {
        Observation::capture(&self.nav, self.pose, self.coins())
    }

    fn spawn_coins(&mut self) {
        let idx = self.nav.current_index();
        let reference = self.nav.target().goal.rect();
        self.coins.spawn(idx, &reference, &mut self.coin_rng);
    }

    /// One tick driven by `policy`.
    pub fn step(&mut self, policy: &mut dyn Policy) -> Vec<RedirectionEvent> {
        let obs = self.observation();
        let action = policy.act(&obs, &mut self.policy_rng);
        self.step_with(action)
    }

    /// One tick with a given action: move, run redirection, collect coins.
    pub fn step_with(&mut self, action: Action) -> Vec<RedirectionEvent> {
        let action = action.clamped(&self.kin);
        let from = self.pose.position;
        let to = self.constrain_move(from, from + action.movement);
        self.pose = UserPose::new(to, self.pose.heading + action.turn, self.pose.fov_half_angle);
        let commands: Vec<_> = action.door_command.into_iter().collect();
        let room_before = self.nav.current_index();
        let mut events = self.nav.tick(&self.pose, &commands, &self.thresholds);
        if self.nav.current_index() != room_before {
            self.spawn_coins();
        }
        let room = self.nav.current_index();
        let taken = self.coins.collect(room, &self.nav.current_bounds(), self.pose.position);
        let pose_event = events.pop();
        for p in taken {
            let mut ev = RedirectionEvent::new(self.nav.tick_count(), EventKind::CoinCollected);
            ev.room = Some(self.nav.current_room().clone());
            ev.pos = Some(p.to_array());
            events.push(ev);
        }
        events.extend(pose_event);
        events
    }

    /// Keeps the user inside the occupied room, except for walking through
    /// an open door of a compressed neighborhood into the room beyond.
    fn constrain_move(&self, from: Vec2, to: Vec2) -> Vec2 {
        let room = self.nav.current_bounds().rect();
        let m = WALL_CLEARANCE;
        if room.clamp_point(to, m) == to {
            return to;
        }
        if self.nav.phase() == Phase::Compressed {
            for i in self.nav.layout().doors_of(self.nav.current_index()) {
                if self.nav.door_state(i) != DoorState::Open {
                    continue;
                }
                let Some(target) = self.nav.door_target(i) else {
                    continue;
                };
                let seg = self.nav.door_segment(i);
                let beyond = self.nav.placement(target).rect();
                if passes_through(from, to, &seg, m) && beyond.clamp_point(to, m) == to {
                    return to;
                }
            }
        }
        let clamped = room.clamp_point(to, m);
        from + (clamped - from).clamp_length((to - from).length())
    }
}

/// Whether the step from `from` to `to` crosses the door's wall line inside
/// the opening, keeping `margin` from the jambs.
fn passes_through(from: Vec2, to: Vec2, door: &WallSegment, margin: f64) -> bool {
    let c = door.line_coord();
    let (lo, hi) = door.span();
    let (f_n, t_n, f_a, t_a) = if door.side.is_horizontal() {
        (from.y, to.y, from.x, to.x)
    } else {
        (from.x, to.x, from.y, to.y)
    };
    if (f_n - c) * (t_n - c) > 0.0 || f_n == t_n {
        return false;
    }
    let s = (c - f_n) / (t_n - f_n);
    let along = f_a + s * (t_a - f_a);
    along >= lo + margin && along <= hi - margin
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: u64,
    pub rooms_visited: u64,
    pub restore_completions: u64,
    pub mean_restore_epochs: f64,
    pub max_restore_epochs: u32,
    pub total_wall_displacement: f64,
    pub boundary_violations: u64,
    pub gain_violations: u64,
    /// Every Violation event, whatever the reason.
    pub violations: u64,
    pub coins_collected: u64,
}

/// Metrics recomputed from events alone.
pub fn metrics_from_events(events: &[RedirectionEvent], thresholds: &GainThresholds) -> RunMetrics {
    let mut m = RunMetrics::default();
    let mut episode_epochs: Option<u32> = None;
    let mut episodes: Vec<u32> = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Pose => m.ticks += 1,
            EventKind::EnterRoom => {
                m.rooms_visited += 1;
                episode_epochs = Some(0);
            }
            EventKind::RestoreStep => {
                m.total_wall_displacement += e.displacement.unwrap_or(0.0);
                if let (Some(n), Some(ep)) = (episode_epochs.as_mut(), e.epoch) {
                    *n = (*n).max(ep);
                }
                if let (Some(g), Some(tb)) = (e.gain, e.t_before) {
                    let th = thresholds_at(thresholds, tb);
                    if g < th.lower - 1e-9 || g > th.upper + 1e-9 {
                        m.gain_violations += 1;
                    }
                }
            }
            EventKind::RestoreComplete => {
                m.restore_completions += 1;
                if let Some(n) = episode_epochs.take() {
                    episodes.push(n);
                }
            }
            EventKind::Compress => m.total_wall_displacement += e.displacement.unwrap_or(0.0),
            EventKind::Violation => {
                m.violations += 1;
                if e.reason.as_deref() == Some(reason::BOUNDARY) {
                    m.boundary_violations += 1;
                }
            }
            EventKind::CoinCollected => m.coins_collected += 1,
            EventKind::CompressDeferred | EventKind::DoorOpen | EventKind::DoorClose => {}
        }
    }
    if !episodes.is_empty() {
        m.mean_restore_epochs = episodes.iter().map(|&n| n as f64).sum::<f64>() / episodes.len() as f64;
        m.max_restore_epochs = episodes.iter().copied().max().unwrap_or(0);
    }
    m
}

pub fn parse_trace(text: &str) -> Result<Vec<RedirectionEvent>, SimError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SimError::Trace {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn metrics_from_trace(text: &str, thresholds: &GainThresholds) -> Result<RunMetrics, SimError> {
    Ok(metrics_from_events(&parse_trace(text)?, thresholds))
}

fn write_events(out: &mut dyn Write, events: &[RedirectionEvent]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Runs the configured policy for the configured number of ticks, writing
/// the trace to `trace` (flushed after every tick).
pub fn run(cfg: &RunConfig, layout: &VirtualLayout, trace: &mut dyn Write) -> Result<RunMetrics, SimError> {
    let (mut sim, init) = Simulation::new(layout, cfg)?;
    let mut policy = cfg.policy.build(cfg.kinematics);
    let io_err = |e| SimError::io(Path::new("<trace>"), e);
    write_events(trace, &init).map_err(io_err)?;
    let mut all = init;
    for _ in 0..cfg.tick_count() {
        let events = sim.step(policy.as_mut());
        write_events(trace, &events).map_err(io_err)?;
        all.extend(events);
    }
    Ok(metrics_from_events(&all, &cfg.thresholds))
}

/// `run` with the trace kept in memory.
pub fn run_in_memory(cfg: &RunConfig, layout: &VirtualLayout) -> Result<(RunMetrics, String), SimError> {
    let mut buf = Vec::new();
    let m = run(cfg, layout, &mut buf)?;
    Ok((m, String::from_utf8(buf).expect("JSON is UTF-8")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvariantKind {
    Boundary,
    GainBound,
    InViewMovement,
    Containment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceViolation {
    pub tick: u64,
    pub kind: InvariantKind,
    pub detail: String,
}

fn segment_of(s: [[f64; 2]; 2], side: Side) -> WallSegment {
    WallSegment::new(Vec2::new(s[0][0], s[0][1]), Vec2::new(s[1][0], s[1][1]), side)
}

/// Re-verifies a trace from its logged geometry: every pose inside the
/// tracked space, every wall move within the gain bounds and out of view
/// before and after, and every compressed room inside the tracked space.
pub fn check_trace_invariants(
    events: &[RedirectionEvent],
    layout: &VirtualLayout,
    thresholds: &GainThresholds,
) -> Vec<TraceViolation> {
    let real = layout.real_space.rect;
    let mut out = Vec::new();
    let mut flag = |tick, kind, detail: String| out.push(TraceViolation { tick, kind, detail });
    for e in events {
        match e.kind {
            EventKind::Pose => {
                let Some(p) = e.pos else {
                    flag(e.tick, InvariantKind::Boundary, "pose without position".into());
                    continue;
                };
                if !real.contains_point(Vec2::new(p[0], p[1])) {
                    flag(
                        e.tick,
                        InvariantKind::Boundary,
                        format!("user at ({}, {}) outside R", p[0], p[1]),
                    );
                }
            }
            EventKind::RestoreStep => {
                let (Some(p), Some(h), Some(fov), Some(seg), Some(to), Some(side)) =
                    (e.pos, e.heading, e.fov, e.seg, e.seg_to, e.wall)
                else {
                    flag(e.tick, InvariantKind::GainBound, "restore step missing geometry".into());
                    continue;
                };
                let pose = UserPose::new(Vec2::new(p[0], p[1]), h, fov);
                let (seg, to) = (segment_of(seg, side), segment_of(to, side));
                let tb = shortest_distance(pose.position, &seg);
                let ta = shortest_distance(pose.position, &to);
                let th = thresholds_at(thresholds, tb);
                let gain = ta / tb;
                if !(gain >= th.lower - 1e-9 && gain <= th.upper + 1e-9) {
                    flag(
                        e.tick,
                        InvariantKind::GainBound,
                        format!("{side} wall gain {gain} outside [{}, {}] at {tb} m", th.lower, th.upper),
                    );
                }
                if !fully_outside_fov(&pose, &seg) || !fully_outside_fov(&pose, &to) {
                    flag(
                        e.tick,
                        InvariantKind::InViewMovement,
                        format!("{side} wall moved while visible"),
                    );
                }
            }
            EventKind::Compress => {
                let Some(r) = e.rect else {
                    flag(e.tick, InvariantKind::Containment, "compress without rect".into());
                    continue;
                };
                let rect = Rect::new(Vec2::new(r[0], r[1]), r[2], r[3]);
                if !contains_eps(&real, &rect, 1e-9) {
                    let room = e.room.as_ref().map(|r| r.0.as_str()).unwrap_or("?");
                    flag(
                        e.tick,
                        InvariantKind::Containment,
                        format!("room {room} sticks out of R"),
                    );
                }
            }
            _ => {}
        }
    }
    out
}

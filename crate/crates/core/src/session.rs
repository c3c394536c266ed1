//! Interactive sessions: a person steers the user through `SteerInput`s
//! merged once per tick. Every merged input is logged so the session can be
//! replayed headlessly into the identical trace.
//!
//! Also defines the version-1 wire frames exchanged with viewers.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{action_from_input, Action, SteerInput};
use crate::layout::{DoorState, VirtualLayout};
use crate::redirection::{EventKind, Phase, RedirectionEvent, WallStatus};
use crate::simulator::{metrics_from_events, RunConfig, RunMetrics, SimError, Simulation};

pub const PROTOCOL_VERSION: u32 = 1;

/// One steering message from the driving client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientInput {
    pub seq: u64,
    #[serde(default)]
    pub move_intent: [f64; 2],
    #[serde(default)]
    pub turn_intent: f64,
    #[serde(default)]
    pub door_toggle: Option<usize>,
    /// Sets the researcher overlay on or off.
    #[serde(default)]
    pub reveal_toggle: Option<bool>,
}

#[derive(Serialize)]
struct VersionedInput<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    input: &'a ClientInput,
}

impl ClientInput {
    /// The wire form, `{"v":1,"type":"input",...}`.
    pub fn to_frame_json(&self) -> String {
        serde_json::to_string(&VersionedInput {
            v: PROTOCOL_VERSION,
            kind: "input",
            input: self,
        })
        .expect("inputs serialize")
    }

    pub fn steer(&self) -> SteerInput {
        SteerInput {
            move_intent: self.move_intent,
            turn_intent: self.turn_intent,
            door_toggle: self.door_toggle,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Accepted,
    Stale,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub status: AckStatus,
    pub reason: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Driver,
    Spectator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseView {
    pub position: [f64; 2],
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomView {
    pub id: String,
    pub rect: [f64; 4],
    pub color: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorView {
    pub id: usize,
    pub state: DoorState,
    pub segment: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevealOverlay {
    pub goal_rect: [f64; 4],
    pub walls: Vec<WallStatus>,
}

/// Everything a viewer needs to draw one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub tick: u64,
    pub pose: PoseView,
    pub fov_half_angle: f64,
    pub real_space: [f64; 2],
    pub current_room: String,
    pub rooms: Vec<RoomView>,
    pub doors: Vec<DoorView>,
    pub coins: Vec<[f64; 2]>,
    pub phase: Phase,
    /// Events of the last tick, pose records left out.
    pub events: Vec<RedirectionEvent>,
    pub reveal: bool,
    pub overlay: Option<RevealOverlay>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelloInfo {
    pub layout_rooms: usize,
    pub real_space: [f64; 2],
    pub fov_half_angle: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Frames sent to viewers. Serialized with `"v"` first, then `"type"`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Hello {
        role: Role,
        session: HelloInfo,
        last_applied_seq: Option<u64>,
    },
    State {
        snapshot: SessionSnapshot,
        last_applied_seq: Option<u64>,
    },
    Ack(Ack),
    Error {
        message: String,
    },
}

#[derive(Serialize)]
struct Versioned<'a> {
    v: u32,
    #[serde(flatten)]
    frame: &'a ServerFrame,
}

impl ServerFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Versioned {
            v: PROTOCOL_VERSION,
            frame: self,
        })
        .expect("frames serialize")
    }
}

/// Frames accepted from viewers.
#[derive(Clone, Debug, PartialEq)]
pub enum ClientFrame {
    Input(ClientInput),
}

/// Parses a client frame, checking the version and type tags.
pub fn parse_client_frame(text: &str) -> Result<ClientFrame, String> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object_mut().ok_or("frame must be a JSON object")?;
    match obj.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION as u64) => {}
        Some(other) => return Err(format!("unsupported protocol version {other}")),
        None => return Err("missing field \"v\"".into()),
    }
    let kind = match obj.remove("type") {
        Some(Value::String(s)) => s,
        _ => return Err("missing or non-string field \"type\"".into()),
    };
    match kind.as_str() {
        "input" => serde_json::from_value(value)
            .map(ClientFrame::Input)
            .map_err(|e| format!("bad input frame: {e}")),
        other => Err(format!("unknown frame type {other:?}")),
    }
}

/// One line of the input log: the merged input applied at `tick`, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLogEntry {
    pub tick: u64,
    pub input: Option<SteerInput>,
}

/// The session state machine without any transport: buffered inputs in,
/// ticks and snapshots out. Trace and input log are written per tick.
pub struct SessionCore {
    sim: Simulation,
    cfg: RunConfig,
    pending: Option<SteerInput>,
    pending_seq: Option<u64>,
    last_received_seq: Option<u64>,
    last_applied_seq: Option<u64>,
    reveal: bool,
    last_events: Vec<RedirectionEvent>,
    all_events: Vec<RedirectionEvent>,
    trace: Box<dyn Write + Send>,
    input_log: Box<dyn Write + Send>,
}

fn write_line<T: Serialize>(out: &mut dyn Write, v: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")
}

impl SessionCore {
    pub fn new(
        layout: &VirtualLayout,
        cfg: &RunConfig,
        mut trace: Box<dyn Write + Send>,
        input_log: Box<dyn Write + Send>,
    ) -> Result<SessionCore, SimError> {
        let (sim, init) = Simulation::new(layout, cfg)?;
        let io_err = |e| SimError::io(std::path::Path::new("<trace>"), e);
        for e in &init {
            write_line(&mut trace, e).map_err(io_err)?;
        }
        trace.flush().map_err(io_err)?;
        Ok(SessionCore {
            sim,
            cfg: cfg.clone(),
            pending: None,
            pending_seq: None,
            last_received_seq: None,
            last_applied_seq: None,
            reveal: false,
            last_events: init.clone(),
            all_events: init,
            trace,
            input_log,
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.sim.nav().tick_count()
    }

    pub fn last_applied_seq(&self) -> Option<u64> {
        self.last_applied_seq
    }

    pub fn reveal(&self) -> bool {
        self.reveal
    }

    pub fn events(&self) -> &[RedirectionEvent] {
        &self.all_events
    }

    pub fn metrics(&self) -> RunMetrics {
        metrics_from_events(&self.all_events, &self.cfg.thresholds)
    }

    pub fn hello(&self, role: Role) -> ServerFrame {
        let real = self.sim.nav().real_space();
        ServerFrame::Hello {
            role,
            session: HelloInfo {
                layout_rooms: self.sim.nav().layout().rooms.len(),
                real_space: [real.width(), real.depth()],
                fov_half_angle: self.cfg.fov_half_angle,
                dt: self.cfg.kinematics.dt,
                seed: self.cfg.seed,
            },
            // Resuming drivers continue after the last seq the session took.
            last_applied_seq: self.last_received_seq,
        }
    }

    /// Buffers an input for the next tick. Later inputs in the same tick
    /// replace earlier ones, except that a door toggle sticks until applied.
    pub fn handle_input(&mut self, input: ClientInput) -> Ack {
        let ack = |status, reason: Option<&str>| Ack {
            seq: input.seq,
            status,
            reason: reason.map(str::to_string),
        };
        if self.last_received_seq.is_some_and(|last| input.seq <= last) {
            return ack(AckStatus::Stale, Some("stale"));
        }
        if let Some(door) = input.door_toggle {
            let nav = self.sim.nav();
            if !nav.is_current_door(door) {
                return ack(AckStatus::Rejected, Some("door is not adjacent to the current room"));
            }
            if nav.phase() == Phase::Restoring && nav.door_state(door) == DoorState::Closed {
                return ack(
                    AckStatus::Rejected,
                    Some("doors stay closed while the room is restored"),
                );
            }
        }
        self.last_received_seq = Some(input.seq);
        if let Some(r) = input.reveal_toggle {
            self.reveal = r;
        }
        let steer = input.steer();
        let door_toggle = steer.door_toggle.or(self.pending.and_then(|p| p.door_toggle));
        self.pending = Some(SteerInput { door_toggle, ..steer });
        self.pending_seq = Some(input.seq);
        ack(AckStatus::Accepted, None)
    }

    /// Applies the merged input, advances one tick and persists the result.
    pub fn tick(&mut self) -> io::Result<&[RedirectionEvent]> {
        let input = self.pending.take();
        if let Some(seq) = self.pending_seq.take() {
            self.last_applied_seq = Some(seq);
        }
        let tick = self.tick_count() + 1;
        write_line(&mut self.input_log, &InputLogEntry { tick, input })?;
        self.input_log.flush()?;
        let events = apply(&mut self.sim, input.as_ref());
        for e in &events {
            write_line(&mut self.trace, e)?;
        }
        self.trace.flush()?;
        self.all_events.extend(events.iter().cloned());
        self.last_events = events;
        Ok(&self.last_events)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.trace.flush()?;
        self.input_log.flush()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let nav = self.sim.nav();
        let pose = self.sim.pose();
        let layout = nav.layout();
        let rooms = layout
            .rooms
            .iter()
            .enumerate()
            .map(|(i, r)| RoomView {
                id: r.id.0.clone(),
                rect: nav.placement(i).rect().to_array(),
                color: r.color.clone(),
            })
            .collect();
        let doors = (0..layout.doors.len())
            .map(|i| DoorView {
                id: i,
                state: nav.door_state(i),
                segment: nav.door_segment(i).to_array(),
            })
            .collect();
        let overlay = self.reveal.then(|| RevealOverlay {
            goal_rect: nav.target().goal.rect().to_array(),
            walls: nav.wall_status(&pose, self.sim.thresholds()).to_vec(),
        });
        let real = nav.real_space();
        SessionSnapshot {
            tick: nav.tick_count(),
            pose: PoseView {
                position: pose.position.to_array(),
                heading: pose.heading,
            },
            fov_half_angle: pose.fov_half_angle,
            real_space: [real.width(), real.depth()],
            current_room: nav.current_room().0.clone(),
            rooms,
            doors,
            coins: self.sim.coins().iter().map(|c| c.to_array()).collect(),
            phase: nav.phase(),
            events: self
                .last_events
                .iter()
                .filter(|e| e.kind != EventKind::Pose)
                .cloned()
                .collect(),
            reveal: self.reveal,
            overlay,
        }
    }
}

/// The single mapping from a logged input to a simulation step, shared by
/// live sessions and replay.
fn apply(sim: &mut Simulation, input: Option<&SteerInput>) -> Vec<RedirectionEvent> {
    let action = match input {
        Some(i) => {
            let state = i
                .door_toggle
                .filter(|&d| d < sim.nav().door_states().len())
                .map(|d| sim.nav().door_state(d));
            action_from_input(i, sim.pose().heading, state, sim.kinematics())
        }
        None => Action::IDLE,
    };
    sim.step_with(action)
}

pub fn parse_input_log(text: &str) -> Result<Vec<InputLogEntry>, SimError> {
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

/// Re-runs a recorded session headlessly, writing the trace to `trace`.
pub fn replay(
    cfg: &RunConfig,
    layout: &VirtualLayout,
    log: &[InputLogEntry],
    trace: &mut dyn Write,
) -> Result<RunMetrics, SimError> {
    let (mut sim, init) = Simulation::new(layout, cfg)?;
    let io_err = |e| SimError::io(std::path::Path::new("<trace>"), e);
    let mut all = init;
    for e in &all {
        write_line(trace, e).map_err(io_err)?;
    }
    for (i, entry) in log.iter().enumerate() {
        let expected = i as u64 + 1;
        if entry.tick != expected {
            return Err(SimError::Trace {
                line: i + 1,
                message: format!("expected tick {expected}, found {}", entry.tick),
            });
        }
        let events = apply(&mut sim, entry.input.as_ref());
        for e in &events {
            write_line(trace, e).map_err(io_err)?;
        }
        all.extend(events);
    }
    trace.flush().map_err(io_err)?;
    Ok(metrics_from_events(&all, &cfg.thresholds))
}

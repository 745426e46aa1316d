//! WebSocket bridge: streams simulation state to a browser cockpit and
//! accepts leader-steering commands.
//!
//! Every socket message is one JSON object `{"type": ..., "payload": ...}`.
//! The server sends `topology` once per connection (and again whenever the
//! scenario changes), then `frame` messages at a fixed rate; each client
//! command is answered with `ack` or `error`. The schema lives in
//! `schema/wire-protocol.schema.json`.
//!
//! The simulation loop and the network run on separate threads. Frames go
//! out through a latest-value slot, so a slow client drops frames rather
//! than stalling the loop; commands come in through a queue and are applied
//! only between ticks.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::geometry::{ObjectGeometry, Obstacle};
use crate::math::{AgentId, Vec3};
use crate::scenario::{load_scenario, RunOptions, ScenarioConfig, ScenarioError, Session};

/// Environment variable holding the bind address (default `127.0.0.1`).
pub const BIND_ENV: &str = "DCBF_BIND";
pub const DEFAULT_LEADER_SPEED_MAX: f64 = 0.3;
pub const DEFAULT_BROADCAST_HZ: f64 = 30.0;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Command(String),
}

/// Round to 6 significant digits.
fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn v6(v: &Vec3) -> [f64; 3] {
    [sig6(v.x), sig6(v.y), sig6(v.z)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub scenario: String,
    pub object_kind: String,
    pub point_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub obstacles: Vec<Obstacle>,
    pub leader: AgentId,
    pub agents: Vec<AgentId>,
    pub d_offset: f64,
    pub leader_speed_max: f64,
    pub tick_rate: f64,
    /// Hex digest of everything above.
    pub hash: String,
}

impl Topology {
    pub fn of(session: &Session, leader_speed_max: f64) -> Self {
        let geom = ObjectGeometry::from_object(&session.world().object);
        let mut t = Topology {
            scenario: session.config.name.clone(),
            object_kind: session.world().object.kind_name().to_string(),
            point_count: geom.points.len(),
            edges: geom.segments,
            triangles: geom.triangles,
            obstacles: session.obstacles.clone(),
            leader: session.leader_id().clone(),
            agents: session.controllers.iter().map(|c| c.agent.clone()).collect(),
            d_offset: session.config.controller.d_offset,
            leader_speed_max,
            tick_rate: session.config.run.tick_rate,
            hash: String::new(),
        };
        let digest = Sha256::digest(serde_json::to_vec(&t).unwrap_or_default());
        t.hash = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub id: AgentId,
    pub pos: [f64; 3],
    pub u: [f64; 3],
    pub status: String,
    pub active_labels: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HValues {
    pub collision: Option<f64>,
    /// Keyed `a-b`.
    pub stretch: BTreeMap<String, f64>,
    pub proximity: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub t: f64,
    pub paused: bool,
    pub object_kind: String,
    pub topology_hash: String,
    pub positions: Vec<[f64; 3]>,
    pub agents: Vec<AgentFrame>,
    pub leader_pos: [f64; 3],
    pub h_values: HValues,
    pub min_distance: Option<f64>,
    pub witness: Option<[[f64; 3]; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    LeaderVelocity { velocity: [f64; 3] },
    Pause,
    Resume,
    Reset,
    SelectScenario { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    /// Command kind being acknowledged.
    pub command: String,
    /// First tick computed with the command in effect.
    pub applies_at_tick: u64,
    /// For steering: the velocity actually applied after clamping.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub velocity: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Topology(Topology),
    Frame(StateFrame),
    Ack(Ack),
    Error(ErrorReply),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(Command),
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::LeaderVelocity { .. } => "leader_velocity",
        Command::Pause => "pause",
        Command::Resume => "resume",
        Command::Reset => "reset",
        Command::SelectScenario { .. } => "select_scenario",
    }
}

/// A running scenario plus the remote-control state around it.
pub struct BridgeSession {
    pub session: Session,
    pub paused: bool,
    pub leader_speed_max: f64,
    /// Where `select_scenario` looks for `<name>.toml`.
    pub scenario_dir: Option<PathBuf>,
    options: RunOptions,
    topology: Topology,
}

impl BridgeSession {
    pub fn new(config: ScenarioConfig, options: RunOptions) -> Result<Self, BridgeError> {
        let session = Session::new(config, &options)?;
        let topology = Topology::of(&session, DEFAULT_LEADER_SPEED_MAX);
        Ok(BridgeSession { session, paused: false, leader_speed_max: DEFAULT_LEADER_SPEED_MAX, scenario_dir: None, options, topology })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn rebuild(&mut self, config: ScenarioConfig) -> Result<(), BridgeError> {
        self.session = Session::new(config, &self.options)?;
        self.topology = Topology::of(&self.session, self.leader_speed_max);
        Ok(())
    }

    /// Apply a command at the current tick boundary.
    pub fn apply_command(&mut self, cmd: &Command) -> Result<Ack, BridgeError> {
        let mut velocity = None;
        match cmd {
            Command::LeaderVelocity { velocity: v } => {
                let v = Vec3::from(*v);
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(BridgeError::Command("leader velocity must be finite".into()));
                }
                let speed = v.norm();
                let v = if speed > self.leader_speed_max { v * (self.leader_speed_max / speed) } else { v };
                self.session.set_leader_velocity(v);
                velocity = Some([v.x, v.y, v.z]);
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset => {
                let config = self.session.config.clone();
                self.rebuild(config)?;
            }
            Command::SelectScenario { name } => {
                let dir = self.scenario_dir.clone().ok_or_else(|| BridgeError::Command("no scenario directory configured".into()))?;
                if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                    return Err(BridgeError::Command(format!("invalid scenario name `{name}`")));
                }
                let config = load_scenario(&dir.join(format!("{name}.toml")))?;
                self.rebuild(config)?;
            }
        }
        Ok(Ack { command: command_name(cmd).into(), applies_at_tick: self.session.tick(), velocity })
    }

    /// Advance one tick unless paused.
    pub fn tick(&mut self) -> Result<bool, BridgeError> {
        if self.paused {
            return Ok(false);
        }
        self.session.step()?;
        Ok(true)
    }

    pub fn frame(&self) -> StateFrame {
        let s = &self.session;
        let geom = ObjectGeometry::from_object(&s.world().object);
        let mut h = HValues::default();
        let (mut agents, mut min_distance, mut witness) = (Vec::new(), None, None);
        if let Some(log) = s.last_log() {
            h.collision = log.h_coll.map(sig6);
            for p in &log.pairs {
                h.stretch.insert(format!("{}-{}", p.a, p.b), sig6(p.h_stretch));
                h.proximity.insert(format!("{}-{}", p.a, p.b), sig6(p.h_prox));
            }
            min_distance = log.min_distance.map(sig6);
            witness = log.witness.map(|[a, b]| [v6(&a), v6(&b)]);
            agents = log
                .agents
                .iter()
                .map(|a| AgentFrame {
                    id: a.id.clone(),
                    pos: v6(&s.world().agent_position(&a.id).unwrap_or(a.position)),
                    u: v6(&a.u),
                    status: a.status.as_str().to_string(),
                    active_labels: a.active_labels.clone(),
                })
                .collect();
        }
        StateFrame {
            tick: s.tick(),
            t: sig6(s.time()),
            paused: self.paused,
            object_kind: s.world().object.kind_name().to_string(),
            topology_hash: self.topology.hash.clone(),
            positions: geom.points.iter().map(v6).collect(),
            agents,
            leader_pos: v6(&s.leader_position()),
            h_values: h,
            min_distance,
            witness,
        }
    }
}

/// Canonical JSON of a message: fixed key order, floats already rounded.
pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("wire types always serialise")
}

pub fn encode_state_frame(session: &BridgeSession) -> String {
    encode(&ServerMessage::Frame(session.frame()))
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub port: u16,
    pub broadcast_hz: f64,
    /// Pace ticks to wall-clock time.
    pub realtime: bool,
    /// Stop after this many ticks (tests, demos).
    pub max_ticks: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { port: 8765, broadcast_hz: DEFAULT_BROADCAST_HZ, realtime: true, max_ticks: None }
    }
}

struct Snapshot {
    topology: Arc<String>,
    topology_hash: String,
    /// Bumped on every publish.
    sequence: u64,
    frame: Arc<String>,
}

type Inbox = Sender<(Command, Sender<String>)>;

/// Handle to a running server.
pub struct Server {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<thread::JoinHandle<Result<(), BridgeError>>>,
}

impl Server {
    pub fn stop(mut self) -> Result<(), BridgeError> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Wait for the simulation loop to finish.
    pub fn join(&mut self) -> Result<(), BridgeError> {
        match self.sim.take() {
            Some(h) => h.join().unwrap_or_else(|_| Err(BridgeError::Command("simulation thread panicked".into()))),
            None => Ok(()),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Bind and start serving `bridge`. Port 0 picks a free port.
pub fn serve(bridge: BridgeSession, options: ServeOptions) -> Result<Server, BridgeError> {
    let host = std::env::var(BIND_ENV).unwrap_or_else(|_| "127.0.0.1".into());
    let addr = format!("{host}:{}", options.port);
    let listener = TcpListener::bind(&addr).map_err(|source| BridgeError::Bind { addr: addr.clone(), source })?;
    let local = listener.local_addr().map_err(|source| BridgeError::Bind { addr, source })?;
    listener.set_nonblocking(true).ok();

    let stop = Arc::new(AtomicBool::new(false));
    let snapshot = Arc::new(Mutex::new(Snapshot {
        topology: Arc::new(encode(&ServerMessage::Topology(bridge.topology().clone()))),
        topology_hash: bridge.topology().hash.clone(),
        sequence: 0,
        frame: Arc::new(encode_state_frame(&bridge)),
    }));
    let (inbox, commands) = mpsc::channel::<(Command, Sender<String>)>();

    {
        let (stop, snapshot) = (stop.clone(), snapshot.clone());
        let period = Duration::from_secs_f64(1.0 / options.broadcast_hz);
        thread::spawn(move || accept_loop(listener, stop, snapshot, inbox, period));
    }
    let sim = {
        let (stop, snapshot) = (stop.clone(), snapshot.clone());
        thread::spawn(move || sim_loop(bridge, commands, snapshot, stop, options))
    };
    log::info!("bridge listening on ws://{local}");
    Ok(Server { addr: local, stop, sim: Some(sim) })
}

fn sim_loop(
    mut bridge: BridgeSession,
    commands: Receiver<(Command, Sender<String>)>,
    snapshot: Arc<Mutex<Snapshot>>,
    stop: Arc<AtomicBool>,
    options: ServeOptions,
) -> Result<(), BridgeError> {
    let publish = |bridge: &BridgeSession, topology: bool| {
        let frame = Arc::new(encode_state_frame(bridge));
        let mut s = snapshot.lock().expect("snapshot lock");
        if topology {
            s.topology = Arc::new(encode(&ServerMessage::Topology(bridge.topology().clone())));
            s.topology_hash = bridge.topology().hash.clone();
        }
        s.sequence += 1;
        s.frame = frame;
    };
    let mut next = Instant::now();
    let mut ticks = 0u64;
    while !stop.load(Ordering::SeqCst) {
        let dt = Duration::from_secs_f64(bridge.session.dt());
        // tick boundary: apply queued commands
        let (mut applied, mut topology_changed) = (false, false);
        while let Ok((cmd, reply)) = commands.try_recv() {
            let before = bridge.topology().hash.clone();
            let msg = match bridge.apply_command(&cmd) {
                Ok(ack) => ServerMessage::Ack(ack),
                Err(e) => ServerMessage::Error(ErrorReply { message: e.to_string() }),
            };
            applied = true;
            topology_changed |= bridge.topology().hash != before;
            let _ = reply.send(encode(&msg));
        }
        let advanced = bridge.tick()?;
        if advanced || applied {
            publish(&bridge, topology_changed);
        }
        if advanced {
            ticks += 1;
            if options.max_ticks.is_some_and(|m| ticks >= m) {
                break;
            }
        }
        if options.realtime || !advanced {
            next += dt;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    Ok(())
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, snapshot: Arc<Mutex<Snapshot>>, inbox: Inbox, period: Duration) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (stop, snapshot, inbox) = (stop.clone(), snapshot.clone(), inbox.clone());
                thread::spawn(move || {
                    if let Err(e) = client_loop(stream, stop, snapshot, inbox, period) {
                        log::debug!("client {peer} disconnected: {e}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn client_loop(
    stream: TcpStream,
    stop: Arc<AtomicBool>,
    snapshot: Arc<Mutex<Snapshot>>,
    inbox: Inbox,
    period: Duration,
) -> Result<(), Box<tungstenite::Error>> {
    stream.set_nonblocking(false).ok();
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2))).ok();
    let (reply_tx, reply_rx) = mpsc::channel::<String>();
    let mut sent_hash = String::new();
    let mut sent: Option<u64> = None;
    let mut next_frame = Instant::now();

    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(&text) {
                Ok(ClientMessage::Command(cmd)) => {
                    if inbox.send((cmd, reply_tx.clone())).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let msg = ServerMessage::Error(ErrorReply { message: format!("malformed message: {e}") });
                    ws.send(Message::Text(encode(&msg)))?;
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(e) => return Err(Box::new(e)),
        }
        while let Ok(reply) = reply_rx.try_recv() {
            ws.send(Message::Text(reply))?;
        }
        if Instant::now() >= next_frame {
            next_frame += period;
            let (topology, frame) = {
                let s = snapshot.lock().expect("snapshot lock");
                let topology = (s.topology_hash != sent_hash).then(|| (s.topology.clone(), s.topology_hash.clone()));
                (topology, (s.sequence, s.frame.clone()))
            };
            if let Some((text, hash)) = topology {
                ws.send(Message::Text(text.as_str().to_owned()))?;
                sent_hash = hash;
                sent = None;
            }
            let (sequence, text) = frame;
            if sent != Some(sequence) {
                ws.send(Message::Text(text.as_str().to_owned()))?;
                sent = Some(sequence);
            }
        }
    }
    let _ = ws.close(None);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), 0.123457);
        assert_eq!(sig6(-98765.4321), -98765.4);
        assert_eq!(sig6(0.0), 0.0);
        assert_eq!(serde_json::to_string(&sig6(1.0 / 3.0)).unwrap(), "0.333333");
    }

    #[test]
    fn command_wire_format() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"command","payload":{"kind":"leader_velocity","velocity":[0.1,0,0]}}"#).unwrap();
        assert_eq!(m, ClientMessage::Command(Command::LeaderVelocity { velocity: [0.1, 0.0, 0.0] }));
        let m: ClientMessage = serde_json::from_str(r#"{"type":"command","payload":{"kind":"pause"}}"#).unwrap();
        assert_eq!(m, ClientMessage::Command(Command::Pause));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"command","payload":{"kind":"warp"}}"#).is_err());
    }

    #[test]
    fn ack_envelope() {
        let text = encode(&ServerMessage::Ack(Ack { command: "pause".into(), applies_at_tick: 7, velocity: None }));
        assert_eq!(text, r#"{"type":"ack","payload":{"command":"pause","applies_at_tick":7}}"#);
    }

    #[test]
    fn empty_pair_maps_encode_as_objects() {
        let h = HValues::default();
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"collision":null,"stretch":{},"proximity":{}}"#);
    }
}

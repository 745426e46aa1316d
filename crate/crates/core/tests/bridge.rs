use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use deformable_cbf::bridge::{
    encode, encode_state_frame, serve, BridgeError, BridgeSession, ClientMessage, Command, ServeOptions, ServerMessage,
};
use deformable_cbf::scenario::{load_scenario, RunOptions};
use tungstenite::Message;

fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bridge(name: &str) -> BridgeSession {
    let mut c = load_scenario(&dir().join(format!("{name}.toml"))).unwrap();
    c.sim.settle_time = 0.5;
    c.sim.replica_settle_time = 0.2;
    let mut b = BridgeSession::new(c, RunOptions::default()).unwrap();
    b.scenario_dir = Some(dir());
    b
}

fn read_server(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>) -> ServerMessage {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

fn send(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>, cmd: Command) {
    let text = serde_json::to_string(&ClientMessage::Command(cmd)).unwrap();
    ws.send(Message::Text(text)).unwrap();
}

#[test]
fn pause_holds_the_tick_counter() {
    let mut b = bridge("rope_free_space");
    b.tick().unwrap();
    let ack = b.apply_command(&Command::Pause).unwrap();
    assert_eq!(ack.applies_at_tick, 1);
    for _ in 0..5 {
        assert!(!b.tick().unwrap());
    }
    assert_eq!(b.session.tick(), 1);
    b.apply_command(&Command::Resume).unwrap();
    b.tick().unwrap();
    assert_eq!(b.session.tick(), 2);
    assert_eq!(b.session.last_log().unwrap().tick, 1);
}

#[test]
fn steering_integrates_velocity() {
    let mut b = bridge("rope_free_space");
    let start = b.session.leader_position();
    b.apply_command(&Command::LeaderVelocity { velocity: [0.1, 0.0, 0.0] }).unwrap();
    for _ in 0..100 {
        b.tick().unwrap();
    }
    let moved = b.session.leader_position() - start;
    assert!((moved.x - 0.2).abs() <= 0.1 * b.session.dt() + 1e-12, "{moved}");
    assert!(moved.y.abs() < 1e-12 && moved.z.abs() < 1e-12);
}

#[test]
fn steering_is_clamped_and_must_be_finite() {
    let mut b = bridge("rope_free_space");
    let ack = b.apply_command(&Command::LeaderVelocity { velocity: [3.0, 4.0, 0.0] }).unwrap();
    let v = ack.velocity.unwrap();
    assert!((v[0] - 0.18).abs() < 1e-12 && (v[1] - 0.24).abs() < 1e-12);
    assert!(b.apply_command(&Command::LeaderVelocity { velocity: [f64::NAN, 0.0, 0.0] }).is_err());
}

#[test]
fn velocity_while_paused_applies_on_resume() {
    let mut b = bridge("rope_free_space");
    b.apply_command(&Command::Pause).unwrap();
    b.apply_command(&Command::LeaderVelocity { velocity: [0.0, 0.0, 0.1] }).unwrap();
    let start = b.session.leader_position();
    b.tick().unwrap();
    assert_eq!(b.session.leader_position(), start);
    b.apply_command(&Command::Resume).unwrap();
    for _ in 0..10 {
        b.tick().unwrap();
    }
    assert!((b.session.leader_position().z - start.z - 0.02).abs() < 1e-9);
}

#[test]
fn reset_is_idempotent_and_selection_changes_topology() {
    let mut b = bridge("rope_free_space");
    let hash = b.topology().hash.clone();
    for _ in 0..3 {
        b.tick().unwrap();
    }
    b.apply_command(&Command::Reset).unwrap();
    b.apply_command(&Command::Reset).unwrap();
    assert_eq!(b.session.tick(), 0);
    assert_eq!(b.topology().hash, hash);

    b.apply_command(&Command::SelectScenario { name: "rope_two_assistants".into() }).unwrap();
    assert_ne!(b.topology().hash, hash);
    assert_eq!(b.topology().agents.len(), 2);
    assert!(b.apply_command(&Command::SelectScenario { name: "../secrets".into() }).is_err());
    assert!(b.apply_command(&Command::SelectScenario { name: "no_such_scenario".into() }).is_err());
}

#[test]
fn fabric_frame_is_small_and_fast() {
    let mut b = bridge("fabric_three_assistants");
    b.tick().unwrap();
    let started = Instant::now();
    let text = encode_state_frame(&b);
    let elapsed = started.elapsed();
    assert!(text.len() < 32 * 1024, "{} bytes", text.len());
    assert!(elapsed < Duration::from_millis(1), "{elapsed:?}");

    let decoded: ServerMessage = serde_json::from_str(&text).unwrap();
    let ServerMessage::Frame(frame) = decoded.clone() else { panic!("not a frame") };
    assert_eq!(frame.positions.len(), 225);
    assert_eq!(frame.agents.len(), 3);
    assert_eq!(frame.h_values.stretch.len(), 4);
    assert_eq!(encode(&decoded), text);
    let exact = b.session.world().object.body_position(112).unwrap();
    for (c, e) in frame.positions[112].iter().zip(exact.iter()) {
        assert!((c - e).abs() <= 1e-5 * e.abs().max(1e-3));
    }
}

#[test]
fn busy_port_is_a_startup_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let err = serve(bridge("rope_free_space"), ServeOptions { port, ..ServeOptions::default() });
    assert!(matches!(err, Err(BridgeError::Bind { .. })));
}

#[test]
fn client_session_over_the_socket() {
    let options = ServeOptions { port: 0, broadcast_hz: 30.0, realtime: true, max_ticks: None };
    let server = serve(bridge("rope_single_assistant"), options).unwrap();
    std::thread::sleep(Duration::from_millis(200));
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", server.addr)).unwrap();

    let ServerMessage::Topology(topology) = read_server(&mut ws) else { panic!("expected topology first") };
    assert_eq!(topology.point_count, 29);
    assert_eq!(topology.edges.len(), 28);

    // frames arrive at a steady rate with increasing ticks
    let started = Instant::now();
    let mut ticks = Vec::new();
    while ticks.len() < 10 {
        if let ServerMessage::Frame(f) = read_server(&mut ws) {
            assert_eq!(f.topology_hash, topology.hash);
            ticks.push(f.tick);
        }
    }
    let rate = 9.0 / started.elapsed().as_secs_f64();
    assert!(ticks.windows(2).all(|w| w[1] > w[0]), "{ticks:?}");
    assert!(rate >= 20.0, "{rate:.1} Hz");

    // malformed input gets an error and the connection stays usable
    ws.send(Message::Text("{\"type\":\"command\",\"payload\":{\"kind\":\"warp\"}}".into())).unwrap();
    let mut saw_error = false;
    let sent = Instant::now();
    send(&mut ws, Command::LeaderVelocity { velocity: [0.0, 0.05, 0.0] });
    let mut round_trip = None;
    while round_trip.is_none() {
        match read_server(&mut ws) {
            ServerMessage::Error(_) => saw_error = true,
            ServerMessage::Ack(a) => {
                assert_eq!(a.command, "leader_velocity");
                round_trip = Some(sent.elapsed());
            }
            _ => {}
        }
    }
    assert!(saw_error);
    assert!(round_trip.unwrap() < Duration::from_millis(100), "{round_trip:?}");

    send(&mut ws, Command::Pause);
    let ack_tick = loop {
        if let ServerMessage::Ack(a) = read_server(&mut ws) {
            break a.applies_at_tick;
        }
    };
    let paused_tick = loop {
        if let ServerMessage::Frame(f) = read_server(&mut ws) {
            if f.paused {
                break f.tick;
            }
        }
    };
    assert_eq!(paused_tick, ack_tick);
    // nothing new while paused
    if let tungstenite::stream::MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_millis(400))).unwrap();
    }
    match ws.read() {
        Err(tungstenite::Error::Io(e)) => assert!(matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)),
        Ok(Message::Text(t)) => panic!("unexpected message while paused: {t}"),
        other => panic!("{other:?}"),
    }
    server.stop().unwrap();
}

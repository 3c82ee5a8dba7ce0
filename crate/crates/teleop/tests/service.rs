use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tapegrip_core::protocol::{ErrorCode, PrimitiveEvent, ServerMessage, SessionEvent, StateFrame};
use tapegrip_core::scenario::run_scenario;
use tapegrip_core::sim::InitialPose;
use tapegrip_core::SimConfig;
use tapegrip_teleop::{ServeError, ServeOptions, Server};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(60);

async fn server(tick_hz: f64, record: bool) -> Server {
    let opts = ServeOptions { tick_hz, record, keep_snapshots: record };
    Server::bind("127.0.0.1:0", SimConfig::default(), InitialPose::default(), opts).await.unwrap()
}

async fn connect(s: &Server) -> Ws {
    let (ws, _) = connect_async(format!("ws://{}/ws", s.local_addr())).await.unwrap();
    ws
}

async fn send(ws: &mut Ws, msg: Value) {
    let mut msg = msg;
    msg["protocol_version"] = json!(1);
    ws.send(Message::Text(msg.to_string().into())).await.unwrap();
}

/// Next server message; `None` once the server closes.
async fn recv(ws: &mut Ws) -> Option<ServerMessage> {
    loop {
        match timeout(WAIT, ws.next()).await.expect("server went quiet")? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(t.as_str()).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

async fn next_matching<T>(ws: &mut Ws, mut f: impl FnMut(&ServerMessage) -> Option<T>) -> T {
    loop {
        let msg = recv(ws).await.expect("connection closed");
        if let Some(t) = f(&msg) {
            return t;
        }
    }
}

async fn next_state(ws: &mut Ws) -> StateFrame {
    next_matching(ws, |m| match m {
        ServerMessage::State(s) => Some(s.clone()),
        _ => None,
    })
    .await
}

async fn next_error(ws: &mut Ws) -> ErrorCode {
    next_matching(ws, |m| match m {
        ServerMessage::Error { code, .. } => Some(*code),
        _ => None,
    })
    .await
}

async fn primitive_end(ws: &mut Ws) -> PrimitiveEvent {
    next_matching(ws, |m| match m {
        ServerMessage::Event { event: SessionEvent::Primitive(p), .. } => Some(p.clone()),
        ServerMessage::Error { code, message } => panic!("{code:?}: {message}"),
        _ => None,
    })
    .await
}

#[tokio::test(flavor = "multi_thread")]
async fn hello_comes_first() {
    let s = server(50.0, false).await;
    let mut ws = connect(&s).await;
    match recv(&mut ws).await.unwrap() {
        ServerMessage::Hello { protocol_version, config } => {
            assert_eq!(protocol_version, 1);
            assert_eq!(serde_json::to_value(&config).unwrap()["contact_threshold"], json!(0.25));
        }
        other => panic!("expected hello, got {other:?}"),
    }
    assert!(matches!(recv(&mut ws).await.unwrap(), ServerMessage::State(_)));
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_messages_keep_the_connection() {
    let s = server(50.0, false).await;
    let mut ws = connect(&s).await;
    ws.send(Message::Text("not json".into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadRequest);
    ws.send(Message::Text(json!({"type": "reset", "protocol_version": 2}).to_string().into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadRequest);
    ws.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadRequest);
    send(&mut ws, json!({"type": "goto", "side": "left", "x": 0.0, "y": 5000.0})).await;
    assert_eq!(next_error(&mut ws).await, ErrorCode::OutOfWorkspace);
    let a = next_state(&mut ws).await.tick;
    let b = next_state(&mut ws).await.tick;
    assert!(b > a);
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn zero_jog_moves_nothing() {
    let s = server(200.0, false).await;
    let mut ws = connect(&s).await;
    let before = next_state(&mut ws).await;
    send(&mut ws, json!({"type": "jog", "side": "left", "dL1_rate": 0.0, "dL2_rate": 0.0, "dTheta4_rate": 0.0, "dWidth_rate": 0.0})).await;
    let mut after = next_state(&mut ws).await;
    while after.tick < before.tick + 20 {
        after = next_state(&mut ws).await;
    }
    assert_eq!((after.left, after.right, after.width), (before.left, before.right, before.width));
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn a_running_primitive_makes_others_busy() {
    let s = server(50.0, false).await;
    let mut ws = connect(&s).await;
    send(&mut ws, json!({"type": "primitive", "name": "auto_grip"})).await;
    send(&mut ws, json!({"type": "goto", "side": "left", "x": -50.0, "y": 400.0})).await;
    assert_eq!(next_error(&mut ws).await, ErrorCode::Busy);
    let frame = next_state(&mut ws).await;
    assert_eq!(frame.primitive.unwrap().name, "auto_grip");
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn recorded_sessions_replay_tick_for_tick() {
    let s = server(4000.0, true).await;
    let mut ws = connect(&s).await;
    send(&mut ws, json!({"type": "subscribe", "rate_hz": 5.0})).await;
    send(&mut ws, json!({"type": "spawn_object", "shape": {"kind": "circle", "radius": 25.0}, "pose": {"position": {"x": 0.0, "y": 350.0}}})).await;
    send(&mut ws, json!({"type": "primitive", "name": "auto_grip"})).await;
    assert_eq!(primitive_end(&mut ws).await, PrimitiveEvent::PrimitiveDone { name: "auto_grip".into() });
    send(&mut ws, json!({"type": "primitive", "name": "rotate", "params": {"object": 1, "angle": FRAC_PI_2}})).await;
    assert_eq!(primitive_end(&mut ws).await, PrimitiveEvent::PrimitiveDone { name: "rotate".into() });
    send(&mut ws, json!({"type": "primitive", "name": "release"})).await;
    assert_eq!(primitive_end(&mut ws).await, PrimitiveEvent::PrimitiveDone { name: "release".into() });
    let rec = s.shutdown().await.unwrap();
    assert!(recv(&mut ws).await.is_none() || recv(&mut ws).await.is_none());

    assert_eq!(rec.scenario.script.len(), 4, "subscribe is not recorded");
    let text = rec.scenario.to_json_pretty();
    let sc = tapegrip_core::scenario::Scenario::from_json(&text).unwrap();
    let cfg = sc.resolve_config(Path::new(".")).unwrap();
    let mut lines = Vec::new();
    let run = run_scenario(&sc, cfg, |l| {
        lines.push(l.to_string());
        Ok(())
    })
    .unwrap();
    assert_eq!(lines.len(), rec.snapshots.len());
    assert!(lines == rec.snapshots, "replay diverged");
    let o = run.world.object(1).unwrap();
    assert!(!o.held);
    assert!((o.pose.orientation.to_degrees() - 90.0).abs() < 0.1);
}

#[tokio::test(flavor = "multi_thread")]
async fn a_stalled_client_does_not_hold_the_world_back() {
    let s = server(500.0, false).await;
    // Never read from this one.
    let _stalled = connect(&s).await;
    let mut ws = connect(&s).await;
    let a = next_state(&mut ws).await.tick;
    tokio::time::sleep(Duration::from_secs(1)).await;
    // A fresh connection starts from the latest frame.
    let b = next_state(&mut connect(&s).await).await.tick;
    assert!(b - a >= 100, "only {} ticks in a second", b - a);
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_closes_connections() {
    let s = server(50.0, false).await;
    let mut ws = connect(&s).await;
    assert!(matches!(recv(&mut ws).await, Some(ServerMessage::Hello { .. })));
    s.shutdown().await.unwrap();
    while recv(&mut ws).await.is_some() {}
}

#[tokio::test(flavor = "multi_thread")]
async fn bind_failures_are_reported() {
    let s = server(50.0, false).await;
    let taken = Server::bind(s.local_addr(), SimConfig::default(), InitialPose::default(), ServeOptions::default()).await;
    assert!(matches!(taken, Err(ServeError::Bind(_))));
    for hz in [0.0, -1.0, f64::NAN] {
        let opts = ServeOptions { tick_hz: hz, ..ServeOptions::default() };
        let r = Server::bind("127.0.0.1:0", SimConfig::default(), InitialPose::default(), opts).await;
        assert!(matches!(r, Err(ServeError::InvalidTickRate(_))));
    }
    s.shutdown().await.unwrap();
}

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use wristlab::service::{Controller, ControllerConfig, Server, ServerConfig};

fn start(
    dir: &tempfile::TempDir,
) -> (
    SocketAddr,
    SocketAddr,
    wristlab::service::ShutdownHandle,
    thread::JoinHandle<()>,
) {
    let server = Server::bind(ServerConfig {
        tcp_addr: "127.0.0.1:0".parse().unwrap(),
        ws_addr: Some("127.0.0.1:0".parse().unwrap()),
        speedup: 4.0,
        ..ServerConfig::default()
    })
    .unwrap();
    let ports = server.ports().unwrap();
    let stop = server.shutdown_handle();
    let config = ControllerConfig {
        data_dir: dir.path().to_path_buf(),
        ..ControllerConfig::default()
    };
    let handle = thread::spawn(move || {
        let mut c = Controller::simulated(config, 0.0, 0).unwrap();
        server.run(&mut c).unwrap();
    });
    (ports.tcp, ports.ws.unwrap(), stop, handle)
}

/// Reads lines until one carries the given id.
fn reply_for(reader: &mut impl BufRead, id: i64, seen: &mut Vec<Value>) -> Value {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        assert!(Instant::now() < deadline, "no reply for id {id}");
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 {
            panic!("connection closed");
        }
        let v: Value = serde_json::from_str(&line).unwrap();
        if v.get("id") == Some(&json!(id)) {
            return v;
        }
        seen.push(v);
    }
}

#[test]
fn tcp_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (tcp, _ws, stop, handle) = start(&dir);
    let mut stream = TcpStream::connect(tcp).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut seen = Vec::new();

    writeln!(stream, r#"{{"cmd":"connect","id":1}}"#).unwrap();
    let r = reply_for(&mut reader, 1, &mut seen);
    assert_eq!(r["ok"], true);
    assert_eq!(r["state"], "idle");

    writeln!(stream, r#"{{"cmd":"jog","dp":80,"cr":0,"id":2}}"#).unwrap();
    let r = reply_for(&mut reader, 2, &mut seen);
    assert_eq!(r["ok"], true);
    assert_eq!(r["dp"], 50.0, "slider clamped to the envelope");

    writeln!(stream, "garbage").unwrap();
    writeln!(stream, r#"{{"cmd":"reset","id":3}}"#).unwrap();
    let r = reply_for(&mut reader, 3, &mut seen);
    assert_eq!(r["ok"], false);
    assert!(r["reason"].as_str().unwrap().contains("reset"));
    assert!(seen
        .iter()
        .any(|v| v["ok"] == false && v.get("id").is_none()));

    writeln!(stream, r#"{{"cmd":"estop","id":4}}"#).unwrap();
    assert_eq!(reply_for(&mut reader, 4, &mut seen)["state"], "estop");

    // wait for telemetry reporting the latched state
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        assert!(Instant::now() < deadline);
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        if v["ev"] == "telemetry" && v["state"] == "estop" {
            break;
        }
        seen.push(v);
    }
    assert!(seen
        .iter()
        .any(|v| v["ev"] == "state" && v["from"] == "disconnected" && v["to"] == "idle"));

    stop.shutdown();
    handle.join().unwrap();
}

#[test]
fn websocket_binding_speaks_the_same_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let (_tcp, ws, stop, handle) = start(&dir);
    let (mut socket, _) = tungstenite::connect(format!("ws://{ws}")).unwrap();
    socket
        .send(tungstenite::Message::text(r#"{"cmd":"connect","id":"a"}"#))
        .unwrap();
    socket
        .send(tungstenite::Message::text(
            r#"{"cmd":"list_routines","id":"b"}"#,
        ))
        .unwrap();
    let mut got_list = false;
    let mut telemetry = 0;
    let deadline = Instant::now() + Duration::from_secs(5);
    while !(got_list && telemetry >= 3) {
        assert!(Instant::now() < deadline, "timed out");
        let msg = socket.read().unwrap();
        let Ok(text) = msg.to_text() else { continue };
        if text.is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(text).unwrap();
        if v.get("id") == Some(&json!("b")) {
            assert_eq!(v["ok"], true);
            assert_eq!(v["routines"], json!([]));
            got_list = true;
        }
        if v["ev"] == "telemetry" {
            telemetry += 1;
        }
    }
    stop.shutdown();
    handle.join().unwrap();
}

#[test]
fn run_for_stops_the_server() {
    let server = Server::bind(ServerConfig {
        tcp_addr: "127.0.0.1:0".parse().unwrap(),
        speedup: 50.0,
        run_for_ms: Some(1000),
        ..ServerConfig::default()
    })
    .unwrap();
    let mut c = Controller::simulated(ControllerConfig::default(), 0.0, 0).unwrap();
    let started = Instant::now();
    server.run(&mut c).unwrap();
    assert!(c.now_ms() >= 1000);
    assert!(started.elapsed() < Duration::from_secs(5));
}

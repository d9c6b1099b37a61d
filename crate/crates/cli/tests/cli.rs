use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn wristlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wristlab"))
        .args(args)
        .env_remove("WRISTLAB_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_deterministic_and_analyzes_clean() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for f in [&a, &b] {
        let o = wristlab(&[
            "generate",
            "--duration",
            "10",
            "--freq",
            "0.5",
            "--out",
            path(f),
        ]);
        assert!(o.status.success(), "{o:?}");
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert!(String::from_utf8_lossy(&text).starts_with("# wristlab-routine v1\n"));

    let json = dir.path().join("report.json");
    let plot = dir.path().join("plot.csv");
    let o = wristlab(&[
        "analyze",
        path(&a),
        "--json",
        path(&json),
        "--plot-csv",
        path(&plot),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("ROM violations: 0"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["motor_adequate"], true);
    assert_eq!(report["samples"], 501);
    let plot = std::fs::read_to_string(&plot).unwrap();
    assert!(plot.starts_with("t_ms,v_dp,v_cr,a_dp,a_cr,tau_motor_dp,tau_motor_cr\n"));
    assert_eq!(plot.lines().count(), 502);
}

#[test]
fn analyze_flags_rom_violations() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("wide.csv");
    std::fs::write(
        &f,
        "# wristlab-routine v1\nt_ms,theta_dp_deg,theta_cr_deg\n0,0,0\n20,30,0\n40,60.5,0\n60,40,0\n",
    )
    .unwrap();
    let o = wristlab(&["analyze", path(&f), "--json", "-"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["rom_violations"]["count"], 1);
    assert_eq!(report["rom_violations"]["first_t_ms"], 40);
}

#[test]
fn check_motor_verdicts() {
    let o = wristlab(&["check-motor", "--torque", "184.5", "--speed", "432.42"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("torque margin: 2.60"));
    let o = wristlab(&["check-motor", "--torque", "500", "--speed", "100"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("inadequate"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["generate", "--duration", "0"][..],
        &["simulate", "--tick-hz", "0"],
        &["analyze", "/nonexistent/routine.csv"],
        &["check-motor", "--torque", "-1", "--speed", "1"],
        &["frobnicate"],
    ] {
        assert_eq!(wristlab(args).status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.csv");
    std::fs::write(&f, "t_ms,theta_dp_deg,theta_cr_deg\n0,0,0\n0,1,1\n").unwrap();
    assert_eq!(wristlab(&["analyze", path(&f)]).status.code(), Some(2));
}

#[test]
fn scripted_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("session.jsonl");
    std::fs::write(
        &script,
        concat!(
            "# connect, jog, record and replay\n",
            "{\"at_ms\":0,\"cmd\":\"connect\"}\n",
            "{\"at_ms\":20,\"cmd\":\"start_record\",\"name\":\"r\"}\n",
            "{\"cmd\":\"jog\",\"dp\":20,\"cr\":5}\n",
            "{\"at_ms\":600,\"cmd\":\"stop_record\"}\n",
            "{\"at_ms\":700,\"cmd\":\"start_playback\",\"name\":\"r\"}\n",
        ),
    )
    .unwrap();
    let data = dir.path().join("data");
    let run = |log: &Path| {
        let o = wristlab(&[
            "simulate",
            "--script",
            path(&script),
            "--noise-sigma",
            "1.5",
            "--seed",
            "3",
            "--run-for-ms",
            "1500",
            "--data-dir",
            path(&data),
            "--log",
            path(log),
        ]);
        assert!(o.status.success(), "{o:?}");
        std::fs::read(log).unwrap()
    };
    let a = run(&dir.path().join("a.log"));
    let b = run(&dir.path().join("b.log"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.contains("\"telemetry\"")).count(),
        30
    );
    assert!(text.contains(r#""from":"playback","to":"idle""#));
}

#[test]
fn simulate_serves_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wristlab"))
        .args([
            "simulate",
            "--port",
            "0",
            "--speedup",
            "5",
            "--run-for-ms",
            "20000",
        ])
        .env("WRISTLAB_DATA_DIR", dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut banner = String::new();
    out.read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening tcp=").expect(&banner);
    let mut stream = TcpStream::connect(addr).unwrap();
    writeln!(stream, r#"{{"cmd":"connect","id":1}}"#).unwrap();
    let mut reader = BufReader::new(stream);
    loop {
        let mut line = String::new();
        assert!(reader.read_line(&mut line).unwrap() > 0);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        if v["id"] == 1 {
            assert_eq!(v["ok"], true);
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
}

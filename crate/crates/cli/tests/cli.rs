use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use fullstream_core::engine::from_jsonl;
use fullstream_core::StreamEvent;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fullstream"))
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_writes_a_parseable_event_log() {
    let out = ok(bin().args(["synth", "--text", "hello there world.", "--backend", "scripted", "--tps", "10"]).output().unwrap());
    let events = from_jsonl(&out).unwrap();
    assert!(events.iter().any(|e| matches!(e, StreamEvent::FrameEmitted { .. })));
    assert!(matches!(events.last(), Some(StreamEvent::Done { .. })));
    // Same seed, same bytes.
    let again = ok(bin().args(["synth", "--text", "hello there world.", "--backend", "scripted", "--tps", "10"]).output().unwrap());
    assert_eq!(out, again);
}

#[test]
fn synth_reads_phoneme_files_and_writes_to_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "3, 0, 0\n5, 0, 1\n\n7, 0, 0\n9, 0, 1\n1, 1, 0\n").unwrap();
    let log = dir.path().join("out.jsonl");
    ok(bin()
        .args(["synth", "--backend", "scripted", "--src", "--schedule", "constant:3"])
        .arg("--phonemes-file")
        .arg(&input)
        .arg("--out")
        .arg(&log)
        .output()
        .unwrap());
    let events = from_jsonl(&std::fs::read_to_string(&log).unwrap()).unwrap();
    let ingested = events.iter().filter(|e| matches!(e, StreamEvent::TextIngested { .. })).count();
    assert_eq!(ingested, 2);
}

#[test]
fn synth_rejects_bad_arguments() {
    for args in [
        vec!["synth"],
        vec!["synth", "--text", "x", "--tps", "-3"],
        vec!["synth", "--text", "x", "--schedule", "wobble:1"],
        vec!["synth", "--text", "x", "--clock", "sundial"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
    }
}

#[test]
fn sweep_prints_csv_grid() {
    let out = ok(bin().args(["bench", "sweep", "--tps", "10", "--tps", "inf", "--la", "1", "--la", "3"]).output().unwrap());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "tps,la_min,fpl_ms,rtf,stall_count,stall_total_ms,corr,frames,seed,coverage_gaps,error");
    assert_eq!(lines.len(), 5);
    let fpl = |l: &str| l.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!(lines[1].starts_with("10,1,"));
    assert!((fpl(lines[1]) - 5.0).abs() < 1e-9);
    assert!(lines[2].starts_with("10,3,"));
    assert!((fpl(lines[2]) - 205.0).abs() < 1e-9);
    assert!(lines[3].starts_with("inf,1,"));
}

#[test]
fn rate_bench_reports_correlation() {
    let out = bin().args(["bench", "rate", "--schedule", "ramp:1:7"]).output().unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pearson"), "{stderr}");
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("time_s,target_sps,achieved_sps"));
}

#[test]
fn table_round_trip_and_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    ok(bin().args(["table", "synthetic", "--out"]).arg(&table).output().unwrap());
    let probs = ok(bin().args(["table", "lookup", "--sps", "4"]).arg("--table").arg(&table).output().unwrap());
    let p: Vec<f64> = probs.trim().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(p.len(), 6);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    let records = dir.path().join("align.csv");
    std::fs::write(&records, "# id, sps, counts\nu1, 2.1, 10, 0, 5, 0, 1, 0\nu2, 5.9, 0, 0, 2, 4, 9, 3\n").unwrap();
    let built = dir.path().join("built.json");
    ok(bin().args(["table", "from-alignments", "--bin-width", "1", "--input"]).arg(&records).arg("--out").arg(&built).output().unwrap());
    let out = bin().args(["table", "lookup", "--sps", "20", "--table"]).arg(&built).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clamped"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_speaks_the_protocol() {
    let port = free_port();
    let _server = Server(
        bin()
            .args(["serve", "--backend", "scripted", "--max-sessions", "1", "--port", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let health = loop {
        if let Some(b) = http_get(port, "/health") {
            break b;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(health.contains("\"max_sessions\":1"), "{health}");

    let (mut ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}/ws")).unwrap();
    let send = |ws: &mut tungstenite::WebSocket<_>, v: &str| ws.send(tungstenite::Message::text(v)).unwrap();
    send(&mut ws, r#"{"type":"end_text"}"#);
    send(&mut ws, r#"{"type":"start","config":{"src":true,"schedule":"constant:4"}}"#);
    for w in ["one", "two", "three."] {
        send(&mut ws, &format!(r#"{{"type":"text","token":"{w}"}}"#));
    }
    send(&mut ws, r#"{"type":"end_text"}"#);
    let mut kinds = Vec::new();
    loop {
        let msg = ws.read().unwrap();
        let tungstenite::Message::Text(text) = msg else { continue };
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let kind = v["type"].as_str().unwrap().to_string();
        if kind == "error" {
            assert_eq!(v["code"], "not_started");
        }
        kinds.push(kind.clone());
        if kind == "done" {
            break;
        }
    }
    assert_eq!(kinds[0], "error");
    assert_eq!(kinds[1], "started");
    assert!(kinds.iter().any(|k| k == "frame"));

    // The slot comes back once the client leaves.
    drop(ws);
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let h = http_get(port, "/health").unwrap_or_default();
        if h.contains("\"active_sessions\":0") {
            break;
        }
        assert!(Instant::now() < deadline, "slot never released: {h}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

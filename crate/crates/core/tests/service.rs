use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use fullstream_core::service::{replay_telemetry, Hub, SimConnection, Telemetry, MAX_RATE_LIMITED_PER_SECOND};
use fullstream_core::{BackendKind, ClockMode, StreamEvent};

const LINE: &str = "the quick brown fox jumps over the lazy dog and keeps on running.";

fn hub(max: usize) -> Arc<Hub> {
    Arc::new(Hub::new(max, 5, BackendKind::Scripted, ClockMode::Simulated))
}

fn feed(conn: &mut SimConnection, words: usize) {
    for w in LINE.split_whitespace().cycle().take(words) {
        conn.send(&serde_json::json!({"type": "text", "token": w}).to_string());
    }
}

/// A scripted exchange: client lines prefixed `> `, server lines `< `.
fn transcript() -> String {
    let hub = hub(2);
    let mut conn = SimConnection::connect(hub);
    let mut out = String::new();
    let send = |conn: &mut SimConnection, raw: &str, out: &mut String| {
        out.push_str(&format!("> {raw}\n"));
        conn.send(raw);
    };
    let drain = |conn: &mut SimConnection, out: &mut String| {
        for t in conn.take_telemetry() {
            out.push_str(&format!("< {}\n", t.to_json()));
        }
    };
    send(&mut conn, r#"{"type":"text","token":"early"}"#, &mut out);
    drain(&mut conn, &mut out);
    send(&mut conn, r#"{"type":"start","config":{"src":true,"tps":8,"la_min":2,"schedule":"constant:3"}}"#, &mut out);
    drain(&mut conn, &mut out);
    for w in ["hello", "streaming", "world."] {
        send(&mut conn, &format!(r#"{{"type":"text","token":"{w}"}}"#), &mut out);
    }
    conn.advance(0.5);
    drain(&mut conn, &mut out);
    send(&mut conn, r#"{"type":"set_rate","sps":9}"#, &mut out);
    send(&mut conn, r#"{"type":"end_text"}"#, &mut out);
    conn.run_until_blocked();
    drain(&mut conn, &mut out);
    send(&mut conn, r#"{"type":"text","token":"late"}"#, &mut out);
    drain(&mut conn, &mut out);
    out
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/session.txt")
}

#[test]
fn golden_transcript() {
    let live = transcript();
    assert_eq!(live, transcript(), "transcript not reproducible");
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &live).unwrap();
    }
    let frozen = std::fs::read_to_string(&path).expect("golden transcript missing; run with UPDATE_GOLDEN=1");
    assert_eq!(live, frozen);
}

fn frames_of(t: &[Telemetry]) -> Vec<Telemetry> {
    t.iter().filter(|m| matches!(m, Telemetry::Frame { .. })).cloned().collect()
}

fn solo_run(words: usize) -> (Vec<Telemetry>, Vec<StreamEvent>) {
    let mut conn = SimConnection::connect(hub(1));
    conn.send(r#"{"type":"start","config":{"src":true}}"#);
    feed(&mut conn, words);
    conn.send(r#"{"type":"end_text"}"#);
    conn.run_until_blocked();
    (conn.take_telemetry(), conn.events().to_vec())
}

#[test]
fn replayed_log_gives_live_frames_and_totals() {
    let (live, events) = solo_run(30);
    let replay = replay_telemetry(&events);
    assert_eq!(frames_of(&live[1..]), frames_of(&replay));
    let frame_count = frames_of(&live).len();
    match live.last() {
        Some(Telemetry::Done { totals }) => assert_eq!(totals.frames, frame_count),
        other => panic!("last message {other:?}"),
    }
}

#[test]
fn rate_limited_kinds_stay_under_limit() {
    let (live, events) = solo_run(60);
    // Pair each limited message with the session time of the event behind it.
    let mut kinds: HashMap<&str, Vec<f64>> = HashMap::new();
    for t in &live {
        match t {
            Telemetry::Sps { t, .. } => kinds.entry("sps").or_default().push(*t),
            Telemetry::Histogram { t, .. } => kinds.entry("histogram").or_default().push(*t),
            _ => {}
        }
    }
    assert!(!events.is_empty());
    for (kind, times) in kinds {
        assert!(!times.is_empty());
        for (i, &t) in times.iter().enumerate() {
            let in_window = times[i..].iter().take_while(|&&u| u < t + 1.0).count();
            assert!(in_window <= MAX_RATE_LIMITED_PER_SECOND, "{kind}: {in_window} within 1 s of {t}");
        }
    }
}

#[test]
fn concurrent_sessions_do_not_interfere() {
    let (solo, _) = solo_run(20);
    let shared = hub(3);
    let mut a = SimConnection::connect(shared.clone());
    let mut b = SimConnection::connect(shared.clone());
    a.send(r#"{"type":"start","config":{"src":true}}"#);
    b.send(r#"{"type":"start","config":{"src":true,"tps":3}}"#);
    feed(&mut b, 7);
    feed(&mut a, 20);
    a.send(r#"{"type":"end_text"}"#);
    // Interleave the two sessions tick by tick.
    for _ in 0..400 {
        a.advance(0.08);
        b.advance(0.08);
        b.send(r#"{"type":"set_rate","sps":6}"#);
    }
    let ta = a.take_telemetry();
    // Session ids and seeds differ, so compare with a solo run on the same id.
    let seed_of = |t: &[Telemetry]| match t.first() {
        Some(Telemetry::Started { seed, session }) => (*seed, *session),
        other => panic!("{other:?}"),
    };
    assert_eq!(seed_of(&ta), seed_of(&solo));
    assert_eq!(frames_of(&ta), frames_of(&solo));
    // The finished session gave its slot back; the waiting one holds its own.
    assert_eq!(shared.active_sessions(), 1);
    drop(a);
    assert_eq!(shared.active_sessions(), 1);
    drop(b);
    assert_eq!(shared.active_sessions(), 0);
}

#[test]
fn session_limit_is_enforced_and_released() {
    let shared = hub(1);
    let mut a = SimConnection::connect(shared.clone());
    a.send(r#"{"type":"start"}"#);
    let mut b = SimConnection::connect(shared.clone());
    b.send(r#"{"type":"start"}"#);
    assert!(b.take_telemetry().iter().any(|t| matches!(t, Telemetry::Error { .. })));
    a.close();
    assert_eq!(shared.active_sessions(), 0);
    let mut c = SimConnection::connect(shared.clone());
    c.send(r#"{"type":"start"}"#);
    assert!(matches!(c.take_telemetry().first(), Some(Telemetry::Started { .. })));
}

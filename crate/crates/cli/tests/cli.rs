use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tapegrip_core::control::read_trace;
use tapegrip_core::scenario::Scenario;
use tapegrip_core::sim::restore;
use tapegrip_core::workspace::{compute_workspace, read_heatmap};
use tapegrip_core::SimConfig;

fn tapegrip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapegrip")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> String {
    repo().join("scenarios").join(format!("{name}.json")).display().to_string()
}

fn config() -> String {
    repo().join("config/default.toml").display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_config_is_the_default() {
    assert_eq!(tapegrip_core::load_config(config()).unwrap(), SimConfig::default());
}

#[test]
fn workspace_export_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ws.csv");
    let o = tapegrip(&["workspace", "--config", &config(), "--resolution", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_heatmap(std::fs::File::open(&out).unwrap()).unwrap();
    let cfg = SimConfig::default();
    let map = compute_workspace(&cfg.geometry, &cfg.mechanics.buckling, 5.0).unwrap();
    assert_eq!(rows.len(), map.len());
    let both = rows.iter().filter(|r| r.reach_both).count() as f64 * 25.0;
    assert!(both > 0.0);
    assert_eq!(both, map.grip_area());
    assert!(stdout(&o).contains(&format!("{both:.0}")), "{}", stdout(&o));
}

#[test]
fn workspace_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for r in ["0", "-5"] {
        let o = tapegrip(&["workspace", "--resolution", r, "--out", s(&dir.path().join("x.csv"))]);
        assert_eq!(code(&o), 1, "resolution {r}");
    }
    let o = tapegrip(&["workspace", "--out", s(&dir.path().join("missing/dir/x.csv"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&tapegrip(&["workspace"])), 1, "missing --out is a usage error");
    assert_eq!(code(&tapegrip(&["frobnicate"])), 1);
}

#[test]
fn traced_square_loops_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = tapegrip(&["trace", "--shape", "square", "--loops", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read_trace(std::fs::File::open(&out).unwrap()).unwrap();
    let lp = |k: u32| trace.iter().filter(|t| t.loop_index == k).copied().collect::<Vec<_>>();
    let first = lp(1);
    assert!(!first.is_empty());
    for k in 2..=3 {
        let other = lp(k);
        assert_eq!(other.len(), first.len());
        for (a, b) in first.iter().zip(&other) {
            // Targets repeat exactly; each loop starts where the previous closed,
            // which matches the first start to round-off.
            assert_eq!(a.commanded, b.commanded);
            assert!(a.achieved.distance(b.achieved) < 1e-9);
        }
    }
}

#[test]
fn traced_circle_closes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = tapegrip(&["trace", "--shape", "circle", "--side", "left", "--center-x", "-20", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let trace = read_trace(std::fs::File::open(&out).unwrap()).unwrap();
    let start = trace.iter().rev().find(|t| t.loop_index == 0).unwrap().achieved;
    assert!(trace.last().unwrap().achieved.distance(start) < 1e-6);
    assert!(stdout(&o).contains("loop 1: closure error"));
}

#[test]
fn unreachable_trace_exits_with_kinematics_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = tapegrip(&["trace", "--shape", "star", "--center-y", "1600", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["empty", "auto-grip", "rotate-ellipse-openloop", "rotate-ellipse-feedback", "conveyance", "teleop-session"] {
        let logs: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let log = dir.path().join(format!("{name}-{k}.jsonl"));
                tapegrip(&["run", &scenario(name), "--record", s(&log)]);
                std::fs::read(&log).unwrap()
            })
            .collect();
        assert!(!logs[0].is_empty());
        assert!(logs[0] == logs[1], "{name}");
    }
}

#[test]
fn run_exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");

    let o = tapegrip(&["run", &scenario("empty"), "--record", s(&log)]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(restore(&lines[0]).unwrap().tick, 0);

    let o = tapegrip(&["run", &scenario("auto-grip"), "--record", s(&log)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("held true"));
    let last = std::fs::read_to_string(&log).unwrap().lines().last().unwrap().to_string();
    assert!(restore(&last).unwrap().object(1).unwrap().held);

    let o = tapegrip(&["run", &scenario("rotate-ellipse-openloop")]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("object_dropped"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"script": [{"type": "goto", "side": "left", "x": 0, "y": 5000}]}"#).unwrap();
    assert_eq!(code(&tapegrip(&["run", s(&bad)])), 3);

    std::fs::write(&bad, r#"{"ticks": 3, "script": [{"type": "primitive", "name": "auto_grip"}]}"#).unwrap();
    assert_eq!(code(&tapegrip(&["run", s(&bad)])), 4, "unfinished script");

    std::fs::write(&bad, r#"{"tick": 3}"#).unwrap();
    assert_eq!(code(&tapegrip(&["run", s(&bad)])), 1);
    assert_eq!(code(&tapegrip(&["run", s(&dir.path().join("nope.json"))])), 2);
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: impl IntoIterator<Item = (f64, f64)>) -> PathBuf {
    let mut text = format!("{header}\n");
    for (x, y) in rows {
        text.push_str(&format!("{x},{y}\n"));
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn fit_recovers_synthetic_buckling() {
    let dir = tempfile::tempdir().unwrap();
    let (m, l0) = (1200.0, 35.0);
    let input = write_csv(dir.path(), "b.csv", "length_mm,force_N", (0..10).map(|k| 150.0 + 120.0 * k as f64).map(|l| (l, m / (l - l0))));
    let out = dir.path().join("frag.toml");
    let o = tapegrip(&["fit", "buckling", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: toml::Table = toml::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let b = &v["mechanics"]["buckling"];
    let moment = b["moment"].as_float().unwrap();
    let offset = b["length_offset"].as_float().unwrap();
    assert!(((moment - m) / m).abs() < 1e-3 && ((offset - l0) / l0).abs() < 1e-3, "{b:?}");
}

#[test]
fn fit_failures_exit_with_fit_code() {
    let dir = tempfile::tempdir().unwrap();
    let two = write_csv(dir.path(), "two.csv", "length_mm,force_N", [(200.0, 5.0), (400.0, 2.5)]);
    assert_eq!(code(&tapegrip(&["fit", "buckling", "--in", s(&two)])), 5);
    let wrong = write_csv(dir.path(), "wrong.csv", "a,b", [(1.0, 2.0)]);
    assert_eq!(code(&tapegrip(&["fit", "spring", "--in", s(&wrong)])), 5);
    assert_eq!(code(&tapegrip(&["fit", "torque", "--in", s(&dir.path().join("none.csv"))])), 2);
}

#[test]
fn non_monotone_spring_fit_warns() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_csv(
        dir.path(),
        "s.csv",
        "displacement_mm,force_N",
        (1..=20).map(|k| k as f64 * 0.5).map(|d| (d, d - 0.02 * d * d * d)),
    );
    let o = tapegrip(&["fit", "spring", "--in", s(&input)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(stdout(&o).contains("[mechanics.spring]"));
}

#[test]
fn serve_rejects_a_zero_tick_rate() {
    assert_eq!(code(&tapegrip(&["serve", "--port", "0", "--tick-hz", "0"])), 1);
}

#[test]
fn serve_announces_its_address_and_records_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("session.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_tapegrip"))
        .args(["serve", "--port", "0", "--record", s(&rec)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    out.read_line(&mut line).unwrap();
    assert!(line.starts_with("tapegrip teleop ready on ws://127.0.0.1:"), "{line}");
    assert!(line.trim_end().ends_with("/ws (protocol_version 1)"));
    let port: u16 = line.split(':').nth(2).unwrap().split('/').next().unwrap().parse().unwrap();
    assert_ne!(port, 0);
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    line.clear();
    out.read_line(&mut line).unwrap();
    assert!(line.starts_with("session recorded to"));
    let sc = Scenario::from_json(&std::fs::read_to_string(&rec).unwrap()).unwrap();
    assert!(!sc.until_idle && sc.script.is_empty());
}

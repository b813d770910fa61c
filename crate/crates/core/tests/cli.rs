//! End-to-end checks of the `fsqkd` binary.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use fsqkd::analysis::PredictedMetrics;
use fsqkd::report::{from_csv, SessionReport};
use fsqkd::scenario::Scenario;
use serde_json::Value;

fn fsqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsqkd")).args(args).env_remove("FSQKD_OUT_DIR").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn read_report(dir: &Path, stem: &str) -> SessionReport {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap()).unwrap()
}

#[test]
fn predict_prints_json() {
    let o = fsqkd(&["predict", "--scenario", "table2_beam_expanders"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p: PredictedMetrics = serde_json::from_slice(&o.stdout).unwrap();
    assert!((p.qber_total - 0.019).abs() < 0.002);
    assert!((p.sifted_rate_bps - 13_800.0).abs() < 500.0);
}

#[test]
fn predict_with_no_photons_is_zero_signal() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::bundled("table2_beam_expanders").unwrap();
    s.source.mu_per_state = [0.0; 4];
    let path = dir.path().join("dark.json");
    fs::write(&path, s.to_json_pretty()).unwrap();
    let o = fsqkd(&["predict", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p: PredictedMetrics = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(p.p_signal_click_per_pulse, 0.0);
    assert!((p.qber_total - 0.5).abs() < 1e-12);
}

#[test]
fn missing_field_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Value = serde_json::from_str(&Scenario::bundled("table1_run1").unwrap().to_json_pretty()).unwrap();
    v["channel"].as_object_mut().unwrap().remove("distance_m");
    let path = dir.path().join("broken.json");
    fs::write(&path, v.to_string()).unwrap();
    let o = fsqkd(&["predict", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("channel") && err.contains("distance_m"), "{err}");
}

#[test]
fn unknown_scenario_and_usage_errors() {
    assert_eq!(code(&fsqkd(&["predict", "--scenario", "no_such_scenario"])), 1);
    assert_eq!(code(&fsqkd(&["run"])), 2);
    assert_eq!(code(&fsqkd(&["party", "--role", "alice", "--scenario", "table1_run1"])), 2);
    assert_eq!(code(&fsqkd(&["frobnicate"])), 2);
}

#[test]
fn run_is_deterministic_for_a_seed() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        let o = fsqkd(&[
            "run", "--scenario", "table1_run2", "--seed", "7", "--duration-s", "0.2", "--dump-tags", "--histogram",
            "--dump-pulses", "1000", "--out", d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["session_report.json", "alice_report.json", "predicted.json", "deviation.json", "tags.bin", "histogram.csv", "pulses.bin"] {
        let a = fs::read(d1.path().join(f)).unwrap();
        assert_eq!(a, fs::read(d2.path().join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(fs::metadata(d1.path().join("pulses.bin")).unwrap().len(), 1000 * 19);
    let r = read_report(d1.path(), "session_report");
    assert!(r.completed());
    assert_eq!(r.n_pulses, 20_000_000);
}

#[test]
fn csv_report_round_trips() {
    let (dj, dc) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, f) in [(&dj, "json"), (&dc, "csv")] {
        let o = fsqkd(&["run", "--scenario", "table1_run1", "--duration-s", "0.05", "--format", f, "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let json = read_report(dj.path(), "session_report");
    let csv: SessionReport = from_csv(&fs::read_to_string(dc.path().join("session_report.csv")).unwrap()).unwrap();
    assert_eq!(csv, json);
    assert_eq!(csv.to_json(), fs::read_to_string(dj.path().join("session_report.json")).unwrap());
}

#[test]
fn unwritable_output_dir_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = fsqkd(&["run", "--scenario", "table1_run1", "--duration-s", "0.01", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

fn party(role: &str, endpoint: (&str, &str), extra: &[&str], out: &Path) -> std::process::Child {
    let mut args = vec!["party", "--role", role, endpoint.0, endpoint.1, "--out", out.to_str().unwrap(), "--wait-s", "20"];
    args.extend_from_slice(extra);
    Command::new(env!("CARGO_BIN_EXE_fsqkd"))
        .args(args)
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap()
}

#[test]
fn party_over_tcp_matches_run() {
    let (da, db, dr) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let addr = free_port();
    let common = ["--scenario", "table2_beam_expanders", "--seed", "3", "--duration-s", "0.05"];
    let alice = party("alice", ("--listen", &addr), &common, da.path());
    let bob = party("bob", ("--connect", &addr), &common, db.path());
    let (a, b) = (alice.wait_with_output().unwrap(), bob.wait_with_output().unwrap());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));

    let mut args = vec!["run", "--out", dr.path().to_str().unwrap()];
    args.extend_from_slice(&common);
    assert_eq!(code(&fsqkd(&args)), 0);
    for (d, stem) in [(&db, "session_report"), (&da, "alice_report")] {
        let f = format!("{stem}.json");
        assert_eq!(fs::read(d.path().join(&f)).unwrap(), fs::read(dr.path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_seeds_exit_3_on_both_sides() {
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let addr = free_port();
    let base = ["--scenario", "table1_run1", "--duration-s", "0.01"];
    let alice = party("alice", ("--listen", &addr), &[&base[..], &["--seed", "1"]].concat(), da.path());
    let bob = party("bob", ("--connect", &addr), &[&base[..], &["--seed", "2"]].concat(), db.path());
    let (a, b) = (alice.wait_with_output().unwrap(), bob.wait_with_output().unwrap());
    assert_eq!(code(&a), 3, "{}", stderr(&a));
    assert_eq!(code(&b), 3, "{}", stderr(&b));
    let r = read_report(db.path(), "session_report");
    assert!(r.outcome.label().contains("ParameterMismatch"));
}

#[test]
fn bob_without_peer_times_out() {
    let d = tempfile::tempdir().unwrap();
    let addr = free_port();
    let o = fsqkd(&[
        "party", "--role", "bob", "--connect", &addr, "--scenario", "table1_run1", "--wait-s", "0.5", "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("timed out"), "{}", stderr(&o));
}

#[test]
fn bob_replays_a_tag_dump() {
    let (dr, da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let common = ["--scenario", "table1_run1", "--seed", "11", "--duration-s", "0.05"];
    let mut args = vec!["run", "--dump-tags", "--out", dr.path().to_str().unwrap()];
    args.extend_from_slice(&common);
    assert_eq!(code(&fsqkd(&args)), 0);

    let addr = free_port();
    let tags = dr.path().join("tags.bin");
    let alice = party("alice", ("--listen", &addr), &common, da.path());
    let bob = party("bob", ("--connect", &addr), &[&common[..], &["--replay", tags.to_str().unwrap()]].concat(), db.path());
    let (a, b) = (alice.wait_with_output().unwrap(), bob.wait_with_output().unwrap());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    let replayed = read_report(db.path(), "session_report");
    let original = read_report(dr.path(), "session_report");
    assert!(original.completed() && replayed.completed());
    assert_eq!(replayed.sifted_key_sha256, original.sifted_key_sha256);
    assert_eq!(replayed.qber, original.qber);
}

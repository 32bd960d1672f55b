use std::path::Path;
use std::process::{Command, Output};

use lio_core::io::read_ply;

fn lio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lio")).args(args).output().expect("spawn lio")
}

fn ok(args: &[&str]) -> String {
    let out = lio(args);
    assert!(out.status.success(), "lio {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_run_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, "# reduced sensor\nchannels = 32\nwidth = 512\n").unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    ok(&["simulate", "--preset", "two_room", "--seed", "3", "--output", s(&data), "--config", s(&config)]);
    for f in ["scans.bin", "imu.txt", "ground_truth.txt", "config.toml"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let summary = ok(&["run", "--dataset", s(&data), "--output", s(&out), "--config", s(&config)]);
    assert!(summary.contains("loops accepted"), "{summary}");

    let log = std::fs::read_to_string(out.join("run_log.csv")).unwrap();
    let mut lines = log.lines();
    assert!(lines.next().unwrap().starts_with("time,skipped,correspondences"));
    let traj = std::fs::read_to_string(out.join("trajectory.txt")).unwrap();
    assert_eq!(lines.count(), traj.lines().count());

    let eval = ok(&["eval", s(&out.join("trajectory.txt")), s(&data.join("ground_truth.txt"))]);
    let rmse: f64 = eval.trim().trim_start_matches("ATE RMSE:").trim_end_matches('m').trim().parse().unwrap();
    assert!(rmse < 0.1, "{eval}");

    let map = dir.path().join("map.ply");
    ok(&["export-map", "--run", s(&out), "--output", s(&map)]);
    assert!(read_ply(&map).unwrap().len() > 1000);
}

#[test]
fn unknown_config_key_is_named_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "channels = 32\nvoxle = 0.2\n").unwrap();
    let data = dir.path().join("data");
    let out = lio(&["simulate", "--preset", "room", "--output", s(&data), "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("voxle"));
    assert!(!data.exists());
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = lio(&["run", "--dataset", s(&dir.path().join("nope")), "--output", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());

    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, "0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n2 2 1 0 0 0 0 1\n").unwrap();
    std::fs::write(&b, "0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n").unwrap();
    let out = lio(&["eval", s(&a), s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lengths differ"));

    let out = lio(&["simulate", "--preset", "cathedral", "--output", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cathedral"));
}

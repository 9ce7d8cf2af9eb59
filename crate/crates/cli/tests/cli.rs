use std::path::Path;
use std::process::{Command, Output};
use swabsim::sim::config::Config;

const SMALL: &str = r#"
[matrix]
controllers = ["D1.0", "S2.0"]
motions = ["Light", "Heavy"]
repeats_left = 1
repeats_right = 1
none_trials_per_cell = 0
"#;

fn swabsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swabsim"))
        .args(args)
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
fn selftest_passes() {
    let o = swabsim(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("[PASS]")).count(), 10);
}

#[test]
fn trial_writes_record_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = swabsim(&[
        "trial", "--controller", "S2.0", "--motion", "Light", "--phantom", "A", "--side", "L",
        "--seed", "7", "--out", path(dir.path()), "--emit-timeseries",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("S2.0 Light A Left seed 7:"));
    let csv = std::fs::read_to_string(dir.path().join("trial.csv")).unwrap();
    assert!(csv.starts_with(
        "controller,motion,phantom,side,seed,s1_transverse,s1_axial,time_to_np,reached,s2_transverse,s2_axial,oscillation,outcome"
    ));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trial.json")).unwrap()).unwrap();
    assert_eq!(json["spec"]["seed"], 7);
    let series = std::fs::read_to_string(dir.path().join("trial_timeseries.csv")).unwrap();
    assert!(series.lines().count() > 1000);
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!swabsim(&["trial", "--controller", "X9", "--out", path(dir.path())]).status.success());
    assert!(!swabsim(&["trial", "--phantom", "C"]).status.success());
    assert!(!swabsim(&["stats", path(&dir.path().join("missing.csv"))]).status.success());
}

#[test]
fn small_matrix_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let o = swabsim(&["matrix", "--config", path(&cfg), "--seed", "3", "--workers", "2", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("16 trials, 0 faulted"));
    for f in ["trials.jsonl", "measures.csv", "summary.txt", "stats.json", "meta.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let jsonl = std::fs::read_to_string(out.join("trials.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 16);

    let s = swabsim(&["stats", path(&out.join("measures.csv")), "--out", path(&dir.path().join("again"))]);
    assert!(s.status.success());
    assert!(stdout(&s).contains("Stage 2 (nasopharynx)"));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("again/stats.json")).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn optimize_writes_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = swabsim(&["optimize", "--out", path(dir.path())]);
    assert!(o.status.success());
    let cfg = Config::load(&dir.path().join("optimized.toml")).unwrap();
    assert!(cfg.trajectory.params.chi > 0.0);
}

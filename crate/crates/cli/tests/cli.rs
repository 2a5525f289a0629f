use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exactcoreset"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--trials", "1", "--n", "29", "--m", "29", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("r/validate.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["records"][0]["value"], 0.0);
    assert_eq!(report["records"][0]["size"], 29);
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config"]["rows"], 29);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", "--m", "10"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["validate", "--trials", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["kld", "--target", "a.ply"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["nonsense"], dir.path()).status.code(), Some(2));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(&["validate", "--trials", "3", "--n", "3000", "--m", "29,128", "--seed", "7", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let a = std::fs::read(dir.path().join("a/validate.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/validate.json")).unwrap();
    assert_eq!(a, b);
    let csv = std::fs::read_to_string(dir.path().join("a/validate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["validate", "--trials", "2", "--n", "500", "--out", "r"])
        .env("EXACTCORESET_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn downsample_synthetic_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["synth", "--pair", "--points", "3000", "--out", "pair"], d).status.code(), Some(0));
    let base = [
        "downsample",
        "--target",
        "pair/frame_000.ply",
        "--source",
        "pair/frame_001.ply",
        "--target-pose",
        "pair/frame_000_pose.json",
        "--source-pose",
        "pair/frame_001_pose.json",
    ];

    let o = run(&[&base[..], &["--m", "29", "--out", "f29.json"]].concat(), d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(d.join("f29.json"));
    assert_eq!(f["factor"]["rows"].as_array().unwrap().len(), 29);
    assert!(f["summary"]["relative_error"].as_f64().unwrap() < 1e-10);
    assert!(String::from_utf8_lossy(&o.stdout).contains("relative error"));

    let o = run(&[&base[..], &["--m", "512", "--out", "f512.json"]].concat(), d);
    assert_eq!(o.status.code(), Some(0));
    let n = json(d.join("f512.json"))["summary"]["selected_rows"].as_u64().unwrap();
    assert!((448..=512).contains(&n), "{n}");
}

#[test]
fn downsample_disjoint_clouds_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(&["synth", "--pair", "--points", "500", "--out", "pair"], d);
    std::fs::write(d.join("far.json"), r#"{"t":[100.0,0.0,0.0],"q":[0.0,0.0,0.0,1.0]}"#).unwrap();
    let o = run(
        &["downsample", "--target", "pair/frame_000.ply", "--source", "pair/frame_001.ply", "--source-pose", "far.json"],
        d,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no overlap"));
}

#[test]
fn kld_small_table() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "kld", "--pair-points", "2000", "--trials", "10", "--points", "10,256", "--exact", "29,256", "--out", "r",
    ];
    let o = run(&args, dir.path());
    assert!(matches!(o.status.code(), Some(0 | 1)));
    let r = json(dir.path().join("r/kld.json"));
    let group = |name: &str| r["summary"].as_array().unwrap().iter().find(|g| g["group"] == name).unwrap().clone();
    assert!(group("random/points=10")["mean"].as_f64().unwrap() > group("random/points=256")["mean"].as_f64().unwrap());
    assert!(group("exact/M=29")["max"].as_f64().unwrap() <= 1e-9);
    assert!(dir.path().join("r/kld_summary.csv").exists());
}

#[test]
fn displace_small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["displace", "--pair-points", "2000", "--trials", "5", "--m", "29", "--noise", "0,1", "--out", "r"];
    let o = run(&args, dir.path());
    assert!(matches!(o.status.code(), Some(0 | 1)));
    let r = json(dir.path().join("r/displacement.json"));
    assert_eq!(r["records"].as_array().unwrap().len(), 2 * 5 * 2);
    assert_eq!(r["checks"][0]["passed"], true);
}

#[test]
fn optimize_small_loop_and_input_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&["optimize", "--frames", "4", "--full", "--m", "29", "--out", "opt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["trajectory.json", "cost_trace.csv", "trajectory_full.txt", "trajectory_exact_M_29.txt", "ground_truth.txt"] {
        assert!(d.join("opt").join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(d.join("opt/cost_trace.csv")).unwrap();
    let costs: Vec<f64> =
        trace.lines().skip(1).filter(|l| l.starts_with("full,")).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(costs.len() >= 2);
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));

    assert_eq!(run(&["synth", "--frames", "3", "--points", "1500", "--out", "seq"], d).status.code(), Some(0));
    let o = run(&["optimize", "--input", "seq", "--m", "29", "--out", "opt2"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(d.join("opt2/trajectory.json"))["records"].as_array().unwrap().len(), 1);
}

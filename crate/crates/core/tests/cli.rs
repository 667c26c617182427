use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ipercept::domain::read_samples_csv;
use ipercept::experiment::ExperimentConfig;

fn ipercept(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipercept")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn trivial_config(dir: &Path) -> String {
    let path = dir.join("trivial.json");
    fs::write(&path, ExperimentConfig::trivial().to_json().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn collect_train_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let o = ipercept(&["collect", "--seed", "2", "--out", out, "--dump-costmap", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["samples.csv", "trajectory.tum", "costmap_5.csv", "costmap_5_mask.csv"] {
        assert!(Path::new(out).join(f).exists(), "{f}");
    }
    let samples = Path::new(out).join("samples.csv");
    assert!(!read_samples_csv(fs::File::open(&samples).unwrap()).unwrap().is_empty());

    let o = ipercept(&["train", "--seed", "2", "--out", out, "--samples", samples.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model = Path::new(out).join("model.json");
    assert!(model.exists() && Path::new(out).join("loss_history.csv").exists());

    let o = ipercept(&["predict", "--out", out, "--model", model.to_str().unwrap(), "--samples", samples.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(out).join("predictions.csv").exists());
}

#[test]
fn slam_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trivial_config(dir.path());
    let out = dir.path().join("slam");
    let o = ipercept(&["slam-eval", "--config", &cfg, "--seeds", "0..2", "--method", "adaptive,constant", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("slam_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    assert!(out.join("slam_plots.gp").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&ipercept(&["slam-eval", "--set", "nope=1", "--out", out])), 1);
    assert_eq!(code(&ipercept(&["slam-eval", "--seeds", "5..2", "--out", out])), 1);
    assert_eq!(code(&ipercept(&["depth-eval", "--method", "oracle", "--seed", "0", "--out", out])), 1);
    assert_eq!(code(&ipercept(&["slam-eval", "--config", "/nonexistent/cfg.json", "--out", out])), 1);
    assert_eq!(code(&ipercept(&["frobnicate"])), 1);
    assert_eq!(code(&ipercept(&["--help"])), 0);
}

#[test]
fn failed_runs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trivial_config(dir.path());
    let out = dir.path().join("failed");
    let o = ipercept(&["slam-eval", "--config", &cfg, "--seed", "0", "--set", "world.n_landmarks=0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let failed = fs::read_to_string(out.join("slam_failed_seeds.csv")).unwrap();
    assert_eq!(failed.lines().count(), 2);
    let o = ipercept(&["bench", "--seed", "0", "--queries", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

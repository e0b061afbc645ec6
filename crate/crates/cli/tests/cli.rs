use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridmarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmarl"))
        .args(args)
        .env_remove("GRIDMARL_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = gridmarl(&["baseline", "--config", s(&dir.path().join("absent.json")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"training": {"episodes": 0}}"#).unwrap();
    let r = gridmarl(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert_eq!(gridmarl(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn baseline_writes_manifest_summary_and_slots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = gridmarl(&["baseline", "--config", "scenario1", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["mode"], "conventional");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let summary = gridmarl::metrics::MetricsBundle::load(out.join("summary.json")).unwrap();
    assert_eq!(summary.days, 30);
    let rows = gridmarl::metrics::load_slots_csv(out.join("slots.csv")).unwrap();
    assert_eq!(rows.len(), 30 * 96);
}

#[test]
fn same_seed_gives_identical_summary_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"training": {"eval_days": 2, "warmup": 64, "batch_size": 16}}"#).unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let r = gridmarl(&["train", "--config", s(&cfg), "--out", s(&out), "--small", "--episodes", "3", "--seed", seed]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        fs::read(out.join("summary.json")).unwrap()
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = Command::new(env!("CARGO_BIN_EXE_gridmarl"))
        .args(["baseline", "--config", "scenario1", "--out", s(&out)])
        .env("GRIDMARL_SEED", "1234")
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 1234);
}

#[test]
fn train_then_evaluate_checkpoint_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"training": {"eval_days": 2, "checkpoint_every": 2}}"#).unwrap();
    let tr = dir.path().join("tr");
    let r = gridmarl(&["train", "--config", s(&cfg), "--out", s(&tr), "--small", "--episodes", "4"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(tr.join("checkpoints/episode_2/spa.json").exists());
    assert!(tr.join("checkpoints/episode_4/pa_4.json").exists());
    let ev = dir.path().join("ev");
    let ckpt = tr.join("checkpoints/final");
    let r = gridmarl(&["evaluate", "--config", s(&cfg), "--out", s(&ev), "--small", "--episodes", "4", "--checkpoint", s(&ckpt)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let a = gridmarl::metrics::MetricsBundle::load(tr.join("summary.json")).unwrap();
    let b = gridmarl::metrics::MetricsBundle::load(ev.join("summary.json")).unwrap();
    assert_eq!(a.per_prosumer_daily_bill_usd, b.per_prosumer_daily_bill_usd);
    assert!(a.learning_curves.is_some() && b.learning_curves.is_none());
}

#[test]
fn checkpoint_of_wrong_shape_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = gridmarl(&["evaluate", "--config", "scenario1", "--out", s(&dir.path().join("o")), "--checkpoint", s(dir.path())]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn loss_sweep_on_conventional_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"training": {"eval_days": 2}}"#).unwrap();
    let out = dir.path().join("o");
    let r = gridmarl(&["sweep-loss", "--config", s(&cfg), "--out", s(&out), "--trace", "conventional"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let points: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep_loss.json")).unwrap()).unwrap();
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 5);
    let profit: Vec<f64> = points.iter().map(|p| p["sp_daily_profit_usd"].as_f64().unwrap()).collect();
    assert!(profit.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn report_lists_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(gridmarl(&["baseline", "--out", s(&out)]).status.code(), Some(0));
    let r = gridmarl(&["report", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("run/summary.json"));
    assert!(dir.path().join("report.txt").exists());
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(gridmarl(&["report", s(empty.path())]).status.code(), Some(1));
}

use std::path::Path;
use std::process::{Command, Output};

fn scoregen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scoregen"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(scoregen(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    let out = scoregen(dir.path(), &["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage:"));
    assert_eq!(scoregen(dir.path(), &["train", "--set", "schedule.bogus=1"]).status.code(), Some(2));
    assert_eq!(scoregen(dir.path(), &["train", "--preset", "enormous"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = scoregen(dir.path(), &["sample", "--preset", "smoke"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn quick_stability_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = scoregen(dir.path(), &["verify", "--suite", "stability", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = json(&out);
    let reports = reports.as_array().unwrap();
    assert!(!reports.is_empty());
    for r in reports {
        assert_eq!(r["pass"], true);
        for key in ["check", "case", "lhs", "rhs", "slack", "seed", "details"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn smoke_train_sample_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let common = ["--preset", "smoke", "--set", "schedule.n=256", "--set", "train.iterations=20", "--seed", "7"];

    let train = scoregen(p, &[&["train"][..], &common].concat());
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    let t = json(&train);
    assert!(t["intervals"].as_u64().unwrap() > 0);
    for f in ["config.snapshot", "model.ckpt", "training_summary.json", "training/interval_00_000.csv"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let snapshot = std::fs::read_to_string(p.join("config.snapshot")).unwrap();
    let cfg = scoregen::config::Config::from_toml(&snapshot).unwrap();
    assert_eq!((cfg.schedule.n, cfg.run.seed, cfg.train.iterations), (256, 7, 20));

    let sample = scoregen(p, &[&["sample"][..], &common, &["--set", "sample.format=\"csv\""]].concat());
    assert_eq!(sample.status.code(), Some(0), "{}", String::from_utf8_lossy(&sample.stderr));
    assert!(p.join("samples.bin").exists() && p.join("samples.csv").exists());
    let rows = std::fs::read_to_string(p.join("samples.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 1024);

    let eval = scoregen(p, &[&["evaluate"][..], &common].concat());
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let m = json(&eval);
    assert_eq!(m["checkpoint_sha256"], t["sha256"]);
    assert!(m["metrics"]["w1"]["value"].as_f64().unwrap() > 0.0);
    assert!(m["metrics"]["fisher_baseline"]["value"].as_f64().is_some());
    assert!(p.join("metrics.json").exists());

    let other = tempfile::tempdir().unwrap();
    let mismatch = scoregen(
        other.path(),
        &["evaluate", "--preset", "smoke", "--model", p.join("model.ckpt").to_str().unwrap()],
    );
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("schedule"));
}

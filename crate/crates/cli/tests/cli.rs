use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use morf::data::split;
use morf::metatrain::{train, TrainError, Trainer};
use morf_cli::ablate::run_ablation;
use morf_cli::config::{read_json, RunConfig};
use morf_cli::run::{execute_run, Summary};
use morf_cli::{ablation_plan, cmd_compare, train_config, Cli, Command as Cmd};

fn morf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_morf")).args(args).output().unwrap()
}

fn parse_train(args: &[&str]) -> morf_cli::TrainArgs {
    let mut full = vec!["morf", "train"];
    full.extend_from_slice(args);
    match Cli::parse_from(full).command {
        Cmd::Train(a) => a,
        _ => unreachable!(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_creates_directory_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/dir");
    let o = morf(&["generate", "--preset", "ord3-std", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(m["samples"], 2000);
    assert_eq!(m["thresholds"], serde_json::json!([2.5, 3.5]));
    assert_eq!(m["seed"], 7);
    let rows = fs::read_to_string(out.join("data.csv")).unwrap().lines().count();
    assert_eq!(rows, 2001);

    let bad = morf(&["generate", "--thresholds", "3,2", "--out", s(&tmp.path().join("bad"))]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("thresholds"));
}

#[test]
fn sixteen_training_samples_give_one_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tiny.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..20 {
        let label = if i < 10 { 1 } else if i < 15 { 2 } else { 3 };
        text.push_str(&format!("{},{},{}\n", i as f64 * 0.1, (i % 3) as f64, label));
    }
    fs::write(&data, text).unwrap();
    let out = tmp.path().join("run");
    let o = morf(&[
        "train", "--variant", "morf", "--data", s(&data), "--classes", "3", "--epochs", "1", "--batch", "16", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Summary = read_json(&out.join("summary.json")).unwrap();
    assert_eq!(summary.train_samples, 16);
    assert_eq!(summary.iterations, 1);
    for f in ["config.json", "metrics.jsonl", "checkpoint.json", "predictions.csv", "curves/test_accuracy.dat"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let doc: serde_json::Value = read_json(&out.join("config.json")).unwrap();
    assert!(doc["tool"].as_str().unwrap().starts_with("morf "));
    assert!(doc["manifest"].as_str().unwrap().ends_with("tiny.csv"));
}

#[test]
fn inconsistent_config_is_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = morf(&["train", "--variant", "morf", "--fc-dim", "30", "--epochs", "1", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("divisible"));
    assert!(!out.exists());
}

#[test]
fn interrupted_run_resumes_to_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--variant", "morf", "--n", "150", "--epochs", "4", "--tww-hidden", "8", "--seed", "3"];
    let cfg: RunConfig = train_config(&parse_train(&args)).unwrap();

    let whole = tmp.path().join("whole");
    execute_run(&whole, &cfg, "train").unwrap();

    // Simulate a crash after epoch 2 whose third metrics line was written
    // but whose checkpoint was not.
    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    let data = cfg.data.load().unwrap();
    let idx = split(&data, &cfg.split).unwrap();
    let hash = cfg.hash();
    let trainer = Trainer::<f64>::new(cfg.hyperparams.clone(), cfg.variant, data.dim).unwrap();
    let mut lines = String::new();
    let res = train(trainer, &data, &idx.train, &idx.test, |t, rec| {
        lines.push_str(&serde_json::to_string(rec).unwrap());
        lines.push('\n');
        if rec.epoch <= 2 {
            fs::write(broken.join("checkpoint.json"), serde_json::to_vec(&t.checkpoint(&hash)).unwrap()).unwrap();
        }
        if rec.epoch == 3 {
            return Err(TrainError::Sink("stop".into()));
        }
        Ok(())
    });
    assert!(res.is_err());
    fs::write(broken.join("metrics.jsonl"), &lines).unwrap();

    let out = execute_run(&broken, &cfg, "train").unwrap();
    assert_eq!(out.resumed_from, Some(2));
    let a = fs::read(whole.join("metrics.jsonl")).unwrap();
    let b = fs::read(broken.join("metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(whole.join("predictions.csv")).unwrap(),
        fs::read(broken.join("predictions.csv")).unwrap()
    );

    let again = execute_run(&broken, &cfg, "train").unwrap();
    assert!(again.skipped);

    let other: RunConfig = train_config(&parse_train(&["--variant", "corf", "--n", "150", "--epochs", "4"])).unwrap();
    assert!(execute_run(&broken, &other, "train").is_err());
}

#[test]
fn ablation_resumes_from_completed_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let cli = Cli::parse_from([
        "morf", "ablate", "--seeds", "0,1", "--variant", "corf,corf-tww", "--n", "120", "--epochs", "1",
        "--tww-hidden", "8", "--out", s(&out),
    ]);
    let Cmd::Ablate(args) = cli.command else { unreachable!() };
    let plan = ablation_plan(&args).unwrap();
    let (report, first) = run_ablation(&plan).unwrap();
    assert_eq!(first.len(), 4);
    assert!(first.iter().all(|o| !o.skipped));
    assert_eq!(report.tables.len(), 1);
    assert_eq!(report.tables[0].rows.len(), 2);
    assert_eq!(report.runs.len(), 4);

    // Lose one run's summary; only that run is redone.
    let victim = &first[3].dir;
    fs::remove_file(victim.join("summary.json")).unwrap();
    fs::remove_file(victim.join("checkpoint.json")).unwrap();
    let (again, second) = run_ablation(&plan).unwrap();
    assert_eq!(second.iter().filter(|o| o.skipped).count(), 3);
    assert_eq!(again, report);
}

fn fake_run(dir: &Path, rows: &[(usize, usize, f64)]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut text = String::from("index,label,predicted,soft_score,tree_variance\n");
    for &(i, l, sc) in rows {
        text.push_str(&format!("{i},{l},1,{sc:?},0.0\n"));
    }
    fs::write(dir.join("predictions.csv"), text).unwrap();
    dir.to_path_buf()
}

/// Two-sided p by listing all sign patterns of ranks 1..=n (no ties).
fn enumerate_p(ranks_positive: &[bool]) -> f64 {
    let n = ranks_positive.len();
    let total = n * (n + 1) / 2;
    let w_plus: usize = (1..=n).filter(|r| ranks_positive[r - 1]).sum();
    let observed = w_plus.min(total - w_plus);
    let mut hits = 0u32;
    for mask in 0u32..(1 << n) {
        let w: usize = (1..=n).filter(|r| mask >> (r - 1) & 1 == 1).sum();
        if w.min(total - w) <= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn compare_matches_enumeration_and_guards_test_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let base: Vec<(usize, usize, f64)> = (0..10).map(|i| (i * 3, 1 + i % 3, 1.0)).collect();
    // Differences of magnitude 1..=10, negative for ranks 2, 5 and 9.
    let negative = [2, 5, 9];
    let shifted: Vec<(usize, usize, f64)> = base
        .iter()
        .enumerate()
        .map(|(k, &(i, l, sc))| {
            let r = (k + 1) as f64;
            let sign = if negative.contains(&(k + 1)) { -1.0 } else { 1.0 };
            (i, l, sc + sign * r * 0.01)
        })
        .collect();
    let a = fake_run(&tmp.path().join("a"), &base);
    let b = fake_run(&tmp.path().join("b"), &shifted);
    let cli = Cli::parse_from(["morf", "compare", s(&a), s(&b), s(&a)]);
    let Cmd::Compare(args) = cli.command else { unreachable!() };
    let report = cmd_compare(&args).unwrap();
    assert_eq!(report.samples, 10);
    let positive: Vec<bool> = (1..=10).map(|r| negative.contains(&r)).collect();
    let expect = enumerate_p(&positive);
    assert_eq!(report.pairs[0].p_value, expect);
    assert_eq!(report.pairs[0].significant, expect < 0.05);
    assert_eq!(report.pairs[1].p_value, 1.0);
    assert!(!report.pairs[1].significant);
    assert_eq!(report.pairs[2].p_value, expect);

    let mut other = base.clone();
    other[4].0 = 999;
    let c = fake_run(&tmp.path().join("c"), &other);
    let o = morf(&["compare", s(&a), s(&c)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("different test sets"));
}

#[test]
fn verify_exit_codes() {
    let o = morf(&["verify", "reduction", "--cases", "1"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS reduction"));
    assert!(!morf(&["verify", "nope"]).status.success());
}

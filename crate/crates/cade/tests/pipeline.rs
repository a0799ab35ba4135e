use std::fs;
use std::path::Path;
use std::process::Command;

use cade::config::ExperimentConfig;
use cade::formats;
use cade::manifest;
use cade::pipeline::{self, RunOptions};

fn cade(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cade")).args(args).env("CADE_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cade(args);
    assert!(out.status.success(), "cade {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_smoke_config(dir: &Path) -> String {
    let path = dir.join("smoke.json");
    fs::write(&path, ExperimentConfig::smoke().to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn smoke_report_is_complete_and_sealed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::smoke();
    let r = pipeline::run_pipeline(&cfg, Some(dir.path()), &RunOptions::default()).unwrap();
    for f in [
        "config.json",
        "candidates_tier1.csv",
        "candidates_scored.csv",
        "froc_tier1.csv",
        "froc_tier2.csv",
        "summary.json",
        "froc.svg",
        "fold0/model.json",
        "fold0/model.bin",
        "fold0/loss.csv",
        "fold0/kernels.png",
        "fold0/kernels.txt",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert!(!dir.path().join("fold1").exists());

    let summary = formats::froc::read_summary(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary, r.eval.summary);
    assert_eq!(formats::froc::read_csv(&dir.path().join("froc_tier2.csv")).unwrap(), r.eval.tier2.points);
    let scored = formats::candidates::read(&dir.path().join("candidates_scored.csv")).unwrap();
    assert_eq!(scored.len(), r.test.candidates.len());
    assert!(scored.iter().all(|c| c.final_prob.is_some_and(|p| (0.0..=1.0).contains(&p))));

    let model = formats::checkpoint::read(&dir.path().join("fold0/model.json")).unwrap();
    assert_eq!(model.params.spec, cfg.network_spec());

    manifest::check(dir.path()).unwrap();
    fs::write(dir.path().join("froc_tier1.csv"), "tampered").unwrap();
    assert!(manifest::check(dir.path()).is_err());
}

#[test]
fn full_view_sweep_reproduces_the_pipeline_curve() {
    let cfg = ExperimentConfig::smoke();
    let n_max = cfg.sampler.n_views();
    let (result, sweep) = pipeline::run_n_sweep(&cfg, &[1, n_max], None, &RunOptions::default()).unwrap();
    assert_eq!(sweep[1].curve, result.eval.tier2);
    assert_eq!(sweep[1].auc, result.eval.summary.auc);
    assert!(sweep.iter().all(|s| s.curve.is_monotone()));
    assert!(pipeline::n_sweep(&cfg, &result, &[n_max + 1]).is_err());
}

#[test]
fn threads_do_not_change_results() {
    let mut cfg = ExperimentConfig::smoke();
    cfg.eval.max_folds = Some(2);
    let one = pipeline::run_pipeline(&cfg, None, &RunOptions { threads: 1, ..RunOptions::default() }).unwrap();
    let two = pipeline::run_pipeline(&cfg, None, &RunOptions { threads: 2, ..RunOptions::default() }).unwrap();
    assert_eq!(one.test.candidates, two.test.candidates);
    assert_eq!(one.eval.summary, two.eval.summary);
}

#[test]
fn staged_commands_share_a_work_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_smoke_config(dir.path());
    let work = dir.path().join("work");
    let work = work.to_str().unwrap();
    let common = ["--config", &config, "--out", work];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        [cmd].iter().chain(common.iter()).chain(extra.iter()).map(|s| s.to_string()).collect()
    };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    assert!(run(with("phantom", &[])).contains("wrote 4 phantoms"));
    assert!(run(with("candidates", &[])).contains("candidates to"));
    run(with("train", &["--fold", "0"]));
    assert!(Path::new(work).join("model_fold0/model.json").is_file());
    assert!(run(with("score", &["--fold", "0"])).contains("scored"));
    let summary = run(with("eval", &[]));
    let parsed: formats::froc::Summary = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed.n_patients, 1);
    assert!(Path::new(work).join("froc.svg").is_file());
    assert!(ok(&["check", "--out", work]).contains("files verified"));

    let bad = cade(&["train", "--config", &config, "--out", work, "--fold", "9"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("k_folds"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&ExperimentConfig::smoke().to_json()).unwrap();
    json["sampler"]["n_rotations"] = serde_json::json!("five");
    let path = dir.path().join("bad.json");
    fs::write(&path, json.to_string()).unwrap();
    let out = cade(&["phantom", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("sampler.n_rotations"), "{err}");
}

#[test]
fn seed_flag_changes_the_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_smoke_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["phantom", "--config", &config, "--out", a.to_str().unwrap(), "--seed", "1"]);
    ok(&["phantom", "--config", &config, "--out", b.to_str().unwrap(), "--seed", "2"]);
    let raw = |d: &Path| fs::read(d.join("cohort/patient_0000.raw")).unwrap();
    assert_ne!(raw(&a), raw(&b));
}

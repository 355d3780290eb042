mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::*;
use coursecorrect::backend::ErrorPattern;
use coursecorrect::harness::{self, BackendSpec, HarnessError, RunConfig, SupervisorSpec};
use coursecorrect::metrics::PriceTable;
use coursecorrect::prm::VariantName;

fn config(manifest: &Path, out: &Path, pattern: ErrorPattern, variant: Option<VariantName>) -> RunConfig {
    let mut cfg = RunConfig::new(manifest, out, BackendSpec::ScriptedPolicy(pattern));
    cfg.supervisor = variant.map(|variant| SupervisorSpec { variant, interval: 5, window: 8, prm: BackendSpec::ScriptedPrm });
    cfg.seed = 3;
    cfg
}

#[test]
fn run_writes_rows_in_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let instances = calc_manifest(4);
    let manifest = write_manifest(dir.path(), &instances);
    let out = dir.path().join("out");
    let summary = harness::run(&config(&manifest, &out, ErrorPattern::GoldenFix, None), &PriceTable::default()).unwrap();
    let ids: Vec<_> = summary.results.iter().map(|r| r.instance_id.clone()).collect();
    let expected: Vec<_> = instances.iter().map(|i| i.id.clone()).collect();
    assert_eq!(ids, expected);
    assert!(summary.results.iter().all(|r| r.resolved));
    assert_eq!(harness::load_results(&out.join("results.jsonl")).unwrap(), summary.results);
    assert!(out.join("run.json").exists());
}

#[test]
fn resume_skips_completed_instances() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(3));
    let out = dir.path().join("out");
    let mut cfg = config(&manifest, &out, ErrorPattern::GoldenFix, None);
    let first = harness::run(&cfg, &PriceTable::default()).unwrap();
    assert_eq!(first.executed.len(), 3);

    let victim = harness::instance_dir_name(&first.results[1].instance_id);
    fs::remove_file(out.join(&victim).join("result.json")).unwrap();
    cfg.resume = true;
    let second = harness::run(&cfg, &PriceTable::default()).unwrap();
    assert_eq!(second.executed, vec![first.results[1].instance_id.clone()]);
    assert_eq!(second.skipped.len(), 2);
    assert_eq!(second.results, first.results);
}

#[test]
fn parallel_and_serial_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(6));
    let mut cfg = config(&manifest, &dir.path().join("p"), ErrorPattern::LoopKActions { cycle: 3 }, Some(VariantName::DN));
    cfg.parallelism = 4;
    let parallel = harness::run(&cfg, &PriceTable::default()).unwrap();
    cfg.out_dir = dir.path().join("s");
    cfg.parallelism = 1;
    let serial = harness::run(&cfg, &PriceTable::default()).unwrap();
    assert_eq!(parallel.results, serial.results);
    assert_eq!(fs::read(dir.path().join("p/results.jsonl")).unwrap(), fs::read(dir.path().join("s/results.jsonl")).unwrap());
}

#[test]
fn evaluate_reproduces_recorded_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(3));
    let out = dir.path().join("out");
    let cfg = config(&manifest, &out, ErrorPattern::LoopKActions { cycle: 2 }, Some(VariantName::D));
    let summary = harness::run(&cfg, &PriceTable::default()).unwrap();
    let again = harness::evaluate(&out).unwrap();
    assert_eq!(again, summary.results);
}

#[test]
fn analyze_flags_loops_but_not_golden_runs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(3));
    let golden = dir.path().join("golden");
    let looping = dir.path().join("loop");
    harness::run(&config(&manifest, &golden, ErrorPattern::GoldenFix, None), &PriceTable::default()).unwrap();
    harness::run(&config(&manifest, &looping, ErrorPattern::LoopKActions { cycle: 2 }, None), &PriceTable::default()).unwrap();

    let clean = harness::analyze(&[golden], 5, 8).unwrap();
    assert_eq!(clean.trajectories, 3);
    assert_eq!(clean.flagged_windows, 0);

    let report = harness::analyze(&[looping], 5, 8).unwrap();
    assert_eq!(report.trajectories, 3);
    // 75 steps give aligned windows at 5, 10, ..., 75
    assert_eq!(report.windows, 3 * 15);
    assert_eq!(report.flagged_windows, report.windows);
    assert!(report.per_category.contains_key("step_repetition"));
}

#[test]
fn invalid_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(1));
    let mut cfg = config(&manifest, &dir.path().join("o"), ErrorPattern::GoldenFix, Some(VariantName::D));
    cfg.parallelism = 0;
    assert!(harness::run(&cfg, &PriceTable::default()).unwrap_err().is_usage());
    cfg.parallelism = 1;
    cfg.supervisor.as_mut().unwrap().interval = 0;
    assert!(harness::run(&cfg, &PriceTable::default()).unwrap_err().is_usage());
    let cfg = RunConfig::new(&manifest, dir.path().join("o"), BackendSpec::ScriptedPrm);
    assert!(matches!(harness::run(&cfg, &PriceTable::default()), Err(HarnessError::Usage(_))));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_coursecorrect")).args(args).output().unwrap()
}

#[test]
fn cli_run_report_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &calc_manifest(2));
    let out = dir.path().join("out");
    let (m, o) = (manifest.to_str().unwrap(), out.to_str().unwrap());

    let run = cli(&[
        "run", "--manifest", m, "--out", o, "--policy-model", "scripted:loop_k_actions:2",
        "--prm-model", "scripted", "--variant", "D", "--parallel", "2",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let results = out.join("results.jsonl");
    let report = cli(&["report", results.to_str().unwrap(), "--json"]);
    assert!(report.status.success());
    let json: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(json["resolved"], 2);

    let analyze = cli(&["analyze", o]);
    assert!(analyze.status.success());
    assert!(String::from_utf8_lossy(&analyze.stdout).starts_with("2 trajectories"));

    let evaluate = cli(&["evaluate", o]);
    assert!(evaluate.status.success());
}

#[test]
fn cli_reports_errors_with_nonzero_exit() {
    let missing = cli(&["report", "/nonexistent/results.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    let bad_flag = cli(&["run", "--manifest", "m.json"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

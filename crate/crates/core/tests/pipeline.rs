use std::fs;

use otsing_core::config::{RunConfig, SweepMode};
use otsing_core::io::{read_json, write_labels, PointTable};
use otsing_core::pipeline::{ablation_sweep, run_pipeline, sweep_csv, RunReport, RUN_ARTIFACTS};
use otsing_core::{Error, ErrorClass};

/// A small, fast toy run.
fn small(out: &std::path::Path) -> RunConfig {
    let text = format!(
        r#"{{
            "seed": 3,
            "output_dir": {out:?},
            "max_targets": 20,
            "adjacency": "empirical",
            "solver": {{"mc_samples": 5000, "step_size": 0.25, "max_iters": 300}},
            "synthesis": {{"slab": "off", "per_boundary": 8}},
            "data": {{"toy": {{"train_points": 90, "test_points": 45, "ood_points": 40}}}},
            "trainer": {{"epochs": 3, "hidden": [16, 16]}}
        }}"#
    );
    RunConfig::from_json_str(&text).unwrap()
}

#[test]
fn run_writes_every_artifact_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let report = run_pipeline(&cfg).unwrap();
    let read_all = || -> Vec<Vec<u8>> { RUN_ARTIFACTS.iter().map(|a| fs::read(dir.path().join(a)).unwrap()).collect() };
    let first = read_all();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(report, again);
    assert_eq!(first, read_all());

    let on_disk: RunReport = read_json(dir.path().join("report.json")).unwrap();
    assert_eq!(on_disk, report);
    assert_eq!(report.targets, 20);
    assert!(report.otis_samples > 0);
    let resolved = RunConfig::from_json_str(&fs::read_to_string(dir.path().join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved, cfg);
}

#[test]
fn sweep_row_matches_standalone_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let report = run_pipeline(&cfg).unwrap();
    let rows = ablation_sweep(&cfg, &[0.10], &[SweepMode::TopK]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ood_mmc, report.metrics.ood_mmc);
    assert_eq!(rows[0].id_acc, report.metrics.id_accuracy);
}

#[test]
fn empty_sweep_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let rows = ablation_sweep(&small(dir.path()), &[0.1], &[]).unwrap();
    assert_eq!(sweep_csv(&rows), "mode,rho,ood_mmc,id_acc\n");
}

#[test]
fn sweep_rows_follow_mode_then_rho_order() {
    let dir = tempfile::tempdir().unwrap();
    let modes = [SweepMode::Baseline, SweepMode::RanB, SweepMode::LatentInterp, SweepMode::InputInterp];
    let rows = ablation_sweep(&small(dir.path()), &[0.1, 0.5], &modes).unwrap();
    let order: Vec<(SweepMode, f64)> = rows.iter().map(|r| (r.mode, r.rho)).collect();
    let expected: Vec<(SweepMode, f64)> = modes.iter().flat_map(|&m| [(m, 0.1), (m, 0.5)]).collect();
    assert_eq!(order, expected);
    // the baseline ignores rho
    assert_eq!(rows[0].ood_mmc, rows[1].ood_mmc);
    // identity codec: both interpolation modes mix the same pairs
    assert_eq!(rows[4].ood_mmc, rows[6].ood_mmc);
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.lines().nth(1).unwrap().starts_with("Baseline,0.1,"));
}

#[test]
fn duplicate_targets_name_their_indices() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let pts = vec![vec![1.0, 1.0], vec![2.0, 0.5], vec![1.0, 1.0], vec![-1.0, 2.0]];
    PointTable::from_rows(&pts).unwrap().write_otpc(p.join("train.otpc")).unwrap();
    write_labels(p.join("train.csv"), &[0, 1, 0, 1]).unwrap();
    let text = format!(
        r#"{{"output_dir": {out:?}, "data": {{"train": {t:?}, "train_labels": {l:?}, "test": {t:?}, "test_labels": {l:?}, "ood": {t:?}}}}}"#,
        out = p.join("out"),
        t = p.join("train.otpc"),
        l = p.join("train.csv"),
    );
    let err = run_pipeline(&RunConfig::from_json_str(&text).unwrap()).unwrap_err();
    assert!(matches!(err, Error::DuplicatePoints { first: 0, second: 2 }), "{err}");
    assert_eq!(err.class(), ErrorClass::Config);
    assert!(err.to_string().contains('0') && err.to_string().contains('2'));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("nope.otpc");
    let text = format!(
        r#"{{"output_dir": {out:?}, "data": {{"train": {t:?}, "train_labels": {t:?}, "test": {t:?}, "test_labels": {t:?}, "ood": {t:?}}}}}"#,
        out = dir.path().join("out"),
        t = gone,
    );
    let err = run_pipeline(&RunConfig::from_json_str(&text).unwrap()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Io, "{err}");
}

#[test]
fn strict_mode_turns_non_convergence_into_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.solver.max_iters = 2;
    cfg.strict = true;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::NotConverged { .. }));
    assert_eq!(err.class().exit_code(), 3);
    cfg.strict = false;
    assert!(!run_pipeline(&cfg).unwrap().converged);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otsing(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otsing"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OTSING_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = otsing(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Checks the one-line diagnostic and returns its message.
fn failure(out: &Output, kind: &str, code: i32) -> String {
    assert_eq!(out.status.code(), Some(code));
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    let prefix = format!("error kind={kind} code={code} msg=\"");
    let line = lines[0];
    assert!(line.starts_with(&prefix) && line.ends_with('"'), "{line}");
    let msg = &line[prefix.len()..line.len() - 1];
    assert!(!msg.contains('"'));
    msg.to_string()
}

const SMALL: &str = r#"{
    "seed": 3,
    "output_dir": "run",
    "max_targets": 20,
    "adjacency": "empirical",
    "solver": {"mc_samples": 5000, "step_size": 0.25, "max_iters": 300},
    "synthesis": {"slab": "off", "per_boundary": 8},
    "data": {"toy": {"train_points": 90, "test_points": 45, "ood_points": 40}},
    "trainer": {"epochs": 3, "hidden": [16, 16]}
}"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn stages_chained_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(&["run", "cfg.json"], d);
    let run = d.join("run");

    ok(&["solve", "--points", "run/targets.otpc", "--config", "cfg.json", "--out", "offsets.json"], d);
    assert_eq!(fs::read(d.join("offsets.json")).unwrap(), fs::read(run.join("offsets.json")).unwrap());

    ok(
        &["boundaries", "--points", "run/targets.otpc", "--offsets", "offsets.json", "--config", "cfg.json", "--out", "b.json"],
        d,
    );
    assert_eq!(fs::read(d.join("b.json")).unwrap(), fs::read(run.join("boundaries.json")).unwrap());

    ok(
        &[
            "synthesize", "--points", "run/targets.otpc", "--offsets", "offsets.json", "--boundaries", "b.json",
            "--config", "cfg.json", "--out", "otis.otpc",
        ],
        d,
    );
    assert_eq!(fs::read(d.join("otis.otpc")).unwrap(), fs::read(run.join("otis.otpc")).unwrap());
    assert_eq!(fs::read(d.join("otis.json")).unwrap(), fs::read(run.join("otis.json")).unwrap());

    let trainer = json(&run.join("resolved-config.json"))["trainer"].clone();
    fs::write(d.join("trainer.json"), trainer.to_string()).unwrap();
    ok(
        &[
            "train-toy", "--id", "run/train.otpc", "--id-labels", "run/train-labels.csv", "--otis", "otis.otpc",
            "--test", "run/test.otpc", "--test-labels", "run/test-labels.csv", "--config", "trainer.json",
            "--out", "model.json", "--history", "history.csv",
        ],
        d,
    );
    assert_eq!(fs::read(d.join("model.json")).unwrap(), fs::read(run.join("model.json")).unwrap());
    assert_eq!(fs::read(d.join("history.csv")).unwrap(), fs::read(run.join("history.csv")).unwrap());

    ok(
        &[
            "evaluate", "--model", "model.json", "--id", "run/test.otpc", "--id-labels", "run/test-labels.csv",
            "--ood", "run/ood.otpc", "--out", "metrics.json", "--hist", "hist.csv",
        ],
        d,
    );
    let metrics = json(&d.join("metrics.json"));
    let report = json(&run.join("report.json"));
    for (k, v) in metrics.as_object().unwrap() {
        assert_eq!(&report[k], v, "{k}");
    }
    assert_eq!(fs::read(d.join("hist.csv")).unwrap(), fs::read(run.join("hist.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_mode_and_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(&["sweep", "cfg.json", "--rhos", "0.1,0.5", "--modes", "Baseline,TopK", "--out", "sweep.csv"], d);
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,rho,ood_mmc,id_acc");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("TopK,0.1,"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(&["run", "cfg.json", "--out-dir", "a"], d);
    ok(&["--seed", "11", "run", "cfg.json", "--out-dir", "b"], d);
    assert_ne!(fs::read(d.join("a/otis.otpc")).unwrap(), fs::read(d.join("b/otis.otpc")).unwrap());
    assert_eq!(json(&d.join("b/resolved-config.json"))["seed"], 11);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"sed": 3}"#).unwrap();
    let msg = failure(&otsing(&["run", "cfg.json"], dir.path()), "config", 1);
    assert!(msg.contains("sed"), "{msg}");
}

#[test]
fn out_of_range_fraction_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"rho": 1.5}"#).unwrap();
    failure(&otsing(&["run", "cfg.json"], dir.path()), "config", 1);
}

#[test]
fn duplicate_targets_exit_1_naming_indices() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pts.csv"), "dim=2,count=4\n1,1\n2,0.5\n1,1\n-1,2\n").unwrap();
    fs::write(d.join("labels.csv"), "0\n1\n0\n1\n").unwrap();
    let cfg = r#"{"data": {"train": "pts.csv", "train_labels": "labels.csv", "test": "pts.csv", "test_labels": "labels.csv", "ood": "pts.csv"}}"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    let msg = failure(&otsing(&["run", "cfg.json"], d), "config", 1);
    assert!(msg.contains('0') && msg.contains('2'), "{msg}");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    failure(&otsing(&["run", "nope.json"], dir.path()), "io", 2);
    failure(&otsing(&["solve", "--points", "nope.otpc", "--out", "o.json"], dir.path()), "io", 2);
}

#[test]
fn strict_non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = SMALL.replace("\"max_iters\": 300", "\"max_iters\": 2");
    fs::write(d.join("cfg.json"), cfg).unwrap();
    failure(&otsing(&["--strict", "run", "cfg.json"], d), "numeric", 3);
    ok(&["run", "cfg.json"], d);
    assert_eq!(json(&d.join("run/report.json"))["converged"], false);
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(&["--threads", "1", "run", "cfg.json", "--out-dir", "one"], d);
    ok(&["--threads", "3", "run", "cfg.json", "--out-dir", "three"], d);
    for a in ["offsets.json", "otis.otpc", "model.json", "report.json"] {
        assert_eq!(fs::read(d.join("one").join(a)).unwrap(), fs::read(d.join("three").join(a)).unwrap(), "{a}");
    }
}

#[test]
fn bad_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    failure(&otsing(&["frobnicate"], dir.path()), "config", 1);
    let msg = failure(&otsing(&["sweep", "cfg.json", "--modes", "Nope", "--out", "s.csv"], dir.path()), "config", 1);
    assert!(msg.contains("Nope"), "{msg}");
    assert!(otsing(&["--help"], dir.path()).status.success());
}

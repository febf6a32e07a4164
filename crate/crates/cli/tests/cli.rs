use std::path::Path;
use std::process::Command;

use pathhjb_cli::{emit_convergence_data, run, run_config, ExperimentConfig, Overrides, Series, Task};

const DRIFTABLE: &str = r#""scenario": {"grid": {"T": 1.0, "N": 4}, "controls": [[-1.0], [0.0], [1.0]],
    "noise": {"mode": "quantized_walk", "m": 0},
    "coefficients": {"name": "driftable_abs", "params": {"bound": 1.0}}, "initial": [[0.0]]}"#;

fn cylinder(seed: u64) -> String {
    format!(
        r#""scenario": {{"grid": {{"T": 1.0, "N": 4}}, "controls": [[-1.0], [1.0]],
        "noise": {{"mode": "quantized_walk", "m": 1}},
        "coefficients": {{"name": "random_cylinder", "params": {{"seed": {seed}, "bound": 1.0, "m": 1}}}},
        "initial": [[0.1]]}}"#
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn bin(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_pathhjb")).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn validate_driftable_echoes_lipschitz_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", &format!("{{{DRIFTABLE}, \"validate\": {{\"trajectories\": 100}}}}"));
    let out = dir.path().join("out");
    let rep = run(Task::Validate, &cfg, &Overrides { out: Some(out.clone()), ..Default::default() }).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    assert_eq!(rep.summary["L"], 1.0);
    for f in &rep.files {
        assert!(out.join(f).is_file(), "{f}");
    }
    for c in &rep.checks {
        assert!(rep.files.contains(&c.file), "{} points at {}", c.name, c.file);
    }
}

#[test]
fn dpp_full_sweep_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.json", &format!("{{\"task\": \"dpp\", {}}}", cylinder(6)));
    let out = dir.path().join("out");
    assert_eq!(bin(&["dpp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(out.join("dpp_residuals.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "tau,tau_hat,node,ctrl_seq,residual");
    let mut n = 0;
    for l in lines {
        let r: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(r <= 1e-10);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn malformed_config_exits_two_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("truncated.json", "{\"scenario\": {\"grid\": {\"T\": 1.0}}}".to_string()),
        ("unknown.json", format!("{{{DRIFTABLE}, \"bogus\": 1}}")),
        ("param.json", format!("{{{DRIFTABLE}, \"dpp\": {{\"tol\": 1}}}}")),
        ("task.json", format!("{{\"task\": \"value\", {DRIFTABLE}}}")),
        ("notjson.json", "not json".to_string()),
    ];
    for (name, body) in cases {
        let cfg = write_config(dir.path(), name, &body);
        let out = dir.path().join(format!("out_{name}"));
        assert_eq!(bin(&["dpp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2, "{name}");
        assert!(!out.exists(), "{name} left outputs");
    }
    let missing = dir.path().join("nope.json");
    assert_eq!(bin(&["dpp", "--config", missing.to_str().unwrap()]), 2);
}

#[test]
fn unknown_test_function_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.json",
        &format!("{{{}, \"probe\": {{\"test_function\": {{\"name\": \"nope\"}}}}}}", cylinder(11)),
    );
    let out = dir.path().join("out");
    assert_eq!(bin(&["probe", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists());
}

#[test]
fn cap_exceeded_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.json", &format!("{{{}}}", cylinder(6)));
    let out = dir.path().join("out");
    let code = bin(&["dpp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--cap", "10"]);
    assert_eq!(code, 3);
    assert!(!out.exists());
}

#[test]
fn failed_check_exits_one() {
    // |x(T)| reaches 1.5 from x0 = 0.5, above the declared bound of 1.
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{{{}}}", DRIFTABLE.replace("[[0.0]]", "[[0.5]]"));
    let cfg = write_config(dir.path(), "v.json", &body);
    let out = dir.path().join("out");
    assert_eq!(bin(&["validate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 1);
    assert!(out.join("report.json").is_file());
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "dat" || e == "gp"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for (task, body) in [
        (Task::Probe, format!("{{{}, \"seed\": 5, \"probe\": {{\"points\": 4}}}}", cylinder(11))),
        (Task::Validate, format!("{{{DRIFTABLE}, \"seed\": 9}}")),
        (Task::Ito, "{\"seed\": 2, \"ito\": {\"functions\": 5}}".to_string()),
    ] {
        let cfg = ExperimentConfig::from_json(&body).unwrap();
        let a = dir.path().join(format!("{task:?}_a"));
        let b = dir.path().join(format!("{task:?}_b"));
        run_config(task, &cfg, &a).unwrap();
        run_config(task, &cfg, &b).unwrap();
        let (fa, fb) = (csv_bytes(&a), csv_bytes(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{task:?}");
    }
}

#[test]
fn different_seed_changes_sampled_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{{{}, \"probe\": {{\"points\": 4}}}}", cylinder(11));
    let cfg_path = write_config(dir.path(), "p.json", &cfg);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(Task::Probe, &cfg_path, &Overrides { out: Some(a.clone()), seed: Some(1), ..Default::default() }).unwrap();
    run(Task::Probe, &cfg_path, &Overrides { out: Some(b.clone()), seed: Some(2), ..Default::default() }).unwrap();
    assert_ne!(std::fs::read(a.join("probe_shift.csv")).unwrap(), std::fs::read(b.join("probe_shift.csv")).unwrap());
}

#[test]
fn single_point_series_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = Series { name: "one".into(), x_label: "x".into(), y_label: "y".into(), points: vec![(0.5, 2.0)], log: false };
    let files = emit_convergence_data(&[s], dir.path()).unwrap();
    let data: Vec<_> = files.iter().filter(|p| p.extension().is_some_and(|e| e == "dat")).collect();
    assert_eq!(data.len(), 1);
    let text = std::fs::read_to_string(data[0]).unwrap();
    assert_eq!(text.lines().count(), 1);
    let cols: Vec<f64> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(cols, vec![0.5, 2.0]);
    assert!(dir.path().join("convergence_manifest.json").is_file());
    assert!(dir.path().join("convergence.gp").is_file());
}

#[test]
fn empty_series_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_convergence_data(&[], dir.path()).is_err());
    let empty = Series { name: "e".into(), x_label: "x".into(), y_label: "y".into(), points: vec![], log: false };
    assert!(emit_convergence_data(&[empty], dir.path()).is_err());
}

#[test]
fn sandwich_sweep_writes_three_row_gap_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        &format!("{{{DRIFTABLE}, \"sandwich\": {{\"points\": 3, \"nx\": 81}}}}").replace("[[0.0]]", "[[0.25]]"),
    );
    let out = dir.path().join("out");
    let over = Overrides { out: Some(out.clone()), sweep: Some(vec!["eps".into(), "delta".into()]), ..Default::default() };
    let rep = run(Task::Sandwich, &cfg, &over).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    let gap = std::fs::read_to_string(out.join("sandwich_gap.dat")).unwrap();
    assert_eq!(gap.lines().count(), 3);
    let xs: Vec<f64> = gap.lines().map(|l| l.split_whitespace().next().unwrap().parse().unwrap()).collect();
    // ε(1 + k) + δ with k = 1, halving both from 0.4.
    for (x, want) in xs.iter().zip([1.2, 0.6, 0.3]) {
        assert!((x - want).abs() < 1e-12);
    }
}

#[test]
fn calculus_tasks_pass_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Snell, Task::Net, Task::Heat] {
        let rep = run_config(task, &ExperimentConfig::from_json("{}").unwrap(), &dir.path().join(task.name())).unwrap();
        assert!(rep.pass, "{task:?}: {:?}", rep.checks);
    }
}

#[test]
fn value_task_checks_closed_form_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{{{DRIFTABLE}, \"value\": {{\"export\": true, \"policies\": 5}}}}").replace("[[0.0]]", "[[0.5]]");
    let rep = run_config(Task::Value, &ExperimentConfig::from_json(&body).unwrap(), &dir.path().join("o")).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    assert!(rep.checks.iter().any(|c| c.name == "closed_form"));
    assert!(dir.path().join("o/table/value_table.json").is_file());
    assert!(dir.path().join("o/table/layer_4.csv").is_file());
}

#[test]
fn demo_tasks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let habit = r#"{"scenario": {"grid": {"T": 1.0, "N": 3}, "controls": [[0.0], [0.5], [1.0]],
        "noise": {"mode": "quantized_walk", "m": 1}, "coefficients": {"name": "habit"}, "initial": [[0.0]]}}"#;
    let rep = run_config(Task::DemoHabit, &ExperimentConfig::from_json(habit).unwrap(), &dir.path().join("h")).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    let shift = format!("{{{}, \"demo_shift\": {{\"eta\": {{\"kind\": \"constant\", \"value\": [0.3]}}}}}}", cylinder(5));
    let rep = run_config(Task::DemoShift, &ExperimentConfig::from_json(&shift).unwrap(), &dir.path().join("s")).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    let noisy = format!("{{{}, \"demo_shift\": {{\"eta\": {{\"kind\": \"scaled_noise\", \"scale\": [0.5]}}}}}}", cylinder(5));
    let rep = run_config(Task::DemoShift, &ExperimentConfig::from_json(&noisy).unwrap(), &dir.path().join("n")).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
}

#[test]
fn demo_habit_rejects_other_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_config(Task::DemoHabit, &ExperimentConfig::from_json(&format!("{{{DRIFTABLE}}}")).unwrap(), dir.path())
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

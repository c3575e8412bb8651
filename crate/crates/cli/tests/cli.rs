use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duality_cli::report::Report;
use duality_cli::series::{write_convergence_series, write_search_series, ConvergenceRow};
use duality_core::search::{Objective, SearchTrace, TraceEntry};
use duality_core::BoundEstimate;
use tempfile::TempDir;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_duality")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn duality(sub: &str, config: &Path, workers: Option<usize>) -> Output {
    let mut cmd = Command::new(exe());
    cmd.arg(sub).arg(config);
    match workers {
        Some(n) => cmd.env("DUALITY_WORKERS", n.to_string()),
        None => cmd.env_remove("DUALITY_WORKERS"),
    };
    cmd.output().unwrap()
}

fn report(dir: &Path) -> Report {
    Report::read(&dir.join("out").join("report.json")).unwrap()
}

#[test]
fn bench_on_b1_brackets_the_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"b1-brownian-quadratic\"\nseed = 3\n");
    let out = duality("bench", &cfg, None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    let by_kind = |k: &str| {
        r.estimates
            .iter()
            .find(|e| format!("{:?}", e.kind) == k)
            .unwrap()
            .clone()
    };
    let primal = by_kind("Primal");
    assert!((primal.value - 2.0).abs() < 3.0 * primal.std_error + 0.02);
    assert_eq!(by_kind("DualV2").value, 2.0);
    let g = &r.gaps[1];
    assert!(g.gap.abs() <= 3.0 * g.combined_std_error);
    assert_eq!(r.config.as_ref().unwrap().n_paths, 10_000);
}

#[test]
fn unknown_problem_exits_with_code_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"b7-nonexistent\"\n");
    let out = duality("dual2", &cfg, None);
    assert_eq!(out.status.code(), Some(1));
    let r = report(tmp.path());
    assert_eq!(r.error.unwrap().code, "UNKNOWN_PROBLEM");
}

#[test]
fn malformed_config_is_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"b1-brownian-quadratic\"\nn_paths = -4\n");
    let out = duality("primal", &cfg, None);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(tmp.path()).error.unwrap().code, "INVALID_CONFIG");
    let out = Command::new(exe()).arg("dual9").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subcommand_clash_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "subcommand = \"primal\"\nproblem = \"b1-brownian-quadratic\"\n",
    );
    assert_eq!(duality("dual2", &cfg, None).status.code(), Some(1));
}

#[test]
fn report_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"b2-lq-drift\"\nn_paths = 200\nn_steps = 40\nsearch.budget = 8\nsearch.objective = \"dual_v1\"\n",
    );
    assert_eq!(duality("search", &cfg, None).status.code(), Some(0));
    let path = tmp.path().join("out").join("report.json");
    let text = fs::read_to_string(&path).unwrap();
    let parsed: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.to_json(), text);
    assert!(parsed.trace.as_ref().unwrap().entries.len() <= 8);
}

#[test]
fn series_is_byte_identical_across_runs_and_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"b3-lq-diffusion\"\nn_paths = 500\nseed = 9\nbench.n_steps = [50, 100]\nh.kind = \"perturbed\"\nh.index = 1\n",
    );
    let csv = tmp.path().join("out").join("series.csv");
    let mut seen = Vec::new();
    for workers in [Some(1), Some(3), None] {
        let out = duality("bench", &cfg, workers);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        seen.push(fs::read(&csv).unwrap());
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
    let text = String::from_utf8(seen.remove(0)).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "n_steps,dt,primal,primal_se,dual1,dual1_se,dual2,gap");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("50,0.02,"));
}

#[test]
fn hjb_check_classifies_oracle_and_perturbations() {
    let tmp = TempDir::new().unwrap();
    for (shift, expected) in [(0.0, "Solution"), (1e-3, "Supersolution"), (-1e-3, "Subsolution")] {
        let cfg = write_config(
            tmp.path(),
            &format!("problem = \"b3-lq-diffusion\"\nbox.lower = [-3.0]\nbox.upper = [3.0]\nbox.points = 61\nh.time_shift = {shift:?}\n"),
        );
        assert_eq!(duality("hjb-check", &cfg, None).status.code(), Some(0));
        let hjb = report(tmp.path()).hjb.unwrap();
        assert_eq!(format!("{:?}", hjb.classification), expected);
    }
}

#[test]
fn degeneracy_report_is_written() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"b2-lq-drift\"\nn_paths = 50\nn_steps = 20\nh.kind = \"perturbed\"\n",
    );
    assert_eq!(duality("diagnose-degeneracy", &cfg, None).status.code(), Some(0));
    let d = report(tmp.path()).degeneracy.unwrap();
    assert_eq!(d.gaps.len(), 50);
}

fn entry(i: usize, value: f64) -> TraceEntry {
    let mut e = BoundEstimate::oracle("p", "h", 0.0, &[1.0], value);
    e.std_error = 0.5;
    TraceEntry {
        iteration: i,
        params: vec![value],
        estimate: Some(e),
        rejection: None,
    }
}

fn trace(entries: Vec<TraceEntry>, best_index: Option<usize>) -> SearchTrace {
    SearchTrace {
        family: "f".into(),
        objective: Objective::DualV2,
        seed: 0,
        entries,
        best_index,
    }
}

#[test]
fn empty_trace_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("s.csv");
    write_search_series(&trace(vec![], None), &path).unwrap();
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        "iteration,objective,objective_se,is_best\n"
    );
}

#[test]
fn three_iterations_write_four_lines() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("s.csv");
    let mut rejected = entry(2, 0.1);
    rejected.rejection = Some("boundary".into());
    write_search_series(&trace(vec![entry(0, 3.0), entry(1, 2.5), rejected], Some(1)), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2], "1,2.5,0.5,true");
    assert_eq!(lines[3], "2,inf,,false");
}

#[test]
fn convergence_rows_keep_column_order_and_precision() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("c.csv");
    let rows = [
        ConvergenceRow {
            n_steps: 100,
            dt: 1e-2,
            primal: Some((0.1 + 0.2, 0.01)),
            dual1: Some((1.0 / 3.0, 0.0)),
            dual2: Some(2.0),
        },
        ConvergenceRow {
            n_steps: 1000,
            dt: 1e-3,
            ..Default::default()
        },
    ];
    write_convergence_series(&rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let cells: Vec<_> = lines[1].split(',').collect();
    assert_eq!(cells[2].parse::<f64>().unwrap(), 0.1 + 0.2);
    assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(lines[2], "1000,0.001,,,,,,");
}

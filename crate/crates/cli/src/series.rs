//! Plot data as CSV. Floats use the shortest decimal form that reads back to
//! the same value; missing cells are empty.

use std::io;
use std::path::Path;

use duality_core::search::SearchTrace;

pub const SEARCH_HEADER: [&str; 4] = ["iteration", "objective", "objective_se", "is_best"];

pub const CONVERGENCE_HEADER: [&str; 8] = [
    "n_steps",
    "dt",
    "primal",
    "primal_se",
    "dual1",
    "dual1_se",
    "dual2",
    "gap",
];

/// One step size of a convergence study. `gap` is `dual1 − primal`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub dt: f64,
    pub primal: Option<(f64, f64)>,
    pub dual1: Option<(f64, f64)>,
    pub dual2: Option<f64>,
}

impl ConvergenceRow {
    pub fn gap(&self) -> Option<f64> {
        Some(self.dual1?.0 - self.primal?.0)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn writer(path: &Path) -> io::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(io::Error::other)
}

pub fn write_search_series(trace: &SearchTrace, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(SEARCH_HEADER)?;
    for (i, e) in trace.entries.iter().enumerate() {
        let se = e
            .estimate
            .as_ref()
            .filter(|_| e.rejection.is_none())
            .map(|est| est.std_error);
        w.write_record([
            e.iteration.to_string(),
            num(e.objective()),
            opt(se),
            trace.is_best(i).to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_convergence_series(rows: &[ConvergenceRow], path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(CONVERGENCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.n_steps.to_string(),
            num(r.dt),
            opt(r.primal.map(|p| p.0)),
            opt(r.primal.map(|p| p.1)),
            opt(r.dual1.map(|p| p.0)),
            opt(r.dual1.map(|p| p.1)),
            opt(r.dual2),
            opt(r.gap()),
        ])?;
    }
    w.flush()
}

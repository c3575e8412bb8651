//! Outer minimisation of a dual bound over a parametric family of test
//! functions, and primal/dual gap reporting.
//!
//! Every candidate is evaluated with the same seed, so the objective is a
//! deterministic function of `θ` and a plain Nelder-Mead simplex applies.

use serde::{Deserialize, Serialize};

use crate::dual::{dual_v1, dual_v2, PathwiseDPConfig, SpatialBox};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{check_test_function, ControlProblem, ParametricFamily};
use crate::paths::TimeGrid;
use crate::primal::BoundEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    DualV1,
    DualV2,
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub sbox: SpatialBox,
    pub grid: TimeGrid,
    pub dp: PathwiseDPConfig,
    /// Paths per `dual_v1` evaluation; unused for `dual_v2`.
    pub n_paths: usize,
    /// Points at which each candidate's derivatives are checked.
    pub check_points: Vec<(f64, Vector)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub estimate: Option<BoundEstimate>,
    /// Why the candidate was assigned `+∞`.
    pub rejection: Option<String>,
}

impl TraceEntry {
    pub fn objective(&self) -> f64 {
        match (&self.estimate, &self.rejection) {
            (Some(e), None) => e.value,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub family: String,
    pub objective: Objective,
    pub seed: u64,
    pub entries: Vec<TraceEntry>,
    pub best_index: Option<usize>,
}

impl SearchTrace {
    pub fn best(&self) -> Option<&TraceEntry> {
        self.best_index.map(|i| &self.entries[i])
    }

    /// Running minimum of the objective along the trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.entries
            .iter()
            .map(|e| {
                best = best.min(e.objective());
                best
            })
            .collect()
    }

    /// Whether entry `i` is the first to reach the final best.
    pub fn is_best(&self, i: usize) -> bool {
        self.best_index == Some(i)
    }
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

struct Evaluator<'a> {
    problem: &'a ControlProblem,
    family: &'a ParametricFamily,
    objective: Objective,
    t: f64,
    x: &'a [f64],
    seed: u64,
    config: &'a SearchConfig,
    limit: usize,
    entries: Vec<TraceEntry>,
}

impl Evaluator<'_> {
    fn exhausted(&self) -> bool {
        self.entries.len() >= self.limit
    }

    /// Objective at `theta`, or `None` once the budget is spent.
    fn eval(&mut self, theta: &[f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        let (estimate, rejection) = self.assess(theta);
        let entry = TraceEntry {
            iteration: self.entries.len(),
            params: theta.to_vec(),
            estimate,
            rejection,
        };
        let f = entry.objective();
        self.entries.push(entry);
        Some(f)
    }

    fn assess(&self, theta: &[f64]) -> (Option<BoundEstimate>, Option<String>) {
        let h = self.family.build(theta);
        if let Err(e) = check_test_function(&h, self.problem, &self.config.check_points) {
            return (None, Some(e.to_string()));
        }
        let c = self.config;
        let est = match self.objective {
            Objective::DualV2 => dual_v2(self.problem, &h, self.t, self.x, &c.sbox, &c.grid),
            Objective::DualV1 => dual_v1(self.problem, &h, self.t, self.x, c.n_paths, &c.grid, &c.dp, self.seed),
        };
        match est {
            Err(e) => (None, Some(e.to_string())),
            Ok(e) if e.boundary_attained => (Some(e), Some("supremum attained on the box boundary".into())),
            Ok(e) if !e.value.is_finite() => (Some(e), Some("non-finite objective".into())),
            Ok(e) => (Some(e), None),
        }
    }
}

fn combine(a: &[f64], b: &[f64], wa: f64, wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| wa * p + wb * q).collect()
}

/// Nelder-Mead minimisation of the chosen dual bound over `family`, with at
/// most `max(budget, 1)` objective evaluations. Candidates that fail the
/// derivative check, error out or report a boundary maximum score `+∞`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_dual(
    problem: &ControlProblem,
    family: &ParametricFamily,
    objective: Objective,
    t: f64,
    x: &[f64],
    budget: usize,
    seed: u64,
    config: &SearchConfig,
) -> Result<SearchTrace> {
    let n = family.dim();
    let mut ev = Evaluator {
        problem,
        family,
        objective,
        t,
        x,
        seed,
        config,
        limit: budget.max(1),
        entries: Vec::new(),
    };

    let x0 = family.initial().to_vec();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    if let Some(f) = ev.eval(&x0) {
        simplex.push((x0.clone(), f));
    }
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += family.scale()[i];
        match ev.eval(&v) {
            Some(f) => simplex.push((v, f)),
            None => break,
        }
    }
    if simplex.iter().all(|(_, f)| !f.is_finite()) {
        return Err(Error::AllCandidatesInvalid);
    }

    if simplex.len() == n + 1 {
        nelder_mead(&mut ev, &mut simplex);
    }

    let entries = ev.entries;
    let mut best_index = None;
    let mut best = f64::INFINITY;
    for (i, e) in entries.iter().enumerate() {
        if e.objective() < best {
            best = e.objective();
            best_index = Some(i);
        }
    }
    Ok(SearchTrace {
        family: family.id().to_string(),
        objective,
        seed,
        entries,
        best_index,
    })
}

fn nelder_mead(ev: &mut Evaluator<'_>, simplex: &mut [(Vec<f64>, f64)]) {
    let n = simplex.len() - 1;
    while !ev.exhausted() {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fbest, fworst) = (simplex[0].1, simplex[n].1);
        let spread = simplex
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if fbest.is_finite() && (fworst - fbest).abs() <= 1e-13 * (1.0 + fbest.abs()) && spread <= 1e-10 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let xr = combine(&centroid, &worst, 1.0 + ALPHA, -ALPHA);
        let Some(fr) = ev.eval(&xr) else { break };

        if fr < fbest {
            let xe = combine(&centroid, &xr, 1.0 - GAMMA, GAMMA);
            match ev.eval(&xe) {
                Some(fe) if fe < fr => simplex[n] = (xe, fe),
                _ => simplex[n] = (xr, fr),
            }
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let accepted = if fr < fworst {
            let xc = combine(&centroid, &xr, 1.0 - RHO, RHO);
            match ev.eval(&xc) {
                Some(fc) if fc <= fr => {
                    simplex[n] = (xc, fc);
                    true
                }
                Some(_) => false,
                None => break,
            }
        } else {
            let xc = combine(&centroid, &worst, 1.0 - RHO, RHO);
            match ev.eval(&xc) {
                Some(fc) if fc < fworst => {
                    simplex[n] = (xc, fc);
                    true
                }
                Some(_) => false,
                None => break,
            }
        };
        if !accepted {
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let v = combine(&best, &vertex.0, 1.0 - SIGMA, SIGMA);
                match ev.eval(&v) {
                    Some(f) => *vertex = (v, f),
                    None => return,
                }
            }
        }
    }
}

/// Multiple of `Δt · (1 + |value|)` tolerated as Euler bias before a negative
/// gap is treated as a weak-duality violation.
pub const DISCRETIZATION_ALLOWANCE: f64 = 2.0;

/// Allowance for time-discretisation bias at step `dt` around `value`.
pub fn discretization_allowance(dt: f64, value: f64) -> f64 {
    DISCRETIZATION_ALLOWANCE * dt * (1.0 + value.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub primal: BoundEstimate,
    pub dual: BoundEstimate,
    /// `dual − primal`.
    pub gap: f64,
    /// `√(se_primal² + se_dual²)`.
    pub combined_std_error: f64,
    /// `gap / max(1, |dual|)`.
    pub relative_gap: f64,
    pub allowance: f64,
    /// `gap < −(3 · combined_std_error + allowance)`.
    pub failed: bool,
    pub boundary_attained: bool,
    pub clamp_fraction: Option<f64>,
}

pub fn gap_report(primal: &BoundEstimate, dual: &BoundEstimate) -> Result<GapReport> {
    if primal.problem_id != dual.problem_id {
        return Err(Error::MismatchedProblem(format!(
            "`{}` vs `{}`",
            primal.problem_id, dual.problem_id
        )));
    }
    if primal.t != dual.t || primal.x != dual.x {
        return Err(Error::MismatchedProblem(format!(
            "(t, x) = ({}, {:?}) vs ({}, {:?})",
            primal.t, primal.x, dual.t, dual.x
        )));
    }
    let gap = dual.value - primal.value;
    let se = primal.std_error.hypot(dual.std_error);
    let allowance = discretization_allowance(primal.dt.max(dual.dt), primal.value);
    Ok(GapReport {
        primal: primal.clone(),
        dual: dual.clone(),
        gap,
        combined_std_error: se,
        relative_gap: gap / dual.value.abs().max(1.0),
        allowance,
        failed: gap < -(3.0 * se + allowance),
        boundary_attained: dual.boundary_attained,
        clamp_fraction: dual.clamp_fraction,
    })
}

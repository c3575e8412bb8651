//! Per-path comparison of the pathwise and pointwise dual bounds.
//!
//! When the anticipative inner optimum on a path reaches the pointwise bound
//! `Σ Δt sup_y [∂ₛh + H] + sup_y [g − h(T, ·)]`, the pathwise bound brings no
//! improvement on that path. The report records how often this happens.

use serde::{Deserialize, Serialize};

use super::pathwise::{pathwise_outcomes, PathwiseDPConfig};
use super::{check_grid, pointwise_parts, SpatialBox};
use crate::error::Result;
use crate::model::{ControlProblem, TestFunction};
use crate::paths::TimeGrid;
use crate::stats::SampleStats;

/// Gaps below this are treated as degenerate (pathwise = pointwise).
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub problem_id: String,
    pub subject: String,
    /// Pointwise bound relative to `h(t, x)`; identical for every path.
    pub pointwise: f64,
    /// Pathwise inner optimum per path, relative to `h(t, x)`.
    pub pathwise: Vec<f64>,
    /// `pointwise − pathwise` per path.
    pub gaps: Vec<f64>,
    pub gap_stats: SampleStats,
    pub min_gap: f64,
    pub max_gap: f64,
    pub tolerance: f64,
    /// Share of paths whose gap is below `tolerance`.
    pub degenerate_fraction: f64,
    pub boundary_attained: bool,
    pub mean_clamp_fraction: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn degeneracy_diagnostic(
    problem: &ControlProblem,
    h: &TestFunction,
    t: f64,
    x: &[f64],
    n_paths: usize,
    grid: &TimeGrid,
    cfg: &PathwiseDPConfig,
    sbox: &SpatialBox,
    seed: u64,
    tolerance: f64,
) -> Result<DegeneracyReport> {
    check_grid(problem, t, grid)?;
    let nonsmooth = cfg.nonsmooth(h);
    let parts = pointwise_parts(problem, h, sbox, grid, nonsmooth)?;
    let pointwise = parts.integral + parts.terminal.as_ref().map_or(0.0, |g| g.value);
    let outcomes = pathwise_outcomes(problem, h, x, n_paths, grid, cfg, seed)?;
    let pathwise: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let gaps: Vec<f64> = pathwise.iter().map(|v| pointwise - v).collect();
    let degenerate = gaps.iter().filter(|g| g.abs() <= tolerance).count();
    Ok(DegeneracyReport {
        problem_id: problem.id().to_string(),
        subject: h.label().to_string(),
        pointwise,
        gap_stats: SampleStats::from_samples(&gaps),
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        max_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        degenerate_fraction: degenerate as f64 / n_paths.max(1) as f64,
        mean_clamp_fraction: outcomes.iter().map(|o| o.clamp_fraction).sum::<f64>() / n_paths.max(1) as f64,
        boundary_attained: parts.boundary,
        tolerance,
        pathwise,
        gaps,
    })
}

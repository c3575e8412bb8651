//! Monte-Carlo lower bound `J(t, x, π)` for a feedback policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlProblem, Policy};
use crate::paths::{map_paths, summarize, TimeGrid};
use crate::stats::SampleStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Primal,
    DualV1,
    DualV2,
    Oracle,
}

impl BoundKind {
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, BoundKind::Primal | BoundKind::DualV1)
    }
}

/// A bound on the value function together with how it was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub kind: BoundKind,
    pub value: f64,
    /// Sample standard deviation over √n for Monte-Carlo kinds, zero otherwise.
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub problem_id: String,
    /// Label of the test function (dual kinds) or policy (primal).
    pub subject: String,
    pub t: f64,
    pub x: Vec<f64>,
    /// A spatial supremum was attained on the edge of its search box.
    #[serde(default)]
    pub boundary_attained: bool,
    /// Fraction of optimal pathwise transitions that left the state box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_fraction: Option<f64>,
    /// `sup_y [g(y) − h(T, y)]` when the non-smooth variant was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_gap: Option<f64>,
}

impl BoundEstimate {
    /// An exact value with no sampling error.
    pub fn oracle(problem_id: &str, subject: &str, t: f64, x: &[f64], value: f64) -> Self {
        Self {
            kind: BoundKind::Oracle,
            value,
            std_error: 0.0,
            n_paths: 0,
            dt: 0.0,
            n_steps: 0,
            seed: 0,
            problem_id: problem_id.to_string(),
            subject: subject.to_string(),
            t,
            x: x.to_vec(),
            boundary_attained: false,
            clamp_fraction: None,
            terminal_gap: None,
        }
    }

    /// No boundary maximum was reported.
    pub fn is_trusted(&self) -> bool {
        !self.boundary_attained
    }
}

/// Sample mean of `Σ l Δt + g(X_N)` over `n_paths` Euler paths started at `(t, x)`.
pub fn primal_bound(
    problem: &ControlProblem,
    policy: &Policy,
    t: f64,
    x: &[f64],
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<BoundEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    if grid.start() != t {
        return Err(Error::InvalidArgument(format!(
            "grid starts at {} but the bound is requested at t={t}",
            grid.start()
        )));
    }
    let rewards = map_paths(grid, problem.noise_dim(), n_paths, seed, |path| {
        summarize(problem, policy, path, x, None).map(|s| s.running_reward + s.terminal_reward)
    })?;
    let stats = SampleStats::from_samples(&rewards);
    Ok(BoundEstimate {
        kind: BoundKind::Primal,
        value: stats.mean,
        std_error: stats.std_error,
        n_paths,
        dt: grid.dt(),
        n_steps: grid.n_steps(),
        seed,
        problem_id: problem.id().to_string(),
        subject: policy.label().to_string(),
        t,
        x: x.to_vec(),
        boundary_attained: false,
        clamp_fraction: None,
        terminal_gap: None,
    })
}

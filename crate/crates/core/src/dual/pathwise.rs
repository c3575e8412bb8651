//! Pathwise dual bound by per-path anticipative dynamic programming.
//!
//! With the Brownian increments of one path frozen, the inner problem
//!
//! ```text
//! max over u_0..u_{N-1} of  Σ_k (∂ₛh + H^cv)(t_k, X_k, u_k) Δt + g(X_N) − h(T, X_N)
//! X_{k+1} = X_k + b(t_k, X_k, u_k) Δt + σ(t_k, X_k, u_k) ΔW_k
//! ```
//!
//! is deterministic and is solved backward on a tensor state grid with
//! multilinear interpolation. Transitions leaving the grid are clamped to it
//! and counted. Controls may look at the whole path, so the per-path optimum
//! dominates every adapted control evaluated on the same path.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_grid;
use crate::error::{Error, Result};
use crate::linalg::{dot, trace_sigma_sigma_t_z, Vector};
use crate::model::{ControlProblem, Policy, TestFunction};
use crate::paths::{sample_brownian, BrownianPath, TimeGrid};
use crate::primal::{BoundEstimate, BoundKind};
use crate::stats::SampleStats;

/// How the terminal value of the backward recursion is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalHandling {
    /// `0` when `h` claims `h(T, ·) = g`, else `g − h(T, ·)`.
    #[default]
    Auto,
    /// Always `g − h(T, ·)`.
    NonSmooth,
}

/// Discretisation of the pathwise inner problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseDPConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// State grid points per axis.
    pub state_points: usize,
    /// Control grid points per axis; `None` keeps the problem's own grid.
    #[serde(default)]
    pub control_points: Option<usize>,
    /// Add the analytic argmax of the Hamiltonian (when the problem has one)
    /// to the candidate controls at every node.
    #[serde(default = "default_true")]
    pub use_hook: bool,
    #[serde(default)]
    pub terminal: TerminalHandling,
}

fn default_true() -> bool {
    true
}

impl PathwiseDPConfig {
    pub fn new(lower: &[f64], upper: &[f64], state_points: usize) -> Self {
        Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            state_points,
            control_points: None,
            use_hook: true,
            terminal: TerminalHandling::Auto,
        }
    }

    pub fn with_control_points(mut self, n: usize) -> Self {
        self.control_points = Some(n);
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalHandling) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if d > 2 {
            return Err(Error::UnsupportedDimension(d));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::DimensionMismatch {
                what: "pathwise state box".into(),
                expected: d.to_string(),
                got: format!("{}/{}", self.lower.len(), self.upper.len()),
            });
        }
        if self.lower.iter().zip(&self.upper).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("pathwise state box needs lower < upper".into()));
        }
        if self.state_points < 2 {
            return Err(Error::InvalidArgument(
                "pathwise state grid needs at least 2 points per axis".into(),
            ));
        }
        if matches!(self.control_points, Some(n) if n < 2) {
            return Err(Error::InvalidArgument(
                "pathwise control grid needs at least 2 points per axis".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn nonsmooth(&self, h: &TestFunction) -> bool {
        match self.terminal {
            TerminalHandling::Auto => !h.terminal_matches_g(),
            TerminalHandling::NonSmooth => true,
        }
    }
}

/// Optimal value of one pathwise inner problem, relative to `h(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathwiseOutcome {
    pub value: f64,
    /// Share of steps along the optimal continuation from `x` whose
    /// transition left the state box.
    pub clamp_fraction: f64,
}

struct StateGrid {
    d: usize,
    n: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    spacing: [f64; 2],
}

impl StateGrid {
    fn new(cfg: &PathwiseDPConfig, d: usize) -> Self {
        let mut lower = [0.0; 2];
        let mut upper = [0.0; 2];
        let mut spacing = [1.0; 2];
        for a in 0..d {
            lower[a] = cfg.lower[a];
            upper[a] = cfg.upper[a];
            spacing[a] = (upper[a] - lower[a]) / (cfg.state_points - 1) as f64;
        }
        Self {
            d,
            n: cfg.state_points,
            lower,
            upper,
            spacing,
        }
    }

    fn node_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    fn axis_value(&self, a: usize, i: usize) -> f64 {
        if i + 1 == self.n {
            self.upper[a]
        } else {
            self.lower[a] + i as f64 * self.spacing[a]
        }
    }

    fn node(&self, flat: usize) -> Vector {
        match self.d {
            1 => smallvec::smallvec![self.axis_value(0, flat)],
            _ => smallvec::smallvec![self.axis_value(0, flat / self.n), self.axis_value(1, flat % self.n)],
        }
    }

    /// Cell index and weight along one axis, clamping into the box.
    #[inline]
    fn locate(&self, a: usize, y: f64) -> (usize, f64, bool) {
        let clamped = !(y >= self.lower[a] && y <= self.upper[a]);
        let pos = ((y - self.lower[a]) / self.spacing[a]).clamp(0.0, (self.n - 1) as f64);
        // NaN positions (NaN states) collapse to the first cell and are caught by the caller
        let pos = if pos.is_nan() { 0.0 } else { pos };
        let i = (pos as usize).min(self.n - 2);
        (i, pos - i as f64, clamped)
    }

    #[inline]
    fn interp(&self, values: &[f64], y: &[f64]) -> (f64, bool) {
        if self.d == 1 {
            let (i, w, c) = self.locate(0, y[0]);
            ((1.0 - w) * values[i] + w * values[i + 1], c)
        } else {
            let (i, wi, ci) = self.locate(0, y[0]);
            let (j, wj, cj) = self.locate(1, y[1]);
            let n = self.n;
            let v00 = values[i * n + j];
            let v01 = values[i * n + j + 1];
            let v10 = values[(i + 1) * n + j];
            let v11 = values[(i + 1) * n + j + 1];
            let v = (1.0 - wi) * ((1.0 - wj) * v00 + wj * v01) + wi * ((1.0 - wj) * v10 + wj * v11);
            (v, ci || cj)
        }
    }
}

/// Per-step data for every (node, candidate control) pair: reward `(∂ₛh + H^cv) Δt`,
/// deterministic part `y + b Δt` of the transition and the loading `σ`.
#[derive(Clone)]
struct StepTable {
    reward: Vec<f64>,
    det: Vec<f64>,
    sigma: Vec<f64>,
}

enum Candidates<'a> {
    Grid { controls: Vec<Vector>, hook: bool },
    Policy(&'a Policy),
}

struct Buffers {
    prev: Vec<f64>,
    cur: Vec<f64>,
    prev_c: Vec<f64>,
    cur_c: Vec<f64>,
}

/// Upper bound on cached table entries (floats) before falling back to
/// per-chunk recomputation.
const TABLE_CACHE_LIMIT: usize = 1 << 23;
const PATH_CHUNK: usize = 2048;

struct Solver<'a> {
    problem: &'a ControlProblem,
    h: &'a TestFunction,
    grid: TimeGrid,
    states: StateGrid,
    candidates: Candidates<'a>,
    per_node: usize,
    terminal: Vec<f64>,
    cache: Option<Vec<StepTable>>,
}

impl<'a> Solver<'a> {
    fn new(
        problem: &'a ControlProblem,
        h: &'a TestFunction,
        grid: &TimeGrid,
        cfg: &PathwiseDPConfig,
        policy: Option<&'a Policy>,
    ) -> Result<Self> {
        let d = problem.state_dim();
        cfg.validate(d)?;
        grid.check_against(problem)?;
        let states = StateGrid::new(cfg, d);

        let candidates = match policy {
            Some(p) => Candidates::Policy(p),
            None => {
                let controls = match cfg.control_points {
                    Some(n) => problem.controls().regridded(n)?.grid(),
                    None => problem.controls().grid(),
                };
                let hook = cfg.use_hook && problem.controls().hook().is_some();
                Candidates::Grid { controls, hook }
            }
        };
        let per_node = match &candidates {
            Candidates::Grid { controls, hook } => controls.len() + usize::from(*hook),
            Candidates::Policy(_) => 1,
        };

        let big_t = problem.horizon();
        let terminal = if cfg.nonsmooth(h) {
            (0..states.node_count())
                .map(|i| {
                    let y = states.node(i);
                    let v = problem.terminal_reward(&y) - h.base_value(big_t, &y);
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::NonFinite {
                            what: "terminal gap".into(),
                            step: Some(grid.n_steps()),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![0.0; states.node_count()]
        };

        let mut solver = Self {
            problem,
            h,
            grid: *grid,
            states,
            candidates,
            per_node,
            terminal,
            cache: None,
        };
        let entry = 1 + d + d * problem.noise_dim();
        let total = grid.n_steps() * solver.states.node_count() * per_node * entry;
        if total <= TABLE_CACHE_LIMIT {
            solver.cache = Some(
                (0..grid.n_steps())
                    .into_par_iter()
                    .map(|k| solver.build_table(k))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(solver)
    }

    fn build_table(&self, k: usize) -> Result<StepTable> {
        let problem = self.problem;
        let h = self.h;
        let d = problem.state_dim();
        let m = problem.noise_dim();
        let t = self.grid.time(k);
        let dt = self.grid.dt();
        let nodes = self.states.node_count();
        let mut reward = Vec::with_capacity(nodes * self.per_node);
        let mut det = Vec::with_capacity(nodes * self.per_node * d);
        let mut sigma = Vec::with_capacity(nodes * self.per_node * d * m);
        let mut hook_u: Vector;

        for i in 0..nodes {
            let y = self.states.node(i);
            let ht = h.dt(t, &y);
            let p = h.dx(t, &y);
            let z = h.dxx(t, &y);
            let mut push = |u: &[f64]| -> Result<()> {
                let b = problem.drift(t, &y, u);
                let s = problem.diffusion(t, &y, u);
                problem.check_shapes(&b, &s)?;
                let l = problem.running_reward(t, &y, u);
                let r = (ht + dot(&b, &p) + 0.5 * trace_sigma_sigma_t_z(s.as_slice(), d, m, z.as_slice()) + l) * dt;
                if !r.is_finite() || !b.iter().all(|v| v.is_finite()) || !s.is_finite() {
                    return Err(Error::NonFinite {
                        what: "pathwise integrand".into(),
                        step: Some(k),
                    });
                }
                reward.push(r);
                for a in 0..d {
                    det.push(y[a] + b[a] * dt);
                }
                sigma.extend_from_slice(s.as_slice());
                Ok(())
            };
            match &self.candidates {
                Candidates::Grid { controls, hook } => {
                    for u in controls {
                        push(u)?;
                    }
                    if *hook {
                        let f = problem.controls().hook().expect("hook checked at construction");
                        hook_u = f(t, &y, &p, &z);
                        problem.controls().clamp(&mut hook_u);
                        push(&hook_u)?;
                    }
                }
                Candidates::Policy(pol) => {
                    let u = pol.control(t, &y);
                    push(&u)?;
                }
            }
        }
        Ok(StepTable { reward, det, sigma })
    }

    fn table(&self, k: usize) -> Result<Cow<'_, StepTable>> {
        match &self.cache {
            Some(c) => Ok(Cow::Borrowed(&c[k])),
            None => self.build_table(k).map(Cow::Owned),
        }
    }

    /// One backward step for one path: `cur[i] = max_j reward + V_{k+1}(next)`.
    /// `cur_c` carries the number of clamped transitions along the optimal
    /// continuation, interpolated like the values.
    fn step(&self, table: &StepTable, dw: &[f64], prev: &[f64], cur: &mut [f64], prev_c: &[f64], cur_c: &mut [f64]) {
        let d = self.states.d;
        let m = dw.len();
        let nc = self.per_node;
        let mut next = [0.0f64; 2];
        let mut best_next = [0.0f64; 2];
        for i in 0..cur.len() {
            let mut best = f64::NEG_INFINITY;
            let mut best_clamped = false;
            for j in 0..nc {
                let e = i * nc + j;
                if d == 1 && m == 1 {
                    next[0] = table.det[e] + table.sigma[e] * dw[0];
                } else {
                    let s = &table.sigma[e * d * m..(e + 1) * d * m];
                    for a in 0..d {
                        let mut acc = table.det[e * d + a];
                        for q in 0..m {
                            acc += s[a * m + q] * dw[q];
                        }
                        next[a] = acc;
                    }
                }
                let (v, c) = self.states.interp(prev, &next[..d]);
                let total = table.reward[e] + v;
                if total > best {
                    best = total;
                    best_clamped = c;
                    best_next = next;
                }
            }
            cur[i] = best;
            cur_c[i] = f64::from(u8::from(best_clamped)) + self.states.interp(prev_c, &best_next[..d]).0;
        }
    }

    fn solve(
        &self,
        x: &[f64],
        n_paths: usize,
        path_for: impl Fn(usize) -> BrownianPath + Sync,
    ) -> Result<Vec<PathwiseOutcome>> {
        let nodes = self.states.node_count();
        let n_steps = self.grid.n_steps();
        let mut out = Vec::with_capacity(n_paths);
        let mut start = 0;
        while start < n_paths {
            let end = (start + PATH_CHUNK).min(n_paths);
            let paths: Vec<BrownianPath> = (start..end).into_par_iter().map(&path_for).collect();
            for p in &paths {
                if p.grid() != &self.grid || p.noise_dim() != self.problem.noise_dim() {
                    return Err(Error::InvalidArgument(
                        "brownian path does not match the time grid".into(),
                    ));
                }
            }
            let mut bufs: Vec<Buffers> = paths
                .iter()
                .map(|_| Buffers {
                    prev: self.terminal.clone(),
                    cur: vec![0.0; nodes],
                    prev_c: vec![0.0; nodes],
                    cur_c: vec![0.0; nodes],
                })
                .collect();
            for k in (0..n_steps).rev() {
                let table = self.table(k)?;
                bufs.par_iter_mut().zip(paths.par_iter()).for_each(|(b, path)| {
                    self.step(&table, path.increment(k), &b.prev, &mut b.cur, &b.prev_c, &mut b.cur_c);
                    std::mem::swap(&mut b.prev, &mut b.cur);
                    std::mem::swap(&mut b.prev_c, &mut b.cur_c);
                });
            }
            for b in &bufs {
                let (v, _) = self.states.interp(&b.prev, x);
                let clamped = self.states.interp(&b.prev_c, x).0;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "pathwise value".into(),
                        step: Some(0),
                    });
                }
                out.push(PathwiseOutcome {
                    value: v,
                    clamp_fraction: clamped / n_steps as f64,
                });
            }
            start = end;
        }
        Ok(out)
    }
}

fn check_start(problem: &ControlProblem, path: &BrownianPath, t: f64, x: &[f64]) -> Result<()> {
    check_grid(problem, t, path.grid())?;
    if x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "evaluation point".into(),
            expected: problem.state_dim().to_string(),
            got: x.len().to_string(),
        });
    }
    Ok(())
}

/// Anticipative optimum of the frozen-noise problem on one path, relative to `h(t, x)`.
pub fn pathwise_inner_max(
    problem: &ControlProblem,
    h: &TestFunction,
    path: &BrownianPath,
    t: f64,
    x: &[f64],
    cfg: &PathwiseDPConfig,
) -> Result<PathwiseOutcome> {
    check_start(problem, path, t, x)?;
    let solver = Solver::new(problem, h, path.grid(), cfg, None)?;
    Ok(solver.solve(x, 1, |_| path.clone())?[0])
}

/// Value of a fixed feedback control on the same discretised recursion as
/// [`pathwise_inner_max`]. When the policy only uses candidate controls this
/// is dominated by the inner maximum on the same path.
pub fn pathwise_policy_value(
    problem: &ControlProblem,
    h: &TestFunction,
    path: &BrownianPath,
    t: f64,
    x: &[f64],
    cfg: &PathwiseDPConfig,
    policy: &Policy,
) -> Result<PathwiseOutcome> {
    check_start(problem, path, t, x)?;
    let solver = Solver::new(problem, h, path.grid(), cfg, Some(policy))?;
    Ok(solver.solve(x, 1, |_| path.clone())?[0])
}

/// Per-path outcomes on streams `0..n_paths` of `seed`.
pub(crate) fn pathwise_outcomes(
    problem: &ControlProblem,
    h: &TestFunction,
    x: &[f64],
    n_paths: usize,
    grid: &TimeGrid,
    cfg: &PathwiseDPConfig,
    seed: u64,
) -> Result<Vec<PathwiseOutcome>> {
    let solver = Solver::new(problem, h, grid, cfg, None)?;
    let m = problem.noise_dim();
    solver.solve(x, n_paths, |i| sample_brownian(grid, m, seed, i as u64))
}

/// `h` evaluated consistently with the terminal handling of `cfg`: the offset
/// cancels against the terminal gap in the non-smooth variant.
pub(crate) fn anchor_value(h: &TestFunction, cfg: &PathwiseDPConfig, t: f64, x: &[f64]) -> f64 {
    if cfg.nonsmooth(h) {
        h.base_value(t, x)
    } else {
        h.value(t, x)
    }
}

/// Pathwise dual bound `V₁ʰ(t, x) = h(t, x) + E[anticipative inner optimum]`.
#[allow(clippy::too_many_arguments)]
pub fn dual_v1(
    problem: &ControlProblem,
    h: &TestFunction,
    t: f64,
    x: &[f64],
    n_paths: usize,
    grid: &TimeGrid,
    cfg: &PathwiseDPConfig,
    seed: u64,
) -> Result<BoundEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    check_grid(problem, t, grid)?;
    if x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "evaluation point".into(),
            expected: problem.state_dim().to_string(),
            got: x.len().to_string(),
        });
    }
    let outcomes = pathwise_outcomes(problem, h, x, n_paths, grid, cfg, seed)?;
    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let stats = SampleStats::from_samples(&values);
    let clamp = outcomes.iter().map(|o| o.clamp_fraction).sum::<f64>() / n_paths as f64;
    Ok(BoundEstimate {
        kind: BoundKind::DualV1,
        value: anchor_value(h, cfg, t, x) + stats.mean,
        std_error: stats.std_error,
        n_paths,
        dt: grid.dt(),
        n_steps: grid.n_steps(),
        seed,
        problem_id: problem.id().to_string(),
        subject: h.label().to_string(),
        t,
        x: x.to_vec(),
        boundary_attained: false,
        clamp_fraction: Some(clamp),
        terminal_gap: None,
    })
}

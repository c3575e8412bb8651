//! Brownian increments, Euler–Maruyama integration of the controlled state
//! equation and accumulation of the penalty martingale.
//!
//! The penalty is accumulated in its stochastic-integral form
//! `M = Σ (∂ₓh(t_k, X_k))ᵀ σ(t_k, X_k, u_k) ΔW_k` with left-point (Itô)
//! evaluation, so it has mean zero by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gradient_sigma_dw, Vector};
use crate::model::{ControlProblem, Policy, TestFunction};
use crate::stats::SampleStats;

/// Uniform time grid on `[start, end]` with `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if !(start.is_finite() && end.is_finite()) || start >= end {
            return Err(Error::InvalidArgument(format!("time grid [{start}, {end}] is empty")));
        }
        Ok(Self { start, end, n_steps })
    }

    /// Grid over `[t, T]` of the problem.
    pub fn for_problem(problem: &ControlProblem, t: f64, n_steps: usize) -> Result<Self> {
        Self::new(t, problem.horizon(), n_steps)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.n_steps as f64
    }

    /// Node `t_k`; the last node is exactly `end`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.end
        } else {
            self.start + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    pub(crate) fn check_against(&self, problem: &ControlProblem) -> Result<()> {
        let tol = 1e-12 * problem.horizon().abs().max(1.0);
        if (self.end - problem.horizon()).abs() > tol || self.start < problem.t0() - tol {
            return Err(Error::GridMismatch {
                start: self.start,
                end: self.end,
                horizon: problem.horizon(),
            });
        }
        Ok(())
    }
}

/// Brownian increments on a time grid, reproducible from `(seed, stream_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    noise_dim: usize,
    increments: Vec<f64>,
    seed: u64,
    stream_id: u64,
}

impl BrownianPath {
    /// Path from explicit increments (row-major `n_steps × noise_dim`).
    pub fn from_increments(grid: TimeGrid, noise_dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() * noise_dim {
            return Err(Error::DimensionMismatch {
                what: "brownian increments".into(),
                expected: (grid.n_steps() * noise_dim).to_string(),
                got: increments.len().to_string(),
            });
        }
        Ok(Self {
            grid,
            noise_dim,
            increments,
            seed: 0,
            stream_id: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W_T − W_t`.
    pub fn total(&self) -> Vector {
        let mut w: Vector = smallvec::smallvec![0.0; self.noise_dim];
        for k in 0..self.grid.n_steps() {
            for (acc, dw) in w.iter_mut().zip(self.increment(k)) {
                *acc += dw;
            }
        }
        w
    }
}

/// Independent `N(0, Δt)` increments. Each `stream_id` selects its own
/// ChaCha stream under the common seed.
pub fn sample_brownian(grid: &TimeGrid, noise_dim: usize, seed: u64, stream_id: u64) -> BrownianPath {
    assert!(noise_dim >= 1, "noise dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    let sd = grid.dt().sqrt();
    let n = grid.n_steps() * noise_dim;
    let increments = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    BrownianPath {
        grid: *grid,
        noise_dim,
        increments,
        seed,
        stream_id,
    }
}

/// One simulated controlled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub state_dim: usize,
    pub control_dim: usize,
    /// Row-major `(n_steps + 1) × d`.
    pub states: Vec<f64>,
    /// Row-major `n_steps × control_dim`.
    pub controls: Vec<f64>,
    /// `Σ l(t_k, X_k, u_k) Δt`.
    pub running_reward: f64,
    /// `Σ (∂ₓh)ᵀ σ ΔW_k`; zero when no test function was supplied.
    pub penalty: f64,
    pub terminal_state: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn n_steps(&self) -> usize {
        self.controls.len() / self.control_dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.control_dim..(k + 1) * self.control_dim]
    }
}

/// Reward/penalty summary of a path without the stored arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PathSummary {
    pub running_reward: f64,
    pub penalty: f64,
    pub terminal_reward: f64,
}

fn check_inputs(problem: &ControlProblem, path: &BrownianPath, x0: &[f64]) -> Result<()> {
    path.grid().check_against(problem)?;
    if path.noise_dim() != problem.noise_dim() {
        return Err(Error::DimensionMismatch {
            what: "brownian path".into(),
            expected: problem.noise_dim().to_string(),
            got: path.noise_dim().to_string(),
        });
    }
    if x0.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state".into(),
            expected: problem.state_dim().to_string(),
            got: x0.len().to_string(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial state".into(),
            step: None,
        });
    }
    Ok(())
}

fn simulate(
    problem: &ControlProblem,
    policy: &Policy,
    path: &BrownianPath,
    x0: &[f64],
    h: Option<&TestFunction>,
    mut record: Option<&mut TrajectoryRecord>,
) -> Result<PathSummary> {
    check_inputs(problem, path, x0)?;
    let grid = path.grid();
    let dt = grid.dt();
    let d = problem.state_dim();
    let m = problem.noise_dim();
    let mut x: Vector = Vector::from_slice(x0);
    let mut running = 0.0;
    let mut penalty = 0.0;

    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let u = policy.control(t, &x);
        let b = problem.drift(t, &x, &u);
        let sigma = problem.diffusion(t, &x, &u);
        problem.check_shapes(&b, &sigma)?;
        let l = problem.running_reward(t, &x, &u);
        running += l * dt;
        let dw = path.increment(k);
        if let Some(h) = h {
            let grad = h.dx(t, &x);
            penalty += gradient_sigma_dw(&grad, sigma.as_slice(), d, m, dw);
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.controls.extend_from_slice(&u);
        }
        let s = sigma.as_slice();
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..m {
                noise += s[i * m + j] * dw[j];
            }
            x[i] += b[i] * dt + noise;
        }
        if !x.iter().all(|v| v.is_finite()) || !running.is_finite() || !penalty.is_finite() {
            return Err(Error::NonFinite {
                what: "state".into(),
                step: Some(k + 1),
            });
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.states.extend_from_slice(&x);
        }
    }
    let terminal_reward = problem.terminal_reward(&x);
    if !terminal_reward.is_finite() {
        return Err(Error::NonFinite {
            what: "terminal reward".into(),
            step: Some(grid.n_steps()),
        });
    }
    if let Some(rec) = record {
        rec.running_reward = running;
        rec.penalty = penalty;
        rec.terminal_state = x.to_vec();
    }
    Ok(PathSummary {
        running_reward: running,
        penalty,
        terminal_reward,
    })
}

/// Euler–Maruyama recursion `X_{k+1} = X_k + b Δt + σ ΔW_k` under the
/// feedback `u_k = π(t_k, X_k)`; the penalty is accumulated when `h` is given.
pub fn integrate(
    problem: &ControlProblem,
    policy: &Policy,
    path: &BrownianPath,
    x0: &[f64],
    h: Option<&TestFunction>,
) -> Result<TrajectoryRecord> {
    let n = path.grid().n_steps();
    let mut rec = TrajectoryRecord {
        state_dim: problem.state_dim(),
        control_dim: problem.control_dim(),
        states: Vec::with_capacity((n + 1) * problem.state_dim()),
        controls: Vec::with_capacity(n * problem.control_dim()),
        running_reward: 0.0,
        penalty: 0.0,
        terminal_state: Vec::new(),
    };
    rec.states.extend_from_slice(x0);
    simulate(problem, policy, path, x0, h, Some(&mut rec))?;
    Ok(rec)
}

pub(crate) fn summarize(
    problem: &ControlProblem,
    policy: &Policy,
    path: &BrownianPath,
    x0: &[f64],
    h: Option<&TestFunction>,
) -> Result<PathSummary> {
    simulate(problem, policy, path, x0, h, None)
}

/// Runs `f` on paths `0..n_paths` of `seed` and returns the per-path outputs
/// in stream order, independent of the number of workers.
pub(crate) fn map_paths<T, F>(grid: &TimeGrid, noise_dim: usize, n_paths: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&BrownianPath) -> Result<T> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| f(&sample_brownian(grid, noise_dim, seed, i)))
        .collect()
}

/// Sample mean and standard error of the penalty over `n_paths` trajectories
/// started at `(grid.start(), x0)`.
pub fn penalty_mean_test(
    problem: &ControlProblem,
    policy: &Policy,
    h: &TestFunction,
    x0: &[f64],
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SampleStats> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let penalties = map_paths(grid, problem.noise_dim(), n_paths, seed, |path| {
        summarize(problem, policy, path, x0, Some(h)).map(|s| s.penalty)
    })?;
    Ok(SampleStats::from_samples(&penalties))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::ControlSet;
    use smallvec::smallvec;

    fn problem(b: f64, s: f64) -> ControlProblem {
        ControlProblem::builder("affine", 1, 1)
            .drift(move |_, _, _| smallvec![b])
            .diffusion(move |_, _, _| Matrix::scalar(s))
            .running_reward(|_, x, _| x[0])
            .terminal_reward(|x| x[0] * x[0])
            .controls(ControlSet::singleton(&[0.0]).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn same_seed_and_stream_reproduce_increments() {
        let g = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let a = sample_brownian(&g, 1, 42, 0);
        let b = sample_brownian(&g, 1, 42, 0);
        assert_eq!(a.increments()[0].to_bits(), b.increments()[0].to_bits());
        let c = sample_brownian(&g, 1, 42, 1);
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn increment_variance_matches_dt() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let mut samples = Vec::with_capacity(100_000 * 4);
        for i in 0..100_000 {
            samples.extend_from_slice(sample_brownian(&g, 1, 7, i).increments());
        }
        let stats = SampleStats::from_samples(&samples);
        let var = stats.std_dev * stats.std_dev;
        assert!((var - 0.25).abs() <= 0.02 * 0.25, "variance {var}");
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let p = problem(0.0, 0.0);
        let pol = Policy::constant(p.controls(), &[0.0]);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let path = sample_brownian(&g, 1, 3, 0);
        let h = TestFunction::quadratic(1, 1.0, 1.0, 0.0, 0.0, 0.0);
        let rec = integrate(&p, &pol, &path, &[0.7], Some(&h)).unwrap();
        assert!(rec.states.iter().all(|&v| v == 0.7));
        assert_eq!(rec.penalty, 0.0);
        assert_eq!(rec.states.len(), 11);
        assert_eq!(rec.n_steps(), 10);
    }

    #[test]
    fn constant_drift_is_exact() {
        let p = problem(1.0, 0.0);
        let pol = Policy::constant(p.controls(), &[0.0]);
        for n in [1, 3, 8] {
            let g = TimeGrid::new(0.0, 1.0, n).unwrap();
            let path = sample_brownian(&g, 1, 3, 0);
            let rec = integrate(&p, &pol, &path, &[0.25], None).unwrap();
            assert!((rec.terminal_state[0] - 1.25).abs() < 1e-14);
            assert_eq!(rec.state(0), &[0.25]);
        }
    }

    #[test]
    fn linear_penalty_equals_brownian_endpoint() {
        let p = problem(0.0, 1.0);
        let pol = Policy::constant(p.controls(), &[0.0]);
        let h = TestFunction::quadratic(1, 1.0, 0.0, 1.0, 0.0, 0.0);
        let g = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let path = sample_brownian(&g, 1, 11, 5);
        let rec = integrate(&p, &pol, &path, &[0.0], Some(&h)).unwrap();
        assert!((rec.penalty - path.total()[0]).abs() < 1e-14);
    }

    #[test]
    fn constant_h_has_zero_penalty() {
        let p = problem(0.3, 1.0);
        let pol = Policy::constant(p.controls(), &[0.0]);
        let h = TestFunction::quadratic(1, 1.0, 0.0, 0.0, 0.0, 4.0);
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let s = penalty_mean_test(&p, &pol, &h, &[1.0], 64, &g, 1).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.std_error, 0.0);
    }

    #[test]
    fn blow_up_reports_step() {
        let p = ControlProblem::builder("explode", 1, 1)
            .drift(|_, x, _| smallvec![x[0] * x[0] * 1e200])
            .diffusion(|_, _, _| Matrix::scalar(0.0))
            .running_reward(|_, _, _| 0.0)
            .terminal_reward(|_| 0.0)
            .controls(ControlSet::singleton(&[0.0]).unwrap())
            .build()
            .unwrap();
        let pol = Policy::constant(p.controls(), &[0.0]);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let path = sample_brownian(&g, 1, 1, 0);
        let err = integrate(&p, &pol, &path, &[10.0], None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: Some(_), .. }), "{err}");
    }

    #[test]
    fn grid_must_end_at_horizon() {
        let p = problem(0.0, 1.0);
        let pol = Policy::constant(p.controls(), &[0.0]);
        let g = TimeGrid::new(0.0, 0.5, 4).unwrap();
        let path = sample_brownian(&g, 1, 1, 0);
        assert!(matches!(
            integrate(&p, &pol, &path, &[0.0], None),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn euler_weak_error_decays_linearly_on_affine_dynamics() {
        // dX = X dt, x0 = 1, g = x²: Euler gives (1 + Δt)^{2N}, exact value e².
        let p = ControlProblem::builder("growth", 1, 1)
            .drift(|_, x, _| smallvec![x[0]])
            .diffusion(|_, _, _| Matrix::scalar(0.0))
            .running_reward(|_, _, _| 0.0)
            .terminal_reward(|x| x[0] * x[0])
            .controls(ControlSet::singleton(&[0.0]).unwrap())
            .build()
            .unwrap();
        let pol = Policy::constant(p.controls(), &[0.0]);
        let exact = std::f64::consts::E.powi(2);
        let mut errs = Vec::new();
        for n in [20, 40, 80, 160] {
            let g = TimeGrid::new(0.0, 1.0, n).unwrap();
            let path = sample_brownian(&g, 1, 0, 0);
            let rec = integrate(&p, &pol, &path, &[1.0], None).unwrap();
            errs.push((p.terminal_reward(&rec.terminal_state) - exact).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
        }
    }
}

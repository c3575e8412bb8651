//! HJB residuals, sub/supersolution classification and benchmark problems
//! with independently derived value functions.
//!
//! | id                     | dynamics                      | value function                 |
//! |------------------------|-------------------------------|--------------------------------|
//! | `b1-brownian-quadratic`| `dX = dW`, `g = x²`           | `x² + T − t`                   |
//! | `b2-lq-drift`          | `dX = u dt + σ₀ dW`           | `−P(t)x² − k(t)` (Riccati)     |
//! | `b3-lq-diffusion`      | `dX = u dt + βu dW`           | `−P(t)x²` (Riccati)            |
//! | `b4-merton`            | `dX = uμX dt + uσ̄X dW`        | `e^{λ(T−t)} x^γ / γ`           |
//!
//! The LQ problems use `l = −(q x² + r u²)` and `g = −m x²`; substituting the
//! quadratic ansatz into the HJB equation gives
//! `Ṗ = −q + P²/(r + β²P)`, `P(T) = m` and `k̇ = −σ₀²P`, `k(T) = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::dual::SpatialBox;
use crate::error::{Error, Result};
use crate::hamiltonian::sup_value;
use crate::linalg::Matrix;
use crate::model::{ControlProblem, ControlSet, Policy, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Solution,
    Supersolution,
    Subsolution,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

/// Residual `r = −∂ₜh − H(t, y, ∂ₓh, ∂²ₓh)` and terminal mismatch `h(T, ·) − g`
/// over a time × space grid, with the resulting classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbReport {
    pub problem_id: String,
    pub subject: String,
    pub tolerance: f64,
    pub n_points: usize,
    pub residual_min: ResidualPoint,
    pub residual_max: ResidualPoint,
    pub residual_mean: f64,
    pub terminal_min: f64,
    pub terminal_max: f64,
    pub classification: Classification,
}

pub fn classify(res_min: f64, res_max: f64, term_min: f64, term_max: f64, tau: f64) -> Classification {
    let super_ok = res_min >= -tau && term_min >= -tau;
    let sub_ok = res_max <= tau && term_max <= tau;
    match (super_ok, sub_ok) {
        (true, true) => Classification::Solution,
        (true, false) => Classification::Supersolution,
        (false, true) => Classification::Subsolution,
        (false, false) => Classification::Neither,
    }
}

/// `n` evenly spaced times strictly inside `(t0, T)`.
pub fn interior_times(problem: &ControlProblem, n: usize) -> Vec<f64> {
    let (a, b) = (problem.t0(), problem.horizon());
    (1..=n).map(|i| a + (b - a) * i as f64 / (n + 1) as f64).collect()
}

/// HJB residual of `h` on `time_points × box nodes`. `h` is expected to have
/// passed [`crate::model::check_test_function`].
pub fn hjb_residual(
    problem: &ControlProblem,
    h: &TestFunction,
    time_points: &[f64],
    sbox: &SpatialBox,
    tau: f64,
) -> Result<HjbReport> {
    if time_points.is_empty() {
        return Err(Error::InvalidArgument("no residual time points".into()));
    }
    if sbox.dim() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "residual box".into(),
            expected: problem.state_dim().to_string(),
            got: sbox.dim().to_string(),
        });
    }
    let nodes: Vec<_> = (0..sbox.node_count()).map(|i| sbox.node(i)).collect();
    let per_time: Vec<Vec<f64>> = time_points
        .par_iter()
        .map(|&t| {
            nodes
                .iter()
                .map(|y| {
                    let p = h.dx(t, y);
                    let z = h.dxx(t, y);
                    let r = -h.dt(t, y) - sup_value(problem, t, y, &p, &z)?;
                    if r.is_finite() {
                        Ok(r)
                    } else {
                        Err(Error::NonFinite {
                            what: "HJB residual".into(),
                            step: None,
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rmin = (f64::INFINITY, 0, 0);
    let mut rmax = (f64::NEG_INFINITY, 0, 0);
    let mut sum = 0.0;
    for (ti, row) in per_time.iter().enumerate() {
        for (yi, &r) in row.iter().enumerate() {
            sum += r;
            if r < rmin.0 {
                rmin = (r, ti, yi);
            }
            if r > rmax.0 {
                rmax = (r, ti, yi);
            }
        }
    }
    let big_t = problem.horizon();
    let mut term_min = f64::INFINITY;
    let mut term_max = f64::NEG_INFINITY;
    for y in &nodes {
        let m = h.value(big_t, y) - problem.terminal_reward(y);
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal mismatch".into(),
                step: None,
            });
        }
        term_min = term_min.min(m);
        term_max = term_max.max(m);
    }
    let n_points = time_points.len() * nodes.len();
    let point = |(v, ti, yi): (f64, usize, usize)| ResidualPoint {
        t: time_points[ti],
        x: nodes[yi].to_vec(),
        value: v,
    };
    Ok(HjbReport {
        problem_id: problem.id().to_string(),
        subject: h.label().to_string(),
        tolerance: tau,
        n_points,
        classification: classify(rmin.0, rmax.0, term_min, term_max, tau),
        residual_min: point(rmin),
        residual_max: point(rmax),
        residual_mean: sum / n_points as f64,
        terminal_min: term_min,
        terminal_max: term_max,
    })
}

/// True when `h` classifies as a supersolution (or solution) at tolerance `tau`.
pub fn supersolution_probe(
    problem: &ControlProblem,
    h: &TestFunction,
    sbox: &SpatialBox,
    time_points: &[f64],
    tau: f64,
) -> Result<(bool, HjbReport)> {
    let report = hjb_residual(problem, h, time_points, sbox, tau)?;
    let ok = matches!(
        report.classification,
        Classification::Supersolution | Classification::Solution
    );
    Ok((ok, report))
}

/// A control problem with whatever ground truth is known for it.
#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub problem: ControlProblem,
    pub oracle: Option<TestFunction>,
    pub policy: Option<Policy>,
    pub provenance: String,
    /// Tolerance at which the oracle must classify as a solution.
    pub residual_tolerance: f64,
    /// Default state box for spatial suprema and the pathwise grid.
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
}

impl BenchmarkProblem {
    pub fn id(&self) -> &str {
        self.problem.id()
    }

    pub fn renamed(mut self, id: &str) -> Self {
        self.problem = self.problem.renamed(id);
        self
    }

    pub fn oracle_value(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.oracle.as_ref().map(|h| h.value(t, x))
    }
}

/// `dX = dW`, `l = 0`, `g = x²`; `V(t, x) = x² + T − t`.
pub fn brownian_quadratic(horizon: f64) -> Result<BenchmarkProblem> {
    let controls = ControlSet::singleton(&[0.0])?;
    let problem = ControlProblem::builder("b1-brownian-quadratic", 1, 1)
        .horizon(0.0, horizon)
        .drift(|_, _, _| smallvec![0.0])
        .diffusion(|_, _, _| Matrix::scalar(1.0))
        .running_reward(|_, _, _| 0.0)
        .terminal_reward(|x| x[0] * x[0])
        .controls(controls.clone())
        .build()?;
    let oracle = TestFunction::quadratic(1, horizon, 1.0, 0.0, 1.0, 0.0)
        .with_label("oracle x^2 + T - t")
        .with_terminal_match(true);
    Ok(BenchmarkProblem {
        problem,
        oracle: Some(oracle),
        policy: Some(Policy::constant(&controls, &[0.0]).with_label("zero")),
        provenance: "second moment of Brownian motion: E[(x + W_T - W_t)^2] = x^2 + T - t".into(),
        residual_tolerance: 1e-6,
        state_lower: vec![-5.0],
        state_upper: vec![5.0],
    })
}

/// Parameters of the scalar LQ problem with control in the drift and
/// (optionally) in the diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub q: f64,
    pub r: f64,
    pub m_term: f64,
    pub sigma0: f64,
    pub beta: f64,
    pub horizon: f64,
    /// Half-width of the control box `[−u_max, u_max]`.
    pub u_max: f64,
}

impl LqParams {
    pub fn drift_only(sigma0: f64) -> Self {
        Self {
            q: 1.0,
            r: 1.0,
            m_term: 1.0,
            sigma0,
            beta: 0.0,
            horizon: 1.0,
            u_max: 10.0,
        }
    }

    pub fn controlled_diffusion(beta: f64) -> Self {
        Self {
            sigma0: 0.0,
            beta,
            ..Self::drift_only(0.0)
        }
    }
}

/// Maximum ODE step of the Riccati integration.
pub const RICCATI_MAX_STEP: f64 = 1e-4;

/// Backward RK4 solution of the Riccati pair `(P, k)` on a uniform grid,
/// interpolated in time by cubic Hermite polynomials.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    params: LqParams,
    step: f64,
    p: Vec<f64>,
    k: Vec<f64>,
    pdot: Vec<f64>,
    kdot: Vec<f64>,
}

impl RiccatiSolution {
    pub fn solve(params: LqParams, max_step: f64) -> Result<Self> {
        let LqParams {
            q,
            r,
            m_term,
            sigma0,
            beta,
            horizon,
            ..
        } = params;
        if !(q >= 0.0 && r > 0.0 && m_term > 0.0 && horizon > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "need q >= 0, r > 0, m > 0 and T > 0, got {params:?}"
            )));
        }
        let max_step = if max_step > 0.0 {
            max_step.min(RICCATI_MAX_STEP)
        } else {
            RICCATI_MAX_STEP
        };
        let n = (horizon / max_step).ceil() as usize;
        let step = horizon / n as f64;
        let rhs_p = |p: f64| -q + p * p / (r + beta * beta * p);
        let rhs_k = |p: f64| -sigma0 * sigma0 * p;

        let mut p = vec![0.0; n + 1];
        let mut k = vec![0.0; n + 1];
        p[n] = m_term;
        k[n] = 0.0;
        for i in (0..n).rev() {
            let t = step * (i + 1) as f64;
            let (pi, ki) = (p[i + 1], k[i + 1]);
            // integrate y' = f(y) from t to t − step
            let h = -step;
            let k1p = rhs_p(pi);
            let k1k = rhs_k(pi);
            let k2p = rhs_p(pi + 0.5 * h * k1p);
            let k2k = rhs_k(pi + 0.5 * h * k1p);
            let k3p = rhs_p(pi + 0.5 * h * k2p);
            let k3k = rhs_k(pi + 0.5 * h * k2p);
            let k4p = rhs_p(pi + h * k3p);
            let k4k = rhs_k(pi + h * k3p);
            let np = pi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            let nk = ki + h / 6.0 * (k1k + 2.0 * k2k + 2.0 * k3k + k4k);
            if !(np.is_finite() && np > 0.0) || r + beta * beta * np <= 0.0 {
                return Err(Error::RiccatiBlowup { t: t - step, p: np });
            }
            p[i] = np;
            k[i] = nk;
        }
        let pdot = p.iter().map(|&v| rhs_p(v)).collect();
        let kdot = p.iter().map(|&v| rhs_k(v)).collect();
        Ok(Self {
            params,
            step,
            p,
            k,
            pdot,
            kdot,
        })
    }

    pub fn params(&self) -> &LqParams {
        &self.params
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Hermite value and derivative of `(values, slopes)` at `t`.
    fn hermite(&self, values: &[f64], slopes: &[f64], t: f64) -> (f64, f64) {
        let n = values.len() - 1;
        let pos = t / self.step;
        let i = if pos <= 0.0 {
            0
        } else {
            (pos.floor() as usize).min(n - 1)
        };
        let h = self.step;
        let s = (t - i as f64 * h) / h;
        let (y0, y1, m0, m1) = (values[i], values[i + 1], slopes[i] * h, slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v =
            (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (v, dv)
    }

    /// `(P(t), Ṗ(t))`.
    pub fn p(&self, t: f64) -> (f64, f64) {
        self.hermite(&self.p, &self.pdot, t)
    }

    /// `(k(t), k̇(t))`.
    pub fn k(&self, t: f64) -> (f64, f64) {
        self.hermite(&self.k, &self.kdot, t)
    }

    /// `V(t, x) = −P(t)x² − k(t)`.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        -self.p(t).0 * x * x - self.k(t).0
    }
}

/// LQ benchmark `dX = u dt + (σ₀ + βu) dW` with its Riccati value function and
/// optimal feedback `u* = −P x / (r + β² P)`. One of `σ₀`, `β` must be zero.
pub fn riccati_oracle(params: LqParams, max_step: f64) -> Result<BenchmarkProblem> {
    if params.sigma0 != 0.0 && params.beta != 0.0 {
        return Err(Error::ParameterDomain(
            "the quadratic ansatz needs sigma0 = 0 or beta = 0".into(),
        ));
    }
    if !(params.u_max > 0.0) {
        return Err(Error::ParameterDomain("u_max must be positive".into()));
    }
    let sol = std::sync::Arc::new(RiccatiSolution::solve(params, max_step)?);
    let LqParams {
        q,
        r,
        m_term,
        sigma0,
        beta,
        horizon,
        u_max,
    } = params;

    let controls = ControlSet::new(&[-u_max], &[u_max], 401)?.with_argmax_hook(move |_, _, p, z| {
        // maximise u p + ½(σ₀ + βu)² Z − r u²
        let curv = beta * beta * z.get(0, 0) - 2.0 * r;
        if curv < 0.0 {
            smallvec![(p[0] + beta * sigma0 * z.get(0, 0)) / -curv]
        } else {
            smallvec![-u_max]
        }
    });
    let id = if beta == 0.0 { "b2-lq-drift" } else { "b3-lq-diffusion" };
    let problem = ControlProblem::builder(id, 1, 1)
        .horizon(0.0, horizon)
        .drift(|_, _, u| smallvec![u[0]])
        .diffusion(move |_, _, u| Matrix::scalar(sigma0 + beta * u[0]))
        .running_reward(move |_, x, u| -(q * x[0] * x[0] + r * u[0] * u[0]))
        .terminal_reward(move |x| -m_term * x[0] * x[0])
        .controls(controls.clone())
        .build()?;

    let (s0, s1, s2, s3) = (sol.clone(), sol.clone(), sol.clone(), sol.clone());
    let oracle = TestFunction::new(
        "oracle riccati",
        move |t, x| s0.value(t, x[0]),
        move |t, x| -s1.p(t).1 * x[0] * x[0] - s1.k(t).1,
        move |t, x| smallvec![-2.0 * s2.p(t).0 * x[0]],
        move |t, _| Matrix::scalar(-2.0 * s3.p(t).0),
    )
    .with_terminal_match(true);
    let sp = sol.clone();
    let policy = Policy::new("riccati feedback", &controls, move |t, x| {
        let p = sp.p(t).0;
        smallvec![-p * x[0] / (r + beta * beta * p)]
    });
    Ok(BenchmarkProblem {
        problem,
        oracle: Some(oracle),
        policy: Some(policy),
        provenance: format!(
            "quadratic ansatz in the HJB equation; Riccati ODE by backward RK4 with step {:e}",
            sol.step()
        ),
        residual_tolerance: 1e-5,
        state_lower: vec![-5.0],
        state_upper: vec![5.0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonParams {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub u_max: f64,
}

impl MertonParams {
    /// Optimal constant fraction `μ / (σ̄²(1 − γ))`.
    pub fn optimal_fraction(&self) -> f64 {
        self.mu / (self.sigma * self.sigma * (1.0 - self.gamma))
    }

    /// Growth rate `λ = γμ² / (2σ̄²(1 − γ))` of the value function.
    pub fn lambda(&self) -> f64 {
        self.gamma * self.mu * self.mu / (2.0 * self.sigma * self.sigma * (1.0 - self.gamma))
    }
}

/// Merton problem with power utility `g = x^γ/γ`, no running reward and
/// fraction `u ∈ [0, u_max]` invested in the risky asset.
pub fn merton_oracle(params: MertonParams) -> Result<BenchmarkProblem> {
    let MertonParams {
        mu,
        sigma,
        gamma,
        horizon,
        u_max,
    } = params;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::ParameterDomain(format!("gamma = {gamma} outside (0, 1)")));
    }
    if !(sigma > 0.0) || !(horizon > 0.0) {
        return Err(Error::ParameterDomain("sigma and T must be positive".into()));
    }
    let u_star = params.optimal_fraction();
    if !(u_star >= 0.0 && u_star <= u_max) {
        return Err(Error::ParameterDomain(format!(
            "optimal fraction {u_star} outside [0, {u_max}]"
        )));
    }
    let lambda = params.lambda();
    let controls = ControlSet::new(&[0.0], &[u_max], 401)?.with_argmax_hook(move |_, x, p, z| {
        // maximise u μ x p + ½ u² σ̄² x² Z
        let curv = sigma * sigma * x[0] * x[0] * z.get(0, 0);
        if curv < 0.0 {
            smallvec![-mu * x[0] * p[0] / curv]
        } else {
            smallvec![0.0]
        }
    });
    let problem = ControlProblem::builder("b4-merton", 1, 1)
        .horizon(0.0, horizon)
        .drift(move |_, x, u| smallvec![u[0] * mu * x[0]])
        .diffusion(move |_, x, u| Matrix::scalar(u[0] * sigma * x[0]))
        .running_reward(|_, _, _| 0.0)
        .terminal_reward(move |x| x[0].max(0.0).powf(gamma) / gamma)
        .controls(controls.clone())
        .build()?;
    let growth = move |t: f64| (lambda * (horizon - t)).exp();
    let oracle = TestFunction::new(
        "oracle merton",
        move |t, x| growth(t) * x[0].powf(gamma) / gamma,
        move |t, x| -lambda * growth(t) * x[0].powf(gamma) / gamma,
        move |t, x| smallvec![growth(t) * x[0].powf(gamma - 1.0)],
        move |t, x| Matrix::scalar(growth(t) * (gamma - 1.0) * x[0].powf(gamma - 2.0)),
    )
    .with_terminal_match(true);
    Ok(BenchmarkProblem {
        problem,
        oracle: Some(oracle),
        policy: Some(Policy::constant(&controls, &[u_star]).with_label("merton fraction")),
        provenance: format!("power-utility ansatz: u* = {u_star}, lambda = {lambda}"),
        residual_tolerance: 1e-6,
        state_lower: vec![0.2],
        state_upper: vec![5.0],
    })
}

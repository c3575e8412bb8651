//! Control problems, test functions, feedback policies and parametric families.
//!
//! A [`ControlProblem`] bundles the controlled dynamics
//! `dX = b(t, X, u) dt + σ(t, X, u) dW` with running reward `l`, terminal
//! reward `g` and a compact box of admissible controls. A [`TestFunction`]
//! is a candidate `h ∈ C^{1,2}` with user-supplied derivatives; the dual
//! estimators consume those derivatives directly and only fall back to
//! finite differences for validation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub type DriftFn = dyn Fn(f64, &[f64], &[f64]) -> Vector + Send + Sync;
pub type DiffusionFn = dyn Fn(f64, &[f64], &[f64]) -> Matrix + Send + Sync;
pub type RewardFn = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;
pub type TerminalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Maps `(t, x, p, Z)` to a maximiser of the current-value Hamiltonian.
pub type ArgmaxHook = dyn Fn(f64, &[f64], &[f64], &Matrix) -> Vector + Send + Sync;

pub type ScalarField = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type VectorField = dyn Fn(f64, &[f64]) -> Vector + Send + Sync;
pub type MatrixField = dyn Fn(f64, &[f64]) -> Matrix + Send + Sync;
pub type FamilyBuilder = dyn Fn(&[f64]) -> TestFunction + Send + Sync;

/// Compact box `[lo, hi]` of admissible controls with a uniform evaluation grid.
#[derive(Clone)]
pub struct ControlSet {
    lower: Vector,
    upper: Vector,
    points: Vec<usize>,
    hook: Option<Arc<ArgmaxHook>>,
}

impl ControlSet {
    /// Box with the same number of grid points on every axis.
    pub fn new(lower: &[f64], upper: &[f64], points_per_axis: usize) -> Result<Self> {
        Self::with_points(lower, upper, &vec![points_per_axis; lower.len()])
    }

    pub fn with_points(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("control box needs at least one axis".into()));
        }
        if lower.len() != upper.len() || lower.len() != points.len() {
            return Err(Error::DimensionMismatch {
                what: "control box".into(),
                expected: format!("{} axes", lower.len()),
                got: format!("{} upper bounds, {} point counts", upper.len(), points.len()),
            });
        }
        for a in 0..lower.len() {
            if !(lower[a].is_finite() && upper[a].is_finite()) || lower[a] > upper[a] {
                return Err(Error::InvalidArgument(format!(
                    "control box axis {a}: [{}, {}] is empty or unbounded",
                    lower[a], upper[a]
                )));
            }
            if points[a] == 0 {
                return Err(Error::InvalidArgument(format!("control grid axis {a} has no points")));
            }
        }
        Ok(Self {
            lower: Vector::from_slice(lower),
            upper: Vector::from_slice(upper),
            points: points.to_vec(),
            hook: None,
        })
    }

    /// The one-point set `{u}`.
    pub fn singleton(u: &[f64]) -> Result<Self> {
        Self::new(u, u, 1)
    }

    /// Installs a closed-form maximiser used instead of the grid by the Hamiltonian.
    pub fn with_argmax_hook(
        mut self,
        hook: impl Fn(f64, &[f64], &[f64], &Matrix) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.hook = Some(Arc::new(hook));
        self
    }

    /// Same box, different grid resolution on every axis; the hook is kept.
    pub fn regridded(&self, points_per_axis: usize) -> Result<Self> {
        let mut out = Self::new(&self.lower, &self.upper, points_per_axis)?;
        out.hook = self.hook.clone();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn hook(&self) -> Option<&ArgmaxHook> {
        self.hook.as_deref()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Componentwise clamp into the box. NaN components are left untouched.
    pub fn clamp(&self, u: &mut [f64]) {
        for (v, (lo, hi)) in u.iter_mut().zip(self.lower.iter().zip(self.upper.iter())) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Grid coordinate `i` on axis `a`.
    pub fn axis_value(&self, a: usize, i: usize) -> f64 {
        let n = self.points[a];
        if n == 1 {
            // single point: midpoint, which is the only point of a degenerate box
            0.5 * (self.lower[a] + self.upper[a])
        } else if i + 1 == n {
            self.upper[a]
        } else {
            self.lower[a] + (self.upper[a] - self.lower[a]) * i as f64 / (n - 1) as f64
        }
    }

    pub fn grid_len(&self) -> usize {
        self.points.iter().product()
    }

    /// All grid controls in lexicographic order (first axis varies slowest).
    pub fn grid(&self) -> Vec<Vector> {
        let dim = self.dim();
        let total = self.grid_len();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            out.push((0..dim).map(|a| self.axis_value(a, idx[a])).collect());
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < self.points[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }

    /// The 2^dim corners, lexicographically ordered.
    pub fn corners(&self) -> Vec<Vector> {
        let dim = self.dim();
        (0..(1usize << dim))
            .map(|mask| {
                (0..dim)
                    .map(|a| {
                        if mask & (1 << (dim - 1 - a)) == 0 {
                            self.lower[a]
                        } else {
                            self.upper[a]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

impl fmt::Debug for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSet")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("points", &self.points)
            .field("hook", &self.hook.is_some())
            .finish()
    }
}

/// The control problem `(b, σ, l, g, U, [t0, T], d, m)`.
#[derive(Clone)]
pub struct ControlProblem {
    id: String,
    state_dim: usize,
    noise_dim: usize,
    t0: f64,
    horizon: f64,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    running: Arc<RewardFn>,
    terminal: Arc<TerminalFn>,
    controls: ControlSet,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("id", &self.id)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("t0", &self.t0)
            .field("horizon", &self.horizon)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn builder(id: impl Into<String>, state_dim: usize, noise_dim: usize) -> ProblemBuilder {
        ProblemBuilder {
            id: id.into(),
            state_dim,
            noise_dim,
            t0: 0.0,
            horizon: 1.0,
            drift: None,
            diffusion: None,
            running: None,
            terminal: None,
            controls: None,
        }
    }

    /// Same problem under a different id.
    pub fn renamed(&self, id: impl Into<String>) -> Self {
        let mut p = self.clone();
        p.id = id.into();
        p
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Terminal time `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    /// Copy of the problem with a different control set (same box semantics).
    pub fn with_controls(&self, controls: ControlSet) -> Result<Self> {
        if controls.dim() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control set".into(),
                expected: self.control_dim().to_string(),
                got: controls.dim().to_string(),
            });
        }
        let mut out = self.clone();
        out.controls = controls;
        Ok(out)
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], u: &[f64]) -> Vector {
        (self.drift)(t, x, u)
    }

    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64]) -> Matrix {
        (self.diffusion)(t, x, u)
    }

    #[inline]
    pub fn running_reward(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.running)(t, x, u)
    }

    #[inline]
    pub fn terminal_reward(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// Shape check of one drift/diffusion evaluation.
    pub(crate) fn check_shapes(&self, b: &Vector, sigma: &Matrix) -> Result<()> {
        if b.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: format!("drift of `{}`", self.id),
                expected: self.state_dim.to_string(),
                got: b.len().to_string(),
            });
        }
        if sigma.shape() != (self.state_dim, self.noise_dim) {
            return Err(Error::DimensionMismatch {
                what: format!("diffusion of `{}`", self.id),
                expected: format!("{}x{}", self.state_dim, self.noise_dim),
                got: format!("{}x{}", sigma.rows(), sigma.cols()),
            });
        }
        Ok(())
    }
}

pub struct ProblemBuilder {
    id: String,
    state_dim: usize,
    noise_dim: usize,
    t0: f64,
    horizon: f64,
    drift: Option<Arc<DriftFn>>,
    diffusion: Option<Arc<DiffusionFn>>,
    running: Option<Arc<RewardFn>>,
    terminal: Option<Arc<TerminalFn>>,
    controls: Option<ControlSet>,
}

impl ProblemBuilder {
    pub fn horizon(mut self, t0: f64, horizon: f64) -> Self {
        self.t0 = t0;
        self.horizon = horizon;
        self
    }

    pub fn drift(mut self, f: impl Fn(f64, &[f64], &[f64]) -> Vector + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, &[f64], &[f64]) -> Matrix + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn running_reward(mut self, f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.running = Some(Arc::new(f));
        self
    }

    pub fn terminal_reward(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Some(Arc::new(f));
        self
    }

    pub fn controls(mut self, controls: ControlSet) -> Self {
        self.controls = Some(controls);
        self
    }

    pub fn build(self) -> Result<ControlProblem> {
        if self.state_dim == 0 || self.noise_dim == 0 {
            return Err(Error::InvalidArgument(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if !(self.t0.is_finite() && self.horizon.is_finite()) || self.t0 >= self.horizon {
            return Err(Error::InvalidArgument(format!(
                "need t0 < T, got [{}, {}]",
                self.t0, self.horizon
            )));
        }
        let missing = |what: &str| Error::InvalidArgument(format!("problem `{}` has no {what}", self.id));
        Ok(ControlProblem {
            drift: self.drift.clone().ok_or_else(|| missing("drift"))?,
            diffusion: self.diffusion.clone().ok_or_else(|| missing("diffusion"))?,
            running: self.running.clone().ok_or_else(|| missing("running reward"))?,
            terminal: self.terminal.clone().ok_or_else(|| missing("terminal reward"))?,
            controls: self.controls.clone().ok_or_else(|| missing("control set"))?,
            id: self.id,
            state_dim: self.state_dim,
            noise_dim: self.noise_dim,
            t0: self.t0,
            horizon: self.horizon,
        })
    }
}

/// Candidate dual function `h` with its time derivative, gradient and Hessian.
///
/// `offset` is a constant added to the value only. Keeping it separate lets
/// the non-smooth dual bounds cancel it exactly against the terminal gap.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    value: Arc<ScalarField>,
    dt: Arc<ScalarField>,
    dx: Arc<VectorField>,
    dxx: Arc<MatrixField>,
    terminal_matches_g: bool,
    offset: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("terminal_matches_g", &self.terminal_matches_g)
            .field("offset", &self.offset)
            .finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        dt: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, &[f64]) -> Vector + Send + Sync + 'static,
        dxx: impl Fn(f64, &[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            dt: Arc::new(dt),
            dx: Arc::new(dx),
            dxx: Arc::new(dxx),
            terminal_matches_g: false,
            offset: 0.0,
        }
    }

    /// `a|x|² + b Σxᵢ + c (T − t) + e` in `d` dimensions.
    pub fn quadratic(d: usize, horizon: f64, a: f64, b: f64, c: f64, e: f64) -> Self {
        Self::new(
            format!("quadratic({a}, {b}, {c}, {e})"),
            move |t, x| {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let lin: f64 = x.iter().sum();
                a * sq + b * lin + c * (horizon - t) + e
            },
            move |_, _| -c,
            move |_, x| x.iter().map(|v| 2.0 * a * v + b).collect(),
            move |_, _| Matrix::diagonal(&vec![2.0 * a; d]),
        )
    }

    /// Declares membership in ℋ (h(T, ·) = g). Checked by [`check_test_function`].
    pub fn with_terminal_match(mut self, matches: bool) -> Self {
        self.terminal_matches_g = matches;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `h + c`. A non-zero shift breaks the terminal match.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.offset += c;
        if c != 0.0 {
            out.terminal_matches_g = false;
        }
        out.label = format!("{} + {c}", self.label);
        out
    }

    /// Pointwise sum `self + other`; the result never claims a terminal match.
    pub fn plus(&self, other: &TestFunction) -> Self {
        let (a, b) = (self.clone(), other.clone());
        let (a1, b1) = (a.clone(), b.clone());
        let (a2, b2) = (a.clone(), b.clone());
        let (a3, b3) = (a.clone(), b.clone());
        let mut out = Self::new(
            format!("{} + {}", self.label, other.label),
            move |t, x| a.base_value(t, x) + b.base_value(t, x),
            move |t, x| a1.dt(t, x) + b1.dt(t, x),
            move |t, x| {
                let ga = a2.dx(t, x);
                let gb = b2.dx(t, x);
                ga.iter().zip(gb.iter()).map(|(p, q)| p + q).collect()
            },
            move |t, x| a3.dxx(t, x).add(&b3.dxx(t, x)),
        );
        out.offset = self.offset + other.offset;
        out
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn terminal_matches_g(&self) -> bool {
        self.terminal_matches_g
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `h(t, x)` including the constant offset.
    #[inline]
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x) + self.offset
    }

    /// `h(t, x)` without the constant offset.
    #[inline]
    pub fn base_value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    #[inline]
    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        (self.dt)(t, x)
    }

    #[inline]
    pub fn dx(&self, t: f64, x: &[f64]) -> Vector {
        (self.dx)(t, x)
    }

    #[inline]
    pub fn dxx(&self, t: f64, x: &[f64]) -> Matrix {
        (self.dxx)(t, x)
    }
}

/// Markov feedback control `u = π(t, x)`, clamped into the control box.
#[derive(Clone)]
pub struct Policy {
    label: String,
    map: Arc<VectorField>,
    controls: ControlSet,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl Policy {
    pub fn new(
        label: impl Into<String>,
        controls: &ControlSet,
        map: impl Fn(f64, &[f64]) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            map: Arc::new(map),
            controls: controls.clone(),
        }
    }

    pub fn constant(controls: &ControlSet, u: &[f64]) -> Self {
        let u = Vector::from_slice(u);
        Self::new(format!("constant{:?}", u.as_slice()), controls, move |_, _| u.clone())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn control(&self, t: f64, x: &[f64]) -> Vector {
        let mut u = (self.map)(t, x);
        self.controls.clamp(&mut u);
        u
    }
}

/// A finite-dimensional family `θ ↦ h_θ` searched by the outer minimisation.
#[derive(Clone)]
pub struct ParametricFamily {
    id: String,
    builder: Arc<FamilyBuilder>,
    initial: Vec<f64>,
    scale: Vec<f64>,
}

impl fmt::Debug for ParametricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricFamily")
            .field("id", &self.id)
            .field("initial", &self.initial)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl ParametricFamily {
    pub fn new(
        id: impl Into<String>,
        initial: Vec<f64>,
        scale: Vec<f64>,
        builder: impl Fn(&[f64]) -> TestFunction + Send + Sync + 'static,
    ) -> Result<Self> {
        if initial.is_empty() || initial.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                what: "parametric family".into(),
                expected: format!("{} scale entries", initial.len()),
                got: scale.len().to_string(),
            });
        }
        if initial.iter().chain(scale.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("family parameters must be finite".into()));
        }
        Ok(Self {
            id: id.into(),
            builder: Arc::new(builder),
            initial,
            scale,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn with_start(mut self, initial: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if initial.len() != self.dim() || scale.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: format!("family `{}` start", self.id),
                expected: self.dim().to_string(),
                got: format!("{}/{}", initial.len(), scale.len()),
            });
        }
        self.initial = initial;
        self.scale = scale;
        Ok(self)
    }

    pub fn build(&self, theta: &[f64]) -> TestFunction {
        (self.builder)(theta)
    }
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

/// One evaluated probe of [`inspect_problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub running_reward: f64,
    pub passed: bool,
    pub issue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem_id: String,
    pub probes: Vec<ProbeResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.probes.iter().all(|p| p.passed)
    }
}

fn probe_one(problem: &ControlProblem, t: f64, x: &[f64], u: &[f64]) -> (ProbeResult, Option<Error>) {
    let b = problem.drift(t, x, u);
    let sigma = problem.diffusion(t, x, u);
    let l = problem.running_reward(t, x, u);
    let mut result = ProbeResult {
        t,
        x: x.to_vec(),
        u: u.to_vec(),
        drift: b.to_vec(),
        diffusion: sigma.as_slice().to_vec(),
        running_reward: l,
        passed: true,
        issue: None,
    };
    let err = if let Err(e) = problem.check_shapes(&b, &sigma) {
        Some(e)
    } else if !b.iter().all(|v| v.is_finite()) {
        Some(Error::NonFinite {
            what: "drift".into(),
            step: None,
        })
    } else if !sigma.is_finite() {
        Some(Error::NonFinite {
            what: "diffusion".into(),
            step: None,
        })
    } else if !l.is_finite() {
        Some(Error::NonFinite {
            what: "running reward".into(),
            step: None,
        })
    } else if !problem.terminal_reward(x).is_finite() {
        Some(Error::NonFinite {
            what: "terminal reward".into(),
            step: None,
        })
    } else {
        None
    };
    if let Some(e) = &err {
        result.passed = false;
        result.issue = Some(e.to_string());
    }
    (result, err)
}

fn check_probe_domain(problem: &ControlProblem, t: f64, x: &[f64], u: &[f64]) -> Result<()> {
    if !(problem.t0()..=problem.horizon()).contains(&t) {
        return Err(Error::InvalidArgument(format!("probe time {t} outside [t0, T]")));
    }
    if x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "probe state".into(),
            expected: problem.state_dim().to_string(),
            got: x.len().to_string(),
        });
    }
    if !problem.controls().contains(u) {
        return Err(Error::InvalidArgument(format!(
            "probe control {u:?} outside the control box"
        )));
    }
    Ok(())
}

/// Evaluates `b`, `σ`, `l` (and `g`) at every probe, flagging shape and finiteness failures.
pub fn inspect_problem(problem: &ControlProblem, probes: &[(f64, Vector, Vector)]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("no probe points".into()));
    }
    let mut out = Vec::with_capacity(probes.len());
    for (t, x, u) in probes {
        check_probe_domain(problem, *t, x, u)?;
        out.push(probe_one(problem, *t, x, u).0);
    }
    Ok(ValidationReport {
        problem_id: problem.id().to_string(),
        probes: out,
    })
}

/// Like [`inspect_problem`] but fails on the first probe that does not pass.
pub fn validate_problem(problem: &ControlProblem, probes: &[(f64, Vector, Vector)]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("no probe points".into()));
    }
    let mut out = Vec::with_capacity(probes.len());
    for (t, x, u) in probes {
        check_probe_domain(problem, *t, x, u)?;
        let (res, err) = probe_one(problem, *t, x, u);
        if let Some(e) = err {
            return Err(e);
        }
        out.push(res);
    }
    Ok(ValidationReport {
        problem_id: problem.id().to_string(),
        probes: out,
    })
}

/// Finite-difference step for first derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Finite-difference step for second derivatives (second differences lose
/// roughly twice the digits of first differences).
pub const FD_STEP_SECOND: f64 = 1e-4;
pub const DERIVATIVE_TOLERANCE: f64 = 1e-4;
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
pub const TERMINAL_TOLERANCE: f64 = 1e-8;

/// Derivative errors at one point, measured as `|supplied − fd| / max(1, |fd|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub t: f64,
    pub x: Vec<f64>,
    pub dt_error: f64,
    pub dx_error: f64,
    pub dxx_error: f64,
    pub hessian_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheckReport {
    pub label: String,
    pub points: Vec<PointCheck>,
    /// Largest |h(T, x) − g(x)|; present when h claims a terminal match.
    pub terminal_gap: Option<f64>,
}

impl DerivativeCheckReport {
    pub fn max_error(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.dt_error.max(p.dx_error).max(p.dxx_error))
            .fold(0.0, f64::max)
    }
}

#[inline]
fn rel_err(supplied: f64, fd: f64) -> f64 {
    let e = (supplied - fd).abs() / fd.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

fn check_point(h: &TestFunction, d: usize, t: f64, x: &[f64]) -> Result<PointCheck> {
    let hf = |t: f64, x: &[f64]| h.base_value(t, x);
    let e1 = FD_STEP;
    let e2 = FD_STEP_SECOND;

    let fd_dt = (hf(t + e1, x) - hf(t - e1, x)) / (2.0 * e1);
    let dt_error = rel_err(h.dt(t, x), fd_dt);

    let grad = h.dx(t, x);
    if grad.len() != d {
        return Err(Error::DimensionMismatch {
            what: format!("gradient of `{}`", h.label()),
            expected: d.to_string(),
            got: grad.len().to_string(),
        });
    }
    let hess = h.dxx(t, x);
    if hess.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: format!("hessian of `{}`", h.label()),
            expected: format!("{d}x{d}"),
            got: format!("{}x{}", hess.rows(), hess.cols()),
        });
    }

    let mut xp: Vec<f64> = x.to_vec();
    let mut dx_error = 0.0_f64;
    let mut dxx_error = 0.0_f64;
    let h0 = hf(t, x);
    for i in 0..d {
        let xi = x[i];
        xp[i] = xi + e1;
        let fp = hf(t, &xp);
        xp[i] = xi - e1;
        let fm = hf(t, &xp);
        dx_error = dx_error.max(rel_err(grad[i], (fp - fm) / (2.0 * e1)));

        xp[i] = xi + e2;
        let fp2 = hf(t, &xp);
        xp[i] = xi - e2;
        let fm2 = hf(t, &xp);
        xp[i] = xi;
        dxx_error = dxx_error.max(rel_err(hess.get(i, i), (fp2 - 2.0 * h0 + fm2) / (e2 * e2)));

        for j in (i + 1)..d {
            let xj = x[j];
            let mut corner = |si: f64, sj: f64| {
                xp[i] = xi + si * e2;
                xp[j] = xj + sj * e2;
                let v = hf(t, &xp);
                xp[i] = xi;
                xp[j] = xj;
                v
            };
            let mixed =
                (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * e2 * e2);
            dxx_error = dxx_error
                .max(rel_err(hess.get(i, j), mixed))
                .max(rel_err(hess.get(j, i), mixed));
        }
    }
    Ok(PointCheck {
        t,
        x: x.to_vec(),
        dt_error,
        dx_error,
        dxx_error,
        hessian_asymmetry: hess.asymmetry(),
    })
}

/// Compares the supplied derivatives of `h` with central finite differences.
///
/// Fails with [`Error::DerivativeMismatch`] when any relative error exceeds
/// [`DERIVATIVE_TOLERANCE`] or the Hessian is asymmetric beyond
/// [`SYMMETRY_TOLERANCE`], and with [`Error::TerminalMismatch`] when `h` claims
/// `h(T, ·) = g` but differs from `g` at one of the points.
pub fn check_test_function(
    h: &TestFunction,
    problem: &ControlProblem,
    points: &[(f64, Vector)],
) -> Result<DerivativeCheckReport> {
    let d = problem.state_dim();
    let mut checks = Vec::with_capacity(points.len());
    for (t, x) in points {
        if !(*t > problem.t0() && *t < problem.horizon()) {
            return Err(Error::InvalidArgument(format!("check point time {t} outside (t0, T)")));
        }
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "check point".into(),
                expected: d.to_string(),
                got: x.len().to_string(),
            });
        }
        let pc = check_point(h, d, *t, x)?;
        for (which, err) in [("dt", pc.dt_error), ("dx", pc.dx_error), ("dxx", pc.dxx_error)] {
            if err > DERIVATIVE_TOLERANCE {
                return Err(Error::DerivativeMismatch {
                    which: which.into(),
                    t: *t,
                    x: x.to_vec(),
                    rel_err: err,
                });
            }
        }
        if pc.hessian_asymmetry > SYMMETRY_TOLERANCE {
            return Err(Error::DerivativeMismatch {
                which: "dxx symmetry".into(),
                t: *t,
                x: x.to_vec(),
                rel_err: pc.hessian_asymmetry,
            });
        }
        checks.push(pc);
    }

    let terminal_gap = if h.terminal_matches_g() {
        let big_t = problem.horizon();
        let mut worst = 0.0_f64;
        for (_, x) in points {
            let gap = (h.value(big_t, x) - problem.terminal_reward(x)).abs();
            if !(gap <= TERMINAL_TOLERANCE) {
                return Err(Error::TerminalMismatch { x: x.to_vec(), gap });
            }
            worst = worst.max(gap);
        }
        Some(worst)
    } else {
        None
    };

    Ok(DerivativeCheckReport {
        label: h.label().to_string(),
        points: checks,
        terminal_gap,
    })
}

//! Dual upper bounds on the value function.
//!
//! For a test function `h` the pointwise bound is
//!
//! ```text
//! V₂ʰ(t, x) = h(t, x) + ∫_t^T sup_y [∂ₛh + H(s, y, ∂ₓh, ∂²ₓh)] ds + sup_y [g(y) − h(T, y)]
//! ```
//!
//! and the pathwise bound `V₁ʰ` replaces the spatial supremum by an
//! anticipative optimisation along each frozen noise path (see [`pathwise`]).
//! The terminal term vanishes when `h(T, ·) = g` and is skipped in that case.

mod degeneracy;
mod pathwise;

pub use degeneracy::{degeneracy_diagnostic, DegeneracyReport, DEGENERACY_TOLERANCE};
pub use pathwise::{
    dual_v1, pathwise_inner_max, pathwise_policy_value, PathwiseDPConfig, PathwiseOutcome, TerminalHandling,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::sup_value;
use crate::linalg::Vector;
use crate::model::{ControlProblem, TestFunction};
use crate::paths::TimeGrid;
use crate::primal::{BoundEstimate, BoundKind};

/// Box `[lower, upper]` standing in for ℝ^d in spatial suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: usize,
    refinement: usize,
}

impl SpatialBox {
    pub fn new(lower: &[f64], upper: &[f64], points: usize, refinement: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "spatial box".into(),
                expected: format!("{} upper bounds", lower.len()),
                got: upper.len().to_string(),
            });
        }
        if lower
            .iter()
            .zip(upper)
            .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::InvalidArgument(
                "spatial box needs lower < upper on every axis".into(),
            ));
        }
        if points < 2 {
            return Err(Error::InvalidArgument(
                "spatial box needs at least 2 points per axis".into(),
            ));
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            points,
            refinement,
        })
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

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points - 1) as f64
    }

    #[inline]
    pub fn axis_value(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.points {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn node_count(&self) -> usize {
        self.points.pow(self.dim() as u32)
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        for a in (0..d).rev() {
            idx[a] = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    /// Node `flat` in row-major order (first axis slowest).
    pub fn node(&self, flat: usize) -> Vector {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.axis_value(a, i))
            .collect()
    }

    pub fn is_boundary_node(&self, flat: usize) -> bool {
        self.multi_index(flat).iter().any(|&i| i == 0 || i + 1 == self.points)
    }
}

/// Result of a spatial supremum over a [`SpatialBox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSup {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Boundary nodes beat every interior evaluation: the supremum over ℝ^d
    /// may be larger than `value`.
    pub on_boundary: bool,
}

const GOLDEN_ITERATIONS: usize = 60;

fn golden_section_max(lo: f64, hi: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let (mut best_y, mut best_v) = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 0..GOLDEN_ITERATIONS {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
            if fc > best_v {
                best_v = fc;
                best_y = c;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
            if fd > best_v {
                best_v = fd;
                best_y = d;
            }
        }
    }
    Ok((best_y, best_v))
}

/// Grid search over the box followed by `refinement` levels of coordinate-wise
/// golden-section search on the cells bracketing the incumbent.
pub(crate) fn spatial_sup(sbox: &SpatialBox, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<SpatialSup> {
    let mut best_v = f64::NEG_INFINITY;
    let mut best_y = Vector::new();
    let mut interior = f64::NEG_INFINITY;
    let mut boundary = f64::NEG_INFINITY;
    for i in 0..sbox.node_count() {
        let y = sbox.node(i);
        let v = f(&y)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "spatial supremum integrand".into(),
                step: None,
            });
        }
        if sbox.is_boundary_node(i) {
            boundary = boundary.max(v);
        } else {
            interior = interior.max(v);
        }
        if v > best_v {
            best_v = v;
            best_y = y;
        }
    }

    let d = sbox.dim();
    let mut refined = f64::NEG_INFINITY;
    for level in 0..sbox.refinement() {
        let shrink = 0.5_f64.powi(level as i32);
        for a in 0..d {
            let half = sbox.spacing(a) * shrink;
            let lo = (best_y[a] - half).max(sbox.lower()[a]);
            let hi = (best_y[a] + half).min(sbox.upper()[a]);
            let mut y = best_y.clone();
            let (ya, va) = golden_section_max(lo, hi, |s| {
                y[a] = s;
                f(&y)
            })?;
            if va.is_finite() && va > best_v {
                best_v = va;
                best_y[a] = ya;
                refined = refined.max(va);
            }
        }
    }

    let tol = 1e-9 * best_v.abs().max(1.0);
    let on_boundary = boundary > interior.max(refined) + tol;
    Ok(SpatialSup {
        value: best_v,
        argmax: best_y.to_vec(),
        on_boundary,
    })
}

fn check_box(problem: &ControlProblem, sbox: &SpatialBox) -> Result<()> {
    if sbox.dim() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "spatial box".into(),
            expected: problem.state_dim().to_string(),
            got: sbox.dim().to_string(),
        });
    }
    Ok(())
}

/// `sup_y [g(y) − h(T, y)]` over the box, using the full value of `h`.
pub fn terminal_gap(problem: &ControlProblem, h: &TestFunction, sbox: &SpatialBox) -> Result<SpatialSup> {
    check_box(problem, sbox)?;
    let big_t = problem.horizon();
    spatial_sup(sbox, |y| Ok(problem.terminal_reward(y) - h.value(big_t, y)))
}

/// Offset-free terminal gap; the offset of `h` is cancelled by the caller.
fn base_terminal_gap(problem: &ControlProblem, h: &TestFunction, sbox: &SpatialBox) -> Result<SpatialSup> {
    let big_t = problem.horizon();
    spatial_sup(sbox, |y| Ok(problem.terminal_reward(y) - h.base_value(big_t, y)))
}

/// Per-step suprema `sup_y [∂ₛh + H](t_k, y)` for `k = 0..n_steps`.
pub fn pointwise_suprema(
    problem: &ControlProblem,
    h: &TestFunction,
    sbox: &SpatialBox,
    grid: &TimeGrid,
) -> Result<Vec<SpatialSup>> {
    check_box(problem, sbox)?;
    (0..grid.n_steps())
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            spatial_sup(sbox, |y| {
                let p = h.dx(t, y);
                let z = h.dxx(t, y);
                Ok(h.dt(t, y) + sup_value(problem, t, y, &p, &z)?)
            })
        })
        .collect()
}

/// Both halves of the pointwise bound relative to `h`: the left-rectangle
/// integral of the per-step suprema and the optional terminal gap.
pub(crate) struct PointwiseParts {
    pub integral: f64,
    pub terminal: Option<SpatialSup>,
    pub boundary: bool,
}

pub(crate) fn pointwise_parts(
    problem: &ControlProblem,
    h: &TestFunction,
    sbox: &SpatialBox,
    grid: &TimeGrid,
    nonsmooth: bool,
) -> Result<PointwiseParts> {
    let sups = pointwise_suprema(problem, h, sbox, grid)?;
    let dt = grid.dt();
    let integral: f64 = sups.iter().map(|s| s.value * dt).sum();
    let mut boundary = sups.iter().any(|s| s.on_boundary);
    let terminal = if nonsmooth {
        let gap = base_terminal_gap(problem, h, sbox)?;
        boundary |= gap.on_boundary;
        Some(gap)
    } else {
        None
    };
    Ok(PointwiseParts {
        integral,
        terminal,
        boundary,
    })
}

pub(crate) fn check_grid(problem: &ControlProblem, t: f64, grid: &TimeGrid) -> Result<()> {
    grid.check_against(problem)?;
    if grid.start() != t {
        return Err(Error::InvalidArgument(format!(
            "grid starts at {} but the bound is requested at t={t}",
            grid.start()
        )));
    }
    Ok(())
}

/// Pointwise dual bound `V₂ʰ(t, x)` (non-smooth variant when `h(T, ·) ≠ g`).
///
/// The time integral uses the left-rectangle rule on `grid`. A supremum sitting
/// on the edge of `sbox` sets `boundary_attained` on the estimate.
pub fn dual_v2(
    problem: &ControlProblem,
    h: &TestFunction,
    t: f64,
    x: &[f64],
    sbox: &SpatialBox,
    grid: &TimeGrid,
) -> Result<BoundEstimate> {
    check_grid(problem, t, grid)?;
    if x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "evaluation point".into(),
            expected: problem.state_dim().to_string(),
            got: x.len().to_string(),
        });
    }
    let nonsmooth = !h.terminal_matches_g();
    let parts = pointwise_parts(problem, h, sbox, grid, nonsmooth)?;
    let (value, terminal_gap) = match &parts.terminal {
        Some(gap) => (h.base_value(t, x) + parts.integral + gap.value, Some(gap.value)),
        None => (h.value(t, x) + parts.integral, None),
    };
    Ok(BoundEstimate {
        kind: BoundKind::DualV2,
        value,
        std_error: 0.0,
        n_paths: 0,
        dt: grid.dt(),
        n_steps: grid.n_steps(),
        seed: 0,
        problem_id: problem.id().to_string(),
        subject: h.label().to_string(),
        t,
        x: x.to_vec(),
        boundary_attained: parts.boundary,
        clamp_fraction: None,
        terminal_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_nodes_and_boundary() {
        let b = SpatialBox::new(&[-1.0, 0.0], &[1.0, 2.0], 3, 0).unwrap();
        assert_eq!(b.node_count(), 9);
        assert_eq!(b.node(0).as_slice(), &[-1.0, 0.0]);
        assert_eq!(b.node(4).as_slice(), &[0.0, 1.0]);
        assert_eq!(b.node(8).as_slice(), &[1.0, 2.0]);
        assert!(!b.is_boundary_node(4));
        assert!(b.is_boundary_node(3));
        assert!(SpatialBox::new(&[1.0], &[1.0], 3, 0).is_err());
        assert!(SpatialBox::new(&[0.0], &[1.0], 1, 0).is_err());
    }

    #[test]
    fn refinement_recovers_off_grid_maximum() {
        let b0 = SpatialBox::new(&[-5.0], &[5.0], 11, 0).unwrap();
        let b2 = SpatialBox::new(&[-5.0], &[5.0], 11, 2).unwrap();
        let f = |y: &[f64]| Ok(-(y[0] - 0.337).powi(2));
        let coarse = spatial_sup(&b0, f).unwrap();
        let fine = spatial_sup(&b2, f).unwrap();
        assert!(coarse.value < -0.1);
        assert!(fine.value > -1e-12, "{fine:?}");
        assert!((fine.argmax[0] - 0.337).abs() < 1e-5);
        assert!(!fine.on_boundary);
    }

    #[test]
    fn monotone_integrand_is_flagged() {
        let b = SpatialBox::new(&[-5.0], &[5.0], 41, 1).unwrap();
        let s = spatial_sup(&b, |y| Ok(y[0])).unwrap();
        assert_eq!(s.value, 5.0);
        assert!(s.on_boundary);
    }

    #[test]
    fn flat_integrand_is_not_flagged() {
        let b = SpatialBox::new(&[-5.0], &[5.0], 41, 2).unwrap();
        let s = spatial_sup(&b, |_| Ok(0.25)).unwrap();
        assert_eq!(s.value, 0.25);
        assert!(!s.on_boundary);
    }

    #[test]
    fn two_dimensional_refinement() {
        let b = SpatialBox::new(&[-2.0, -2.0], &[2.0, 2.0], 9, 2).unwrap();
        let s = spatial_sup(&b, |y| Ok(-(y[0] - 0.3).powi(2) - 2.0 * (y[1] + 0.7).powi(2))).unwrap();
        assert!(s.value > -1e-10, "{s:?}");
    }
}

//! Current-value Hamiltonian `H^cv(t, x, p, Z, u) = b·p + ½ Tr[σσᵀ Z] + l`
//! and its supremum over the control box.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, trace_sigma_sigma_t_z, Matrix, Vector};
use crate::model::{ControlProblem, SYMMETRY_TOLERANCE};

/// Arguments `(t, x, p, Z)` of the Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianQuery {
    pub t: f64,
    pub x: Vector,
    pub p: Vector,
    pub z: Matrix,
}

impl HamiltonianQuery {
    pub fn new(t: f64, x: &[f64], p: &[f64], z: Matrix) -> Result<Self> {
        if x.len() != p.len() || z.shape() != (x.len(), x.len()) {
            return Err(Error::DimensionMismatch {
                what: "hamiltonian query".into(),
                expected: format!("x, p of length {0} and Z {0}x{0}", x.len()),
                got: format!("p {}, Z {}x{}", p.len(), z.rows(), z.cols()),
            });
        }
        if z.asymmetry() > SYMMETRY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "Z is not symmetric (asymmetry {:e})",
                z.asymmetry()
            )));
        }
        Ok(Self {
            t,
            x: Vector::from_slice(x),
            p: Vector::from_slice(p),
            z,
        })
    }
}

/// Value and maximiser of `u ↦ H^cv(t, x, p, Z, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianMax {
    pub value: f64,
    pub argmax: Vector,
}

/// `H^cv` without shape checks; `z` is the row-major d×d Hessian.
#[inline]
pub(crate) fn hcv_unchecked(problem: &ControlProblem, t: f64, x: &[f64], p: &[f64], z: &[f64], u: &[f64]) -> f64 {
    let b = problem.drift(t, x, u);
    let sigma = problem.diffusion(t, x, u);
    let l = problem.running_reward(t, x, u);
    dot(&b, p) + 0.5 * trace_sigma_sigma_t_z(sigma.as_slice(), problem.state_dim(), problem.noise_dim(), z) + l
}

pub fn hcv(problem: &ControlProblem, query: &HamiltonianQuery, u: &[f64]) -> Result<f64> {
    if query.x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "hamiltonian query state".into(),
            expected: problem.state_dim().to_string(),
            got: query.x.len().to_string(),
        });
    }
    if u.len() != problem.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control".into(),
            expected: problem.control_dim().to_string(),
            got: u.len().to_string(),
        });
    }
    let b = problem.drift(query.t, &query.x, u);
    let sigma = problem.diffusion(query.t, &query.x, u);
    problem.check_shapes(&b, &sigma)?;
    let l = problem.running_reward(query.t, &query.x, u);
    let v = dot(&b, &query.p)
        + 0.5
            * trace_sigma_sigma_t_z(
                sigma.as_slice(),
                problem.state_dim(),
                problem.noise_dim(),
                query.z.as_slice(),
            )
        + l;
    ensure_finite(v, "current-value hamiltonian", None)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Candidate controls for the supremum: the clamped hook output plus the box
/// corners when a hook is installed, otherwise the full grid.
pub(crate) fn candidate_controls(problem: &ControlProblem, t: f64, x: &[f64], p: &[f64], z: &Matrix) -> Vec<Vector> {
    let controls = problem.controls();
    match controls.hook() {
        Some(hook) => {
            let mut u = hook(t, x, p, z);
            controls.clamp(&mut u);
            let mut out = Vec::with_capacity(1 + (1 << controls.dim()));
            out.push(u);
            out.extend(controls.corners());
            out
        }
        None => controls.grid(),
    }
}

/// Best of `candidates`, ties resolved towards the lexicographically smallest control.
pub(crate) fn best_of(
    candidates: impl IntoIterator<Item = Vector>,
    mut score: impl FnMut(&[f64]) -> f64,
) -> Result<HamiltonianMax> {
    let mut best: Option<HamiltonianMax> = None;
    for u in candidates {
        let v = ensure_finite(score(&u), "current-value hamiltonian", None)?;
        let better = match &best {
            None => true,
            Some(b) => v > b.value || (v == b.value && lex_cmp(&u, &b.argmax) == Ordering::Less),
        };
        if better {
            best = Some(HamiltonianMax { value: v, argmax: u });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty control candidate set".into()))
}

/// `H(t, x, p, Z) = sup_u H^cv`, by exhaustive grid search or, when the control
/// set carries an analytic hook, by comparing the hook output with the box corners.
pub fn hamiltonian_sup(problem: &ControlProblem, query: &HamiltonianQuery) -> Result<HamiltonianMax> {
    if query.x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "hamiltonian query state".into(),
            expected: problem.state_dim().to_string(),
            got: query.x.len().to_string(),
        });
    }
    let cands = candidate_controls(problem, query.t, &query.x, &query.p, &query.z);
    best_of(cands, |u| {
        hcv_unchecked(problem, query.t, &query.x, &query.p, query.z.as_slice(), u)
    })
}

/// Fast path used by the estimators: no query construction, no symmetry check.
#[inline]
pub(crate) fn sup_value(problem: &ControlProblem, t: f64, x: &[f64], p: &[f64], z: &Matrix) -> Result<f64> {
    let cands = candidate_controls(problem, t, x, p, z);
    let mut best = f64::NEG_INFINITY;
    for u in &cands {
        let v = hcv_unchecked(problem, t, x, p, z.as_slice(), u);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "current-value hamiltonian".into(),
                step: None,
            });
        }
        best = best.max(v);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSet;
    use smallvec::smallvec;

    fn q(x: f64, p: f64, z: f64) -> HamiltonianQuery {
        HamiltonianQuery::new(0.0, &[x], &[p], Matrix::scalar(z)).unwrap()
    }

    fn drift_control(points: usize, hook: bool) -> ControlProblem {
        let mut cs = ControlSet::new(&[-10.0], &[10.0], points).unwrap();
        if hook {
            cs = cs.with_argmax_hook(|_, _, p, _| smallvec![p[0] / 2.0]);
        }
        ControlProblem::builder("drift-ctrl", 1, 1)
            .drift(|_, _, u| smallvec![u[0]])
            .diffusion(|_, _, _| Matrix::scalar(1.0))
            .running_reward(|_, _, u| -u[0] * u[0])
            .terminal_reward(|_| 0.0)
            .controls(cs)
            .build()
            .unwrap()
    }

    #[test]
    fn constant_reward_hamiltonian() {
        let p = ControlProblem::builder("c", 1, 1)
            .drift(|_, _, _| smallvec![0.0])
            .diffusion(|_, _, _| Matrix::scalar(0.0))
            .running_reward(|_, _, _| 1.0)
            .terminal_reward(|_| 0.0)
            .controls(ControlSet::new(&[-1.0], &[1.0], 3).unwrap())
            .build()
            .unwrap();
        assert_eq!(hcv(&p, &q(3.0, -2.0, 5.0), &[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn arithmetic_example() {
        let p = ControlProblem::builder("lq", 1, 1)
            .drift(|_, _, u| smallvec![u[0]])
            .diffusion(|_, _, _| Matrix::scalar(0.37))
            .running_reward(|_, x, u| -x[0] * x[0] - u[0] * u[0])
            .terminal_reward(|_| 0.0)
            .controls(ControlSet::new(&[-2.0], &[2.0], 5).unwrap())
            .build()
            .unwrap();
        assert_eq!(hcv(&p, &q(1.0, 2.0, 0.0), &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn trace_term_with_controlled_volatility() {
        let p = ControlProblem::builder("vol", 1, 1)
            .drift(|_, _, _| smallvec![0.0])
            .diffusion(|_, _, u| Matrix::scalar(u[0]))
            .running_reward(|_, _, _| 0.0)
            .terminal_reward(|_| 0.0)
            .controls(ControlSet::new(&[0.0], &[3.0], 4).unwrap())
            .build()
            .unwrap();
        assert_eq!(hcv(&p, &q(0.0, 0.0, 2.0), &[3.0]).unwrap(), 9.0);
    }

    #[test]
    fn completing_the_square() {
        for hook in [false, true] {
            let p = drift_control(401, hook);
            let h = hamiltonian_sup(&p, &q(0.0, 2.0, 0.0)).unwrap();
            assert!((h.value - 1.0).abs() < 1e-12, "{h:?}");
            assert!((h.argmax[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_maximum_is_clipped() {
        for hook in [false, true] {
            let p = drift_control(401, hook);
            let h = hamiltonian_sup(&p, &q(0.0, 40.0, 0.0)).unwrap();
            assert_eq!(h.argmax[0], 10.0);
            assert_eq!(h.value, 300.0);
        }
    }

    #[test]
    fn grid_converges_to_hook_quadratically() {
        // 2u − u² with curvature 2: grid error ≤ (δ/2)².
        let exact = hamiltonian_sup(&drift_control(3, true), &q(0.0, 2.0 * 0.3137, 0.0)).unwrap();
        for points in [101, 201, 401] {
            let spacing = 20.0 / (points - 1) as f64;
            let g = hamiltonian_sup(&drift_control(points, false), &q(0.0, 2.0 * 0.3137, 0.0)).unwrap();
            let err = exact.value - g.value;
            assert!(err >= -1e-14, "grid exceeded the hook at {points}");
            assert!(err <= 0.25 * spacing * spacing + 1e-14, "{points}: {err}");
        }
    }

    #[test]
    fn ties_go_to_smallest_control() {
        let p = ControlProblem::builder("flat", 1, 1)
            .drift(|_, _, _| smallvec![0.0])
            .diffusion(|_, _, _| Matrix::scalar(0.0))
            .running_reward(|_, _, u| -(u[0] * u[0] - 1.0).abs())
            .terminal_reward(|_| 0.0)
            .controls(ControlSet::new(&[-1.0], &[1.0], 5).unwrap())
            .build()
            .unwrap();
        let h = hamiltonian_sup(&p, &q(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(h.argmax[0], -1.0);
    }

    #[test]
    fn asymmetric_z_is_rejected() {
        assert!(HamiltonianQuery::new(
            0.0,
            &[0.0, 0.0],
            &[0.0, 0.0],
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0])
        )
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn problem(shift: f64) -> ControlProblem {
            ControlProblem::builder("p", 1, 1)
                .drift(|_, x, u| smallvec![u[0] - 0.3 * x[0]])
                .diffusion(|_, _, _| Matrix::scalar(0.8))
                .running_reward(move |_, x, u| -x[0] * x[0] - (u[0] - 0.2).powi(2) + shift)
                .terminal_reward(|_| 0.0)
                .controls(ControlSet::new(&[-2.0], &[2.0], 41).unwrap())
                .build()
                .unwrap()
        }

        proptest! {
            #[test]
            fn sup_dominates_every_grid_control(x in -3.0f64..3.0, p in -5.0f64..5.0, z in -4.0f64..4.0) {
                let prob = problem(0.0);
                let query = q(x, p, z);
                let h = hamiltonian_sup(&prob, &query).unwrap();
                for u in prob.controls().grid() {
                    prop_assert!(h.value >= hcv(&prob, &query, &u).unwrap());
                }
            }

            #[test]
            fn constant_reward_shift_moves_value_not_argmax(x in -3.0f64..3.0, p in -5.0f64..5.0, c in -10.0f64..10.0) {
                let query = q(x, p, 0.0);
                let a = hamiltonian_sup(&problem(0.0), &query).unwrap();
                let b = hamiltonian_sup(&problem(c), &query).unwrap();
                prop_assert_eq!(&a.argmax, &b.argmax);
                prop_assert!((b.value - a.value - c).abs() <= 1e-12 * (1.0 + c.abs() + a.value.abs()));
            }

            #[test]
            fn psd_hessian_increment_does_not_decrease_h(x in -3.0f64..3.0, p in -5.0f64..5.0, z in -4.0f64..4.0, dz in 0.0f64..4.0) {
                let prob = problem(0.0);
                let a = hamiltonian_sup(&prob, &q(x, p, z)).unwrap();
                let b = hamiltonian_sup(&prob, &q(x, p, z + dz)).unwrap();
                prop_assert!(b.value >= a.value);
            }
        }
    }
}

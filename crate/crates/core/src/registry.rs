//! Named benchmark problems and test-function families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmarks::{brownian_quadratic, merton_oracle, riccati_oracle, BenchmarkProblem, LqParams, MertonParams};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{ParametricFamily, TestFunction};

pub const BENCHMARK_IDS: [&str; 4] = ["b1-brownian-quadratic", "b2-lq-drift", "b3-lq-diffusion", "b4-merton"];

pub const FAMILY_IDS: [&str; 3] = ["quadratic-time", "quadratic", "oracle-perturbation"];

pub fn b2_params() -> LqParams {
    LqParams::drift_only(1.0)
}

pub fn b3_params() -> LqParams {
    LqParams::controlled_diffusion(0.5)
}

pub fn b4_params() -> MertonParams {
    MertonParams {
        mu: 0.2,
        sigma: 0.5,
        gamma: 0.5,
        horizon: 1.0,
        u_max: 4.0,
    }
}

pub fn benchmark(id: &str) -> Result<BenchmarkProblem> {
    match id {
        "b1-brownian-quadratic" => brownian_quadratic(1.0),
        "b2-lq-drift" => riccati_oracle(b2_params(), 1e-4),
        "b3-lq-diffusion" => riccati_oracle(b3_params(), 1e-4),
        "b4-merton" => merton_oracle(b4_params()),
        _ => Err(Error::UnknownId {
            kind: "problem",
            id: id.to_string(),
        }),
    }
}

/// A few interior points of the default box for derivative checks.
pub fn check_points(bench: &BenchmarkProblem) -> Vec<(f64, Vector)> {
    let p = &bench.problem;
    let (lo, hi) = (bench.state_lower[0], bench.state_upper[0]);
    let w = hi - lo;
    let mut out = Vec::new();
    for ft in [0.25, 0.5, 0.75] {
        let t = p.t0() + ft * (p.horizon() - p.t0());
        for fx in [0.25, 0.5, 0.75] {
            let mut x = Vector::new();
            for _ in 0..p.state_dim() {
                x.push(lo + fx * w);
            }
            out.push((t, x));
        }
    }
    out
}

/// `oracle + e₀ + e₁(T − t) + e₂ Σx + e₃ |x|²`.
pub fn perturb_oracle(bench: &BenchmarkProblem, eps: &[f64; 4]) -> Result<TestFunction> {
    let oracle = bench
        .oracle
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("benchmark `{}` has no oracle", bench.id())))?;
    let d = bench.problem.state_dim();
    let bump = TestFunction::quadratic(d, bench.problem.horizon(), eps[3], eps[2], eps[1], eps[0]);
    Ok(oracle.plus(&bump).with_label(format!("oracle + perturbation{eps:?}")))
}

/// Per-coefficient scale of random perturbations, sized so the perturbed
/// function stays a plausible candidate on the default box.
fn perturbation_scale(id: &str) -> [f64; 4] {
    match id {
        "b4-merton" => [0.05, 0.05, 0.02, 0.005],
        _ => [0.1, 0.1, 0.05, 0.02],
    }
}

/// `count` oracle perturbations with coefficients drawn uniformly from
/// `±scale`, reproducible from `seed`.
pub fn perturbed_candidates(bench: &BenchmarkProblem, count: usize, seed: u64) -> Result<Vec<TestFunction>> {
    let scale = perturbation_scale(bench.id());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut eps = [0.0; 4];
            for (e, s) in eps.iter_mut().zip(scale) {
                *e = s * rng.random_range(-1.0..=1.0);
            }
            perturb_oracle(bench, &eps).map(|h| h.with_label(format!("perturbed #{i}")))
        })
        .collect()
}

/// Family used by `search` when the config names none.
pub fn default_family(id: &str) -> &'static str {
    match id {
        "b1-brownian-quadratic" => "quadratic-time",
        _ => "oracle-perturbation",
    }
}

/// Builds family `family_id` for `bench`.
///
/// * `quadratic-time`: `θ₀x² + θ₁(T − t) + θ₂` (contains the B1 oracle at `(1, 1, 0)`);
/// * `quadratic`: `θ₀|x|² + θ₁Σx + θ₂(T − t) + θ₃`;
/// * `oracle-perturbation`: `oracle + θ₀ + θ₁(T − t) + θ₂Σx + θ₃|x|²`.
pub fn family(family_id: &str, bench: &BenchmarkProblem) -> Result<ParametricFamily> {
    let d = bench.problem.state_dim();
    let horizon = bench.problem.horizon();
    match family_id {
        "quadratic-time" => ParametricFamily::new(family_id, vec![1.5, 0.5, 0.5], vec![0.25, 0.25, 0.25], move |th| {
            TestFunction::quadratic(d, horizon, th[0], 0.0, th[1], th[2]).with_label(format!("quadratic-time{th:?}"))
        }),
        "quadratic" => ParametricFamily::new(
            family_id,
            vec![1.5, 0.0, 0.5, 0.5],
            vec![0.25, 0.25, 0.25, 0.25],
            move |th| {
                TestFunction::quadratic(d, horizon, th[0], th[1], th[2], th[3]).with_label(format!("quadratic{th:?}"))
            },
        ),
        "oracle-perturbation" => {
            let b = bench.clone();
            perturb_oracle(&b, &[0.0; 4])?;
            let scale = perturbation_scale(bench.id()).to_vec();
            ParametricFamily::new(family_id, scale.clone(), scale, move |th| {
                perturb_oracle(&b, &[th[0], th[1], th[2], th[3]]).expect("oracle checked at construction")
            })
        }
        _ => Err(Error::UnknownId {
            kind: "family",
            id: family_id.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_test_function;

    #[test]
    fn every_id_resolves() {
        for id in BENCHMARK_IDS {
            let b = benchmark(id).unwrap();
            assert_eq!(b.id(), id);
            assert!(b.oracle.is_some() && b.policy.is_some());
            for f in FAMILY_IDS {
                let fam = family(f, &b).unwrap();
                let h = fam.build(fam.initial());
                check_test_function(&h, &b.problem, &check_points(&b)).unwrap();
            }
        }
    }

    #[test]
    fn unknown_ids_are_reported() {
        assert!(matches!(benchmark("b9"), Err(Error::UnknownId { kind: "problem", .. })));
        let b = benchmark("b1-brownian-quadratic").unwrap();
        assert!(matches!(
            family("cubic", &b),
            Err(Error::UnknownId { kind: "family", .. })
        ));
    }

    #[test]
    fn oracles_pass_derivative_checks() {
        for id in BENCHMARK_IDS {
            let b = benchmark(id).unwrap();
            let r = check_test_function(b.oracle.as_ref().unwrap(), &b.problem, &check_points(&b)).unwrap();
            assert!(r.max_error() < 1e-5, "{id}: {}", r.max_error());
        }
    }

    #[test]
    fn perturbations_are_reproducible_and_distinct() {
        let b = benchmark("b2-lq-drift").unwrap();
        let a = perturbed_candidates(&b, 5, 3).unwrap();
        let c = perturbed_candidates(&b, 5, 3).unwrap();
        let x = [0.7];
        for (h, k) in a.iter().zip(&c) {
            assert_eq!(h.value(0.3, &x), k.value(0.3, &x));
        }
        assert_ne!(a[0].value(0.3, &x), a[1].value(0.3, &x));
    }

    #[test]
    fn quadratic_time_family_contains_b1_oracle() {
        let b = benchmark("b1-brownian-quadratic").unwrap();
        let h = family("quadratic-time", &b).unwrap().build(&[1.0, 1.0, 0.0]);
        let o = b.oracle.unwrap();
        for (t, x) in [(0.0, 1.0), (0.4, -2.0), (1.0, 3.0)] {
            assert_eq!(h.value(t, &[x]), o.value(t, &[x]));
        }
    }
}

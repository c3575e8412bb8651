use duality_core::benchmarks::BenchmarkProblem;
use duality_core::dual::{
    degeneracy_diagnostic, dual_v1, dual_v2, pathwise_inner_max, pathwise_policy_value, terminal_gap, PathwiseDPConfig,
    SpatialBox,
};
use duality_core::paths::{penalty_mean_test, sample_brownian};
use duality_core::primal::primal_bound;
use duality_core::registry::{benchmark, perturbed_candidates};
use duality_core::search::gap_report;
use duality_core::stats::SampleStats;
use duality_core::{Policy, TimeGrid};

fn setup(id: &str, n_steps: usize) -> (BenchmarkProblem, TimeGrid, SpatialBox, PathwiseDPConfig) {
    let b = benchmark(id).unwrap();
    let grid = TimeGrid::for_problem(&b.problem, 0.0, n_steps).unwrap();
    let sbox = SpatialBox::new(&b.state_lower, &b.state_upper, 41, 0).unwrap();
    let dp = PathwiseDPConfig::new(&b.state_lower, &b.state_upper, 41).with_control_points(11);
    (b, grid, sbox, dp)
}

#[test]
fn b3_primal_matches_riccati_value() {
    let (b, grid, ..) = setup("b3-lq-diffusion", 200);
    let est = primal_bound(&b.problem, b.policy.as_ref().unwrap(), 0.0, &[1.0], 20_000, &grid, 5).unwrap();
    let v = b.oracle_value(0.0, &[1.0]).unwrap();
    assert!((v + 1.1043).abs() < 1e-3, "oracle {v}");
    assert!(
        (est.value - v).abs() < 3.0 * est.std_error + 0.01,
        "{} ± {} vs {v}",
        est.value,
        est.std_error
    );
}

#[test]
fn common_random_numbers_reduce_difference_variance() {
    let (b, grid, ..) = setup("b2-lq-drift", 50);
    let optimal = b.policy.clone().unwrap();
    let lazy = Policy::new("half feedback", b.problem.controls(), {
        let o = optimal.clone();
        move |t, x| o.control(t, x).iter().map(|u| 0.5 * u).collect()
    });
    let n = 2000;
    let a = primal_bound(&b.problem, &optimal, 0.0, &[1.0], n, &grid, 11).unwrap();
    let same = primal_bound(&b.problem, &lazy, 0.0, &[1.0], n, &grid, 11).unwrap();
    let other = primal_bound(&b.problem, &lazy, 0.0, &[1.0], n, &grid, 12).unwrap();
    // the optimal policy beats the damped one on common noise
    assert!(a.value > same.value);

    let per_path = |pol: &Policy, seed: u64| -> Vec<f64> {
        (0..n as u64)
            .map(|i| {
                let path = sample_brownian(&grid, 1, seed, i);
                let rec = duality_core::paths::integrate(&b.problem, pol, &path, &[1.0], None).unwrap();
                rec.running_reward + b.problem.terminal_reward(&rec.terminal_state)
            })
            .collect()
    };
    let x = per_path(&optimal, 11);
    let y_same = per_path(&lazy, 11);
    let y_other = per_path(&lazy, 12);
    let diff = |y: &[f64]| SampleStats::from_samples(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
    assert!(diff(&y_same).std_dev < 0.5 * diff(&y_other).std_dev);
    assert_eq!(SampleStats::from_samples(&y_other).mean, other.value);
}

#[test]
fn penalty_has_zero_mean_for_oracle_and_perturbations() {
    for id in ["b1-brownian-quadratic", "b3-lq-diffusion", "b4-merton"] {
        let (b, grid, ..) = setup(id, 50);
        let pol = b.policy.as_ref().unwrap();
        let mut hs = vec![b.oracle.clone().unwrap()];
        hs.extend(perturbed_candidates(&b, 2, 4).unwrap());
        for h in &hs {
            let s = penalty_mean_test(&b.problem, pol, h, &[1.0], 20_000, &grid, 21).unwrap();
            assert!(
                s.mean.abs() <= 3.5 * s.std_error,
                "{id} {}: {} ± {}",
                h.label(),
                s.mean,
                s.std_error
            );
        }
    }
}

#[test]
fn pathwise_never_exceeds_pointwise_on_the_same_box() {
    for id in ["b2-lq-drift", "b4-merton"] {
        let (b, grid, sbox, dp) = setup(id, 40);
        for h in perturbed_candidates(&b, 3, 8).unwrap() {
            let r = degeneracy_diagnostic(&b.problem, &h, 0.0, &[1.0], 64, &grid, &dp, &sbox, 2, 1e-8).unwrap();
            assert!(r.min_gap >= -1e-10, "{id} {}: {}", h.label(), r.min_gap);
            let v1 = dual_v1(&b.problem, &h, 0.0, &[1.0], 64, &grid, &dp, 2).unwrap();
            let v2 = dual_v2(&b.problem, &h, 0.0, &[1.0], &sbox, &grid).unwrap();
            assert!(v1.value <= v2.value + 1e-10);
            let g = gap_report(&v1, &v2).unwrap();
            assert!(!g.failed);
        }
    }
}

#[test]
fn inner_max_dominates_the_policy_on_each_path() {
    let (b, grid, _, dp) = setup("b2-lq-drift", 30);
    let h = perturbed_candidates(&b, 1, 3).unwrap().pop().unwrap();
    // a policy restricted to candidate controls
    let pol = Policy::new("bang", b.problem.controls(), |_, x| {
        duality_core::smallvec![if x[0] > 0.0 { -1.0 } else { 1.0 }]
    });
    for i in 0..10 {
        let path = sample_brownian(&grid, 1, 6, i);
        let best = pathwise_inner_max(&b.problem, &h, &path, 0.0, &[1.0], &dp).unwrap();
        let fixed = pathwise_policy_value(&b.problem, &h, &path, 0.0, &[1.0], &dp, &pol).unwrap();
        assert!(best.value >= fixed.value - 1e-12);
    }
}

#[test]
fn oracle_makes_both_duals_tight() {
    for id in ["b1-brownian-quadratic", "b2-lq-drift", "b3-lq-diffusion", "b4-merton"] {
        let (b, grid, sbox, dp) = setup(id, 100);
        let h = b.oracle.as_ref().unwrap();
        let v = h.value(0.0, &[1.0]);
        let v2 = dual_v2(&b.problem, h, 0.0, &[1.0], &sbox, &grid).unwrap();
        assert!((v2.value - v).abs() < 1e-6 * v.abs().max(1.0), "{id}: {}", v2.value);
        let v1 = dual_v1(&b.problem, h, 0.0, &[1.0], 100, &grid, &dp, 1).unwrap();
        assert!((v1.value - v).abs() < 1e-6 * v.abs().max(1.0), "{id}: {}", v1.value);
        assert!(terminal_gap(&b.problem, h, &sbox).unwrap().value.abs() < 1e-12);
    }
}

#[test]
fn degeneracy_on_b2() {
    let (b, grid, sbox, dp) = setup("b2-lq-drift", 40);
    let oracle = b.oracle.clone().unwrap();
    let r = degeneracy_diagnostic(&b.problem, &oracle, 0.0, &[1.0], 32, &grid, &dp, &sbox, 4, 1e-8).unwrap();
    assert_eq!(r.degenerate_fraction, 1.0);
    assert_eq!(r.gaps.len(), 32);

    let h = perturbed_candidates(&b, 1, 5).unwrap().pop().unwrap();
    let r = degeneracy_diagnostic(&b.problem, &h, 0.0, &[1.0], 32, &grid, &dp, &sbox, 4, 1e-8).unwrap();
    assert!(r.degenerate_fraction < 1.0);
    assert!(r.gap_stats.mean > 0.0);
    assert_eq!(r.gaps.len(), r.pathwise.len());
}

#[test]
fn nonsmooth_bound_ignores_constant_shifts() {
    for id in ["b1-brownian-quadratic", "b3-lq-diffusion"] {
        let (b, grid, sbox, _) = setup(id, 50);
        let h = b.oracle.clone().unwrap().with_terminal_match(false);
        let base = dual_v2(&b.problem, &h, 0.0, &[1.0], &sbox, &grid).unwrap();
        for c in [0.5, 5.0, -3.0] {
            let shifted = dual_v2(&b.problem, &h.shifted(c), 0.0, &[1.0], &sbox, &grid).unwrap();
            assert_eq!(shifted.value, base.value);
        }
    }
}

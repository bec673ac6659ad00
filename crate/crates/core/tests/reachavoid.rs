use rand::Rng;
use scenario_core::allocation::{allocate_fixed_beta, AllocationProblem, Method};
use scenario_core::engine::EngineOptions;
use scenario_core::reachavoid::{
    build_program, constraint_row, expected_basis_value, level_set_grid, method_budget,
    objective_integrals, rbf, reward_h, run_adp, RbfBasis, ReachAvoidSpec, Rect, Region,
    BASIS_STREAM,
};
use scenario_core::sampling::{draw, RngHandle, UncertaintyDomain};

fn gaussian_draws(mean: [f64; 2], cov: [f64; 2], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = UncertaintyDomain::Gaussian {
        mean: mean.to_vec(),
        covariance: vec![vec![cov[0], 0.0], vec![0.0, cov[1]]],
    };
    draw(&d, n, RngHandle::new(seed, 0)).unwrap()
}

/// Mean and standard error of `f` over the draws.
fn mc(draws: &[Vec<f64>], f: impl Fn([f64; 2]) -> f64) -> (f64, f64) {
    let n = draws.len() as f64;
    let vals: Vec<f64> = draws.iter().map(|y| f([y[0], y[1]])).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson over `[a, b]` after splitting into equal panels.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = h / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, 40)
        })
        .sum()
}

fn quad_2d(f: impl Fn(f64, f64) -> f64, r: &Rect, tol: f64) -> f64 {
    let inner = |x: f64| integrate(&|y| f(x, y), r.lower[1], r.upper[1], tol);
    integrate(&inner, r.lower[0], r.upper[0], tol)
}

#[test]
fn expected_basis_value_matches_monte_carlo() {
    let mut g = RngHandle::new(99, 0).generator();
    for k in 0..20 {
        let c = [g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)];
        let v = g.random_range(0.001..0.01);
        let mean = [c[0] + g.random_range(-0.2..0.2), c[1] + g.random_range(-0.2..0.2)];
        let cov = [g.random_range(0.001..0.02), g.random_range(0.001..0.02)];
        let closed = expected_basis_value(c, v, mean, cov).unwrap();
        assert!(closed > 0.0 && closed <= 1.0);
        let draws = gaussian_draws(mean, cov, 200_000, k);
        let (est, se) = mc(&draws, |y| rbf(c, v, y));
        assert!((closed - est).abs() <= 3.0 * se + 1e-12, "{k}: {closed} vs {est} ± {se}");
    }
}

#[test]
fn center_expectation_is_one_half() {
    let draws = gaussian_draws([0.1, 0.2], [0.01, 0.01], 1_000_000, 3);
    let (est, se) = mc(&draws, |y| rbf([0.1, 0.2], 0.01, y));
    assert!((est - 0.5).abs() <= 3.0 * se, "{est} ± {se}");
}

#[test]
fn objective_integrals_match_quadrature() {
    let spec = ReachAvoidSpec::default();
    let s1 = ReachAvoidSpec {
        safe_sets: vec![Rect::new([-1.0, -1.0], [1.0, 1.0])],
        horizon: 1,
        ..spec.clone()
    };
    let basis = RbfBasis {
        centers: vec![vec![[0.0, 0.0]]],
        variances: vec![vec![0.01]],
    };
    let closed = objective_integrals(&basis, 1, &s1)[0];
    let quad = quad_2d(|x, y| rbf([0.0, 0.0], 0.01, [x, y]), &s1.safe_sets[0], 1e-13);
    assert!((closed - quad).abs() <= 1e-8 * quad, "{closed} {quad}");

    let basis = RbfBasis::sample(&spec, &[4, 3, 3], 0.01, RngHandle::new(5, BASIS_STREAM)).unwrap();
    for stage in 1..=3 {
        let closed = objective_integrals(&basis, stage, &spec);
        for (j, &i_j) in closed.iter().enumerate() {
            let c = basis.centers[stage - 1][j];
            let v = basis.variances[stage - 1][j];
            let quad = quad_2d(|x, y| rbf(c, v, [x, y]), &spec.safe_sets[stage - 1], 1e-13);
            assert!(i_j > 0.0);
            assert!((i_j - quad).abs() <= 1e-8 * quad, "stage {stage} basis {j}: {i_j} {quad}");
        }
    }
}

#[test]
fn integrals_grow_with_the_rectangle() {
    let spec = ReachAvoidSpec::default();
    let basis = RbfBasis::sample(&spec, &[10, 10, 10], 0.01, RngHandle::new(8, BASIS_STREAM)).unwrap();
    let small = ReachAvoidSpec {
        safe_sets: vec![spec.safe_sets[2]; 3],
        ..spec.clone()
    };
    let large = ReachAvoidSpec {
        safe_sets: vec![spec.safe_sets[0]; 3],
        ..spec.clone()
    };
    for stage in 1..=3 {
        let a = objective_integrals(&basis, stage, &small);
        let b = objective_integrals(&basis, stage, &large);
        assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }
}

#[test]
fn safe_region_reward_matches_one_step_rollout() {
    let spec = ReachAvoidSpec::default();
    let basis = RbfBasis::sample(&spec, &[6, 5, 4], 0.01, RngHandle::new(4, BASIS_STREAM)).unwrap();
    let next = vec![0.7, -0.2, 1.3, 0.4, 0.9];
    let delta = [0.5, 0.5, 0.6, 0.3];
    assert_eq!(spec.classify(1, [delta[0], delta[1]]), Region::Safe);
    let h = reward_h(delta, 1, &next, &basis, &spec);
    let mean = scenario_core::reachavoid::dynamics_mean([0.5, 0.5], [0.6, 0.3]);
    let draws = gaussian_draws(mean, spec.noise_cov, 100_000, 17);
    let (est, se) = mc(&draws, |y| {
        basis.features(2, y).iter().zip(&next).map(|(p, w)| p * w).sum()
    });
    assert!((h - est).abs() <= 3.0 * se, "{h} vs {est} ± {se}");

    // Last stage: probability of landing in T.
    let delta = [0.7, 0.75, 0.8, 0.2];
    let h = reward_h(delta, 3, &[], &basis, &spec);
    let mean = scenario_core::reachavoid::dynamics_mean([0.7, 0.75], [0.8, 0.2]);
    let draws = gaussian_draws(mean, spec.noise_cov, 100_000, 18);
    let (est, se) = mc(&draws, |y| f64::from(u8::from(spec.target.contains(y))));
    assert!((h - est).abs() <= 3.0 * se, "{h} vs {est} ± {se}");
}

#[test]
fn reward_bounds_at_indicator_boundaries() {
    let spec = ReachAvoidSpec::default();
    let basis = RbfBasis::sample(&spec, &[6, 5, 4], 0.01, RngHandle::new(4, BASIS_STREAM)).unwrap();
    let next: Vec<f64> = vec![0.5, -0.3, 0.8, 0.1, 0.2];
    let wmax = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let edges = [-1.0, -0.45, -0.3, -0.2, 0.15, 0.25, 0.4, 0.8, 1.0];
    for &ex in &edges {
        for &ey in &edges {
            for dx in [-1e-12, 0.0, 1e-12] {
                for dy in [-1e-12, 0.0, 1e-12] {
                    let y = [ex + dx, ey + dy];
                    for stage in 1..=3 {
                        let h = reward_h([y[0], y[1], 0.3, 0.2], stage, &next, &basis, &spec);
                        let expected = match spec.classify(stage, y) {
                            Region::Target => Some(1.0),
                            Region::Avoid | Region::Outside => Some(0.0),
                            Region::Safe => None,
                        };
                        match expected {
                            Some(v) => assert_eq!(h, v, "{y:?} stage {stage}"),
                            None => assert!(h.abs() <= 1.0 + wmax * next.len() as f64),
                        }
                        let in_a = spec.avoid.contains(y);
                        let in_t = spec.target.contains(y);
                        let in_s = spec.safe_sets[stage - 1].contains(y);
                        let region = spec.classify(stage, y);
                        assert_eq!(region == Region::Avoid, in_a);
                        assert_eq!(region == Region::Target, in_t && !in_a);
                        assert_eq!(region == Region::Safe, in_s && !in_a && !in_t);
                    }
                }
            }
        }
    }
}

#[test]
fn avoid_rows_ask_only_for_nonnegativity() {
    let spec = ReachAvoidSpec::default();
    let basis = RbfBasis::sample(&spec, &[6, 5, 4], 0.01, RngHandle::new(4, BASIS_STREAM)).unwrap();
    for stage in 1..=3 {
        let row = constraint_row([0.0, 0.0, 1.0, 0.3], stage, &basis, &spec);
        assert_eq!(row.constant, 0.0);
        assert!(row.next.iter().all(|&v| v == 0.0));
        assert!(row.own.iter().all(|&v| v < 0.0));
    }
}

#[test]
fn horizon_one_dominates_terminal_reward() {
    let spec = ReachAvoidSpec {
        safe_sets: vec![Rect::new([0.4, 0.4], [1.0, 1.0])],
        horizon: 1,
        ..ReachAvoidSpec::default()
    };
    let basis = RbfBasis::sample(&spec, &[15], 0.05, RngHandle::new(2, BASIS_STREAM)).unwrap();
    let budget = scenario_core::engine::Budget::Single {
        epsilon: 0.1,
        beta: 0.01,
    };
    let run = run_adp(&spec, &basis, Method::Standard, &budget, 2, 500, EngineOptions::default()).unwrap();
    let p = build_program(&spec, &basis).unwrap();
    let s = run.solution.certificate.per_stage[0].samples as usize;
    for z in draw(&p.domain, s, RngHandle::new(2, 0)).unwrap() {
        let d = spec.stage_point(1, &z);
        let y = [d[0], d[1]];
        let h = reward_h(d, 1, &[], &basis, &spec);
        assert!(run.weights.value(&basis, 1, y) >= h - 1e-7);
    }
}

/// Basis dense enough for a well-conditioned program at small size.
fn small_problem() -> (ReachAvoidSpec, RbfBasis) {
    let spec = ReachAvoidSpec::default();
    let basis = RbfBasis::sample(&spec, &[40, 30, 20], 0.05, RngHandle::new(1, BASIS_STREAM)).unwrap();
    (spec, basis)
}

#[test]
fn trained_values_dominate_training_rewards_for_all_methods() {
    let (spec, basis) = small_problem();
    let alloc = allocate_fixed_beta(
        &AllocationProblem::new(0.1, 0.03, vec![40, 30, 20]).with_fixed_betas(vec![0.01; 3]),
    )
    .unwrap();
    for method in Method::ALL {
        let budget = method_budget(method, 0.1, 0.03, &alloc);
        let run = run_adp(&spec, &basis, method, &budget, 1, 1000, EngineOptions::default()).unwrap();
        assert!(run.solution.training_residual <= 1e-8, "{method}: {}", run.solution.training_residual);
        assert!(run.report.epsilon_hat_overall <= 1.0);
        assert_eq!(run.report.n_validation, 1000);
        run.solution.certificate.check().unwrap();
    }
}

#[test]
fn level_sets_reach_high_values_on_the_target() {
    let (spec, basis) = small_problem();
    let alloc = allocate_fixed_beta(
        &AllocationProblem::new(0.1, 0.03, vec![40, 30, 20]).with_fixed_betas(vec![0.01; 3]),
    )
    .unwrap();
    let budget = method_budget(Method::RecursiveResampled, 0.1, 0.03, &alloc);
    let run = run_adp(&spec, &basis, Method::RecursiveResampled, &budget, 3, 1000, EngineOptions::default()).unwrap();
    let grid = level_set_grid(&run.weights, &basis, 1, spec.target, 11).unwrap();
    let max = grid.values.iter().flatten().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    assert!(max >= 0.5, "{max}");
    let full = level_set_grid(&run.weights, &basis, 1, spec.safe_sets[0], 21).unwrap();
    assert_eq!(full.values.len(), 21);
    assert!(full.values.iter().all(|r| r.len() == 21));
}

use num::bigint::BigInt;
use num::{BigRational, One, Signed, ToPrimitive, Zero};
use proptest::prelude::*;

use scenario_core::allocation::{
    allocate_fixed_beta, allocate_joint, joint_objective, stage_constant, Allocation, AllocationProblem,
};
use scenario_core::bounds::{binomial_tail_log, exact_sample_size, explicit_sample_size, BoundQuery};
use scenario_core::budget;
use scenario_core::engine::{certify, Budget};
use scenario_core::lp::{dual_objective, kkt_residuals, solve_lp, LpStandardForm, LpStatus};
use scenario_core::reachavoid::{expected_basis_value, objective_integrals, RbfBasis, ReachAvoidSpec, Rect};
use scenario_core::sampling::{draw, RngHandle, UncertaintyDomain};
use scenario_core::validation::clopper_pearson_upper;
use scenario_core::Method;

// ---------------------------------------------------------------- bounds

/// `ln` of a positive big integer via its leading 64 bits.
fn ln_bigint(x: &BigInt) -> f64 {
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_f64().unwrap();
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `ln P(Bin(n, p) <= k)` by exact rational summation.
fn tail_log_oracle(n: u64, k: u64, p: f64) -> f64 {
    let p = BigRational::from_float(p).unwrap();
    let q = BigRational::one() - &p;
    let mut binom = BigInt::one();
    let mut sum = BigRational::zero();
    for i in 0..=k {
        if i > 0 {
            binom = binom * BigInt::from(n - i + 1) / BigInt::from(i);
        }
        let term = BigRational::from_integer(binom.clone())
            * num::pow(p.clone(), i as usize)
            * num::pow(q.clone(), (n - i) as usize);
        sum += term;
    }
    assert!(sum.is_positive());
    ln_bigint(sum.numer()) - ln_bigint(sum.denom())
}

#[test]
fn bound_grid_is_monotone_and_dominated() {
    let levels = [0.01, 0.05, 0.1, 0.3];
    let dims = [1u64, 5, 20, 100];
    let n = |e, b, d| exact_sample_size(BoundQuery::new(e, b, d).unwrap()).unwrap().samples;
    for &e in &levels {
        for &b in &levels {
            for (k, &d) in dims.iter().enumerate() {
                let here = n(e, b, d);
                let explicit = explicit_sample_size(BoundQuery::new(e, b, d).unwrap()).unwrap().samples;
                assert!(explicit >= here, "explicit {explicit} < exact {here} at ({e}, {b}, {d})");
                if k + 1 < dims.len() {
                    assert!(n(e, b, dims[k + 1]) >= here);
                }
            }
        }
    }
    for w in levels.windows(2) {
        for &d in &dims {
            for &o in &levels {
                assert!(n(w[1], o, d) <= n(w[0], o, d));
                assert!(n(o, w[1], d) <= n(o, w[0], d));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_matches_rational_sum(n in 2u64..=200, kf in 0.0f64..1.0, p in 0.001f64..0.999) {
        let k = ((n - 1) as f64 * kf) as u64;
        let got = binomial_tail_log(n, k, p).unwrap();
        let want = tail_log_oracle(n, k, p);
        prop_assert!((got - want).abs() <= 1e-10, "n={} k={} p={} got={} want={}", n, k, p, got, want);
    }

    #[test]
    fn exact_bound_is_minimal(e in 0.01f64..0.5, b in 1e-6f64..0.5, d in 1u64..60) {
        let r = exact_sample_size(BoundQuery::new(e, b, d).unwrap()).unwrap();
        let n = r.samples;
        prop_assert!(n >= d);
        prop_assert!(binomial_tail_log(n, d - 1, e).unwrap() <= b.ln());
        if n > d {
            prop_assert!(binomial_tail_log(n - 1, d - 1, e).unwrap() > b.ln());
        }
        let explicit = explicit_sample_size(BoundQuery::new(e, b, d).unwrap()).unwrap().samples;
        prop_assert!(explicit >= n);
    }
}

// ------------------------------------------------------------ allocation

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_beta_beats_simplex_grid(
        dims in prop::collection::vec(1u64..400, 2..=3),
        beta_parts in prop::collection::vec(0.05f64..1.0, 3),
        eps in 0.01f64..0.5,
    ) {
        let m = dims.len();
        let beta = 0.05;
        let part_sum: f64 = beta_parts[..m].iter().sum();
        let betas: Vec<f64> = beta_parts[..m].iter().map(|w| 0.999 * beta * w / part_sum).collect();
        let a = allocate_fixed_beta(
            &AllocationProblem::new(eps, beta, dims.clone()).with_fixed_betas(betas.clone()),
        ).unwrap();
        let c: Vec<f64> = dims.iter().zip(&betas).map(|(&d, &b)| stage_constant(d, b)).collect();
        let f = |e: &[f64]| c.iter().zip(e).map(|(c, e)| c / e).sum::<f64>();
        let ours = f(&a.epsilons);
        prop_assert!((ours - a.objective).abs() <= 1e-9 * ours);
        let steps = 200;
        let mut best = f64::INFINITY;
        for i in 1..steps {
            let e1 = eps * i as f64 / steps as f64;
            if m == 2 {
                best = best.min(f(&[e1, eps - e1]));
            } else {
                for j in 1..steps - i {
                    let e2 = eps * j as f64 / steps as f64;
                    best = best.min(f(&[e1, e2, eps - e1 - e2]));
                }
            }
        }
        prop_assert!(ours <= best * (1.0 + 1e-12), "closed form {} vs grid {}", ours, best);
        prop_assert!(budget::sum_within(&a.epsilons, eps));
    }

    #[test]
    fn joint_respects_budget_and_beats_uniform(
        dims in prop::collection::vec(1u64..300, 1..=4),
        eps in 0.02f64..0.4,
        beta in 1e-4f64..0.2,
    ) {
        let p = AllocationProblem::new(eps, beta, dims.clone());
        let joint = allocate_joint(&p).unwrap();
        let m = dims.len() as f64;
        let uniform = joint_objective(&vec![eps / m; dims.len()], &vec![beta / m; dims.len()], &dims);
        prop_assert!(joint.objective <= uniform * (1.0 + 1e-9), "{} > {}", joint.objective, uniform);
        prop_assert!(budget::sum_within(&joint.epsilons, eps));
        prop_assert!(budget::sum_within(&joint.betas, beta));
        let slack_e = eps - joint.epsilons.iter().sum::<f64>();
        let slack_b = beta - joint.betas.iter().sum::<f64>();
        prop_assert!(slack_e >= -1e-12 && slack_b >= -1e-12);
    }

    #[test]
    fn certificates_compose_exactly(
        dims in prop::collection::vec(1usize..200, 1..=4),
        eps in 0.01f64..0.5,
        beta in 1e-4f64..0.3,
    ) {
        let p = AllocationProblem::new(eps, beta, dims.iter().map(|&d| d as u64).collect()).with_uniform_betas();
        let alloc: Allocation = allocate_fixed_beta(&p).unwrap();
        for method in Method::ALL {
            let budget = if method.uses_shared_samples() {
                Budget::Single { epsilon: eps, beta }
            } else {
                Budget::Staged(alloc.clone())
            };
            let cert = certify(method, &budget, &dims).unwrap();
            cert.check().unwrap();
            let e: Vec<f64> = cert.per_stage.iter().map(|s| s.epsilon).collect();
            let b: Vec<f64> = cert.per_stage.iter().map(|s| s.beta).collect();
            if !method.uses_shared_samples() {
                prop_assert!(budget::exact_sum(&e) <= BigRational::from_float(eps).unwrap());
                prop_assert!(budget::exact_sum(&b) <= BigRational::from_float(beta).unwrap());
            }
        }
    }
}

// -------------------------------------------------------------------- lp

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Minimum of `c'x` over the vertices of `{A x <= b}`.
fn vertex_oracle(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
    let n = c.len();
    let mut best = f64::INFINITY;
    combinations(a.len(), n, 0, &mut Vec::new(), &mut |idx| {
        let sub_a = idx.iter().map(|&i| a[i].clone()).collect();
        let sub_b = idx.iter().map(|&i| b[i]).collect();
        if let Some(x) = solve_dense(sub_a, sub_b) {
            let feasible = a
                .iter()
                .zip(b)
                .all(|(row, bi)| row.iter().zip(&x).map(|(r, x)| r * x).sum::<f64>() <= bi + 1e-9);
            if feasible {
                best = best.min(c.iter().zip(&x).map(|(c, x)| c * x).sum());
            }
        }
    });
    best
}

fn bounded_lp() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), 1..=12),
            prop::collection::vec(0.05f64..1.0, 12),
        )
            .prop_map(|(c, a, b)| {
                let m = a.len();
                (c, a, b[..m].to_vec())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lp_matches_vertex_enumeration((c, a, b) in bounded_lp()) {
        let n = c.len();
        let lp = LpStandardForm::new(c.clone(), a.clone(), b.clone())
            .with_bounds(Some(vec![-2.0; n]), Some(vec![2.0; n]));
        let sol = solve_lp(&lp, 1e-9).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);

        let mut rows = a.clone();
        let mut rhs = b.clone();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push(e.clone());
            rhs.push(2.0);
            e[j] = -1.0;
            rows.push(e);
            rhs.push(2.0);
        }
        let want = vertex_oracle(&c, &rows, &rhs);
        prop_assert!((sol.objective - want).abs() <= 1e-6, "ipm {} vs vertices {}", sol.objective, want);

        let (p, d, g) = kkt_residuals(&lp, &sol);
        prop_assert!(p <= 1e-6 && d <= 1e-6 && g <= 1e-6, "kkt {} {} {}", p, d, g);
        let gap = (sol.objective - dual_objective(&lp, &sol)).abs();
        prop_assert!(gap <= 1e-6 * (1.0 + sol.objective.abs()), "gap {}", gap);

        let again = solve_lp(&lp, 1e-9).unwrap();
        prop_assert_eq!(serde_json::to_string(&sol).unwrap(), serde_json::to_string(&again).unwrap());

        if !sol.degenerate {
            let doubled = LpStandardForm { cost: c.iter().map(|v| 2.0 * v).collect(), ..lp.clone() };
            let s2 = solve_lp(&doubled, 1e-9).unwrap();
            prop_assert!((s2.objective - 2.0 * sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
            for (x1, x2) in sol.x.iter().zip(&s2.x) {
                prop_assert!((x1 - x2).abs() <= 1e-5, "{:?} vs {:?}", sol.x, s2.x);
            }
        }
    }
}

// -------------------------------------------------------------- sampling

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn streams_are_reproducible_and_uncorrelated(seed in any::<u64>(), s1 in 0u64..1000, gap in 1u64..1000) {
        let dom = UncertaintyDomain::unit_box(1);
        let a: Vec<f64> = draw(&dom, 10_000, RngHandle::new(seed, s1)).unwrap().concat();
        let again: Vec<f64> = draw(&dom, 10_000, RngHandle::new(seed, s1)).unwrap().concat();
        prop_assert_eq!(&a, &again);
        let b: Vec<f64> = draw(&dom, 10_000, RngHandle::new(seed, s1 + gap)).unwrap().concat();
        prop_assert!(correlation(&a, &b).abs() < 0.05);
    }

    #[test]
    fn draws_stay_inside(
        seed in any::<u64>(),
        lower in prop::collection::vec(-5.0f64..0.0, 3),
        width in prop::collection::vec(0.1f64..4.0, 3),
    ) {
        let upper: Vec<f64> = lower.iter().zip(&width).map(|(l, w)| l + w).collect();
        let boxed = UncertaintyDomain::Box { lower: lower.clone(), upper: upper.clone() };
        for x in draw(&boxed, 500, RngHandle::new(seed, 0)).unwrap() {
            for j in 0..3 {
                prop_assert!(x[j] >= lower[j] && x[j] <= upper[j]);
            }
        }
        // Triangle-like polytope: box cut by x0 + x1 + x2 <= sum of midpoints.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            a.push(e.clone());
            b.push(upper[j]);
            e[j] = -1.0;
            a.push(e);
            b.push(-lower[j]);
        }
        a.push(vec![1.0, 1.0, 1.0]);
        b.push(lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).sum());
        let poly = UncertaintyDomain::HitAndRunPolytope { a: a.clone(), b: b.clone(), burn_in: 50, thinning: 3 };
        for x in draw(&poly, 300, RngHandle::new(seed, 1)).unwrap() {
            for (row, bi) in a.iter().zip(&b) {
                let v: f64 = row.iter().zip(&x).map(|(r, x)| r * x).sum();
                prop_assert!(v <= bi + 1e-12);
            }
        }
    }
}

#[test]
fn hit_and_run_is_uniform_on_a_square() {
    // 5 x 5 cells, 24 degrees of freedom; 0.999 quantile is 51.18.
    let dom = UncertaintyDomain::hit_and_run_box(&[0.0, 0.0], &[1.0, 1.0]);
    let n = 5000;
    let mut counts = [0usize; 25];
    for x in draw(&dom, n, RngHandle::new(11, 0)).unwrap() {
        let i = ((x[0] * 5.0) as usize).min(4);
        let j = ((x[1] * 5.0) as usize).min(4);
        counts[5 * i + j] += 1;
    }
    let expected = n as f64 / 25.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 51.18, "chi-square {chi2}, counts {counts:?}");
}

// ------------------------------------------------------------ validation

proptest! {
    #[test]
    fn cp_upper_dominates_the_estimate(n in 1u64..5000, kf in 0.0f64..=1.0, conf in 0.5f64..0.999) {
        let k = (n as f64 * kf) as u64;
        let u = clopper_pearson_upper(k, n, conf).unwrap();
        prop_assert!(u >= k as f64 / n as f64);
        prop_assert!(u <= 1.0);
    }
}

// ----------------------------------------------------------- reach-avoid

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_basis_value_is_a_probability_weight(
        c in prop::array::uniform2(-1.0f64..1.0),
        m in prop::array::uniform2(-2.0f64..2.0),
        v in 1e-4f64..0.05,
        noise in prop::array::uniform2(1e-4f64..0.05),
    ) {
        let e = expected_basis_value(c, v, m, noise).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e > 0.0 || (m[0] - c[0]).abs() + (m[1] - c[1]).abs() > 1.0);
    }

    #[test]
    fn integrals_grow_with_random_rectangles(
        centers in prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 1..6),
        variances in prop::collection::vec(1e-3f64..0.05, 6),
        inner in prop::array::uniform4(0.0f64..1.0),
        pad in prop::array::uniform4(0.0f64..0.5),
    ) {
        let lo = [-1.0 + inner[0].min(inner[1]), -1.0 + inner[2].min(inner[3])];
        let hi = [-1.0 + inner[0].max(inner[1]) + 0.01, -1.0 + inner[2].max(inner[3]) + 0.01];
        let small = Rect::new(lo, hi);
        let big = Rect::new([lo[0] - pad[0], lo[1] - pad[1]], [hi[0] + pad[2], hi[1] + pad[3]]);
        let d = centers.len();
        let basis = RbfBasis { centers: vec![centers.clone()], variances: vec![variances[..d].to_vec()] };
        let spec = |s: Rect| ReachAvoidSpec {
            target: s,
            safe_sets: vec![s],
            horizon: 1,
            ..ReachAvoidSpec::default()
        };
        let i_small = objective_integrals(&basis, 1, &spec(small));
        let i_big = objective_integrals(&basis, 1, &spec(big));
        for ((a, b), c) in i_small.iter().zip(&i_big).zip(&centers) {
            // Far-away centers underflow to exactly zero.
            prop_assert!(*a >= 0.0);
            if small.contains(*c) {
                prop_assert!(*a > 0.0);
            }
            prop_assert!(a <= b);
        }
    }
}

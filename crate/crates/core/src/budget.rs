//! Exact budget arithmetic on `f64` values.
//!
//! Every finite `f64` is a dyadic rational, so sums can be compared against a
//! total without rounding by lifting them into `BigRational`.

use num::{BigRational, Zero};

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

/// Exact `sum(values)` as a rational.
pub fn exact_sum(values: &[f64]) -> BigRational {
    values.iter().fold(BigRational::zero(), |acc, &v| acc + exact(v))
}

/// `sum(values) <= total` evaluated without rounding error.
pub fn sum_within(values: &[f64], total: f64) -> bool {
    values.iter().all(|v| v.is_finite()) && total.is_finite() && exact_sum(values) <= exact(total)
}

/// Nudges the largest entries down one ulp at a time until the exact sum fits
/// inside `total`. Float rounding in a proportional split overshoots by a few
/// ulps at most, so this terminates quickly.
pub fn fit_within(values: &mut [f64], total: f64) {
    while !sum_within(values, total) {
        let (idx, _) = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty budget");
        values[idx] = values[idx].next_down();
    }
}

/// Largest relative overshoot of a sum of decimal inputs that is attributed
/// to binary representation (e.g. `3 * 0.01` against `0.03`).
pub const REPRESENTATION_SLACK: f64 = 1e-12;

/// Like [`fit_within`], but refuses overshoots beyond
/// [`REPRESENTATION_SLACK`] relative to `total`. Returns whether the values fit.
pub fn reconcile(values: &mut [f64], total: f64) -> bool {
    if sum_within(values, total) {
        return true;
    }
    let sum: f64 = values.iter().sum();
    if !sum.is_finite() || sum - total > REPRESENTATION_SLACK * total {
        return false;
    }
    fit_within(values, total);
    true
}

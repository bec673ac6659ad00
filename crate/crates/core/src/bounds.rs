//! Sample-size bounds for scenario programs.
//!
//! The implicit bound is the smallest `N` such that the probability of seeing
//! fewer than `dim` "successes" in `N` Bernoulli(`epsilon`) trials is at most
//! `beta`. The explicit bound is a closed-form upper bound on it.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

/// Default cap on the sample count returned by [`exact_sample_size`].
pub const DEFAULT_SAMPLE_CAP: u64 = 100_000_000;

/// `e / (e - 1)`, the leading constant of the explicit bound.
pub const EXPLICIT_FACTOR: f64 = std::f64::consts::E / (std::f64::consts::E - 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub epsilon: f64,
    pub beta: f64,
    pub dim: u64,
}

impl BoundQuery {
    pub fn new(epsilon: f64, beta: f64, dim: u64) -> Result<Self> {
        let q = BoundQuery { epsilon, beta, dim };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return domain(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if self.dim == 0 {
            return domain("dim must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    ImplicitExact,
    ExplicitClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub samples: u64,
    pub bound_kind: BoundKind,
    /// Log of the binomial tail at `samples`; only set for the implicit bound.
    pub tail_log: Option<f64>,
}

/// `ln sum_{i=0}^{k_max} C(n,i) p^i (1-p)^(n-i)`.
///
/// The largest term is evaluated with log-gamma and the remaining terms are
/// obtained by the downward ratio recurrence, then combined by log-sum-exp.
pub fn binomial_tail_log(n: u64, k_max: u64, p: f64) -> Result<f64> {
    if k_max >= n {
        return domain(format!("k_max ({k_max}) must be smaller than n ({n})"));
    }
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("p must lie in (0,1), got {p}"));
    }
    let nf = n as f64;
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_odds = ln_q - ln_p;

    // Terms increase up to the mode floor((n+1)p); start from the top term and
    // walk down.
    let k = k_max as f64;
    let mut log_term = ln_binomial(nf, k_max) + k * ln_p + (nf - k) * ln_q;
    let mut logs = Vec::with_capacity(k_max as usize + 1);
    logs.push(log_term);
    for i in (1..=k_max).rev() {
        let fi = i as f64;
        log_term += fi.ln() - (nf - fi + 1.0).ln() + ln_odds;
        logs.push(log_term);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    // Smallest terms first for a more accurate sum.
    let sum: f64 = logs.iter().rev().map(|l| (l - max).exp()).sum();
    Ok((max + sum.ln()).min(0.0))
}

/// `ln C(n, k)`; short products are summed directly so that boundary cases
/// such as `k = 0` stay exact.
fn ln_binomial(n: f64, k: u64) -> f64 {
    if k <= 64 {
        let kf = k as f64;
        (1..=k)
            .map(|j| ((n - kf + j as f64) / j as f64).ln())
            .sum()
    } else {
        let kf = k as f64;
        ln_gamma(n + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(n - kf + 1.0)
    }
}

/// Minimal `N >= dim` whose binomial tail is at most `beta`.
pub fn exact_sample_size(q: BoundQuery) -> Result<BoundResult> {
    exact_sample_size_capped(q, DEFAULT_SAMPLE_CAP)
}

pub fn exact_sample_size_capped(q: BoundQuery, cap: u64) -> Result<BoundResult> {
    q.validate()?;
    let target = q.beta.ln();
    let k_max = q.dim - 1;
    let tail = |n: u64| binomial_tail_log(n, k_max, q.epsilon);
    let cap_err = || Error::SampleCapExceeded {
        cap,
        epsilon: q.epsilon,
        beta: q.beta,
        dim: q.dim,
    };

    // N = dim - 1 has total mass 1 > beta, so the search starts at dim.
    let mut lo = q.dim - 1;
    let mut hi = q.dim;
    loop {
        if hi > cap {
            return Err(cap_err());
        }
        if tail(hi)? <= target {
            break;
        }
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(cap_err)?;
    }
    // Invariant: tail(lo) > target (or lo = dim - 1), tail(hi) <= target.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BoundResult {
        samples: hi,
        bound_kind: BoundKind::ImplicitExact,
        tail_log: Some(tail(hi)?),
    })
}

/// `ceil( e/(e-1) * (dim - 1 + ln(1/beta)) / epsilon )`.
pub fn explicit_sample_size(q: BoundQuery) -> Result<BoundResult> {
    q.validate()?;
    let value = explicit_continuous(q.epsilon, q.beta, q.dim);
    Ok(BoundResult {
        samples: (value.ceil() as u64).max(1),
        bound_kind: BoundKind::ExplicitClosedForm,
        tail_log: None,
    })
}

/// The explicit bound before rounding.
pub fn explicit_continuous(epsilon: f64, beta: f64, dim: u64) -> f64 {
    EXPLICIT_FACTOR * (dim as f64 - 1.0 - beta.ln()) / epsilon
}

pub fn sample_size(q: BoundQuery, kind: BoundKind) -> Result<BoundResult> {
    match kind {
        BoundKind::ImplicitExact => exact_sample_size(q),
        BoundKind::ExplicitClosedForm => explicit_sample_size(q),
    }
}

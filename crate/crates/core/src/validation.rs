//! Out-of-sample violation estimates for scenario solutions.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::engine::{stage_values, ScenarioSolution, UncertainProgram};
use crate::error::{domain, Error, Result};
use crate::sampling::{RngHandle, Sampler};

/// A constraint value above this counts as violated.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_VALIDATION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n_validation: u64,
    pub violations_per_stage: Vec<u64>,
    pub epsilon_hat_per_stage: Vec<f64>,
    /// Fraction of samples on which at least one stage constraint is violated.
    pub epsilon_hat_overall: f64,
    pub violations_overall: u64,
    /// One-sided Clopper-Pearson upper bound on the overall violation
    /// probability.
    pub cp_upper: f64,
    pub confidence: f64,
    pub training_streams: Vec<RngHandle>,
    pub validation_stream: RngHandle,
}

pub fn empirical_violation(
    sol: &ScenarioSolution,
    p: &UncertainProgram,
    n: usize,
    rng: RngHandle,
) -> Result<ViolationReport> {
    empirical_violation_with(sol, p, n, rng, DEFAULT_CONFIDENCE)
}

/// Draws `n` fresh samples from the program's domain and counts how often
/// each stage constraint (and their maximum) is violated at `sol`.
pub fn empirical_violation_with(
    sol: &ScenarioSolution,
    p: &UncertainProgram,
    n: usize,
    rng: RngHandle,
    confidence: f64,
) -> Result<ViolationReport> {
    if n == 0 {
        return domain("validation needs at least one sample");
    }
    if sol.stage_dims != p.stage_dims {
        return Err(Error::DimensionMismatch(format!(
            "solution blocks {:?} do not match program blocks {:?}",
            sol.stage_dims, p.stage_dims
        )));
    }
    if sol.training_streams.contains(&rng) {
        return Err(Error::StreamCollision {
            seed: rng.seed,
            stream: rng.stream_id,
        });
    }
    let m = p.stages();
    let mut sampler = Sampler::new(&p.domain, rng)?;
    let mut per_stage = vec![0u64; m];
    let mut overall = 0u64;
    for _ in 0..n {
        let delta = sampler.next_sample()?;
        let values = stage_values(p, sol, &delta)?;
        let mut any = false;
        for (count, v) in per_stage.iter_mut().zip(&values) {
            if *v > VIOLATION_TOLERANCE {
                *count += 1;
                any = true;
            }
        }
        overall += u64::from(any);
    }
    let nf = n as f64;
    Ok(ViolationReport {
        n_validation: n as u64,
        epsilon_hat_per_stage: per_stage.iter().map(|&k| k as f64 / nf).collect(),
        violations_per_stage: per_stage,
        epsilon_hat_overall: overall as f64 / nf,
        violations_overall: overall,
        cp_upper: clopper_pearson_upper(overall, n as u64, confidence)?,
        confidence,
        training_streams: sol.training_streams.clone(),
        validation_stream: rng,
    })
}

/// Smallest `p` with `P(Bin(n, p) <= k) <= 1 - conf`, i.e. the `conf`
/// quantile of `Beta(k + 1, n - k)`.
pub fn clopper_pearson_upper(k: u64, n: u64, conf: f64) -> Result<f64> {
    if n == 0 || k > n {
        return domain(format!("need 0 <= k <= n and n >= 1 (k={k}, n={n})"));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return domain(format!("confidence must lie in (0, 1), got {conf}"));
    }
    if k == n {
        return Ok(1.0);
    }
    if k == 0 {
        return Ok(1.0 - (1.0 - conf).powf(1.0 / n as f64));
    }
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let (mut lo, mut hi) = (k as f64 / n as f64, 1.0);
    // I_x(a, b) increases in x.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < conf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, Method};
use crate::bounds::{exact_sample_size, explicit_sample_size, BoundKind, BoundQuery};
use crate::budget;
use crate::error::{Error, Result};

/// Violation/confidence levels for one method run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// One `(epsilon, beta)` pair for the whole program.
    Single { epsilon: f64, beta: f64 },
    /// Per-stage levels and sample counts.
    Staged(Allocation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCertificate {
    pub epsilon: f64,
    pub beta: f64,
    pub samples: u64,
    pub dim: u64,
}

/// The probabilistic guarantee attached to a scenario solution: with
/// confidence at least `1 - beta_total`, the solution violates the constraints
/// with probability at most `epsilon_total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub method: Method,
    pub epsilon_total: f64,
    pub beta_total: f64,
    pub bound_kind: BoundKind,
    /// One entry for single-sample-set methods, one per stage otherwise.
    pub per_stage: Vec<StageCertificate>,
}

impl FeasibilityCertificate {
    pub fn total_samples(&self) -> u64 {
        self.per_stage.iter().map(|s| s.samples).sum()
    }

    /// Exact budget composition and sample-count sufficiency.
    pub fn check(&self) -> Result<()> {
        let eps: Vec<f64> = self.per_stage.iter().map(|s| s.epsilon).collect();
        let betas: Vec<f64> = self.per_stage.iter().map(|s| s.beta).collect();
        if !budget::sum_within(&eps, self.epsilon_total) {
            return Err(Error::Budget(format!(
                "stage epsilons exceed {}",
                self.epsilon_total
            )));
        }
        if !budget::sum_within(&betas, self.beta_total) {
            return Err(Error::Budget(format!("stage betas exceed {}", self.beta_total)));
        }
        for (i, s) in self.per_stage.iter().enumerate() {
            let q = BoundQuery::new(s.epsilon, s.beta, s.dim)?;
            let required = match self.bound_kind {
                BoundKind::ImplicitExact => exact_sample_size(q)?.samples,
                BoundKind::ExplicitClosedForm => explicit_sample_size(q)?.samples,
            };
            if s.samples < required {
                return Err(Error::Budget(format!(
                    "stage {i} uses {} samples, bound requires {required}",
                    s.samples
                )));
            }
        }
        Ok(())
    }
}

/// Certificate (and hence sample plan) for `method` without solving.
pub fn certify(method: Method, budget: &Budget, dims: &[usize]) -> Result<FeasibilityCertificate> {
    if dims.is_empty() {
        return Err(Error::DimensionMismatch("no stages".into()));
    }
    let cert = match (method.uses_shared_samples(), budget) {
        (true, Budget::Single { epsilon, beta }) => {
            let d: usize = dims.iter().sum();
            let q = BoundQuery::new(*epsilon, *beta, d as u64)?;
            let s = exact_sample_size(q)?;
            FeasibilityCertificate {
                method,
                epsilon_total: *epsilon,
                beta_total: *beta,
                bound_kind: BoundKind::ImplicitExact,
                per_stage: vec![StageCertificate {
                    epsilon: *epsilon,
                    beta: *beta,
                    samples: s.samples,
                    dim: d as u64,
                }],
            }
        }
        (false, Budget::Staged(a)) => {
            let expected: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
            if a.dims != expected {
                return Err(Error::DimensionMismatch(format!(
                    "allocation dims {:?} do not match program dims {expected:?}",
                    a.dims
                )));
            }
            FeasibilityCertificate {
                method,
                epsilon_total: a.epsilon_total,
                beta_total: a.beta_total,
                bound_kind: BoundKind::ExplicitClosedForm,
                per_stage: (0..a.stages())
                    .map(|i| StageCertificate {
                        epsilon: a.epsilons[i],
                        beta: a.betas[i],
                        samples: a.stage_samples[i],
                        dim: a.dims[i],
                    })
                    .collect(),
            }
        }
        (true, Budget::Staged(_)) => {
            return Err(Error::Budget(format!(
                "{method} takes a single (epsilon, beta) budget"
            )))
        }
        (false, Budget::Single { .. }) => {
            return Err(Error::Budget(format!("{method} takes a per-stage allocation")))
        }
    };
    cert.check()?;
    Ok(cert)
}

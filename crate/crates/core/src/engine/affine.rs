use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::program::{dot, AffineRow, Coupling, UncertainProgram};
use crate::error::{Error, Result};
use crate::sampling::UncertaintyDomain;

/// Stage constraint whose coefficients are affine in the uncertainty:
///
/// `(own_offset + own_matrix d) . x_i + (next_offset + next_matrix d) . x_{i+1}
///  + constant + constant_coeffs . d <= 0`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineStage {
    pub cost: Vec<f64>,
    pub own_offset: Vec<f64>,
    /// `d_i x w` rows, one per decision variable.
    #[serde(default)]
    pub own_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub next_offset: Option<Vec<f64>>,
    #[serde(default)]
    pub next_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub constant_coeffs: Option<Vec<f64>>,
}

/// File form of a generic uncertain program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineProgramSpec {
    pub coupling: Coupling,
    pub domain: UncertaintyDomain,
    pub stages: Vec<AffineStage>,
    #[serde(default)]
    pub var_bound: Option<f64>,
}

fn affine(offset: &[f64], matrix: Option<&Vec<Vec<f64>>>, delta: &[f64]) -> Vec<f64> {
    match matrix {
        Some(mat) => offset
            .iter()
            .zip(mat)
            .map(|(o, row)| o + dot(row, delta))
            .collect(),
        None => offset.to_vec(),
    }
}

impl AffineProgramSpec {
    pub fn build(&self) -> Result<UncertainProgram> {
        let w = self.domain.dim();
        let m = self.stages.len();
        for (i, s) in self.stages.iter().enumerate() {
            let d = s.cost.len();
            let bad = |what: &str| {
                Err(Error::DimensionMismatch(format!("stage {}: {what}", i + 1)))
            };
            if s.own_offset.len() != d {
                return bad("own_offset length differs from cost length");
            }
            if let Some(mat) = &s.own_matrix {
                if mat.len() != d || mat.iter().any(|r| r.len() != w) {
                    return bad("own_matrix must be d_i x dim(domain)");
                }
            }
            if let Some(c) = &s.constant_coeffs {
                if c.len() != w {
                    return bad("constant_coeffs must have dim(domain) entries");
                }
            }
            let has_next = s.next_offset.is_some() || s.next_matrix.is_some();
            if has_next {
                if self.coupling != Coupling::PairwiseCoupled || i + 1 == m {
                    return bad("only non-final stages of a pairwise-coupled program may reference the next block");
                }
                let dn = self.stages[i + 1].cost.len();
                if s.next_offset.as_ref().is_some_and(|o| o.len() != dn) {
                    return bad("next_offset length differs from next block");
                }
                if let Some(mat) = &s.next_matrix {
                    if mat.len() != dn || mat.iter().any(|r| r.len() != w) {
                        return bad("next_matrix must be d_(i+1) x dim(domain)");
                    }
                }
            }
        }
        let stages = self.stages.clone();
        let dims: Vec<usize> = stages.iter().map(|s| s.cost.len()).collect();
        let builder = move |stage: usize, delta: &[f64]| {
            let s = &stages[stage];
            let own = affine(&s.own_offset, s.own_matrix.as_ref(), delta);
            let next = if s.next_offset.is_some() || s.next_matrix.is_some() {
                let zeros = vec![0.0; dims[stage + 1]];
                let offset = s.next_offset.as_deref().unwrap_or(&zeros);
                affine(offset, s.next_matrix.as_ref(), delta)
            } else {
                Vec::new()
            };
            let constant = s.constant
                + s.constant_coeffs
                    .as_deref()
                    .map(|c| dot(c, delta))
                    .unwrap_or(0.0);
            AffineRow {
                own,
                next,
                constant,
            }
        };
        let mut program = UncertainProgram::new(
            self.stages.iter().map(|s| s.cost.clone()).collect(),
            self.coupling,
            self.domain.clone(),
            Arc::new(builder),
        );
        program.var_bound = self.var_bound;
        program.validate()?;
        Ok(program)
    }
}

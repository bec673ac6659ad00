use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::LpStandardForm;
use crate::sampling::UncertaintyDomain;

/// One sampled constraint `own . x_i + next . x_{i+1} + constant <= 0`.
///
/// `next` is empty for constraints that only involve their own block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRow {
    pub own: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub next: Vec<f64>,
    pub constant: f64,
}

impl AffineRow {
    pub fn value(&self, own: &[f64], next: Option<&[f64]>) -> f64 {
        let mut v = self.constant + dot(&self.own, own);
        if let Some(next) = next {
            v += dot(&self.next, next);
        }
        v
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.own.iter().chain(&self.next).all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Renders the sampled constraint function of each stage as an affine row.
pub trait ConstraintBuilder: Send + Sync {
    fn row(&self, stage: usize, delta: &[f64]) -> AffineRow;
}

impl<F> ConstraintBuilder for F
where
    F: Fn(usize, &[f64]) -> AffineRow + Send + Sync,
{
    fn row(&self, stage: usize, delta: &[f64]) -> AffineRow {
        self(stage, delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Constraint `i` depends only on block `i`.
    IndependentDomains,
    /// Constraint `i` depends on blocks `i` and `i + 1`; the last constraint
    /// depends on its own block only.
    PairwiseCoupled,
}

/// A robust program with a separable linear cost over `M` decision blocks
/// and one uncertain constraint function per block.
#[derive(Clone)]
pub struct UncertainProgram {
    pub stage_dims: Vec<usize>,
    pub stage_costs: Vec<Vec<f64>>,
    pub coupling: Coupling,
    pub domain: UncertaintyDomain,
    pub builder: Arc<dyn ConstraintBuilder>,
    /// Symmetric box `|x_j| <= bound` on every decision variable.
    pub var_bound: Option<f64>,
}

impl fmt::Debug for UncertainProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UncertainProgram")
            .field("stage_dims", &self.stage_dims)
            .field("coupling", &self.coupling)
            .field("domain", &self.domain)
            .field("var_bound", &self.var_bound)
            .finish_non_exhaustive()
    }
}

impl UncertainProgram {
    pub fn new(
        stage_costs: Vec<Vec<f64>>,
        coupling: Coupling,
        domain: UncertaintyDomain,
        builder: Arc<dyn ConstraintBuilder>,
    ) -> Self {
        UncertainProgram {
            stage_dims: stage_costs.iter().map(Vec::len).collect(),
            stage_costs,
            coupling,
            domain,
            builder,
            var_bound: None,
        }
    }

    pub fn with_var_bound(mut self, bound: f64) -> Self {
        self.var_bound = Some(bound);
        self
    }

    pub fn stages(&self) -> usize {
        self.stage_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.stage_dims.iter().sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.stage_dims
            .iter()
            .map(|d| {
                let o = acc;
                acc += d;
                o
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_dims.is_empty() {
            return Err(Error::DimensionMismatch("program has no stages".into()));
        }
        if self.stage_dims.contains(&0) {
            return Err(Error::DimensionMismatch("stage blocks must be non-empty".into()));
        }
        if self.stage_costs.len() != self.stage_dims.len()
            || self
                .stage_costs
                .iter()
                .zip(&self.stage_dims)
                .any(|(c, &d)| c.len() != d)
        {
            return Err(Error::DimensionMismatch(
                "stage costs do not match stage dimensions".into(),
            ));
        }
        if self.stage_costs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("stage costs must be finite".into()));
        }
        if let Some(b) = self.var_bound {
            if !(b > 0.0) {
                return Err(Error::Domain("variable bound must be positive".into()));
            }
        }
        self.domain.validate()
    }

    /// The sampled row of stage `stage`, checked against the coupling.
    pub fn row(&self, stage: usize, delta: &[f64]) -> Result<AffineRow> {
        let row = self.builder.row(stage, delta);
        let m = self.stages();
        if row.own.len() != self.stage_dims[stage] {
            return Err(Error::DimensionMismatch(format!(
                "stage {stage} row has {} own coefficients, expected {}",
                row.own.len(),
                self.stage_dims[stage]
            )));
        }
        let coupled = self.coupling == Coupling::PairwiseCoupled && stage + 1 < m;
        if !row.next.is_empty() {
            if !coupled {
                return Err(Error::DimensionMismatch(format!(
                    "stage {stage} constraint may not depend on another block"
                )));
            }
            if row.next.len() != self.stage_dims[stage + 1] {
                return Err(Error::DimensionMismatch(format!(
                    "stage {stage} row has {} next-block coefficients, expected {}",
                    row.next.len(),
                    self.stage_dims[stage + 1]
                )));
            }
        }
        if !row.is_finite() {
            return Err(Error::Domain(format!("stage {stage} row is not finite")));
        }
        Ok(row)
    }

    fn bounds(&self, n: usize) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        match self.var_bound {
            Some(b) => (Some(vec![-b; n]), Some(vec![b; n])),
            None => (None, None),
        }
    }

    /// The single LP over all blocks, with stage `i` enforced on `sets[i]`.
    pub fn assemble_combined(&self, sets: &[&[Vec<f64>]]) -> Result<LpStandardForm> {
        let m = self.stages();
        if sets.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} sample sets for {m} stages",
                sets.len()
            )));
        }
        let n = self.total_dim();
        let offsets = self.offsets();
        let rows_total: usize = sets.iter().map(|s| s.len()).sum();
        let mut matrix = Vec::with_capacity(rows_total);
        let mut rhs = Vec::with_capacity(rows_total);
        for (stage, set) in sets.iter().enumerate() {
            for delta in set.iter() {
                let row = self.row(stage, delta)?;
                let mut full = vec![0.0; n];
                full[offsets[stage]..offsets[stage] + row.own.len()].copy_from_slice(&row.own);
                if !row.next.is_empty() {
                    let o = offsets[stage + 1];
                    full[o..o + row.next.len()].copy_from_slice(&row.next);
                }
                matrix.push(full);
                rhs.push(-row.constant);
            }
        }
        let (lower, upper) = self.bounds(n);
        Ok(
            LpStandardForm::new(self.stage_costs.concat(), matrix, rhs)
                .with_bounds(lower, upper),
        )
    }

    /// The LP of one stage with the next block fixed at `next`.
    pub fn assemble_stage(
        &self,
        stage: usize,
        set: &[Vec<f64>],
        next: Option<&[f64]>,
    ) -> Result<LpStandardForm> {
        let mut matrix = Vec::with_capacity(set.len());
        let mut rhs = Vec::with_capacity(set.len());
        for delta in set {
            let row = self.row(stage, delta)?;
            let shift = match (next, row.next.is_empty()) {
                (_, true) => 0.0,
                (Some(x), false) => dot(&row.next, x),
                (None, false) => {
                    return Err(Error::DimensionMismatch(format!(
                        "stage {stage} is coupled but no next block was given"
                    )))
                }
            };
            rhs.push(-row.constant - shift);
            matrix.push(row.own);
        }
        let (lower, upper) = self.bounds(self.stage_dims[stage]);
        Ok(LpStandardForm::new(self.stage_costs[stage].clone(), matrix, rhs)
            .with_bounds(lower, upper))
    }
}

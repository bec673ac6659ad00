//! Splitting an overall violation/confidence budget across stages so that the
//! total number of samples is as small as possible, plus the cubic cost model
//! used to compare the four scenario methods.

use serde::{Deserialize, Serialize};

use crate::bounds::{explicit_sample_size, BoundQuery, EXPLICIT_FACTOR};
use crate::budget;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub epsilon_total: f64,
    pub beta_total: f64,
    pub dims: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_fixed: Option<Vec<f64>>,
}

impl AllocationProblem {
    pub fn new(epsilon_total: f64, beta_total: f64, dims: Vec<u64>) -> Self {
        AllocationProblem {
            epsilon_total,
            beta_total,
            dims,
            beta_fixed: None,
        }
    }

    pub fn with_fixed_betas(mut self, betas: Vec<f64>) -> Self {
        self.beta_fixed = Some(betas);
        self
    }

    /// Fixed stage confidences `beta_total / M`.
    pub fn with_uniform_betas(self) -> Self {
        let m = self.dims.len();
        let mut betas = vec![self.beta_total / m as f64; m];
        budget::fit_within(&mut betas, self.beta_total);
        self.with_fixed_betas(betas)
    }

    pub fn validate(&self) -> Result<()> {
        in_unit("epsilon_total", self.epsilon_total)?;
        in_unit("beta_total", self.beta_total)?;
        if self.dims.is_empty() {
            return domain("at least one stage is required");
        }
        if self.dims.contains(&0) {
            return domain("stage dimensions must be positive");
        }
        if let Some(betas) = &self.beta_fixed {
            if betas.len() != self.dims.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} fixed betas for {} stages",
                    betas.len(),
                    self.dims.len()
                )));
            }
            for &b in betas {
                in_unit("beta_fixed", b)?;
            }
            if !budget::reconcile(&mut betas.clone(), self.beta_total) {
                return Err(Error::Budget(format!(
                    "fixed stage betas sum above beta_total = {}",
                    self.beta_total
                )));
            }
        }
        Ok(())
    }
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        domain(format!("{name} must lie in (0,1), got {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub epsilon_total: f64,
    pub beta_total: f64,
    pub dims: Vec<u64>,
    pub epsilons: Vec<f64>,
    pub betas: Vec<f64>,
    pub stage_samples: Vec<u64>,
    pub total_samples: u64,
    /// Continuous objective `sum_i c_i / epsilon_i` before rounding.
    pub objective: f64,
}

impl Allocation {
    /// Builds an allocation from given stage levels, checking the budgets
    /// exactly and sizing each stage with the explicit bound.
    pub fn from_levels(
        epsilon_total: f64,
        beta_total: f64,
        dims: Vec<u64>,
        epsilons: Vec<f64>,
        betas: Vec<f64>,
    ) -> Result<Self> {
        if epsilons.len() != dims.len() || betas.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} epsilons / {} betas for {} stages",
                epsilons.len(),
                betas.len(),
                dims.len()
            )));
        }
        if !budget::sum_within(&epsilons, epsilon_total) {
            return Err(Error::Budget(format!(
                "stage epsilons sum above {epsilon_total}"
            )));
        }
        if !budget::sum_within(&betas, beta_total) {
            return Err(Error::Budget(format!("stage betas sum above {beta_total}")));
        }
        let mut stage_samples = Vec::with_capacity(dims.len());
        for ((&e, &b), &d) in epsilons.iter().zip(&betas).zip(&dims) {
            stage_samples.push(explicit_sample_size(BoundQuery::new(e, b, d)?)?.samples);
        }
        let objective = joint_objective(&epsilons, &betas, &dims);
        Ok(Allocation {
            epsilon_total,
            beta_total,
            total_samples: stage_samples.iter().sum(),
            dims,
            epsilons,
            betas,
            stage_samples,
            objective,
        })
    }

    /// Even split `epsilon/M`, `beta/M`.
    pub fn uniform(p: &AllocationProblem) -> Result<Self> {
        p.validate()?;
        let m = p.dims.len();
        let mut eps = vec![p.epsilon_total / m as f64; m];
        let mut betas = vec![p.beta_total / m as f64; m];
        budget::fit_within(&mut eps, p.epsilon_total);
        budget::fit_within(&mut betas, p.beta_total);
        Allocation::from_levels(p.epsilon_total, p.beta_total, p.dims.clone(), eps, betas)
    }

    pub fn stages(&self) -> usize {
        self.dims.len()
    }
}

/// `c_i = e/(e-1) (d_i - 1 + ln(1/beta_i))`.
pub fn stage_constant(dim: u64, beta: f64) -> f64 {
    EXPLICIT_FACTOR * (dim as f64 - 1.0 - beta.ln())
}

/// `sum_i c_i(beta_i) / epsilon_i`.
pub fn joint_objective(epsilons: &[f64], betas: &[f64], dims: &[u64]) -> f64 {
    epsilons
        .iter()
        .zip(betas)
        .zip(dims)
        .map(|((&e, &b), &d)| stage_constant(d, b) / e)
        .sum()
}

/// Optimal violation split for pre-fixed stage confidences.
///
/// Minimizing `sum c_i / epsilon_i` over `sum epsilon_i <= epsilon` has the
/// stationary point `epsilon_i = epsilon sqrt(c_i) / sum_j sqrt(c_j)`, with
/// optimal value `(sum_j sqrt(c_j))^2 / epsilon`.
pub fn allocate_fixed_beta(p: &AllocationProblem) -> Result<Allocation> {
    p.validate()?;
    let mut betas = match &p.beta_fixed {
        Some(b) => b.clone(),
        None => return domain("allocate_fixed_beta requires fixed stage betas"),
    };
    budget::reconcile(&mut betas, p.beta_total);
    let roots = p
        .dims
        .iter()
        .zip(&betas)
        .map(|(&d, &b)| {
            let c = stage_constant(d, b);
            if c > 0.0 {
                Ok(c.sqrt())
            } else {
                domain(format!("non-positive stage constant {c}"))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let root_sum: f64 = roots.iter().sum();
    let mut epsilons: Vec<f64> = roots
        .iter()
        .map(|r| p.epsilon_total * r / root_sum)
        .collect();
    budget::fit_within(&mut epsilons, p.epsilon_total);
    let mut alloc =
        Allocation::from_levels(p.epsilon_total, p.beta_total, p.dims.clone(), epsilons, betas)?;
    alloc.objective = root_sum * root_sum / p.epsilon_total;
    Ok(alloc)
}

/// Settings for [`allocate_joint`].
#[derive(Debug, Clone, Copy)]
pub struct JointOptions {
    /// Lower bound on every stage level.
    pub mu: f64,
    pub max_iterations: usize,
    /// Relative objective change that counts as converged...
    pub tolerance: f64,
    /// ...when measured across this many iterations.
    pub window: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions {
            mu: 1e-9,
            max_iterations: 1_000_000,
            tolerance: 1e-10,
            window: 50,
        }
    }
}

pub fn allocate_joint(p: &AllocationProblem) -> Result<Allocation> {
    allocate_joint_with(p, JointOptions::default())
}

/// Joint choice of stage violation and confidence levels by projected
/// gradient descent with a diminishing step.
///
/// Each budget block lives in `{x >= mu, sum x <= total}`; the two blocks are
/// stepped with their own scale since the confidences are typically much
/// smaller than the violation levels.
pub fn allocate_joint_with(p: &AllocationProblem, opts: JointOptions) -> Result<Allocation> {
    p.validate()?;
    if p.beta_fixed.is_some() {
        return domain("allocate_joint optimizes the betas; drop beta_fixed");
    }
    let m = p.dims.len();
    let mut eps = vec![p.epsilon_total / m as f64; m];
    let mut betas = vec![p.beta_total / m as f64; m];
    let dims = &p.dims;

    let grad = |eps: &[f64], betas: &[f64], ge: &mut [f64], gb: &mut [f64]| {
        for i in 0..m {
            let c = stage_constant(dims[i], betas[i]);
            ge[i] = -c / (eps[i] * eps[i]);
            gb[i] = -EXPLICIT_FACTOR / (eps[i] * betas[i]);
        }
    };

    let mut ge = vec![0.0; m];
    let mut gb = vec![0.0; m];
    grad(&eps, &betas, &mut ge, &mut gb);
    // Initial steps move each block by at most a tenth of its budget share.
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let step_eps = 0.1 * p.epsilon_total / m as f64 / inf_norm(&ge).max(f64::MIN_POSITIVE);
    let step_beta = 0.1 * p.beta_total / m as f64 / inf_norm(&gb).max(f64::MIN_POSITIVE);

    let mut history = std::collections::VecDeque::with_capacity(opts.window + 1);
    let mut objective = joint_objective(&eps, &betas, dims);
    history.push_back(objective);
    let mut best = (objective, eps.clone(), betas.clone());

    for k in 0..opts.max_iterations {
        let decay = 1.0 / (1.0 + k as f64 / 1000.0).sqrt();
        grad(&eps, &betas, &mut ge, &mut gb);
        for i in 0..m {
            eps[i] -= step_eps * decay * ge[i];
            betas[i] -= step_beta * decay * gb[i];
        }
        project_capped_simplex(&mut eps, opts.mu, p.epsilon_total);
        project_capped_simplex(&mut betas, opts.mu, p.beta_total);
        // The box is half-open at 1.
        for v in eps.iter_mut().chain(betas.iter_mut()) {
            *v = v.min(1.0f64.next_down());
        }
        objective = joint_objective(&eps, &betas, dims);
        if objective < best.0 {
            best = (objective, eps.clone(), betas.clone());
        }
        history.push_back(objective);
        if history.len() > opts.window {
            let old = history.pop_front().expect("non-empty");
            if ((old - objective) / objective).abs() < opts.tolerance {
                let (_, mut eps, mut betas) = best;
                budget::fit_within(&mut eps, p.epsilon_total);
                budget::fit_within(&mut betas, p.beta_total);
                return Allocation::from_levels(
                    p.epsilon_total,
                    p.beta_total,
                    p.dims.clone(),
                    eps,
                    betas,
                );
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
    })
}

/// Euclidean projection onto `{x : x_i >= lower, sum x_i <= total}`.
pub fn project_capped_simplex(x: &mut [f64], lower: f64, total: f64) {
    let clipped: f64 = x.iter().map(|v| v.max(lower)).sum();
    if clipped <= total {
        for v in x.iter_mut() {
            *v = v.max(lower);
        }
        return;
    }
    // Project onto {x >= lower, sum x = total} by shifting to the simplex.
    let n = x.len();
    let radius = total - lower * n as f64;
    let mut sorted: Vec<f64> = x.iter().map(|v| v - lower).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - radius) / (j + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = lower + (*v - lower - theta).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    Multistage,
    RecursiveShared,
    RecursiveResampled,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Standard,
        Method::Multistage,
        Method::RecursiveShared,
        Method::RecursiveResampled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Multistage => "multistage",
            Method::RecursiveShared => "recursive_shared",
            Method::RecursiveResampled => "recursive_resampled",
        }
    }

    /// Whether the method uses one shared sample set sized with the implicit
    /// bound, as opposed to per-stage sets from an allocation.
    pub fn uses_shared_samples(self) -> bool {
        matches!(self, Method::Standard | Method::RecursiveShared)
    }

    pub fn is_recursive(self) -> bool {
        matches!(self, Method::RecursiveShared | Method::RecursiveResampled)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown method `{s}`")))
    }
}

/// Cubic interior-point cost model for each method.
///
/// `samples` holds one shared count for the standard and recursive-shared
/// methods, or one count per stage otherwise. `stages` is the number of
/// constraint functions `M`.
pub fn predict_complexity(method: Method, dims: &[u64], samples: &[u64], stages: usize) -> Result<f64> {
    if dims.is_empty() || samples.is_empty() {
        return domain("dims and samples must be non-empty");
    }
    let d_total: f64 = dims.iter().map(|&d| d as f64).sum();
    let cube = |v: f64| v * v * v;
    let shared = || -> Result<f64> {
        if samples.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "{method} takes one shared sample count, got {}",
                samples.len()
            )));
        }
        Ok(samples[0] as f64)
    };
    let per_stage = || -> Result<&[u64]> {
        if samples.len() != dims.len() || dims.len() != stages {
            return Err(Error::DimensionMismatch(format!(
                "{method} takes per-stage samples: {} dims, {} samples, M = {stages}",
                dims.len(),
                samples.len()
            )));
        }
        Ok(samples)
    };
    Ok(match method {
        Method::Standard => cube(d_total + stages as f64 * shared()?),
        Method::Multistage => cube(d_total + per_stage()?.iter().sum::<u64>() as f64),
        Method::RecursiveShared => {
            if dims.len() != stages {
                return Err(Error::DimensionMismatch(format!(
                    "{} dims for M = {stages}",
                    dims.len()
                )));
            }
            let s = shared()?;
            dims.iter().map(|&d| cube(d as f64 + s)).sum()
        }
        Method::RecursiveResampled => per_stage()?
            .iter()
            .zip(dims)
            .map(|(&s, &d)| cube((d + s) as f64))
            .sum(),
    })
}

//! Approximate dynamic programming for a three-step stochastic reach-avoid
//! problem on a planar unicycle, posed as coupled robust linear programs over
//! Gaussian radial basis function weights.
//!
//! Stage `i` asks that the approximate value `V_i(y) = x_i . phi_i(y)`
//! dominate the one-step reward
//!
//! `h_i(y, u) = 1_T(y) + 1_{(S_i \ A) \ T}(y) E[V_{i+1}(f(y, u) + w)]`
//!
//! for every state-input pair, with `V_{H+1} = 1_T`. As a scenario constraint
//! this is `-phi_i(y) . x_i + 1_{(S_i \ A) \ T}(y) e_{i+1}(y, u) . x_{i+1} + 1_T(y) <= 0`
//! where `e_{i+1}` holds the Gaussian expectations of the next basis.
//!
//! Samples live on a latent space `[0, 1]^2 x U`: stage `i` maps the latent
//! state affinely onto `S_i`, so each stage sees states uniform on its own
//! safe set while single-set methods still share one draw across stages.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::allocation::{Allocation, Method};
use crate::engine::{solve, AffineRow, Budget, Coupling, EngineOptions, ScenarioSolution, UncertainProgram};
use crate::error::{domain, Error, Result};
use crate::sampling::{RngHandle, UncertaintyDomain};
use crate::validation::{empirical_violation_with, ViolationReport, DEFAULT_CONFIDENCE};

/// Stream id of the validation draw; training uses streams `0..M`.
pub const VALIDATION_STREAM: u64 = 1 << 40;
/// Stream id used to place the basis functions.
pub const BASIS_STREAM: u64 = 1 << 41;

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Rect {
    pub const fn new(lower: [f64; 2], upper: [f64; 2]) -> Self {
        Rect { lower, upper }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.lower[k] && p[k] <= self.upper[k])
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.lower) && self.contains(other.upper)
    }

    fn is_valid(&self) -> bool {
        (0..2).all(|k| {
            self.lower[k].is_finite() && self.upper[k].is_finite() && self.lower[k] <= self.upper[k]
        })
    }

    /// The point with relative coordinates `z` in `[0, 1]^2`.
    pub fn lerp(&self, z: [f64; 2]) -> [f64; 2] {
        [
            self.lower[0] + z[0] * (self.upper[0] - self.lower[0]),
            self.lower[1] + z[1] * (self.upper[1] - self.lower[1]),
        ]
    }
}

/// Missing fields in a serialized spec take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachAvoidSpec {
    pub target: Rect,
    pub avoid: Rect,
    /// `S_1, ..., S_H`.
    pub safe_sets: Vec<Rect>,
    pub horizon: usize,
    /// Diagonal of the noise covariance.
    pub noise_cov: [f64; 2],
    /// Yaw angle range (first coordinate) and speed range (second).
    pub input_box: Rect,
    /// Optional box `|x_j| <= bound` on the basis weights.
    #[serde(default)]
    pub weight_bound: Option<f64>,
}

impl Default for ReachAvoidSpec {
    fn default() -> Self {
        ReachAvoidSpec {
            target: Rect::new([0.8, 0.8], [1.0, 1.0]),
            avoid: Rect::new([-0.45, -0.2], [0.25, 0.15]),
            safe_sets: vec![
                Rect::new([-1.0, -1.0], [1.0, 1.0]),
                Rect::new([-0.3, -0.3], [1.0, 1.0]),
                Rect::new([0.4, 0.4], [1.0, 1.0]),
            ],
            horizon: 3,
            noise_cov: [0.01, 0.01],
            input_box: Rect::new([-2.0 * PI, -0.5], [2.0 * PI, 0.5]),
            weight_bound: None,
        }
    }
}

/// Where a state falls for the purpose of the one-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Avoid,
    Target,
    /// `(S_i \ A) \ T`: the reward is the expected next value.
    Safe,
    Outside,
}

impl ReachAvoidSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return domain("horizon must be at least 1");
        }
        if self.safe_sets.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "{} safe sets for horizon {}",
                self.safe_sets.len(),
                self.horizon
            )));
        }
        let rects = [&self.target, &self.avoid, &self.input_box]
            .into_iter()
            .chain(&self.safe_sets);
        for r in rects {
            if !r.is_valid() {
                return domain(format!("rectangle {r:?} must be finite and ordered"));
            }
        }
        if self.noise_cov.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return domain("noise variances must be positive");
        }
        for (i, s) in self.safe_sets.iter().enumerate() {
            if !s.contains_rect(&self.target) {
                return domain(format!("target is not inside safe set {}", i + 1));
            }
        }
        if let Some(b) = self.weight_bound {
            if !(b > 0.0) {
                return domain("weight bound must be positive");
            }
        }
        Ok(())
    }

    /// Region of `y` at 1-based `stage`; the avoid set wins ties.
    pub fn classify(&self, stage: usize, y: [f64; 2]) -> Region {
        if self.avoid.contains(y) {
            Region::Avoid
        } else if self.target.contains(y) {
            Region::Target
        } else if self.safe_sets[stage - 1].contains(y) {
            Region::Safe
        } else {
            Region::Outside
        }
    }

    /// Latent sample distribution: relative state in `[0, 1]^2`, then input.
    pub fn latent_domain(&self) -> UncertaintyDomain {
        UncertaintyDomain::Product {
            factors: vec![
                UncertaintyDomain::unit_box(2),
                UncertaintyDomain::Box {
                    lower: self.input_box.lower.to_vec(),
                    upper: self.input_box.upper.to_vec(),
                },
            ],
        }
    }

    /// State-input point `(y, u)` seen by 1-based `stage` for a latent sample.
    pub fn stage_point(&self, stage: usize, latent: &[f64]) -> [f64; 4] {
        let y = self.safe_sets[stage - 1].lerp([latent[0], latent[1]]);
        [y[0], y[1], latent[2], latent[3]]
    }
}

/// Noise-free successor `(x + v cos theta, y + v sin theta)`.
pub fn dynamics_mean(state: [f64; 2], input: [f64; 2]) -> [f64; 2] {
    let [theta, v] = input;
    [state[0] + v * theta.cos(), state[1] + v * theta.sin()]
}

/// `exp(-|y - c|^2 / (2 variance))`.
pub fn rbf(center: [f64; 2], variance: f64, y: [f64; 2]) -> f64 {
    let d0 = y[0] - center[0];
    let d1 = y[1] - center[1];
    (-(d0 * d0 + d1 * d1) / (2.0 * variance)).exp()
}

/// `E[rbf(c, variance, Y)]` for `Y ~ N(mean, diag(noise_cov))`.
pub fn expected_basis_value(
    center: [f64; 2],
    variance: f64,
    mean: [f64; 2],
    noise_cov: [f64; 2],
) -> Result<f64> {
    if !(variance > 0.0) || noise_cov.iter().any(|v| !(*v >= 0.0)) {
        return domain("variance must be positive and noise variances non-negative");
    }
    Ok((0..2)
        .map(|k| {
            let s = variance + noise_cov[k];
            let d = mean[k] - center[k];
            (variance / s).sqrt() * (-d * d / (2.0 * s)).exp()
        })
        .product())
}

/// Standard normal CDF.
fn phi_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `P(lo <= X <= hi)` for `X ~ N(mean, sd^2)`.
fn interval_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    // Evaluate in the tail that keeps both terms small.
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if a > 0.0 {
        phi_cdf(-a) - phi_cdf(-b)
    } else {
        phi_cdf(b) - phi_cdf(a)
    }
}

/// Probability that `N(mean, diag(noise_cov))` lands in `r`.
pub fn gaussian_rect_mass(r: &Rect, mean: [f64; 2], noise_cov: [f64; 2]) -> f64 {
    (0..2)
        .map(|k| interval_mass(r.lower[k], r.upper[k], mean[k], noise_cov[k].sqrt()))
        .product()
}

/// Gaussian basis functions for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfBasis {
    pub centers: Vec<Vec<[f64; 2]>>,
    pub variances: Vec<Vec<f64>>,
}

impl RbfBasis {
    /// Centers uniform on each safe set, variances uniform on
    /// `(0, variance_max]`.
    pub fn sample(
        spec: &ReachAvoidSpec,
        dims: &[usize],
        variance_max: f64,
        rng: RngHandle,
    ) -> Result<Self> {
        spec.validate()?;
        if dims.len() != spec.horizon {
            return Err(Error::DimensionMismatch(format!(
                "{} basis sizes for horizon {}",
                dims.len(),
                spec.horizon
            )));
        }
        if !(variance_max > 0.0 && variance_max.is_finite()) {
            return domain("variance range must be (0, v] with v > 0");
        }
        let mut g = rng.generator();
        let mut centers = Vec::with_capacity(dims.len());
        let mut variances = Vec::with_capacity(dims.len());
        for (s, &d) in spec.safe_sets.iter().zip(dims) {
            let mut c = Vec::with_capacity(d);
            let mut v = Vec::with_capacity(d);
            for _ in 0..d {
                c.push(s.lerp([g.random::<f64>(), g.random::<f64>()]));
                // 1 - U lies in (0, 1].
                v.push(variance_max * (1.0 - g.random::<f64>()));
            }
            centers.push(c);
            variances.push(v);
        }
        let basis = RbfBasis { centers, variances };
        basis.validate()?;
        Ok(basis)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.centers.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.len() != self.variances.len()
            || self
                .centers
                .iter()
                .zip(&self.variances)
                .any(|(c, v)| c.len() != v.len())
        {
            return Err(Error::DimensionMismatch(
                "every center needs one variance".into(),
            ));
        }
        if self.centers.iter().any(Vec::is_empty) {
            return Err(Error::DimensionMismatch("empty basis stage".into()));
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return domain("basis variances must be positive");
        }
        if self.centers.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return domain("basis centers must be finite");
        }
        Ok(())
    }

    /// `phi_i(y)` at 1-based `stage`.
    pub fn features(&self, stage: usize, y: [f64; 2]) -> Vec<f64> {
        let i = stage - 1;
        self.centers[i]
            .iter()
            .zip(&self.variances[i])
            .map(|(&c, &v)| rbf(c, v, y))
            .collect()
    }

    /// `E[phi_i(Y)]` for `Y ~ N(mean, diag(noise_cov))`.
    pub fn expected_features(&self, stage: usize, mean: [f64; 2], noise_cov: [f64; 2]) -> Vec<f64> {
        let i = stage - 1;
        self.centers[i]
            .iter()
            .zip(&self.variances[i])
            .map(|(&c, &v)| expected_basis_value(c, v, mean, noise_cov).expect("validated basis"))
            .collect()
    }
}

/// Basis weights per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueWeights {
    pub stages: Vec<Vec<f64>>,
}

impl ValueWeights {
    /// `V_i(y)` at 1-based `stage`.
    pub fn value(&self, basis: &RbfBasis, stage: usize, y: [f64; 2]) -> f64 {
        basis
            .features(stage, y)
            .iter()
            .zip(&self.stages[stage - 1])
            .map(|(p, w)| p * w)
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-step reward at 1-based `stage`. `next_weights` is ignored at the last
/// stage, where the continuation is the probability of landing in `T`.
pub fn reward_h(
    delta: [f64; 4],
    stage: usize,
    next_weights: &[f64],
    basis: &RbfBasis,
    spec: &ReachAvoidSpec,
) -> f64 {
    let y = [delta[0], delta[1]];
    match spec.classify(stage, y) {
        Region::Target => 1.0,
        Region::Avoid | Region::Outside => 0.0,
        Region::Safe => {
            let mean = dynamics_mean(y, [delta[2], delta[3]]);
            if stage == spec.horizon {
                gaussian_rect_mass(&spec.target, mean, spec.noise_cov)
            } else {
                dot(&basis.expected_features(stage + 1, mean, spec.noise_cov), next_weights)
            }
        }
    }
}

/// The scenario row `V_i(y) >= h_i(y, u)` written as `own . x_i + next . x_{i+1} + constant <= 0`.
pub fn constraint_row(delta: [f64; 4], stage: usize, basis: &RbfBasis, spec: &ReachAvoidSpec) -> AffineRow {
    let y = [delta[0], delta[1]];
    let own: Vec<f64> = basis.features(stage, y).iter().map(|p| -p).collect();
    let last = stage == spec.horizon;
    let region = spec.classify(stage, y);
    let mean = dynamics_mean(y, [delta[2], delta[3]]);
    let next = if last {
        Vec::new()
    } else if region == Region::Safe {
        basis.expected_features(stage + 1, mean, spec.noise_cov)
    } else {
        vec![0.0; basis.centers[stage].len()]
    };
    let constant = match region {
        Region::Target => 1.0,
        Region::Safe if last => gaussian_rect_mass(&spec.target, mean, spec.noise_cov),
        _ => 0.0,
    };
    AffineRow { own, next, constant }
}

/// `I_i[j] = integral of phi_j over S_i` (Lebesgue measure).
pub fn objective_integrals(basis: &RbfBasis, stage: usize, spec: &ReachAvoidSpec) -> Vec<f64> {
    let s = &spec.safe_sets[stage - 1];
    let i = stage - 1;
    basis.centers[i]
        .iter()
        .zip(&basis.variances[i])
        .map(|(c, &v)| {
            let sd = v.sqrt();
            (0..2)
                .map(|k| sd * (2.0 * PI).sqrt() * interval_mass(s.lower[k], s.upper[k], c[k], sd))
                .product()
        })
        .collect()
}

/// The coupled robust program over all stage weights.
pub fn build_program(spec: &ReachAvoidSpec, basis: &RbfBasis) -> Result<UncertainProgram> {
    spec.validate()?;
    basis.validate()?;
    if basis.centers.len() != spec.horizon {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} stages, horizon is {}",
            basis.centers.len(),
            spec.horizon
        )));
    }
    let costs = (1..=spec.horizon)
        .map(|i| objective_integrals(basis, i, spec))
        .collect();
    let (s, b) = (spec.clone(), basis.clone());
    let builder = move |stage: usize, latent: &[f64]| {
        let delta = s.stage_point(stage + 1, latent);
        constraint_row(delta, stage + 1, &b, &s)
    };
    let mut p = UncertainProgram::new(
        costs,
        Coupling::PairwiseCoupled,
        spec.latent_domain(),
        Arc::new(builder),
    );
    p.var_bound = spec.weight_bound;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdpRun {
    pub weights: ValueWeights,
    pub solution: ScenarioSolution,
    pub report: ViolationReport,
}

/// Budget for `method`: the single pair for single-set methods, otherwise the
/// allocation.
pub fn method_budget(method: Method, epsilon: f64, beta: f64, allocation: &Allocation) -> Budget {
    if method.uses_shared_samples() {
        Budget::Single { epsilon, beta }
    } else {
        Budget::Staged(allocation.clone())
    }
}

/// Trains with `method` from training stream `(seed, 0)` and validates on
/// `n_validation` fresh samples from stream `(seed, VALIDATION_STREAM)`.
pub fn run_adp(
    spec: &ReachAvoidSpec,
    basis: &RbfBasis,
    method: Method,
    budget: &Budget,
    seed: u64,
    n_validation: usize,
    opts: EngineOptions,
) -> Result<AdpRun> {
    let p = build_program(spec, basis)?;
    let solution = solve(&p, method, budget, RngHandle::new(seed, 0), opts)?;
    let report = empirical_violation_with(
        &solution,
        &p,
        n_validation,
        RngHandle::new(seed, VALIDATION_STREAM),
        DEFAULT_CONFIDENCE,
    )?;
    Ok(AdpRun {
        weights: ValueWeights {
            stages: solution.blocks(),
        },
        solution,
        report,
    })
}

/// `V_stage` on a uniform grid over `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[row][col]` at `(xs[col], ys[row])`.
    pub values: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

pub fn level_set_grid(
    weights: &ValueWeights,
    basis: &RbfBasis,
    stage: usize,
    bounds: Rect,
    resolution: usize,
) -> Result<LevelSetGrid> {
    if resolution < 2 {
        return domain("grid resolution must be at least 2");
    }
    if stage == 0 || stage > weights.stages.len() || stage > basis.centers.len() {
        return domain(format!("stage {stage} is out of range"));
    }
    if weights.stages[stage - 1].len() != basis.centers[stage - 1].len() {
        return Err(Error::DimensionMismatch(
            "weights do not match the basis".into(),
        ));
    }
    let xs = linspace(bounds.lower[0], bounds.upper[0], resolution);
    let ys = linspace(bounds.lower[1], bounds.upper[1], resolution);
    let values = ys
        .iter()
        .map(|&y| xs.iter().map(|&x| weights.value(basis, stage, [x, y])).collect())
        .collect();
    Ok(LevelSetGrid { xs, ys, values })
}

impl LevelSetGrid {
    /// Long-format CSV with columns `x,y,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for (row, &y) in self.values.iter().zip(&self.ys) {
            for (v, &x) in row.iter().zip(&self.xs) {
                writeln!(out, "{x},{y},{v}").expect("string write");
            }
        }
        out
    }
}

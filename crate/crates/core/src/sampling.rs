//! Seeded scenario generation.
//!
//! Every draw is driven by a ChaCha8 generator keyed by `(seed, stream_id)`,
//! so a handle reproduces the same sequence on every platform and distinct
//! stream ids give independent sequences from one seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpStandardForm, LpStatus};

pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_THINNING: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngHandle {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngHandle { seed, stream_id }
    }

    /// Same seed, different stream.
    pub fn stream(&self, stream_id: u64) -> Self {
        RngHandle {
            seed: self.seed,
            stream_id,
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_thinning() -> usize {
    DEFAULT_THINNING
}

/// Distribution of the uncertain parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintyDomain {
    /// Independent uniform coordinates on `[lower, upper]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// Approximately uniform on `{x : A x <= b}` via a hit-and-run chain
    /// started at the Chebyshev center.
    HitAndRunPolytope {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        #[serde(default = "default_thinning")]
        thinning: usize,
    },
    /// Independent factors, concatenated in order.
    Product { factors: Vec<UncertaintyDomain> },
}

impl UncertaintyDomain {
    pub fn unit_box(dim: usize) -> Self {
        UncertaintyDomain::Box {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    /// Polytope `lower <= x <= upper` sampled by hit-and-run.
    pub fn hit_and_run_box(lower: &[f64], upper: &[f64]) -> Self {
        let n = lower.len();
        let mut a = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(2 * n);
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            a.push(row.clone());
            b.push(upper[j]);
            row[j] = -1.0;
            a.push(row);
            b.push(-lower[j]);
        }
        UncertaintyDomain::HitAndRunPolytope {
            a,
            b,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            UncertaintyDomain::Box { lower, .. } => lower.len(),
            UncertaintyDomain::Gaussian { mean, .. } => mean.len(),
            UncertaintyDomain::HitAndRunPolytope { a, .. } => {
                a.first().map(|r| r.len()).unwrap_or(0)
            }
            UncertaintyDomain::Product { factors } => factors.iter().map(|f| f.dim()).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    /// Checks the parameters and precomputes per-factor state.
    fn prepare(&self) -> Result<Vec<Factor>> {
        let mut out = Vec::new();
        self.prepare_into(&mut out)?;
        Ok(out)
    }

    fn prepare_into(&self, out: &mut Vec<Factor>) -> Result<()> {
        match self {
            UncertaintyDomain::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "box bounds have {} and {} entries",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower.is_empty() {
                    return Err(Error::DimensionMismatch("box has no coordinates".into()));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
                {
                    return Err(Error::Domain("box bounds must be finite and ordered".into()));
                }
                out.push(Factor::Box {
                    lower: lower.clone(),
                    upper: upper.clone(),
                });
            }
            UncertaintyDomain::Gaussian { mean, covariance } => {
                let n = mean.len();
                if n == 0 {
                    return Err(Error::DimensionMismatch("gaussian has no coordinates".into()));
                }
                if covariance.len() != n || covariance.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance must be {n}x{n}"
                    )));
                }
                let cov = DMatrix::from_fn(n, n, |i, j| covariance[i][j]);
                let symmetric = (0..n)
                    .all(|i| (0..n).all(|j| (cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12 * (1.0 + cov[(i, j)].abs())));
                if !symmetric {
                    return Err(Error::Domain("covariance must be symmetric".into()));
                }
                let chol = cov
                    .cholesky()
                    .ok_or_else(|| Error::Domain("covariance must be positive definite".into()))?;
                out.push(Factor::Gaussian {
                    mean: DVector::from_column_slice(mean),
                    factor: chol.unpack(),
                    spare: None,
                });
            }
            UncertaintyDomain::HitAndRunPolytope {
                a,
                b,
                burn_in,
                thinning,
            } => {
                let center = chebyshev_center(a, b)?;
                out.push(Factor::HitAndRun {
                    a: a.clone(),
                    b: b.clone(),
                    current: center,
                    burn_in: *burn_in,
                    thinning: (*thinning).max(1),
                    started: false,
                });
            }
            UncertaintyDomain::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::DimensionMismatch("product has no factors".into()));
                }
                for f in factors {
                    f.prepare_into(out)?;
                }
            }
        }
        Ok(())
    }
}

/// Center of the largest ball inside `{x : A x <= b}`.
pub fn chebyshev_center(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::DimensionMismatch(
            "polytope needs matching, non-empty A and b".into(),
        ));
    }
    let n = a[0].len();
    if n == 0 || a.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("polytope rows differ in length".into()));
    }
    // Variables (x, r): maximize r subject to a_i x + |a_i| r <= b_i.
    let rows: Vec<Vec<f64>> = a
        .iter()
        .map(|row| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut r = row.clone();
            r.push(norm);
            r
        })
        .collect();
    let mut cost = vec![0.0; n + 1];
    cost[n] = -1.0;
    let mut lower = vec![-1e6; n + 1];
    let mut upper = vec![1e6; n + 1];
    lower[n] = 0.0;
    upper[n] = 1.0;
    let lp = LpStandardForm::new(cost, rows, b.to_vec()).with_bounds(Some(lower), Some(upper));
    let sol = solve_lp(&lp, 1e-10)?;
    if sol.status != LpStatus::Optimal || sol.x[n] <= 1e-12 {
        return Err(Error::EmptyDomain(
            "polytope has no interior point".into(),
        ));
    }
    Ok(sol.x[..n].to_vec())
}

enum Factor {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Gaussian {
        mean: DVector<f64>,
        factor: DMatrix<f64>,
        spare: Option<f64>,
    },
    HitAndRun {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        current: Vec<f64>,
        burn_in: usize,
        thinning: usize,
        started: bool,
    },
}

/// Box-Muller standard normal; caches the second variate of each pair.
fn standard_normal(rng: &mut ChaCha8Rng, spare: &mut Option<f64>) -> f64 {
    if let Some(z) = spare.take() {
        return z;
    }
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * std::f64::consts::PI * u2;
    *spare = Some(radius * angle.sin());
    radius * angle.cos()
}

fn hit_and_run_step(
    a: &[Vec<f64>],
    b: &[f64],
    x: &mut [f64],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = x.len();
    let mut spare = None;
    let mut dir: Vec<f64> = (0..n).map(|_| standard_normal(rng, &mut spare)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (row, &bi) in a.iter().zip(b) {
        let ad: f64 = row.iter().zip(&dir).map(|(r, d)| r * d).sum();
        let slack = bi - row.iter().zip(x.iter()).map(|(r, v)| r * v).sum::<f64>();
        if ad > 0.0 {
            t_hi = t_hi.min(slack / ad);
        } else if ad < 0.0 {
            t_lo = t_lo.max(slack / ad);
        }
    }
    if !(t_lo.is_finite() && t_hi.is_finite()) {
        return Err(Error::Domain("hit-and-run requires a bounded polytope".into()));
    }
    let t = t_lo + rng.random::<f64>() * (t_hi - t_lo);
    for (xi, di) in x.iter_mut().zip(&dir) {
        *xi += t * di;
    }
    Ok(())
}

/// Stateful sampler over a validated domain.
pub struct Sampler {
    factors: Vec<Factor>,
    rng: ChaCha8Rng,
    handle: RngHandle,
}

impl Sampler {
    pub fn new(domain: &UncertaintyDomain, handle: RngHandle) -> Result<Self> {
        Ok(Sampler {
            factors: domain.prepare()?,
            rng: handle.generator(),
            handle,
        })
    }

    pub fn handle(&self) -> RngHandle {
        self.handle
    }

    pub fn next_sample(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for f in &mut self.factors {
            match f {
                Factor::Box { lower, upper } => {
                    for (l, u) in lower.iter().zip(upper.iter()) {
                        out.push(l + (u - l) * self.rng.random::<f64>());
                    }
                }
                Factor::Gaussian {
                    mean,
                    factor,
                    spare,
                } => {
                    let z = DVector::from_iterator(
                        mean.len(),
                        (0..mean.len()).map(|_| standard_normal(&mut self.rng, spare)),
                    );
                    out.extend((&*mean + &*factor * z).iter());
                }
                Factor::HitAndRun {
                    a,
                    b,
                    current,
                    burn_in,
                    thinning,
                    started,
                } => {
                    let steps = if *started { *thinning } else { *burn_in + 1 };
                    *started = true;
                    for _ in 0..steps {
                        hit_and_run_step(a, b, current, &mut self.rng)?;
                    }
                    out.extend_from_slice(current);
                }
            }
        }
        Ok(out)
    }
}

/// `count` draws from `domain` using the generator behind `rng`.
pub fn draw(domain: &UncertaintyDomain, count: usize, rng: RngHandle) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Domain("count must be at least 1".into()));
    }
    let mut sampler = Sampler::new(domain, rng)?;
    (0..count).map(|_| sampler.next_sample()).collect()
}

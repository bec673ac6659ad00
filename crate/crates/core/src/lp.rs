//! Dense linear programming.
//!
//! Solves `min c'x  s.t.  A x <= b,  lower <= x <= upper` with a primal-dual
//! interior-point method on the homogeneous self-dual embedding, so that
//! infeasible and unbounded programs are detected from certificates rather
//! than iteration limits. Each iteration factors the `n x n` normal matrix
//! `A' D A`, which suits the tall programs produced by scenario sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpStandardForm {
    pub cost: Vec<f64>,
    /// Row-major `m x n` constraint matrix.
    pub ineq_matrix: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_upper: Option<Vec<f64>>,
}

impl LpStandardForm {
    pub fn new(cost: Vec<f64>, ineq_matrix: Vec<Vec<f64>>, ineq_rhs: Vec<f64>) -> Self {
        LpStandardForm {
            cost,
            ineq_matrix,
            ineq_rhs,
            var_lower: None,
            var_upper: None,
        }
    }

    pub fn with_bounds(mut self, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> Self {
        self.var_lower = lower;
        self.var_upper = upper;
        self
    }

    pub fn vars(&self) -> usize {
        self.cost.len()
    }

    pub fn rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vars();
        if n == 0 {
            return Err(Error::DimensionMismatch("LP has no variables".into()));
        }
        if self.ineq_matrix.len() != self.ineq_rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} constraint rows but {} right-hand sides",
                self.ineq_matrix.len(),
                self.ineq_rhs.len()
            )));
        }
        if let Some(i) = self.ineq_matrix.iter().position(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} entries, expected {n}",
                self.ineq_matrix[i].len()
            )));
        }
        for (name, bound) in [("lower", &self.var_lower), ("upper", &self.var_upper)] {
            if let Some(v) = bound {
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} bound has {} entries, expected {n}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| x.is_nan()) {
                    return Err(Error::Domain(format!("{name} bound contains NaN")));
                }
            }
        }
        let finite = self.cost.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite())
            && self.ineq_matrix.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("LP data must be finite".into()));
        }
        if let (Some(l), Some(u)) = (&self.var_lower, &self.var_upper) {
            if l.iter().zip(u).any(|(a, b)| a > b) {
                return Err(Error::Domain("lower bound above upper bound".into()));
            }
        }
        Ok(())
    }

    /// Parses the plain-text format: a line `n m`, the cost row, then `m`
    /// rows `a_1 ... a_n b`. Blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let parse_row = |line: &str| -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Domain(format!("bad number `{t}`: {e}")))
                })
                .collect()
        };
        let header = lines
            .next()
            .ok_or_else(|| Error::Domain("empty LP file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::Domain(format!("bad header `{header}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let [n, m] = dims[..] else {
            return Err(Error::Domain(format!("header must be `n m`, got `{header}`")));
        };
        let cost = parse_row(lines.next().ok_or_else(|| Error::Domain("missing cost row".into()))?)?;
        if cost.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "cost row has {} entries, expected {n}",
                cost.len()
            )));
        }
        let mut matrix = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = parse_row(
                lines
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing constraint row {i}")))?,
            )?;
            if row.len() != n + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "constraint row {i} has {} entries, expected {}",
                    row.len(),
                    n + 1
                )));
            }
            rhs.push(row.pop().expect("n + 1 entries"));
            matrix.push(row);
        }
        if lines.next().is_some() {
            return Err(Error::Domain(format!("trailing data after {m} rows")));
        }
        let lp = LpStandardForm::new(cost, matrix, rhs);
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the `A x <= b` rows (non-negative).
    pub duals: Vec<f64>,
    /// Multipliers of the lower and upper variable bounds.
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub iterations: usize,
    /// Largest of the scaled primal, dual and complementarity residuals.
    pub max_residual: f64,
    /// The optimal face looks larger than a single vertex.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 200,
        }
    }
}

pub fn solve_lp(p: &LpStandardForm, tol: f64) -> Result<LpSolution> {
    solve_lp_with(
        p,
        LpOptions {
            tolerance: tol,
            ..LpOptions::default()
        },
    )
}

/// Inequality-form data with finite variable bounds folded in as rows.
struct Stacked {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    m_orig: usize,
    lower_rows: Vec<usize>,
    upper_rows: Vec<usize>,
    /// Equilibration `A_scaled = diag(row_scale) A diag(col_scale)`.
    row_scale: DVector<f64>,
    col_scale: DVector<f64>,
}

/// Ruiz equilibration: alternately divides rows and columns by the square
/// root of their largest magnitude until every nonzero row and column has
/// infinity norm close to one.
fn equilibrate(st: &mut Stacked) {
    const PASSES: usize = 20;
    let (m, n) = st.a.shape();
    for _ in 0..PASSES {
        let mut r = DVector::from_element(m, 1.0);
        let mut c = DVector::from_element(n, 1.0);
        for i in 0..m {
            let mx = st.a.row(i).amax();
            if mx > 0.0 {
                r[i] = 1.0 / mx.sqrt();
            }
        }
        for j in 0..n {
            let mx = st.a.column(j).amax();
            if mx > 0.0 {
                c[j] = 1.0 / mx.sqrt();
            }
        }
        for j in 0..n {
            for i in 0..m {
                st.a[(i, j)] *= r[i] * c[j];
            }
        }
        st.row_scale.component_mul_assign(&r);
        st.col_scale.component_mul_assign(&c);
        let spread = r.iter().chain(c.iter()).fold(0.0f64, |a, v| a.max((v - 1.0).abs()));
        if spread < 1e-3 {
            break;
        }
    }
    st.b.component_mul_assign(&st.row_scale);
    st.c.component_mul_assign(&st.col_scale);
}

fn stack(p: &LpStandardForm) -> Stacked {
    let n = p.vars();
    let m_orig = p.rows();
    let finite_idx = |v: &Option<Vec<f64>>, keep: fn(f64) -> bool| -> Vec<usize> {
        v.as_ref()
            .map(|v| (0..n).filter(|&j| keep(v[j])).collect())
            .unwrap_or_default()
    };
    let lower_rows = finite_idx(&p.var_lower, |v| v > f64::NEG_INFINITY);
    let upper_rows = finite_idx(&p.var_upper, |v| v < f64::INFINITY);
    let m = m_orig + lower_rows.len() + upper_rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (i, row) in p.ineq_matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[(i, j)] = v;
        }
        b[i] = p.ineq_rhs[i];
    }
    let mut r = m_orig;
    for &j in &lower_rows {
        a[(r, j)] = -1.0;
        b[r] = -p.var_lower.as_ref().expect("lower bounds")[j];
        r += 1;
    }
    for &j in &upper_rows {
        a[(r, j)] = 1.0;
        b[r] = p.var_upper.as_ref().expect("upper bounds")[j];
        r += 1;
    }
    Stacked {
        a,
        b,
        c: DVector::from_column_slice(&p.cost),
        m_orig,
        lower_rows,
        upper_rows,
        row_scale: DVector::from_element(m, 1.0),
        col_scale: DVector::from_element(n, 1.0),
    }
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

/// Factored Newton system for one iteration.
struct Newton<'a> {
    st: &'a Stacked,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    d: DVector<f64>,
    /// `M^-1 (A' D b - c)`
    q: DVector<f64>,
    /// `A q - b`
    aq_b: DVector<f64>,
}

impl<'a> Newton<'a> {
    fn factor(st: &'a Stacked, it: &Iterate) -> Option<Self> {
        let d = it.z.component_div(&it.s);
        let sqrt_d = d.map(f64::sqrt);
        let mut scaled = st.a.clone();
        for (mut row, w) in scaled.row_iter_mut().zip(sqrt_d.iter()) {
            row *= *w;
        }
        let normal = scaled.tr_mul(&scaled);
        let n = normal.nrows();
        let max_diag = (0..n).map(|i| normal[(i, i)]).fold(0.0f64, f64::max).max(1.0);
        let mut reg = 0.0;
        let chol = loop {
            let mut mat = normal.clone();
            for i in 0..n {
                mat[(i, i)] += reg;
            }
            if let Some(ch) = mat.cholesky() {
                break ch;
            }
            reg = if reg == 0.0 { 1e-14 * max_diag } else { reg * 100.0 };
            if reg > 1e-4 * max_diag {
                return None;
            }
        };
        let db = d.component_mul(&st.b);
        let rhs = st.a.tr_mul(&db) - &st.c;
        let q = chol.solve(&rhs);
        let aq_b = &st.a * &q - &st.b;
        Some(Newton {
            st,
            chol,
            d,
            q,
            aq_b,
        })
    }

    /// Solves the linearized embedding for residual targets `r1` (dual),
    /// `r2` (primal), `r3` (gap), complementarity targets `rs`, `rk`.
    fn solve(
        &self,
        it: &Iterate,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: f64,
        rs: &DVector<f64>,
        rk: f64,
    ) -> Direction {
        let st = self.st;
        // w = r2 - rs / z
        let w = r2 - rs.component_div(&it.z);
        let rhs = r1 + st.a.tr_mul(&self.d.component_mul(&w));
        let p = self.chol.solve(&rhs);
        let u = self.d.component_mul(&(&st.a * &p - &w));
        let v = self.d.component_mul(&self.aq_b);
        let num = r3 - st.c.dot(&p) - st.b.dot(&u) - rk / it.tau;
        let den = st.c.dot(&self.q) + st.b.dot(&v) - it.kappa / it.tau;
        let dtau = num / den;
        let dx = &p + &self.q * dtau;
        let dz = &u + &v * dtau;
        let ds = (rs - it.s.component_mul(&dz)).component_div(&it.z);
        let dkappa = (rk - it.kappa * dtau) / it.tau;
        Direction {
            x: dx,
            s: ds,
            z: dz,
            tau: dtau,
            kappa: dkappa,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn step_length(it: &Iterate, dir: &Direction) -> f64 {
    let mut alpha = max_step(&it.s, &dir.s).min(max_step(&it.z, &dir.z));
    if dir.tau < 0.0 {
        alpha = alpha.min(-it.tau / dir.tau);
    }
    if dir.kappa < 0.0 {
        alpha = alpha.min(-it.kappa / dir.kappa);
    }
    alpha
}

pub fn solve_lp_with(p: &LpStandardForm, opts: LpOptions) -> Result<LpSolution> {
    p.validate()?;
    if !(opts.tolerance > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let mut st = stack(p);
    equilibrate(&mut st);
    let (m, n) = st.a.shape();
    if m == 0 {
        return solve_unconstrained(p);
    }
    let tol = opts.tolerance;
    let norm_b = 1.0 + st.b.amax();
    let norm_c = 1.0 + st.c.amax();

    let mut it = Iterate {
        x: DVector::zeros(n),
        s: DVector::from_element(m, 1.0),
        z: DVector::from_element(m, 1.0),
        tau: 1.0,
        kappa: 1.0,
    };
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for iter in 0..opts.max_iterations {
        // Residuals of the embedding.
        let r_dual = -(st.a.tr_mul(&it.z) + &st.c * it.tau);
        let r_primal = -(&st.a * &it.x + &it.s - &st.b * it.tau);
        let cx = st.c.dot(&it.x);
        let bz = st.b.dot(&it.z);
        let r_gap = -(cx + bz + it.kappa);
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (m + 1) as f64;

        // Convergence tests on the de-homogenized point.
        let pres = r_primal.amax() / it.tau / norm_b;
        let dres = r_dual.amax() / it.tau / norm_c;
        let pobj = cx / it.tau;
        let dobj = -bz / it.tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        last = (pres, dres, gap);
        if pres <= tol && dres <= tol && gap <= tol {
            return Ok(finish(p, &st, &it, iter, pres.max(dres).max(gap)));
        }
        // Infeasibility certificates: z >= 0, A'z ~ 0, b'z < 0 (primal
        // infeasible); A x + s ~ 0, c'x < 0 (dual infeasible).
        if bz < 0.0 {
            let atz = st.a.tr_mul(&it.z).amax();
            if atz / -bz <= tol * norm_c && it.tau < it.kappa {
                return Ok(certificate(p, LpStatus::Infeasible, iter, atz / -bz));
            }
        }
        if cx < 0.0 {
            let axs = (&st.a * &it.x + &it.s).amax();
            if axs / -cx <= tol * norm_b && it.tau < it.kappa {
                return Ok(certificate(p, LpStatus::Unbounded, iter, axs / -cx));
            }
        }

        let Some(newton) = Newton::factor(&st, &it) else {
            break;
        };

        // Predictor.
        let rs_aff = -it.s.component_mul(&it.z);
        let rk_aff = -it.tau * it.kappa;
        let aff = newton.solve(&it, &r_dual, &r_primal, r_gap, &rs_aff, rk_aff);
        let alpha_aff = step_length(&it, &aff).min(1.0);
        let mu_aff = ((&it.s + &aff.s * alpha_aff).dot(&(&it.z + &aff.z * alpha_aff))
            + (it.tau + alpha_aff * aff.tau) * (it.kappa + alpha_aff * aff.kappa))
            / (m + 1) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let eta = 1.0 - sigma;
        let rs = rs_aff.add_scalar(sigma * mu) - aff.s.component_mul(&aff.z);
        let rk = rk_aff + sigma * mu - aff.tau * aff.kappa;
        let dir = newton.solve(
            &it,
            &(&r_dual * eta),
            &(&r_primal * eta),
            r_gap * eta,
            &rs,
            rk,
        );
        let alpha = (0.99 * step_length(&it, &dir)).min(1.0);

        it.x += &dir.x * alpha;
        it.s += &dir.s * alpha;
        it.z += &dir.z * alpha;
        it.tau += dir.tau * alpha;
        it.kappa += dir.kappa * alpha;
        // Keep strictly interior after round-off.
        it.s.apply(|v| *v = v.max(1e-300));
        it.z.apply(|v| *v = v.max(1e-300));
        it.tau = it.tau.max(1e-300);
        it.kappa = it.kappa.max(1e-300);
    }
    Err(Error::Numerical {
        iterations: opts.max_iterations,
        primal: last.0,
        dual: last.1,
        gap: last.2,
    })
}

fn finish(p: &LpStandardForm, st: &Stacked, it: &Iterate, iterations: usize, residual: f64) -> LpSolution {
    let n = p.vars();
    let x: Vec<f64> = (&it.x / it.tau)
        .component_mul(&st.col_scale)
        .iter()
        .copied()
        .collect();
    let z = (&it.z / it.tau).component_mul(&st.row_scale);
    let s = (&it.s / it.tau).component_div(&st.row_scale);
    let duals = z.rows(0, st.m_orig).iter().copied().collect();
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for (k, &j) in st.lower_rows.iter().enumerate() {
        lower_duals[j] = z[st.m_orig + k];
    }
    for (k, &j) in st.upper_rows.iter().enumerate() {
        upper_duals[j] = z[st.m_orig + st.lower_rows.len() + k];
    }
    // Strict complementarity partition: a row is active when its multiplier
    // dominates its slack. A unique vertex has exactly n active rows.
    let active = z.iter().zip(s.iter()).filter(|(zi, si)| zi > si).count();
    let objective = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        lower_duals,
        upper_duals,
        iterations,
        max_residual: residual,
        degenerate: active != n,
    }
}

fn certificate(p: &LpStandardForm, status: LpStatus, iterations: usize, residual: f64) -> LpSolution {
    let n = p.vars();
    LpSolution {
        status,
        x: vec![f64::NAN; n],
        objective: match status {
            LpStatus::Infeasible => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        },
        duals: vec![0.0; p.rows()],
        lower_duals: vec![0.0; n],
        upper_duals: vec![0.0; n],
        iterations,
        max_residual: residual,
        degenerate: false,
    }
}

/// No rows and no finite bounds: optimal at zero iff the cost vanishes.
fn solve_unconstrained(p: &LpStandardForm) -> Result<LpSolution> {
    let n = p.vars();
    if p.cost.iter().all(|&c| c == 0.0) {
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x: vec![0.0; n],
            objective: 0.0,
            duals: vec![],
            lower_duals: vec![0.0; n],
            upper_duals: vec![0.0; n],
            iterations: 0,
            max_residual: 0.0,
            degenerate: true,
        })
    } else {
        Ok(certificate(p, LpStatus::Unbounded, 0, 0.0))
    }
}

/// KKT residuals of a claimed optimal point: primal infeasibility, dual
/// infeasibility and complementary slackness, each as a max-abs value.
pub fn kkt_residuals(p: &LpStandardForm, sol: &LpSolution) -> (f64, f64, f64) {
    let n = p.vars();
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut grad = p.cost.clone();
    for (i, row) in p.ineq_matrix.iter().enumerate() {
        let ax: f64 = row.iter().zip(&sol.x).map(|(a, x)| a * x).sum();
        let slack = p.ineq_rhs[i] - ax;
        primal = primal.max(-slack);
        comp = comp.max((sol.duals[i] * slack).abs());
        for j in 0..n {
            grad[j] += sol.duals[i] * row[j];
        }
    }
    for j in 0..n {
        if let Some(l) = p.var_lower.as_ref().map(|v| v[j]).filter(|v| v.is_finite()) {
            primal = primal.max(l - sol.x[j]);
            comp = comp.max((sol.lower_duals[j] * (sol.x[j] - l)).abs());
        }
        if let Some(u) = p.var_upper.as_ref().map(|v| v[j]).filter(|v| v.is_finite()) {
            primal = primal.max(sol.x[j] - u);
            comp = comp.max((sol.upper_duals[j] * (u - sol.x[j])).abs());
        }
        grad[j] += sol.upper_duals[j] - sol.lower_duals[j];
    }
    let neg_dual = sol
        .duals
        .iter()
        .chain(&sol.lower_duals)
        .chain(&sol.upper_duals)
        .fold(0.0f64, |a, &v| a.max(-v));
    let dual = grad.iter().fold(neg_dual, |a, v| a.max(v.abs()));
    (primal.max(0.0), dual, comp)
}

/// Dual objective `-b'y - u'y_u + l'y_l`.
pub fn dual_objective(p: &LpStandardForm, sol: &LpSolution) -> f64 {
    let mut v = -p
        .ineq_rhs
        .iter()
        .zip(&sol.duals)
        .map(|(b, y)| b * y)
        .sum::<f64>();
    if let Some(u) = &p.var_upper {
        v -= u
            .iter()
            .zip(&sol.upper_duals)
            .filter(|(u, _)| u.is_finite())
            .map(|(u, y)| u * y)
            .sum::<f64>();
    }
    if let Some(l) = &p.var_lower {
        v += l
            .iter()
            .zip(&sol.lower_duals)
            .filter(|(l, _)| l.is_finite())
            .map(|(l, y)| l * y)
            .sum::<f64>();
    }
    v
}

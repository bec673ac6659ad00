//! Batch experiments: configuration schema and the method comparison
//! harness.
//!
//! The comparison table has the fixed columns
//!
//! `method,stage,epsilon,epsilon_hat,confidence,d,constraints,solver_seconds,sampling_seconds,runs`
//!
//! with one row per stage (last stage first) and an `overall` row per method.
//! Empty cells mean the quantity is not defined for that row: single-set
//! methods have no per-stage levels, and only the recursive methods time
//! their stages separately. Values are means over the successful runs;
//! `runs` counts them.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocation::{allocate_fixed_beta, allocate_joint, Allocation, AllocationProblem, Method};
use crate::engine::{
    solve, AffineProgramSpec, Budget, EngineOptions, FeasibilityCertificate, ScenarioSolution,
    UncertainProgram,
};
use crate::error::{Error, Result};
use crate::lp::LpOptions;
use crate::reachavoid::{build_program, method_budget, RbfBasis, ReachAvoidSpec, ValueWeights, BASIS_STREAM, VALIDATION_STREAM};
use crate::sampling::RngHandle;
use crate::validation::{empirical_violation_with, ViolationReport, DEFAULT_CONFIDENCE, DEFAULT_VALIDATION_SAMPLES};

fn default_variance_range() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub dims: Vec<usize>,
    /// Variances are drawn uniformly from `(0, variance_range]`.
    #[serde(default = "default_variance_range")]
    pub variance_range: f64,
    /// Fixed basis seed; when absent each run places its basis from its own
    /// seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    ReachAvoid {
        #[serde(default)]
        spec: ReachAvoidSpec,
        basis: BasisConfig,
    },
    Affine { program: AffineProgramSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocationConfig {
    /// Closed-form epsilon split for fixed stage betas (`beta / M` each when
    /// absent).
    FixedBeta {
        #[serde(default)]
        betas: Option<Vec<f64>>,
    },
    /// Numerical joint optimization of epsilons and betas.
    Joint,
    Explicit { epsilons: Vec<f64>, betas: Vec<f64> },
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig::FixedBeta { betas: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub epsilon: f64,
    pub beta: f64,
    /// How the per-stage methods split the budget.
    #[serde(default)]
    pub allocation: AllocationConfig,
}

fn default_validation_n() -> usize {
    DEFAULT_VALIDATION_SAMPLES
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_validation_n")]
    pub n: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            n: DEFAULT_VALIDATION_SAMPLES,
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    LpOptions::default().tolerance
}

fn default_max_iterations() -> usize {
    LpOptions::default().max_iterations
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub methods: Vec<Method>,
    pub budget: BudgetConfig,
    /// One run per seed for every method.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Single-seed shorthand; mutually exclusive with `seeds`.
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub seed: u64,
}

fn config_error<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        path: path.into(),
        message: message.into(),
    })
}

fn open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl ExperimentConfig {
    /// Parses and checks a JSON config; every failure names the offending
    /// field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if let Some(sampling) = cfg.sampling.take() {
            if !cfg.seeds.is_empty() {
                return config_error("sampling.seed", "give either `seeds` or `sampling.seed`, not both");
            }
            cfg.seeds = vec![sampling.seed];
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config_error("seeds", "at least one seed is required");
        }
        if self.methods.is_empty() {
            return config_error("methods", "at least one method is required");
        }
        if !open_unit(self.budget.epsilon) {
            return config_error("budget.epsilon", "must lie in (0, 1)");
        }
        if !open_unit(self.budget.beta) {
            return config_error("budget.beta", "must lie in (0, 1)");
        }
        if self.validation.n == 0 {
            return config_error("validation.n", "must be at least 1");
        }
        if !open_unit(self.validation.confidence) {
            return config_error("validation.confidence", "must lie in (0, 1)");
        }
        if !(self.solver.tolerance > 0.0) {
            return config_error("solver.tolerance", "must be positive");
        }
        let m = match &self.problem {
            ProblemConfig::ReachAvoid { spec, basis } => {
                if let Err(e) = spec.validate() {
                    return config_error("problem.spec", e.to_string());
                }
                if basis.dims.len() != spec.horizon {
                    return config_error("problem.basis.dims", format!("needs {} entries", spec.horizon));
                }
                if basis.dims.contains(&0) {
                    return config_error("problem.basis.dims", "entries must be positive");
                }
                if !(basis.variance_range > 0.0 && basis.variance_range.is_finite()) {
                    return config_error("problem.basis.variance_range", "must be positive");
                }
                spec.horizon
            }
            ProblemConfig::Affine { program } => {
                if let Err(e) = program.build() {
                    return config_error("problem.program", e.to_string());
                }
                program.stages.len()
            }
        };
        match &self.budget.allocation {
            AllocationConfig::FixedBeta { betas: Some(b) } if b.len() != m => {
                config_error("budget.allocation.betas", format!("needs {m} entries"))
            }
            AllocationConfig::Explicit { epsilons, .. } if epsilons.len() != m => {
                config_error("budget.allocation.epsilons", format!("needs {m} entries"))
            }
            AllocationConfig::Explicit { betas, .. } if betas.len() != m => {
                config_error("budget.allocation.betas", format!("needs {m} entries"))
            }
            _ => Ok(()),
        }
    }

    pub fn stage_dims(&self) -> Vec<usize> {
        match &self.problem {
            ProblemConfig::ReachAvoid { basis, .. } => basis.dims.clone(),
            ProblemConfig::Affine { program } => program.stages.iter().map(|s| s.cost.len()).collect(),
        }
    }

    /// The per-stage budget split used by the multistage and resampled
    /// methods.
    pub fn allocation(&self) -> Result<Allocation> {
        let dims: Vec<u64> = self.stage_dims().iter().map(|&d| d as u64).collect();
        let (eps, beta) = (self.budget.epsilon, self.budget.beta);
        match &self.budget.allocation {
            AllocationConfig::FixedBeta { betas } => {
                let p = AllocationProblem::new(eps, beta, dims);
                let p = match betas {
                    Some(b) => p.with_fixed_betas(b.clone()),
                    None => p.with_uniform_betas(),
                };
                allocate_fixed_beta(&p)
            }
            AllocationConfig::Joint => allocate_joint(&AllocationProblem::new(eps, beta, dims)),
            AllocationConfig::Explicit { epsilons, betas } => {
                Allocation::from_levels(eps, beta, dims, epsilons.clone(), betas.clone())
            }
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            lp: LpOptions {
                tolerance: self.solver.tolerance,
                max_iterations: self.solver.max_iterations,
            },
        }
    }

    /// The concrete problem solved by the run with `seed`.
    pub fn resolve(&self, seed: u64) -> Result<ResolvedProblem> {
        match &self.problem {
            ProblemConfig::ReachAvoid { spec, basis } => {
                let basis_seed = basis.seed.unwrap_or(seed);
                let rbf = RbfBasis::sample(
                    spec,
                    &basis.dims,
                    basis.variance_range,
                    RngHandle::new(basis_seed, BASIS_STREAM),
                )?;
                Ok(ResolvedProblem::ReachAvoid {
                    spec: spec.clone(),
                    basis: rbf,
                })
            }
            ProblemConfig::Affine { program } => Ok(ResolvedProblem::Affine {
                program: program.clone(),
            }),
        }
    }
}

/// A problem with every random ingredient fixed, as stored next to a
/// solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedProblem {
    ReachAvoid { spec: ReachAvoidSpec, basis: RbfBasis },
    Affine { program: AffineProgramSpec },
}

impl ResolvedProblem {
    pub fn program(&self) -> Result<UncertainProgram> {
        match self {
            ResolvedProblem::ReachAvoid { spec, basis } => build_program(spec, basis),
            ResolvedProblem::Affine { program } => program.build(),
        }
    }
}

/// A solution together with the problem it solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub problem: ResolvedProblem,
    pub solution: ScenarioSolution,
}

impl SolutionFile {
    pub fn weights(&self) -> ValueWeights {
        ValueWeights {
            stages: self.solution.blocks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<FeasibilityCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ViolationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    /// Constraint rows enforced per stage.
    #[serde(default)]
    pub stage_constraints: Vec<usize>,
    #[serde(default)]
    pub solver_seconds: f64,
    #[serde(default)]
    pub stage_solver_seconds: Vec<f64>,
    #[serde(default)]
    pub sampling_seconds: f64,
    /// Wall time of the whole run including validation.
    #[serde(default)]
    pub total_seconds: f64,
    #[serde(skip)]
    pub solution: Option<SolutionFile>,
}

impl RunRecord {
    /// The record without any timing fields, for reproducibility checks.
    pub fn deterministic(&self) -> RunRecord {
        RunRecord {
            solver_seconds: 0.0,
            stage_solver_seconds: vec![],
            sampling_seconds: 0.0,
            total_seconds: 0.0,
            solution: None,
            ..self.clone()
        }
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    /// 1-based stage, or `None` for the overall row.
    pub stage: Option<usize>,
    pub epsilon: Option<f64>,
    pub epsilon_hat: Option<f64>,
    pub confidence: Option<f64>,
    pub d: Option<usize>,
    pub constraints: Option<usize>,
    pub solver_seconds: Option<f64>,
    pub sampling_seconds: Option<f64>,
    pub runs: usize,
}

pub const TABLE_HEADER: &str =
    "method,stage,epsilon,epsilon_hat,confidence,d,constraints,solver_seconds,sampling_seconds,runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub allocation: Allocation,
    pub runs: Vec<RunRecord>,
    pub table: Vec<TableRow>,
}

fn solve_one(
    cfg: &ExperimentConfig,
    method: Method,
    allocation: &Allocation,
    seed: u64,
) -> Result<(SolutionFile, ViolationReport)> {
    let problem = cfg.resolve(seed)?;
    let p = problem.program()?;
    let budget: Budget = method_budget(method, cfg.budget.epsilon, cfg.budget.beta, allocation);
    let solution = solve(&p, method, &budget, RngHandle::new(seed, 0), cfg.engine_options())?;
    let report = empirical_violation_with(
        &solution,
        &p,
        cfg.validation.n,
        RngHandle::new(seed, VALIDATION_STREAM),
        cfg.validation.confidence,
    )?;
    Ok((SolutionFile { problem, solution }, report))
}

/// Runs every method on every seed. Individual failures are recorded and
/// the harness moves on; an error is returned only when nothing succeeds.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareOutput> {
    cfg.check()?;
    let allocation = cfg.allocation()?;
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let started = Instant::now();
            let record = match solve_one(cfg, method, &allocation, seed) {
                Ok((file, report)) => {
                    let sol = &file.solution;
                    RunRecord {
                        method,
                        seed,
                        status: RunStatus::Ok,
                        error: None,
                        certificate: Some(sol.certificate.clone()),
                        report: Some(report),
                        objective: Some(sol.objective),
                        weights: Some(sol.blocks()),
                        stage_constraints: sol.stages.iter().map(|s| s.constraints).collect(),
                        solver_seconds: sol.timings.solver_seconds,
                        stage_solver_seconds: sol.timings.stage_solver_seconds.clone(),
                        sampling_seconds: sol.timings.sampling_seconds,
                        total_seconds: started.elapsed().as_secs_f64(),
                        solution: Some(file),
                    }
                }
                Err(e) => RunRecord {
                    method,
                    seed,
                    status: RunStatus::Failed,
                    error: Some(e.to_string()),
                    certificate: None,
                    report: None,
                    objective: None,
                    weights: None,
                    stage_constraints: vec![],
                    solver_seconds: 0.0,
                    stage_solver_seconds: vec![],
                    sampling_seconds: 0.0,
                    total_seconds: started.elapsed().as_secs_f64(),
                    solution: None,
                },
            };
            runs.push(record);
        }
    }
    if runs.iter().all(|r| r.status == RunStatus::Failed) {
        let first = runs.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Domain(format!("every run failed; first error: {first}")));
    }
    let table = aggregate(cfg, &allocation, &runs);
    Ok(CompareOutput {
        allocation,
        runs,
        table,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(cfg: &ExperimentConfig, allocation: &Allocation, runs: &[RunRecord]) -> Vec<TableRow> {
    let dims = cfg.stage_dims();
    let m = dims.len();
    let mut table = Vec::new();
    for &method in &cfg.methods {
        let ok: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.method == method && r.status == RunStatus::Ok)
            .collect();
        let staged = !method.uses_shared_samples();
        let constraints = |i: usize| ok.first().map(|r| r.stage_constraints[i]);
        for i in (0..m).rev() {
            table.push(TableRow {
                method,
                stage: Some(i + 1),
                epsilon: staged.then(|| allocation.epsilons[i]),
                epsilon_hat: mean(ok.iter().filter_map(|r| r.report.as_ref()).map(|rep| rep.epsilon_hat_per_stage[i])),
                confidence: staged.then(|| 1.0 - allocation.betas[i]),
                d: staged.then_some(dims[i]),
                constraints: if staged { constraints(i) } else { None },
                solver_seconds: if method.is_recursive() {
                    mean(ok.iter().map(|r| r.stage_solver_seconds[i]))
                } else {
                    None
                },
                sampling_seconds: None,
                runs: ok.len(),
            });
        }
        table.push(TableRow {
            method,
            stage: None,
            epsilon: Some(cfg.budget.epsilon),
            epsilon_hat: mean(ok.iter().filter_map(|r| r.report.as_ref()).map(|rep| rep.epsilon_hat_overall)),
            confidence: Some(1.0 - cfg.budget.beta),
            d: Some(dims.iter().sum()),
            constraints: ok.first().map(|r| r.stage_constraints.iter().sum()),
            solver_seconds: mean(ok.iter().map(|r| r.solver_seconds)),
            sampling_seconds: mean(ok.iter().map(|r| r.sampling_seconds)),
            runs: ok.len(),
        });
    }
    table
}

fn cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl CompareOutput {
    pub fn table_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.table {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.stage.map(|s| s.to_string()).unwrap_or_else(|| "overall".into()),
                cell(r.epsilon),
                cell(r.epsilon_hat),
                cell(r.confidence),
                cell(r.d),
                cell(r.constraints),
                cell(r.solver_seconds),
                cell(r.sampling_seconds),
                r.runs
            )
            .expect("string write");
        }
        out
    }

    /// JSON summary: allocation, every run record and the table.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// The summary without timings; identical across reruns of one config.
    pub fn deterministic_json(&self) -> String {
        let runs: Vec<RunRecord> = self.runs.iter().map(RunRecord::deterministic).collect();
        serde_json::to_string(&(&self.allocation, runs)).expect("summary serializes")
    }

    /// Table CSV with the timing columns blanked.
    pub fn deterministic_csv(&self) -> String {
        let mut copy = self.clone();
        for r in &mut copy.table {
            r.solver_seconds = None;
            r.sampling_seconds = None;
        }
        copy.table_csv()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_config() -> String {
        r#"{
            "problem": {"kind": "affine", "program": {
                "coupling": "independent_domains",
                "domain": {"kind": "box", "lower": [0.0], "upper": [1.0]},
                "stages": [
                    {"cost": [1.0], "own_offset": [-1.0], "constant_coeffs": [1.0]},
                    {"cost": [1.0], "own_offset": [-1.0], "constant_coeffs": [0.5]}
                ]
            }},
            "methods": ["standard", "multistage"],
            "budget": {"epsilon": 0.1, "beta": 0.02},
            "seeds": [7]
        }"#
        .into()
    }

    #[test]
    fn parses_and_runs_affine_config() {
        let cfg = ExperimentConfig::from_json(&affine_config()).unwrap();
        assert_eq!(cfg.validation.n, 1000);
        let out = run_compare(&cfg).unwrap();
        assert_eq!(out.runs.len(), 2);
        assert!(out.runs.iter().all(|r| r.status == RunStatus::Ok));
        let csv = out.table_csv();
        assert_eq!(csv.lines().next().unwrap(), TABLE_HEADER);
        // Two stages plus overall for each method.
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.contains("standard,overall,0.1,"));
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let bad = affine_config().replace("\"epsilon\": 0.1", "\"epsilon\": \"x\"");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "budget.epsilon"),
            other => panic!("{other:?}"),
        }
        let bad = affine_config().replace("\"seeds\": [7]", "\"seeds\": []");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "seeds"),
            other => panic!("{other:?}"),
        }
        let bad = affine_config().replace("\"multistage\"", "\"simplex\"");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "methods[1]"),
            other => panic!("{other:?}"),
        }
        let bad = affine_config().replace("\"seeds\"", "\"seedz\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn sampling_seed_is_a_single_seed_list() {
        let text = affine_config().replace("\"seeds\": [7]", "\"sampling\": {\"seed\": 7}");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        let both = affine_config().replace("\"seeds\": [7]", "\"seeds\": [7], \"sampling\": {\"seed\": 7}");
        assert!(matches!(ExperimentConfig::from_json(&both), Err(Error::Config { .. })));
    }

    #[test]
    fn failures_are_recorded() {
        // Recursive methods need a coupled program; standard still runs.
        let cfg = affine_config().replace("\"multistage\"", "\"recursive_shared\"");
        let cfg = ExperimentConfig::from_json(&cfg).unwrap();
        let out = run_compare(&cfg).unwrap();
        assert_eq!(out.runs[1].status, RunStatus::Failed);
        assert!(out.runs[1].error.is_some());
        let cfg = ExperimentConfig {
            methods: vec![Method::RecursiveShared],
            ..cfg
        };
        assert!(run_compare(&cfg).is_err());
    }

    #[test]
    fn reruns_are_identical_apart_from_timings() {
        let cfg = ExperimentConfig::from_json(&affine_config()).unwrap();
        let a = run_compare(&cfg).unwrap();
        let b = run_compare(&cfg).unwrap();
        assert_eq!(a.deterministic_json(), b.deterministic_json());
        assert_eq!(a.deterministic_csv(), b.deterministic_csv());
    }
}

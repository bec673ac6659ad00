//! Scenario solution methods for robust programs with separable structure.
//!
//! * standard: one sample set, every constraint enforced on every sample, one
//!   LP over all blocks.
//! * multistage: a separate sample set per constraint, one LP over all blocks.
//! * recursive shared: blocks solved last-to-first, each with the next block
//!   fixed at its minimizer, all on one shared sample set.
//! * recursive resampled: as above with a fresh sample set per stage.

mod affine;
mod certificate;
mod program;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use affine::{AffineProgramSpec, AffineStage};
pub use certificate::{certify, Budget, FeasibilityCertificate, StageCertificate};
pub use program::{AffineRow, ConstraintBuilder, Coupling, UncertainProgram};

use crate::allocation::{Allocation, Method};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LpOptions, LpSolution, LpStandardForm, LpStatus};
use crate::sampling::{draw, RngHandle};

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    pub lp: LpOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// 1-based stage number.
    pub stage: usize,
    pub constraints: usize,
    /// `f_i(x_i*)`.
    pub objective: f64,
    /// LP iterations spent on this stage (shared by all stages for the
    /// single-LP methods).
    pub lp_iterations: usize,
    pub degenerate: bool,
}

/// Wall-clock measurements; excluded from determinism comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sampling_seconds: f64,
    pub assembly_seconds: f64,
    pub solver_seconds: f64,
    /// Per-stage LP time for the recursive methods.
    pub stage_solver_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSolution {
    pub method: Method,
    pub stage_dims: Vec<usize>,
    /// Concatenated decision blocks `(x_1, ..., x_M)`.
    pub x_star: Vec<f64>,
    pub objective: f64,
    pub certificate: FeasibilityCertificate,
    pub stages: Vec<StageReport>,
    /// Largest sampled constraint value at the solution.
    pub training_residual: f64,
    pub samples_drawn: u64,
    pub training_streams: Vec<RngHandle>,
    pub timings: Timings,
}

impl ScenarioSolution {
    pub fn block(&self, stage: usize) -> &[f64] {
        let start: usize = self.stage_dims[..stage].iter().sum();
        &self.x_star[start..start + self.stage_dims[stage]]
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        (0..self.stage_dims.len()).map(|i| self.block(i).to_vec()).collect()
    }

    /// JSON of everything except timings.
    pub fn deterministic_json(&self) -> String {
        let mut copy = self.clone();
        copy.timings = Timings::default();
        serde_json::to_string(&copy).expect("solution serializes")
    }
}

/// Stream of the per-stage sample set `stage`.
pub fn stage_stream(base: RngHandle, stage: usize) -> RngHandle {
    base.stream(base.stream_id.wrapping_add(stage as u64))
}

pub fn solve_standard(
    p: &UncertainProgram,
    epsilon: f64,
    beta: f64,
    rng: RngHandle,
) -> Result<ScenarioSolution> {
    solve(p, Method::Standard, &Budget::Single { epsilon, beta }, rng, EngineOptions::default())
}

pub fn solve_multistage(
    p: &UncertainProgram,
    allocation: &Allocation,
    rng: RngHandle,
) -> Result<ScenarioSolution> {
    solve(
        p,
        Method::Multistage,
        &Budget::Staged(allocation.clone()),
        rng,
        EngineOptions::default(),
    )
}

pub fn solve_recursive_shared(
    p: &UncertainProgram,
    epsilon: f64,
    beta: f64,
    rng: RngHandle,
) -> Result<ScenarioSolution> {
    solve(
        p,
        Method::RecursiveShared,
        &Budget::Single { epsilon, beta },
        rng,
        EngineOptions::default(),
    )
}

pub fn solve_recursive_resampled(
    p: &UncertainProgram,
    allocation: &Allocation,
    rng: RngHandle,
) -> Result<ScenarioSolution> {
    solve(
        p,
        Method::RecursiveResampled,
        &Budget::Staged(allocation.clone()),
        rng,
        EngineOptions::default(),
    )
}

/// Draws the samples the certificate asks for and solves with `method`.
///
/// Single-set methods draw from `rng` itself; per-stage methods draw stage
/// `i` from [`stage_stream`]`(rng, i)`.
pub fn solve(
    p: &UncertainProgram,
    method: Method,
    budget: &Budget,
    rng: RngHandle,
    opts: EngineOptions,
) -> Result<ScenarioSolution> {
    p.validate()?;
    if method.is_recursive() && p.coupling != Coupling::PairwiseCoupled {
        return Err(Error::Domain(format!(
            "{method} requires a pairwise-coupled program"
        )));
    }
    let cert = certify(method, budget, &p.stage_dims)?;
    let m = p.stages();

    let started = Instant::now();
    let (owned, streams): (Vec<Vec<Vec<f64>>>, Vec<RngHandle>) = if method.uses_shared_samples() {
        let s = cert.per_stage[0].samples as usize;
        (vec![draw(&p.domain, s, rng)?], vec![rng])
    } else {
        let mut sets = Vec::with_capacity(m);
        let mut streams = Vec::with_capacity(m);
        for (i, sc) in cert.per_stage.iter().enumerate() {
            let h = stage_stream(rng, i);
            sets.push(draw(&p.domain, sc.samples as usize, h)?);
            streams.push(h);
        }
        (sets, streams)
    };
    let sampling_seconds = started.elapsed().as_secs_f64();
    let samples_drawn = owned.iter().map(|s| s.len() as u64).sum();

    let sets: Vec<&[Vec<f64>]> = if method.uses_shared_samples() {
        vec![&owned[0][..]; m]
    } else {
        owned.iter().map(|s| &s[..]).collect()
    };
    let mut sol = solve_with_samples(p, cert, &sets, opts)?;
    sol.samples_drawn = samples_drawn;
    sol.training_streams = streams;
    sol.timings.sampling_seconds = sampling_seconds;
    Ok(sol)
}

/// Solves with caller-supplied sample sets, one per stage.
///
/// The certificate's method decides between the combined LP and the backward
/// recursion; it is attached to the result as given, so this is also the hook
/// for forcing particular sets (e.g. identical sets for every stage).
pub fn solve_with_samples(
    p: &UncertainProgram,
    certificate: FeasibilityCertificate,
    sets: &[&[Vec<f64>]],
    opts: EngineOptions,
) -> Result<ScenarioSolution> {
    if sets.len() != p.stages() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample sets for {} stages",
            sets.len(),
            p.stages()
        )));
    }
    if certificate.method.is_recursive() {
        solve_recursive(p, certificate, sets, opts)
    } else {
        solve_combined(p, certificate, sets, opts)
    }
}

/// Single-set methods reuse one set across stages; count it once.
fn count_samples(certificate: &FeasibilityCertificate, sets: &[&[Vec<f64>]]) -> u64 {
    if certificate.method.uses_shared_samples() {
        sets[0].len() as u64
    } else {
        sets.iter().map(|s| s.len() as u64).sum()
    }
}

fn max_violation(lp: &LpStandardForm, x: &[f64]) -> f64 {
    lp.ineq_matrix
        .iter()
        .zip(&lp.ineq_rhs)
        .map(|(row, b)| program::dot(row, x) - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn run_lp(lp: &LpStandardForm, opts: EngineOptions) -> Result<(LpSolution, f64)> {
    let t = Instant::now();
    let sol = solve_lp_with(lp, opts.lp)?;
    Ok((sol, t.elapsed().as_secs_f64()))
}

fn solve_combined(
    p: &UncertainProgram,
    certificate: FeasibilityCertificate,
    sets: &[&[Vec<f64>]],
    opts: EngineOptions,
) -> Result<ScenarioSolution> {
    let t = Instant::now();
    let lp = p.assemble_combined(sets)?;
    let assembly_seconds = t.elapsed().as_secs_f64();
    let (sol, solver_seconds) = run_lp(&lp, opts)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::ProgramInfeasible),
        LpStatus::Unbounded => return Err(Error::ProgramUnbounded),
    }
    let samples_drawn = count_samples(&certificate, sets);
    let offsets = p.offsets();
    let stages = (0..p.stages())
        .map(|i| StageReport {
            stage: i + 1,
            constraints: sets[i].len(),
            objective: program::dot(&p.stage_costs[i], &sol.x[offsets[i]..offsets[i] + p.stage_dims[i]]),
            lp_iterations: sol.iterations,
            degenerate: sol.degenerate,
        })
        .collect();
    Ok(ScenarioSolution {
        method: certificate.method,
        stage_dims: p.stage_dims.clone(),
        objective: sol.objective,
        training_residual: max_violation(&lp, &sol.x),
        x_star: sol.x,
        certificate,
        stages,
        samples_drawn,
        training_streams: vec![],
        timings: Timings {
            sampling_seconds: 0.0,
            assembly_seconds,
            solver_seconds,
            stage_solver_seconds: vec![],
        },
    })
}

fn solve_recursive(
    p: &UncertainProgram,
    certificate: FeasibilityCertificate,
    sets: &[&[Vec<f64>]],
    opts: EngineOptions,
) -> Result<ScenarioSolution> {
    let m = p.stages();
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut stages = Vec::with_capacity(m);
    let mut stage_solver_seconds = vec![0.0; m];
    let mut assembly_seconds = 0.0;
    let mut residual = f64::NEG_INFINITY;
    for i in (0..m).rev() {
        let t = Instant::now();
        let next = (i + 1 < m).then(|| blocks[i + 1].as_slice());
        let lp = p.assemble_stage(i, sets[i], next)?;
        assembly_seconds += t.elapsed().as_secs_f64();
        let (sol, secs) = run_lp(&lp, opts)?;
        stage_solver_seconds[i] = secs;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::StageInfeasible { stage: i + 1 }),
            LpStatus::Unbounded => return Err(Error::StageUnbounded { stage: i + 1 }),
        }
        residual = residual.max(max_violation(&lp, &sol.x));
        stages.push(StageReport {
            stage: i + 1,
            constraints: sets[i].len(),
            objective: sol.objective,
            lp_iterations: sol.iterations,
            degenerate: sol.degenerate,
        });
        blocks[i] = sol.x;
    }
    stages.reverse();
    let objective = stages.iter().map(|s| s.objective).sum();
    let samples_drawn = count_samples(&certificate, sets);
    Ok(ScenarioSolution {
        method: certificate.method,
        stage_dims: p.stage_dims.clone(),
        x_star: blocks.concat(),
        objective,
        certificate,
        stages,
        training_residual: residual,
        samples_drawn,
        training_streams: vec![],
        timings: Timings {
            sampling_seconds: 0.0,
            assembly_seconds,
            solver_seconds: stage_solver_seconds.iter().sum(),
            stage_solver_seconds,
        },
    })
}

/// Sampled constraint values `g_i(x*, delta)` for every stage at `delta`.
pub fn stage_values(p: &UncertainProgram, sol: &ScenarioSolution, delta: &[f64]) -> Result<Vec<f64>> {
    let m = p.stages();
    (0..m)
        .map(|i| {
            let row = p.row(i, delta)?;
            let next = (!row.next.is_empty()).then(|| sol.block(i + 1));
            Ok(row.value(sol.block(i), next))
        })
        .collect()
}

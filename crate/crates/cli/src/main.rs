//! `scenario`: batch front-end for scenario-core.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use scenario_core::allocation::{allocate_fixed_beta, allocate_joint, AllocationProblem};
use scenario_core::bounds::{sample_size, BoundKind, BoundQuery};
use scenario_core::experiment::{run_compare, ExperimentConfig, ResolvedProblem, SolutionFile};
use scenario_core::lp::{solve_lp, LpStandardForm, DEFAULT_TOLERANCE};
use scenario_core::reachavoid::{level_set_grid, Rect, VALIDATION_STREAM};
use scenario_core::sampling::RngHandle;
use scenario_core::validation::{empirical_violation_with, DEFAULT_CONFIDENCE};
use scenario_core::{Error, Method};

#[derive(Parser)]
#[command(name = "scenario", version, about = "Scenario approximation of robust programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Exact,
    Explicit,
}

#[derive(Subcommand)]
enum Command {
    /// Sample count certifying a violation level.
    Bounds {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        dim: u64,
        #[arg(long, value_enum, default_value = "exact")]
        bound: BoundArg,
    },
    /// Split a violation and confidence budget across stages.
    Allocate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<u64>,
        /// Fixed per-stage betas; `beta / M` each when omitted.
        #[arg(long, value_delimiter = ',', conflicts_with = "joint")]
        betas: Option<Vec<f64>>,
        /// Optimize betas and epsilons together.
        #[arg(long)]
        joint: bool,
    },
    /// Solve `min c'x s.t. Ax <= b` from a plain-text file.
    SolveLp {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
    },
    /// Run every configured method on every seed and tabulate the results.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured method list.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Overrides the configured seeds with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the violation probability of a stored solution.
    Validate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
        confidence: f64,
    },
    /// Evaluate a stored reach-avoid value function on a grid.
    Grid {
        #[arg(long)]
        solution: PathBuf,
        /// 1-based stage.
        #[arg(long, default_value_t = 1)]
        stage: usize,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// `x_lo,y_lo,x_hi,y_hi`; the stage safe set when omitted.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        bounds: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err
                .chain()
                .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. })));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_solution(path: &Path) -> anyhow::Result<SolutionFile> {
    let text = read(path)?;
    let file = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(file)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Bounds {
            epsilon,
            beta,
            dim,
            bound,
        } => {
            let kind = match bound {
                BoundArg::Exact => BoundKind::ImplicitExact,
                BoundArg::Explicit => BoundKind::ExplicitClosedForm,
            };
            print_json(&sample_size(BoundQuery::new(epsilon, beta, dim)?, kind)?)
        }
        Command::Allocate {
            epsilon,
            beta,
            dims,
            betas,
            joint,
        } => {
            let p = AllocationProblem::new(epsilon, beta, dims);
            let allocation = if joint {
                allocate_joint(&p)?
            } else {
                let p = match betas {
                    Some(b) => p.with_fixed_betas(b),
                    None => p.with_uniform_betas(),
                };
                allocate_fixed_beta(&p)?
            };
            print_json(&allocation)
        }
        Command::SolveLp { file, tol } => {
            let lp = LpStandardForm::parse_text(&read(&file)?)?;
            print_json(&solve_lp(&lp, tol)?)
        }
        Command::Compare {
            config,
            methods,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_json(&read(&config)?)?;
            if let Some(methods) = methods {
                cfg.methods = methods;
            }
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            let result = run_compare(&cfg)?;
            let failed = result.runs.iter().filter(|r| r.error.is_some());
            for r in failed {
                eprintln!(
                    "warning: {} seed {} failed: {}",
                    r.method,
                    r.seed,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            let csv = result.table_csv();
            match out.or(cfg.output_dir.map(PathBuf::from)) {
                None => print!("{csv}"),
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    write(&dir.join("table.csv"), &csv)?;
                    write(&dir.join("summary.json"), &result.summary_json())?;
                    for r in &result.runs {
                        if let Some(file) = &r.solution {
                            let name = format!("solution_{}_seed{}.json", r.method, r.seed);
                            write(&dir.join(name), &serde_json::to_string(file)?)?;
                        }
                    }
                    print!("{csv}");
                }
            }
            Ok(())
        }
        Command::Validate {
            solution,
            n,
            seed,
            confidence,
        } => {
            let file = load_solution(&solution)?;
            let p = file.problem.program()?;
            let report = empirical_violation_with(
                &file.solution,
                &p,
                n,
                RngHandle::new(seed, VALIDATION_STREAM),
                confidence,
            )?;
            print_json(&report)
        }
        Command::Grid {
            solution,
            stage,
            resolution,
            bounds,
            out,
        } => {
            let file = load_solution(&solution)?;
            let ResolvedProblem::ReachAvoid { spec, basis } = &file.problem else {
                bail!("grid export needs a reach-avoid solution");
            };
            if stage == 0 || stage > spec.horizon {
                bail!("stage must lie in 1..={}", spec.horizon);
            }
            let rect = match bounds {
                Some(b) => Rect::new([b[0], b[1]], [b[2], b[3]]),
                None => spec.safe_sets[stage - 1],
            };
            let grid = level_set_grid(&file.weights(), basis, stage, rect, resolution)?;
            let csv = grid.to_csv();
            match out {
                Some(path) => write(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

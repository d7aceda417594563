use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pdmcts::engine::Variant;
use pdmcts::harness::outputs::{recompute_report, write_report};
use pdmcts::harness::{run_experiment, ExperimentSpec, LoadedProblem, TraceLevel};
use pdmcts::oracle::solve_exact;
use pdmcts::{with_problem, Error, Mdp, Result};

/// Primal-dual Monte Carlo tree search.
///
/// Problems are given by a built-in tag (example1, example1-two-point, D5,
/// D10, D15, D5-full, D10-full, D15-full) or by the path of an instance file.
///
/// Exit codes: 0 success, 1 other failure, 2 configuration error,
/// 3 resource budget exceeded.
#[derive(Parser)]
#[command(name = "pdmcts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact optimal values at the root of an enumerable instance.
    Solve {
        #[arg(long)]
        problem: String,
        /// Write the result as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One search run.
    Search {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "primal_dual")]
        variant: Variant,
        #[arg(long, default_value_t = 1000)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the run's output files to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// A grid of runs: variants x seeds x iteration budgets.
    Experiment {
        /// JSON experiment spec; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        problem: Option<String>,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',')]
        variant: Vec<Variant>,
        /// Comma-separated iteration budgets.
        #[arg(long, value_delimiter = ',')]
        iterations: Vec<u64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the metric tables of a finished run from its tree snapshots.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Engine settings as a JSON file.
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Trace verbosity: none, root or full.
    #[arg(long)]
    trace: Option<String>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_trace(level: &str) -> Result<TraceLevel> {
    serde_json::from_value(serde_json::Value::String(level.to_string()))
        .map_err(|_| Error::Config(format!("unknown trace level {level:?}")))
}

impl Common {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(path) = &self.engine {
            spec.engine = serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
                location: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        if let Some(level) = &self.trace {
            spec.trace = parse_trace(level)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct SolveOutput {
    problem: String,
    initial_state: String,
    value: f64,
    actions: Vec<SolveAction>,
    optimal: Vec<String>,
}

#[derive(Serialize)]
struct SolveAction {
    action: String,
    q: f64,
}

fn solve(problem: &str, out: Option<PathBuf>) -> Result<()> {
    let loaded = LoadedProblem::load(problem)?;
    let output = with_problem!(&loaded, |p| {
        let table = solve_exact(p)?;
        let s0 = p.initial_state();
        let q = table
            .q_values(0, &s0)
            .ok_or_else(|| Error::Config("the initial state has no value".into()))?;
        SolveOutput {
            problem: problem.to_string(),
            initial_state: format!("{s0:?}"),
            value: table.value(0, &s0).unwrap_or(0.0),
            actions: q
                .iter()
                .map(|(a, q)| SolveAction {
                    action: format!("{a:?}"),
                    q: *q,
                })
                .collect(),
            optimal: table
                .optimal_actions(0, &s0)
                .iter()
                .map(|a| format!("{a:?}"))
                .collect(),
        }
    });
    println!("V*(s0) = {}", output.value);
    for a in &output.actions {
        println!("Q*(s0, {}) = {}", a.action, a.q);
    }
    println!("optimal: {}", output.optimal.join(", "));
    if let Some(path) = out {
        std::fs::write(&path, serde_json::to_vec_pretty(&output)?)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn experiment(spec: ExperimentSpec, jobs: usize) -> Result<()> {
    let report = run_experiment(&spec, jobs)?;
    for c in &report.cells {
        let m = &c.metrics;
        println!(
            "{} seed {} n {}: recommend {} V {:.4} expansions/node {} median depth {} violations {}",
            c.cell.variant,
            c.cell.seed,
            c.cell.iterations,
            m.recommendation.as_deref().unwrap_or("-"),
            m.root_value,
            m.expansions_per_node.map_or("-".into(), |v| format!("{v:.3}")),
            m.median_depth.map_or("-".into(), |v| v.to_string()),
            c.violations.len(),
        );
    }
    if let Some(out) = &spec.out {
        write_report(&report, out)?;
        println!("outputs written to {}", out.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { problem, out } => solve(&problem, out)?,
        Command::Search {
            problem,
            variant,
            iterations,
            seed,
            out,
            common,
        } => {
            let mut spec = ExperimentSpec::new(problem, vec![seed], vec![iterations]);
            spec.variants = vec![variant];
            spec.out = out;
            common.apply(&mut spec)?;
            experiment(spec, common.jobs)?;
        }
        Command::Experiment {
            config,
            problem,
            variant,
            iterations,
            seed,
            out,
            common,
        } => {
            let mut spec = match &config {
                Some(path) => ExperimentSpec::from_json(&read(path)?)?,
                None => ExperimentSpec::new(
                    problem.clone().ok_or_else(|| {
                        Error::Config("either --config or --problem is required".into())
                    })?,
                    Vec::new(),
                    Vec::new(),
                ),
            };
            if let Some(p) = problem {
                spec.problem = p;
            }
            if !variant.is_empty() {
                spec.variants = variant;
            }
            if !iterations.is_empty() {
                spec.iterations = iterations;
            }
            if !seed.is_empty() {
                spec.seeds = seed;
            }
            if out.is_some() {
                spec.out = out;
            }
            common.apply(&mut spec)?;
            experiment(spec, common.jobs)?;
        }
        Command::Report { out } => {
            let report = recompute_report(&out)?;
            std::io::Write::write_all(&mut std::io::stdout(), &report.summary)?;
            if !report.matches(&out)? {
                eprintln!("recomputed metrics differ from the stored tables");
                return Ok(false);
            }
            eprintln!("recomputed metrics match the stored tables");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

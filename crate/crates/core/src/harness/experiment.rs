//! Experiment grids: problem x variant x seed x iteration budget.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::TreeMetrics;
use crate::engine::{EngineConfig, IterationTrace, RootActionStat, Search, Variant};
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::policies::{CandidateConfig, RolloutKind, SelectionConfig, SelectionKind};
use crate::problems::instance_file::InstanceSpec;
use crate::problems::random_mdp::{generate_random_mdp_with, RandomMdp};
use crate::problems::rideshare::RideShare;
use crate::problems::shortest_path::{build_example1_graph, ShortestPath};
use crate::tree::WideningConfig;

/// A problem instance ready to be searched.
#[derive(Debug, Clone)]
pub enum LoadedProblem {
    ShortestPath(ShortestPath),
    RideShare(RideShare),
    RandomMdp(RandomMdp),
}

impl LoadedProblem {
    pub fn build(spec: &InstanceSpec) -> Result<Self> {
        Ok(match spec {
            InstanceSpec::Example1 { cost_model } => {
                LoadedProblem::ShortestPath(ShortestPath::new(build_example1_graph(), *cost_model)?)
            }
            InstanceSpec::RideShare(config) => LoadedProblem::RideShare(RideShare::new(config.clone())?),
            InstanceSpec::RandomMdp {
                sizes,
                reward_model,
                seed,
            } => LoadedProblem::RandomMdp(generate_random_mdp_with(*sizes, *reward_model, *seed)?),
        })
    }

    /// A built-in tag or an instance file path.
    pub fn load(reference: &str) -> Result<Self> {
        Self::build(&InstanceSpec::resolve(reference)?)
    }
}

/// Expands to `$body` with `$p` bound to the concrete problem.
#[macro_export]
macro_rules! with_problem {
    ($problem:expr, |$p:ident| $body:expr) => {
        match $problem {
            $crate::harness::LoadedProblem::ShortestPath($p) => $body,
            $crate::harness::LoadedProblem::RideShare($p) => $body,
            $crate::harness::LoadedProblem::RandomMdp($p) => $body,
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Metric tables and the tree snapshot only.
    None,
    /// Also the root `Q-bar` and `V-bar` traces.
    #[default]
    Root,
    /// Also every iteration's full trace.
    Full,
}

/// Engine knobs shared by every cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub selection: SelectionKind,
    pub exploration_scale: f64,
    pub epsilon: f64,
    /// Candidates per expansion consideration; `None` for the default rule.
    pub candidates: Option<usize>,
    pub state_widening_scale: f64,
    pub state_widening_exponent: f64,
    pub action_widening_scale: f64,
    pub action_widening_exponent: f64,
    pub mixture_scale: f64,
    pub rollout: RolloutSetting,
    pub lookahead_samples: usize,
    pub state_budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutSetting {
    #[default]
    RollingHorizon,
    UniformRandom,
}

impl Default for EngineSettings {
    fn default() -> Self {
        let config = EngineConfig::<()>::new(Variant::PrimalDual, 0, 0);
        Self {
            selection: config.selection.kind,
            exploration_scale: config.selection.exploration_scale,
            epsilon: config.selection.epsilon,
            candidates: config.candidates.k,
            state_widening_scale: config.widening.state_scale,
            state_widening_exponent: config.widening.state_exponent,
            action_widening_scale: config.widening.action_scale,
            action_widening_exponent: config.widening.action_exponent,
            mixture_scale: config.mixture_scale,
            rollout: RolloutSetting::RollingHorizon,
            lookahead_samples: 1,
            state_budget: config.state_budget,
        }
    }
}

impl EngineSettings {
    pub fn engine_config<S>(&self, variant: Variant, iterations: u64, seed: u64) -> EngineConfig<S> {
        let mut config = EngineConfig::new(variant, iterations, seed);
        config.selection = SelectionConfig {
            kind: self.selection,
            epsilon: self.epsilon,
            exploration_scale: self.exploration_scale,
        };
        config.candidates = CandidateConfig { k: self.candidates };
        config.widening = WideningConfig {
            state_scale: self.state_widening_scale,
            state_exponent: self.state_widening_exponent,
            action_scale: self.action_widening_scale,
            action_exponent: self.action_widening_exponent,
        };
        config.mixture_scale = self.mixture_scale;
        config.rollout = match self.rollout {
            RolloutSetting::RollingHorizon => RolloutKind::RollingHorizon {
                lookahead_samples: self.lookahead_samples,
            },
            RolloutSetting::UniformRandom => RolloutKind::UniformRandom,
        };
        config.state_budget = self.state_budget;
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Built-in tag or instance file.
    pub problem: String,
    #[serde(default = "both_variants")]
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub iterations: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trace: TraceLevel,
    #[serde(default)]
    pub engine: EngineSettings,
}

fn both_variants() -> Vec<Variant> {
    vec![Variant::PrimalDual, Variant::Vanilla]
}

impl ExperimentSpec {
    pub fn new(problem: impl Into<String>, seeds: Vec<u64>, iterations: Vec<u64>) -> Self {
        Self {
            problem: problem.into(),
            variants: both_variants(),
            seeds,
            iterations,
            out: None,
            trace: TraceLevel::default(),
            engine: EngineSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() || self.iterations.is_empty() {
            return Err(Error::config("an experiment needs at least one cell"));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::config("experiment seeds must be distinct"));
        }
        if self.iterations.contains(&0) {
            return Err(Error::config("iteration budgets must be positive"));
        }
        let variants: HashSet<_> = self.variants.iter().collect();
        let budgets: HashSet<_> = self.iterations.iter().collect();
        if variants.len() != self.variants.len() || budgets.len() != self.iterations.len() {
            return Err(Error::config("variants and iteration budgets must be distinct"));
        }
        Ok(())
    }

    /// Cells in output order: variant, then seed, then budget.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &variant in &self.variants {
            for &seed in &self.seeds {
                for &iterations in &self.iterations {
                    cells.push(Cell {
                        variant,
                        seed,
                        iterations,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Cell {
    pub variant: Variant,
    pub seed: u64,
    pub iterations: u64,
}

impl Cell {
    /// Directory name of the cell's outputs.
    pub fn key(&self) -> String {
        format!("{}_s{}_n{}", self.variant, self.seed, self.iterations)
    }
}

/// One record of the root `Q-bar` trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootQRecord {
    pub iteration: u64,
    pub action: String,
    pub q: f64,
    pub u: Option<f64>,
    /// `expanded`, `selected` or `idle`: what the iteration did with the action.
    pub event: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub mean_iteration_seconds: f64,
    pub max_iteration_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub cell: Cell,
    pub metrics: TreeMetrics,
    pub final_root: Vec<RootActionStat>,
    pub root_q: Vec<RootQRecord>,
    /// `(iteration, V-bar at the root)`.
    pub root_value: Vec<(u64, f64)>,
    pub traces: Vec<IterationTrace>,
    pub violations: Vec<crate::engine::Violation>,
    pub snapshot: String,
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellReport>,
}

fn root_records(trace: &IterationTrace) -> impl Iterator<Item = RootQRecord> + '_ {
    let root = trace.path.states[0];
    let expanded = trace
        .decisions
        .iter()
        .find(|d| d.node == root && d.expanded)
        .map(|d| d.best_index);
    let selected = trace.path.actions.first().copied();
    trace.root.iter().map(move |r| RootQRecord {
        iteration: trace.iteration,
        action: r.action.clone(),
        q: r.q,
        u: r.u,
        event: if expanded == Some(r.action_index) {
            "expanded"
        } else if selected == Some(r.node) {
            "selected"
        } else {
            "idle"
        },
    })
}

/// Runs one cell from scratch.
pub fn run_cell<P: Mdp + ?Sized>(
    problem: &P,
    settings: &EngineSettings,
    cell: Cell,
    trace: TraceLevel,
) -> Result<CellReport> {
    let config = settings.engine_config(cell.variant, cell.iterations, cell.seed);
    let mut search = Search::new(problem, config)?;
    let mut root_q = Vec::new();
    let mut root_value = Vec::new();
    let mut traces = Vec::new();
    let mut total = 0.0;
    let mut slowest: f64 = 0.0;
    for _ in 0..cell.iterations {
        let start = Instant::now();
        let t = search.step()?;
        let elapsed = start.elapsed().as_secs_f64();
        total += elapsed;
        slowest = slowest.max(elapsed);
        if trace != TraceLevel::None {
            root_q.extend(root_records(t));
            root_value.push((t.iteration, t.root_value));
        }
        if trace == TraceLevel::Full {
            traces.push(t.clone());
        }
    }
    let final_root = search.traces().last().map(|t| t.root.clone()).unwrap_or_default();
    let outcome = search.finish();
    let snapshot = outcome.tree.snapshot();
    Ok(CellReport {
        cell,
        metrics: TreeMetrics::from_snapshot(&snapshot),
        final_root,
        root_q,
        root_value,
        traces,
        violations: outcome.violations,
        snapshot: snapshot.to_text(),
        timing: Timing {
            total_seconds: total,
            mean_iteration_seconds: total / cell.iterations.max(1) as f64,
            max_iteration_seconds: slowest,
        },
    })
}

/// Runs every cell on a pool of `jobs` threads. Reports come back in cell
/// order whatever the scheduling.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let problem = LoadedProblem::load(&spec.problem)?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let reports: Result<Vec<CellReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                with_problem!(&problem, |p| run_cell(p, &spec.engine, cell, spec.trace))
            })
            .collect()
    });
    Ok(ExperimentReport {
        spec: spec.clone(),
        cells: reports?,
    })
}

//! Output files of an experiment.
//!
//! ```text
//! <out>/manifest.json            spec, resolved problem, cell list, file list
//! <out>/summary.csv              one row of tree metrics per cell
//! <out>/depth_histogram.csv      variant,seed,iterations,depth,count
//! <out>/root_actions.csv         final Q-bar, visits and u of each expanded root action
//! <out>/invariants.csv           invariant violations per cell
//! <out>/timing.csv               wall-clock per cell (not reproducible)
//! <out>/cells/<key>/cell.json    the cell's variant, seed and budget
//! <out>/cells/<key>/tree.txt     final tree snapshot
//! <out>/cells/<key>/root_q.jsonl {iteration, action, q, u, event} per iteration
//!                                and expanded root action
//! <out>/cells/<key>/root_value.csv  iteration,value (V-bar at the root)
//! <out>/cells/<key>/traces.jsonl full iteration traces (trace level `full`)
//! ```
//!
//! `summary.csv` columns: `variant, seed, iterations, recommendation,
//! root_value, expansions_per_node, median_depth, max_depth, state_nodes,
//! action_nodes, root_expanded`. Depths count state-node layers. Empty
//! fields mean "undefined" (for instance no expanded action yet).
//!
//! Everything except `timing.csv` is a deterministic function of the spec.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{Cell, ExperimentReport, ExperimentSpec};
use super::metrics::TreeMetrics;
use crate::engine::Variant;
use crate::error::{Error, Result};
use crate::problems::instance_file::InstanceSpec;
use crate::tree::TreeSnapshot;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DEPTH_FILE: &str = "depth_histogram.csv";
pub const ROOT_ACTIONS_FILE: &str = "root_actions.csv";
pub const INVARIANTS_FILE: &str = "invariants.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const SUMMARY_HEADER: [&str; 11] = [
    "variant",
    "seed",
    "iterations",
    "recommendation",
    "root_value",
    "expansions_per_node",
    "median_depth",
    "max_depth",
    "state_nodes",
    "action_nodes",
    "root_expanded",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub spec: ExperimentSpec,
    /// `Debug` rendering of the resolved problem description.
    pub resolved_problem: String,
    pub out: PathBuf,
    pub cells: Vec<ManifestCell>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCell {
    pub key: String,
    pub variant: Variant,
    pub seed: u64,
    pub iterations: u64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_record(cell: &Cell, m: &TreeMetrics) -> Vec<String> {
    vec![
        cell.variant.to_string(),
        cell.seed.to_string(),
        cell.iterations.to_string(),
        m.recommendation.clone().unwrap_or_default(),
        m.root_value.to_string(),
        opt(m.expansions_per_node),
        opt(m.median_depth),
        m.max_depth.to_string(),
        m.state_nodes.to_string(),
        m.action_nodes.to_string(),
        m.root_expanded.to_string(),
    ]
}

/// `summary.csv` content for `rows`.
pub fn summary_csv<'a>(rows: impl IntoIterator<Item = (&'a Cell, &'a TreeMetrics)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for (cell, m) in rows {
        w.write_record(summary_record(cell, m))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `depth_histogram.csv` content for `rows`.
pub fn depth_csv<'a>(rows: impl IntoIterator<Item = (&'a Cell, &'a TreeMetrics)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "seed", "iterations", "depth", "count"])?;
    for (cell, m) in rows {
        for (depth, count) in &m.depth_histogram {
            w.write_record([
                cell.variant.to_string(),
                cell.seed.to_string(),
                cell.iterations.to_string(),
                depth.to_string(),
                count.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::config(format!("cannot create output directory {}: {e}", path.display()))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every output file of `report` under `out`.
pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let rows: Vec<(&Cell, &TreeMetrics)> = report.cells.iter().map(|c| (&c.cell, &c.metrics)).collect();
    let mut files = vec![
        SUMMARY_FILE.to_string(),
        DEPTH_FILE.to_string(),
        ROOT_ACTIONS_FILE.to_string(),
        INVARIANTS_FILE.to_string(),
        TIMING_FILE.to_string(),
    ];
    write_file(&out.join(SUMMARY_FILE), &summary_csv(rows.iter().copied())?)?;
    write_file(&out.join(DEPTH_FILE), &depth_csv(rows.iter().copied())?)?;

    let mut roots = csv::Writer::from_writer(Vec::new());
    roots.write_record(["variant", "seed", "iterations", "action", "q", "visits", "u"])?;
    let mut invariants = csv::Writer::from_writer(Vec::new());
    invariants.write_record(["variant", "seed", "iterations", "violations", "first_violation"])?;
    let mut timing = csv::Writer::from_writer(Vec::new());
    timing.write_record([
        "variant",
        "seed",
        "iterations",
        "total_seconds",
        "mean_iteration_seconds",
        "max_iteration_seconds",
    ])?;
    let mut cells = Vec::new();
    for c in &report.cells {
        let cell = &c.cell;
        let head = [
            cell.variant.to_string(),
            cell.seed.to_string(),
            cell.iterations.to_string(),
        ];
        for r in &c.final_root {
            let mut rec = head.to_vec();
            rec.extend([r.action.clone(), r.q.to_string(), r.visits.to_string(), opt(r.u)]);
            roots.write_record(rec)?;
        }
        let mut rec = head.to_vec();
        rec.push(c.violations.len().to_string());
        rec.push(c.violations.first().map(|v| v.to_string()).unwrap_or_default());
        invariants.write_record(rec)?;
        let mut rec = head.to_vec();
        rec.extend([
            c.timing.total_seconds.to_string(),
            c.timing.mean_iteration_seconds.to_string(),
            c.timing.max_iteration_seconds.to_string(),
        ]);
        timing.write_record(rec)?;

        let key = cell.key();
        let dir = out.join("cells").join(&key);
        create_dir(&dir)?;
        let mut written = vec!["cell.json", "tree.txt"];
        write_file(&dir.join("cell.json"), &serde_json::to_vec_pretty(cell)?)?;
        write_file(&dir.join("tree.txt"), c.snapshot.as_bytes())?;
        if report.spec.trace != super::TraceLevel::None {
            write_jsonl(&dir.join("root_q.jsonl"), &c.root_q)?;
            let mut values = csv::Writer::from_writer(Vec::new());
            values.write_record(["iteration", "value"])?;
            for (n, v) in &c.root_value {
                values.write_record([n.to_string(), v.to_string()])?;
            }
            let bytes = values.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            write_file(&dir.join("root_value.csv"), &bytes)?;
            written.extend(["root_q.jsonl", "root_value.csv"]);
        }
        if report.spec.trace == super::TraceLevel::Full {
            write_jsonl(&dir.join("traces.jsonl"), &c.traces)?;
            written.push("traces.jsonl");
        }
        files.extend(written.iter().map(|f| format!("cells/{key}/{f}")));
        cells.push(ManifestCell {
            key,
            variant: cell.variant,
            seed: cell.seed,
            iterations: cell.iterations,
        });
    }
    for (name, w) in [
        (ROOT_ACTIONS_FILE, roots),
        (INVARIANTS_FILE, invariants),
        (TIMING_FILE, timing),
    ] {
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_file(&out.join(name), &bytes)?;
    }

    files.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: report.spec.clone(),
        resolved_problem: format!("{:?}", InstanceSpec::resolve(&report.spec.problem)?),
        out: out.to_path_buf(),
        cells,
        files,
    };
    write_file(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Metrics recomputed from the tree snapshots of a finished experiment.
#[derive(Debug, Clone)]
pub struct RecomputedReport {
    pub cells: Vec<(Cell, TreeMetrics)>,
    pub summary: Vec<u8>,
    pub depth_histogram: Vec<u8>,
}

impl RecomputedReport {
    /// Whether the recomputed tables equal the ones written by the run.
    pub fn matches(&self, out: &Path) -> Result<bool> {
        Ok(fs::read(out.join(SUMMARY_FILE))? == self.summary
            && fs::read(out.join(DEPTH_FILE))? == self.depth_histogram)
    }
}

pub fn recompute_report(out: &Path) -> Result<RecomputedReport> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(out.join(MANIFEST_FILE))?)?;
    let mut cells = Vec::new();
    for c in &manifest.cells {
        let text = fs::read_to_string(out.join("cells").join(&c.key).join("tree.txt"))?;
        let snapshot = TreeSnapshot::parse(&text)?;
        let cell = Cell {
            variant: c.variant,
            seed: c.seed,
            iterations: c.iterations,
        };
        cells.push((cell, TreeMetrics::from_snapshot(&snapshot)));
    }
    let rows = || cells.iter().map(|(c, m)| (c, m));
    Ok(RecomputedReport {
        summary: summary_csv(rows())?,
        depth_histogram: depth_csv(rows())?,
        cells,
    })
}

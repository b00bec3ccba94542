//! Experiment sweeps: method presets × hyperparameter grid × seeds, with
//! aggregation, per-method model selection and a Pareto table.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, SbmSpec};
use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, DataSplit};
use crate::injector::InjectionReport;
use crate::metrics::{self, RunSummary};
use crate::pipeline;
use crate::sampler::SamplerVariant;
use crate::trainer::{self, TrainConfig};

/// Named training setups compared by a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Injection, learned fair sampler, fairness penalty.
    Fairsample,
    /// Without edge injection.
    FsNe,
    /// Without the fairness penalty.
    FsNr,
    /// Uniform sampler instead of the learned one.
    FsNs,
    /// Uniform sampler with the fairness penalty.
    Gsr,
    /// Group-stratified sampler with the fairness penalty.
    Sgsr,
    /// Learned sampler restricted to feature similarity, with the penalty.
    Passr,
    /// Uniform sampler, no penalty, no injection.
    Graphsage,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Fairsample,
        Method::FsNe,
        Method::FsNr,
        Method::FsNs,
        Method::Gsr,
        Method::Sgsr,
        Method::Passr,
        Method::Graphsage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fairsample => "fairsample",
            Method::FsNe => "fs-ne",
            Method::FsNr => "fs-nr",
            Method::FsNs => "fs-ns",
            Method::Gsr => "gsr",
            Method::Sgsr => "sgsr",
            Method::Passr => "passr",
            Method::Graphsage => "graphsage",
        }
    }

    /// Forces the settings that define the method on top of `config`.
    pub fn apply(self, config: &mut TrainConfig) {
        config.no_injection = false;
        config.no_regularizer = false;
        config.uniform_sampling = false;
        config.frozen_attention = None;
        config.sampler = SamplerVariant::Fairsample;
        match self {
            Method::Fairsample => {}
            Method::FsNe => config.no_injection = true,
            Method::FsNr => config.no_regularizer = true,
            Method::FsNs => config.uniform_sampling = true,
            Method::Gsr => {
                config.sampler = SamplerVariant::Uniform;
                config.no_injection = true;
            }
            Method::Sgsr => {
                config.sampler = SamplerVariant::Stratified;
                config.no_injection = true;
            }
            Method::Passr => {
                config.frozen_attention = Some([1.0, 0.0]);
                config.no_injection = true;
            }
            Method::Graphsage => {
                config.sampler = SamplerVariant::Uniform;
                config.no_injection = true;
                config.alpha = 0.0;
            }
        }
        if config.no_regularizer {
            config.alpha = 0.0;
            config.no_regularizer = false;
        }
        if config.no_injection {
            config.injected_edges = 0;
            config.no_injection = false;
        }
        if config.uniform_sampling {
            config.sampler = SamplerVariant::Uniform;
            config.uniform_sampling = false;
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_grid() -> BTreeMap<String, Vec<serde_json::Value>> {
    BTreeMap::from([("alpha".to_string(), [0, 1, 2, 5, 10].into_iter().map(serde_json::Value::from).collect())])
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub graph: SbmSpec,
    #[serde(default)]
    pub base: TrainConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Config key → values; cells are the cartesian product.
    #[serde(default = "default_grid")]
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Draw a fresh graph per seed (graph seed = `graph.seed + seed`).
    #[serde(default = "default_true")]
    pub vary_graph: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            graph: SbmSpec::default(),
            base: TrainConfig::default(),
            methods: default_methods(),
            grid: default_grid(),
            seeds: default_seeds(),
            vary_graph: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    /// Unique label, `method[key=value,...]`.
    pub id: String,
    pub config: TrainConfig,
}

impl SuiteConfig {
    /// Every distinct (method, grid point) configuration. Grid points that a
    /// method overrides collapse into its first cell.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("suite needs at least one method and one seed".into()));
        }
        let mut points: Vec<Vec<(String, serde_json::Value)>> = vec![Vec::new()];
        for (key, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::InvalidConfig(format!("grid key {key:?} has no values")));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        let mut cells: Vec<Cell> = Vec::new();
        for &method in &self.methods {
            for point in &points {
                let mut config = self.base.clone();
                for (k, v) in point {
                    config.apply_override(&format!("{k}={v}"))?;
                }
                method.apply(&mut config);
                config.validate()?;
                if cells.iter().any(|c| c.method == method && c.config == config) {
                    continue;
                }
                let label = point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",");
                cells.push(Cell {
                    method,
                    id: format!("{}[{label}]", method.name()),
                    config,
                });
            }
        }
        Ok(cells)
    }

    pub fn graph_spec(&self, seed: u64) -> SbmSpec {
        let mut spec = self.graph.clone();
        if self.vary_graph {
            spec.seed = spec.seed.wrapping_add(seed);
        }
        spec
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub cell: String,
    pub seed: u64,
    pub graph_seed: u64,
    pub alpha: f64,
    pub val_accuracy: Option<f64>,
    pub val_delta_dp: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_delta_dp: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: Option<usize>,
    pub injected: Option<usize>,
    pub intra_ratio: Option<f64>,
    pub wall_time_secs: f64,
    pub error: String,
    /// Full training config as JSON, enough to rerun the cell.
    pub config: String,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub cell: String,
    pub runs: usize,
    pub failures: usize,
    pub val_accuracy_mean: f64,
    pub val_accuracy_std: f64,
    pub val_delta_dp_mean: f64,
    pub val_delta_dp_std: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub test_delta_dp_mean: f64,
    pub test_delta_dp_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    pub cell: String,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub test_delta_dp_mean: f64,
    pub test_delta_dp_std: f64,
    pub val_accuracy_mean: f64,
    pub val_delta_dp_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub method: Method,
    pub cell: String,
    pub test_accuracy_mean: f64,
    pub test_delta_dp_mean: f64,
    pub on_frontier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub table: Vec<TableRow>,
    pub pareto: Vec<ParetoRow>,
}

impl SuiteResult {
    pub fn selected(&self, method: Method) -> Option<&TableRow> {
        self.table.iter().find(|r| r.method == method)
    }

    /// Successful runs of a cell, ordered by seed.
    pub fn runs_of(&self, cell: &str) -> Vec<&RunRecord> {
        let mut out: Vec<&RunRecord> = self.runs.iter().filter(|r| r.cell == cell && r.ok()).collect();
        out.sort_by_key(|r| r.seed);
        out
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell aggregates, per-method selection and the Pareto table. Cells
/// appear in order of first occurrence in `runs`.
pub fn aggregate(runs: Vec<RunRecord>) -> Result<SuiteResult> {
    let mut order: Vec<(Method, String)> = Vec::new();
    let mut by_cell: HashMap<String, Vec<&RunRecord>> = HashMap::new();
    for r in &runs {
        let entry = by_cell.entry(r.cell.clone()).or_default();
        if entry.is_empty() {
            order.push((r.method, r.cell.clone()));
        }
        entry.push(r);
    }
    let mut cells = Vec::new();
    for (method, cell) in &order {
        let rs = &by_cell[cell];
        let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.ok()).collect();
        if ok.is_empty() {
            warn!("every run of {cell} failed");
            continue;
        }
        let col = |f: fn(&RunRecord) -> Option<f64>| -> (f64, f64) {
            mean_std(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        let (va, vas) = col(|r| r.val_accuracy);
        let (vd, vds) = col(|r| r.val_delta_dp);
        let (ta, tas) = col(|r| r.test_accuracy);
        let (td, tds) = col(|r| r.test_delta_dp);
        cells.push(CellSummary {
            method: *method,
            cell: cell.clone(),
            runs: rs.len(),
            failures: rs.len() - ok.len(),
            val_accuracy_mean: va,
            val_accuracy_std: vas,
            val_delta_dp_mean: vd,
            val_delta_dp_std: vds,
            test_accuracy_mean: ta,
            test_accuracy_std: tas,
            test_delta_dp_mean: td,
            test_delta_dp_std: tds,
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput("successful suite runs"));
    }

    let best = cells.iter().map(|c| c.val_accuracy_mean).fold(f64::NEG_INFINITY, f64::max);
    let mut methods: Vec<Method> = Vec::new();
    for c in &cells {
        if !methods.contains(&c.method) {
            methods.push(c.method);
        }
    }
    let mut table = Vec::new();
    for method in methods {
        let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.method == method).collect();
        let summaries: Vec<RunSummary> = mine
            .iter()
            .map(|c| RunSummary {
                id: c.cell.clone(),
                val_accuracy: c.val_accuracy_mean,
                val_delta_dp: c.val_delta_dp_mean,
            })
            .collect();
        let pick = mine[metrics::select_with_threshold(&summaries, best)?];
        table.push(TableRow {
            method,
            cell: pick.cell.clone(),
            test_accuracy_mean: pick.test_accuracy_mean,
            test_accuracy_std: pick.test_accuracy_std,
            test_delta_dp_mean: pick.test_delta_dp_mean,
            test_delta_dp_std: pick.test_delta_dp_std,
            val_accuracy_mean: pick.val_accuracy_mean,
            val_delta_dp_mean: pick.val_delta_dp_mean,
        });
    }

    let points: Vec<(f64, f64)> = cells.iter().map(|c| (c.test_accuracy_mean, c.test_delta_dp_mean)).collect();
    let frontier = metrics::pareto_frontier(&points);
    let pareto = cells
        .iter()
        .enumerate()
        .map(|(i, c)| ParetoRow {
            method: c.method,
            cell: c.cell.clone(),
            test_accuracy_mean: c.test_accuracy_mean,
            test_delta_dp_mean: c.test_delta_dp_mean,
            on_frontier: frontier.contains(&i),
        })
        .collect();
    Ok(SuiteResult {
        runs,
        cells,
        table,
        pareto,
    })
}

fn injection_key(config: &TrainConfig) -> String {
    let p = pipeline::predictor_config(config);
    format!(
        "{}|{}|{}|{}|{:?}",
        serde_json::to_string(&p).unwrap_or_default(),
        config.effective_injection(),
        config.hops,
        config.tau,
        config.injection_mode
    )
}

fn run_cell(
    cell: &Cell,
    seed: u64,
    graph_seed: u64,
    graph: &AttributedGraph,
    split: &DataSplit,
    injected: Option<&(AttributedGraph, InjectionReport)>,
) -> RunRecord {
    let config = TrainConfig {
        seed,
        ..cell.config.clone()
    };
    let mut record = RunRecord {
        method: cell.method,
        cell: cell.id.clone(),
        seed,
        graph_seed,
        alpha: config.effective_alpha(),
        val_accuracy: None,
        val_delta_dp: None,
        test_accuracy: None,
        test_delta_dp: None,
        best_epoch: None,
        epochs: None,
        injected: injected.map(|(_, r)| r.edges.len()),
        intra_ratio: None,
        wall_time_secs: 0.0,
        error: String::new(),
        config: serde_json::to_string(&config).unwrap_or_default(),
    };
    let g = injected.map_or(graph, |(g, _)| g);
    record.intra_ratio = g.intra_group_edge_ratio().ok();
    match trainer::train(g, split, &config) {
        Ok(out) => {
            let rep = out.report;
            record.val_accuracy = Some(rep.val.accuracy);
            record.val_delta_dp = Some(rep.val.delta_dp);
            record.test_accuracy = rep.test.as_ref().map(|t| t.accuracy);
            record.test_delta_dp = rep.test.as_ref().map(|t| t.delta_dp);
            record.best_epoch = Some(rep.best_epoch);
            record.epochs = Some(rep.epochs.len());
            record.wall_time_secs = rep.wall_time_secs;
        }
        Err(e) => {
            warn!("{} seed {seed} failed: {e}", cell.id);
            record.error = e.to_string();
        }
    }
    record
}

type InjectionResult = std::result::Result<(AttributedGraph, InjectionReport), String>;

/// Runs every cell for every seed. Individual failures are recorded in the
/// run table and the suite continues.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteResult> {
    let cells = config.cells()?;
    info!("suite: {} cells x {} seeds", cells.len(), config.seeds.len());
    let data: Vec<(u64, AttributedGraph, DataSplit)> = config
        .seeds
        .par_iter()
        .map(|&s| {
            let spec = config.graph_spec(s);
            datagen::generate(&spec).map(|(g, split)| (spec.seed, g, split))
        })
        .collect::<Result<_>>()?;

    // injected graphs depend only on the seed and injection settings
    let mut jobs: Vec<(usize, String, TrainConfig)> = Vec::new();
    for (si, &seed) in config.seeds.iter().enumerate() {
        for cell in &cells {
            if cell.config.effective_injection() == 0 {
                continue;
            }
            let c = TrainConfig {
                seed,
                ..cell.config.clone()
            };
            let key = injection_key(&c);
            if !jobs.iter().any(|(i, k, _)| *i == si && *k == key) {
                jobs.push((si, key, c));
            }
        }
    }
    let injected: Vec<(usize, String, InjectionResult)> = jobs
        .into_par_iter()
        .map(|(si, key, c)| {
            let (_, g, split) = &data[si];
            let res = pipeline::inject_for(g, split, &c).map_err(|e| e.to_string());
            (si, key, res)
        })
        .collect();
    let lookup = |si: usize, c: &TrainConfig| injected.iter().find(|(i, k, _)| *i == si && *k == injection_key(c));

    let tasks: Vec<(usize, &Cell)> = (0..config.seeds.len())
        .flat_map(|si| cells.iter().map(move |c| (si, c)))
        .collect();
    let mut runs: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(si, cell)| {
            let seed = config.seeds[si];
            let (graph_seed, g, split) = &data[si];
            if cell.config.effective_injection() == 0 {
                return run_cell(cell, seed, *graph_seed, g, split, None);
            }
            let c = TrainConfig {
                seed,
                ..cell.config.clone()
            };
            match lookup(si, &c) {
                Some((_, _, Ok(inj))) => run_cell(cell, seed, *graph_seed, g, split, Some(inj)),
                Some((_, _, Err(e))) => failed(cell, seed, *graph_seed, &c, format!("injection failed: {e}")),
                None => failed(cell, seed, *graph_seed, &c, "injection result missing".into()),
            }
        })
        .collect();
    // cell-major order for the run table
    let rank: HashMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    runs.sort_by_key(|r| (rank[r.cell.as_str()], r.seed));
    aggregate(runs)
}

fn failed(cell: &Cell, seed: u64, graph_seed: u64, config: &TrainConfig, error: String) -> RunRecord {
    RunRecord {
        method: cell.method,
        cell: cell.id.clone(),
        seed,
        graph_seed,
        alpha: config.effective_alpha(),
        val_accuracy: None,
        val_delta_dp: None,
        test_accuracy: None,
        test_delta_dp: None,
        best_epoch: None,
        epochs: None,
        injected: None,
        intra_ratio: None,
        wall_time_secs: 0.0,
        error,
        config: serde_json::to_string(config).unwrap_or_default(),
    }
}

pub const RUNS_FILE: &str = "runs.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const PARETO_FILE: &str = "pareto.csv";

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Writes runs, cells, table and pareto CSVs into `dir`.
pub fn write_results(dir: &Path, result: &SuiteResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(RUNS_FILE), &result.runs)?;
    write_csv(&dir.join(CELLS_FILE), &result.cells)?;
    write_csv(&dir.join(TABLE_FILE), &result.table)?;
    write_csv(&dir.join(PARETO_FILE), &result.pareto)?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

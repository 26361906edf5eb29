//! Subcommand implementations. Each writes its outputs under an output
//! directory and returns the report it wrote.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparsenet::lemmas::{self, LemmaCheck, LemmaSuite};
use sparsenet::netcore::{build_network, io, SparseNet};
use sparsenet::pathmetrics::{structure_report, StructureReport};
use sparsenet::rng::derive_seed;
use sparsenet::scores::{log_synflow_objective, PathNorm};
use sparsenet::shuffle::{shuffle_width_with, ShuffleMode, ShuffleOutcome};
use sparsenet::tasks::{self, Dataset, Split};
use sparsenet::trainer::{self, TrainReport};

use crate::config::{ExperimentConfig, TaskConfig};
use crate::methods::{self, Method};
use crate::output::{cell, Manifest, OutDir, TIMING_FILE};

/// Outcome of a command: how many cells failed.
pub trait Failures {
    fn failures(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub method: Method,
    pub density: f64,
    pub seed: u64,
}

impl CellKey {
    pub fn dir(&self) -> String {
        format!("cells/{}_rho{}_seed{}", self.method, self.density, self.seed)
    }
}

fn grid(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for &method in &cfg.prune.methods {
        for &density in &cfg.prune.densities {
            for &seed in &cfg.seeds {
                cells.push(CellKey { method, density, seed });
            }
        }
    }
    cells
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?)
}

/// Train and test splits of the configured task for `seed`.
pub fn load_task(task: &TaskConfig, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
    let spec = task.transform_task();
    match &task.idx {
        None => {
            let (train, test, _) = tasks::generate_transform_task(&spec, seed)?;
            Ok((train, test))
        }
        Some(files) => {
            let train = tasks::load_idx(&files.train_images, &files.train_labels, Split::Train)?;
            let test = tasks::load_idx(&files.test_images, &files.test_labels, Split::Test)?;
            let train = train.slice(0..train.len().min(spec.train_per_class * spec.classes));
            let test = test.slice(0..test.len().min(spec.test_per_class * spec.classes));
            let (train, _) = tasks::transform_task_from_images(&spec, &train, seed)?;
            let (test, _) = tasks::transform_task_from_images(&spec, &test, seed)?;
            Ok((train, test))
        }
    }
}

fn datasets(cfg: &ExperimentConfig, needed: bool) -> anyhow::Result<BTreeMap<u64, (Dataset, Dataset)>> {
    let mut out = BTreeMap::new();
    if let (true, Some(task)) = (needed, &cfg.task) {
        for &seed in &cfg.seeds {
            out.insert(seed, load_task(task, seed).with_context(|| format!("task data for seed {seed}"))?);
        }
    }
    Ok(out)
}

fn widths_cell(widths: &[usize]) -> String {
    widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";")
}

/// One row of the prune summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    #[serde(flatten)]
    pub key: CellKey,
    /// `ok` or the error message.
    pub status: String,
    pub achieved_density: Option<f64>,
    pub active_params: Option<usize>,
    pub walks: Option<usize>,
    pub log10_paths: Option<f64>,
    pub trace: Option<f64>,
    pub log_synflow_l1: Option<f64>,
    pub log_synflow_l2: Option<f64>,
    pub collapsed: Option<bool>,
    /// Active width per unit layer.
    pub widths: Vec<usize>,
    /// Active parameters per parametrized layer.
    pub layer_counts: Vec<usize>,
}

impl PruneRow {
    fn failed(key: CellKey, err: &anyhow::Error) -> Self {
        PruneRow {
            key,
            status: format!("failed: {err:#}"),
            achieved_density: None,
            active_params: None,
            walks: None,
            log10_paths: None,
            trace: None,
            log_synflow_l1: None,
            log_synflow_l2: None,
            collapsed: None,
            widths: Vec::new(),
            layer_counts: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub rows: Vec<PruneRow>,
}

impl Failures for PruneReport {
    fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

impl PruneReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,density,seed,status,achieved_density,active_params,walks,log10_paths,trace,log_synflow_l1,log_synflow_l2,collapsed,widths,layer_counts\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},\"{}\",{},{},{},{},{},{},{},{},{},{}\n",
                r.key.method,
                r.key.density,
                r.key.seed,
                r.status.replace('"', "'"),
                cell(r.achieved_density),
                r.active_params.map_or(String::new(), |v| v.to_string()),
                r.walks.map_or(String::new(), |v| v.to_string()),
                cell(r.log10_paths),
                cell(r.trace),
                cell(r.log_synflow_l1),
                cell(r.log_synflow_l2),
                r.collapsed.map_or(String::new(), |v| v.to_string()),
                widths_cell(&r.widths),
                widths_cell(&r.layer_counts),
            ));
        }
        out
    }

    /// Successful rows for a method and density.
    pub fn cells(&self, method: Method, density: f64) -> impl Iterator<Item = &PruneRow> {
        self.rows.iter().filter(move |r| r.ok() && r.key.method == method && r.key.density == density)
    }
}

fn prune_cell(
    cfg: &ExperimentConfig,
    key: CellKey,
    data: Option<&Dataset>,
    out: Option<&OutDir>,
) -> anyhow::Result<(PruneRow, SparseNet)> {
    let arch = cfg.network.architecture()?;
    let net = build_network(&arch, cfg.network.init, key.seed)?;
    let pruned = methods::prune(&net, key.method, key.density, &cfg.prune, data, key.seed)?;
    let report = structure_report(&pruned.net);
    if let Some(out) = out {
        let dir = key.dir();
        out.write(&format!("{dir}/net.json"), io::net_to_json(&pruned.net))?;
        out.write(&format!("{dir}/structure.json"), report.to_json())?;
        out.write(&format!("{dir}/structure.csv"), report.to_csv())?;
        if let Some(budget) = &pruned.budget {
            out.write_json(&format!("{dir}/budget.json"), budget)?;
        }
        if let (true, Some(walks)) = (cfg.prune.write_walks, &pruned.walks) {
            out.write(&format!("{dir}/walks.ndjson"), walks.to_ndjson())?;
        }
    }
    let widths = sparsenet::pathmetrics::layer_widths(&pruned.net);
    let row = PruneRow {
        key,
        status: "ok".into(),
        achieved_density: Some(report.density),
        active_params: Some(report.active_params),
        walks: pruned.budget.as_ref().map(|b| b.walk_count),
        log10_paths: Some(report.log10_paths),
        trace: report.trace,
        log_synflow_l1: Some(log_synflow_objective(&pruned.net, PathNorm::L1)),
        log_synflow_l2: Some(report.log_synflow_l2),
        collapsed: Some(report.collapsed()),
        widths,
        layer_counts: pruned.net.mask().layer_active_counts(),
    };
    Ok((row, pruned.net))
}

/// Prunes every (method, density, seed) cell and writes the masks and
/// structure reports.
pub fn run_prune(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<PruneReport> {
    let out = OutDir::create(out_dir)?;
    let data = datasets(cfg, cfg.prune.methods.iter().any(|m| m.needs_data()))?;
    let rows: Vec<PruneRow> = pool(cfg.workers)?.install(|| {
        grid(cfg)
            .into_par_iter()
            .map(|key| {
                let train = data.get(&key.seed).map(|d| &d.0);
                prune_cell(cfg, key, train, Some(&out)).map(|r| r.0).unwrap_or_else(|e| {
                    log::error!("cell {} failed: {e:#}", key.dir());
                    PruneRow::failed(key, &e)
                })
            })
            .collect()
    });
    let report = PruneReport { rows };
    out.write("prune.csv", report.to_csv())?;
    out.write_json("prune.json", &report)?;
    out.finish(Manifest::new("prune").with_config(cfg))?;
    Ok(report)
}

/// One row of the trace summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub source: String,
    pub density: f64,
    pub active_params: usize,
    pub log10_paths: f64,
    pub trace: Option<f64>,
    pub log_synflow_l1: f64,
    pub log_synflow_l2: f64,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub rows: Vec<TraceRow>,
    /// Mean trace per (method, density) when computed from a config.
    pub means: Vec<MeanRow>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub method: Method,
    pub density: f64,
    pub cells: usize,
    pub mean: f64,
    pub std: f64,
}

impl Failures for TraceReport {
    fn failures(&self) -> usize {
        self.failures
    }
}

impl TraceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,density,active_params,log10_paths,trace,log_synflow_l1,log_synflow_l2,collapsed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{},{:e},{},{:e},{:e},{}\n",
                r.source, r.density, r.active_params, r.log10_paths, cell(r.trace), r.log_synflow_l1, r.log_synflow_l2, r.collapsed
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn means_csv(rows: &[MeanRow], value: &str) -> String {
    let mut out = format!("method,density,cells,mean_{value},std_{value}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:e},{:e}\n", r.method, r.density, r.cells, r.mean, r.std));
    }
    out
}

fn trace_row(source: String, net: &SparseNet) -> TraceRow {
    let r: StructureReport = structure_report(net);
    TraceRow {
        source,
        density: r.density,
        active_params: r.active_params,
        log10_paths: r.log10_paths,
        trace: r.trace,
        log_synflow_l1: log_synflow_objective(net, PathNorm::L1),
        log_synflow_l2: r.log_synflow_l2,
        collapsed: r.collapsed(),
    }
}

/// Path-kernel trace and path statistics of saved networks.
pub fn run_trace_files(nets: &[std::path::PathBuf], out_dir: &Path) -> anyhow::Result<TraceReport> {
    let out = OutDir::create(out_dir)?;
    let mut manifest = Manifest::new("trace");
    let mut rows = Vec::new();
    for path in nets {
        let net = io::read_net(path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(trace_row(name, &net));
        manifest = manifest.with_input(path)?;
    }
    let report = TraceReport { rows, means: Vec::new(), failures: 0 };
    out.write("trace.csv", report.to_csv())?;
    out.write_json("trace.json", &report)?;
    out.finish(manifest)?;
    Ok(report)
}

/// Prunes the config grid without saving masks and tabulates traces.
pub fn run_trace_grid(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<TraceReport> {
    let out = OutDir::create(out_dir)?;
    let data = datasets(cfg, cfg.prune.methods.iter().any(|m| m.needs_data()))?;
    let cells = grid(cfg);
    let results: Vec<(CellKey, Option<TraceRow>)> = pool(cfg.workers)?.install(|| {
        cells
            .into_par_iter()
            .map(|key| {
                let train = data.get(&key.seed).map(|d| &d.0);
                match prune_cell(cfg, key, train, None) {
                    Ok((_, net)) => (key, Some(trace_row(key.dir().trim_start_matches("cells/").to_string(), &net))),
                    Err(e) => {
                        log::error!("cell {} failed: {e:#}", key.dir());
                        (key, None)
                    }
                }
            })
            .collect()
    });
    let failures = results.iter().filter(|r| r.1.is_none()).count();
    let mut means = Vec::new();
    for &method in &cfg.prune.methods {
        for &density in &cfg.prune.densities {
            let traces: Vec<f64> = results
                .iter()
                .filter(|(k, _)| k.method == method && k.density == density)
                .filter_map(|(_, r)| r.as_ref().and_then(|r| r.trace))
                .collect();
            let (mean, std) = mean_std(&traces);
            means.push(MeanRow { method, density, cells: traces.len(), mean, std });
        }
    }
    let report = TraceReport { rows: results.into_iter().filter_map(|r| r.1).collect(), means, failures };
    out.write("trace.csv", report.to_csv())?;
    out.write("trace_summary.csv", means_csv(&report.means, "trace"))?;
    out.write_json("trace.json", &report)?;
    out.finish(Manifest::new("trace").with_config(cfg))?;
    Ok(report)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    #[serde(flatten)]
    pub key: CellKey,
    pub status: String,
    pub achieved_density: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub density: f64,
    /// Cells that finished.
    pub cells: usize,
    pub mean_test_loss: f64,
    /// Population standard deviation over seeds.
    pub std_test_loss: f64,
    pub mean_achieved_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<CompareRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl Failures for ExperimentReport {
    fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

impl ExperimentReport {
    pub fn aggregate(&self, method: Method, density: f64) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method && a.density == density)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,density,seed,status,achieved_density,train_loss,test_loss,test_accuracy,widths\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},\"{}\",{},{},{},{},{}\n",
                r.key.method,
                r.key.density,
                r.key.seed,
                r.status.replace('"', "'"),
                cell(r.achieved_density),
                cell(r.train_loss),
                cell(r.test_loss),
                cell(r.test_accuracy),
                widths_cell(&r.widths)
            ));
        }
        out
    }

    pub fn aggregates_csv(&self) -> String {
        let mut out = String::from("method,density,cells,mean_test_loss,std_test_loss,mean_achieved_density\n");
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e}\n",
                a.method, a.density, a.cells, a.mean_test_loss, a.std_test_loss, a.mean_achieved_density
            ));
        }
        out
    }
}

fn compare_cell(
    cfg: &ExperimentConfig,
    key: CellKey,
    data: &(Dataset, Dataset),
    out: &OutDir,
) -> anyhow::Result<(CompareRow, f64)> {
    let (row, net) = prune_cell(cfg, key, Some(&data.0), None)?;
    let train_cfg = cfg.train.with_seed(derive_seed(key.seed, "train"));
    let (_, report) = trainer::train(&net, &data.0, Some(&data.1), &train_cfg)?;
    let dir = key.dir();
    out.write(&format!("{dir}/train.csv"), report.to_csv())?;
    out.write(&format!("{dir}/{TIMING_FILE}"), report.timing_csv())?;
    let seconds = report.epochs.iter().map(|e| e.wall_time_secs).sum();
    Ok((
        CompareRow {
            key,
            status: "ok".into(),
            achieved_density: row.achieved_density,
            train_loss: report.final_train_loss,
            test_loss: report.final_eval_loss,
            test_accuracy: report.final_eval_accuracy,
            widths: row.widths,
        },
        seconds,
    ))
}

/// Prunes, trains and evaluates every cell, then aggregates over seeds.
pub fn run_compare(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExperimentReport> {
    if cfg.task.is_none() {
        return Err(crate::config::ConfigError("compare needs a [task] section".into()).into());
    }
    let out = OutDir::create(out_dir)?;
    let data = datasets(cfg, true)?;
    let rows: Vec<CompareRow> = pool(cfg.workers)?.install(|| {
        grid(cfg)
            .into_par_iter()
            .map(|key| match compare_cell(cfg, key, &data[&key.seed], &out) {
                Ok((row, _)) => row,
                Err(e) => {
                    log::error!("cell {} failed: {e:#}", key.dir());
                    CompareRow {
                        key,
                        status: format!("failed: {e:#}"),
                        achieved_density: None,
                        train_loss: None,
                        test_loss: None,
                        test_accuracy: None,
                        widths: Vec::new(),
                    }
                }
            })
            .collect()
    });
    let mut aggregates = Vec::new();
    for &method in &cfg.prune.methods {
        for &density in &cfg.prune.densities {
            let done: Vec<&CompareRow> = rows
                .iter()
                .filter(|r| r.key.method == method && r.key.density == density && r.status == "ok")
                .collect();
            let losses: Vec<f64> = done.iter().filter_map(|r| r.test_loss).collect();
            let dens: Vec<f64> = done.iter().filter_map(|r| r.achieved_density).collect();
            let (mean, std) = mean_std(&losses);
            aggregates.push(AggregateRow {
                method,
                density,
                cells: done.len(),
                mean_test_loss: mean,
                std_test_loss: std,
                mean_achieved_density: mean_std(&dens).0,
            });
        }
    }
    let report = ExperimentReport { rows, aggregates };
    out.write("compare.csv", report.to_csv())?;
    out.write("compare_summary.csv", report.aggregates_csv())?;
    out.write_json("compare.json", &report)?;
    out.finish(Manifest::new("compare").with_config(cfg))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainComparison {
    pub test_loss_before: f64,
    pub test_loss_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleReport {
    pub outcome: ShuffleOutcome,
    pub mode: ShuffleMode,
    pub layer_counts_before: Vec<usize>,
    pub layer_counts_after: Vec<usize>,
    pub before: StructureReport,
    pub after: StructureReport,
    pub retrain: Option<RetrainComparison>,
}

impl Failures for ShuffleReport {
    fn failures(&self) -> usize {
        0
    }
}

/// Widens a saved mask. With a config carrying a task, both the original
/// and the shuffled network are trained with the same settings and seed.
pub fn run_shuffle_width(
    net_path: &Path,
    factor: f64,
    mode: ShuffleMode,
    seed: Option<u64>,
    retrain_cfg: Option<&ExperimentConfig>,
    out_dir: &Path,
) -> anyhow::Result<ShuffleReport> {
    let net = io::read_net(net_path)?;
    let seed = seed.unwrap_or(net.seed());
    let (shuffled, outcome) = shuffle_width_with(&net, factor, mode, derive_seed(seed, "shuffle"))?;
    let retrain = match retrain_cfg {
        Some(cfg) => {
            let task = cfg.task.as_ref().ok_or_else(|| {
                crate::config::ConfigError("retraining after a shuffle needs a [task] section".into())
            })?;
            let (train, test) = load_task(task, seed)?;
            let tc = cfg.train.with_seed(derive_seed(seed, "train"));
            let before = trainer::train(&net, &train, Some(&test), &tc)?.1;
            let after = trainer::train(&shuffled, &train, Some(&test), &tc)?.1;
            Some(RetrainComparison {
                test_loss_before: before.final_eval_loss.unwrap_or(f64::NAN),
                test_loss_after: after.final_eval_loss.unwrap_or(f64::NAN),
            })
        }
        None => None,
    };
    let out = OutDir::create(out_dir)?;
    let report = ShuffleReport {
        outcome,
        mode,
        layer_counts_before: net.mask().layer_active_counts(),
        layer_counts_after: shuffled.mask().layer_active_counts(),
        before: structure_report(&net),
        after: structure_report(&shuffled),
        retrain,
    };
    out.write("net.json", io::net_to_json(&shuffled))?;
    out.write("structure_before.csv", report.before.to_csv())?;
    out.write("structure_after.csv", report.after.to_csv())?;
    out.write_json("shuffle.json", &report)?;
    let mut manifest = Manifest::new("shuffle-width").with_input(net_path)?;
    if let Some(cfg) = retrain_cfg {
        manifest = manifest.with_config(cfg);
    }
    manifest.seeds = vec![seed];
    manifest.arguments = serde_json::json!({ "width_factor": factor, "mode": mode });
    out.finish(manifest)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub density_before: f64,
    pub density_after: f64,
}

impl Failures for TrainOutcome {
    fn failures(&self) -> usize {
        0
    }
}

/// Trains a saved network on the configured task.
pub fn run_train(net_path: &Path, cfg: &ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> anyhow::Result<TrainOutcome> {
    let task = cfg.task.as_ref().ok_or_else(|| crate::config::ConfigError("train needs a [task] section".into()))?;
    let net = io::read_net(net_path)?;
    let seed = seed.unwrap_or(net.seed());
    let (train, test) = load_task(task, seed)?;
    let (trained, report) = trainer::train(&net, &train, Some(&test), &cfg.train.with_seed(derive_seed(seed, "train")))?;
    let out = OutDir::create(out_dir)?;
    out.write("net.json", io::net_to_json(&trained))?;
    out.write("train.csv", report.to_csv())?;
    out.write(TIMING_FILE, report.timing_csv())?;
    let outcome = TrainOutcome { report: report.without_timing(), density_before: net.density(), density_after: trained.density() };
    out.write_json("train.json", &outcome)?;
    let mut manifest = Manifest::new("train").with_config(cfg).with_input(net_path)?;
    manifest.seeds = vec![seed];
    out.finish(manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub rows: Vec<LemmaCheck>,
}

impl Failures for LemmaReport {
    fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.passed).count()
    }
}

impl LemmaReport {
    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<w$}  {:<4}  expected / measured\n", "check", "pass");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<w$}  {:<4}  {} / {}\n",
                r.name,
                if r.passed { "yes" } else { "NO" },
                r.expected,
                r.measured
            ));
        }
        out
    }
}

/// Runs the structural checks and writes the pass/fail table.
pub fn run_verify_lemmas(suite: &LemmaSuite, out_dir: &Path) -> anyhow::Result<LemmaReport> {
    let out = OutDir::create(out_dir)?;
    let report = LemmaReport { rows: lemmas::run_suite(suite) };
    out.write("lemmas.csv", lemmas::checks_to_csv(&report.rows))?;
    out.write_json("lemmas.json", &report)?;
    let mut manifest = Manifest::new("verify-lemmas");
    manifest.seeds = suite.seeds.clone();
    manifest.arguments = serde_json::to_value(suite)?;
    out.finish(manifest)?;
    Ok(report)
}

//! Configuration-driven experiment runner behind the `seqgen` binary.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! bundle/                 preprocessed dataset (see `data::write_bundle`)
//! model.ckpt              best-epoch checkpoint
//! train_history.jsonl     one `EpochRecord` per line
//! train_summary.json      best epoch and the resolved model/train config
//! eval-<split>/           report.json, metrics.csv, hitrate.csv, timings.json
//! sweeps/<name>.csv       one row per grid point
//! sweeps/<name>/<i>/      report of grid point i
//! timing.csv              per-user latency per strategy and sequence count
//! ```

mod config;
mod strategy;

pub use config::{DatasetConfig, EvalConfig, ModelSource, RunConfig, SweepSpec, TimingConfig};
pub use strategy::{StrategyKind, StrategySpec};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    ingest, preprocess, read_bundle, read_meta, split, write_bundle, BundleMeta, DatasetStats,
    InteractionLog, Partition, SplitDataset, UserHistory, BUNDLE_VERSION,
};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, StrategyReport, StrategyTiming, UserMetrics, REPORT_VERSION};
use crate::model::{
    load_checkpoint, save_checkpoint, train, EpochRecord, GptModel, MarkovModel, ModelConfig,
    NextItemModel, PopularityModel, TrainConfig,
};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Run `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub meta: BundleMeta,
    pub split: SplitDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOutcome {
    pub stats: DatasetStats,
    /// Whether any bundle file was (re)written.
    pub changed: bool,
    pub bundle_dir: PathBuf,
}

fn bundle_meta(cfg: &RunConfig, stats: DatasetStats) -> BundleMeta {
    BundleMeta {
        version: BUNDLE_VERSION,
        source: cfg.dataset.path.display().to_string(),
        input_format: cfg.dataset.format.clone(),
        preprocess: cfg.dataset.preprocess.clone(),
        stats,
        n_holdout: cfg.dataset.n_holdout,
        val_fraction: cfg.dataset.val_fraction,
        seed: cfg.seed,
    }
}

/// Ingest and filter the raw file and write the bundle.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessOutcome> {
    let events = ingest(&cfg.dataset.path, &cfg.dataset.format)?;
    let log = preprocess(&events, &cfg.dataset.preprocess)?;
    let stats = log.stats();
    let dir = cfg.bundle_dir();
    let changed = write_bundle(&dir, &log, &bundle_meta(cfg, stats.clone()))?;
    Ok(PreprocessOutcome { stats, changed, bundle_dir: dir })
}

/// Read the bundle, rebuilding it first if it is missing or was made with
/// different settings, and split it.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.bundle_dir();
    let fresh = match read_meta(&dir) {
        Ok(meta) => meta == bundle_meta(cfg, meta.stats.clone()),
        Err(_) => false,
    };
    if !fresh {
        cmd_preprocess(cfg)?;
    }
    let (log, meta) = read_bundle(&dir)?;
    let split = split(&log, cfg.dataset.n_holdout, cfg.dataset.val_fraction, cfg.seed)?;
    Ok(Dataset { log, meta, split })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs: usize,
    pub best_val_ndcg: f64,
    pub parameter_count: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Architecture choices not expressed by the config fields.
    pub architecture: Vec<String>,
}

pub const ARCHITECTURE_NOTES: &[&str] = &[
    "pre-layer-norm residual blocks, layer norm eps 1e-5",
    "GELU (tanh approximation) feed-forward of width 4d",
    "learned positional embeddings of length max_seq_len",
    "output logits = final hidden state times transposed item embedding (tied)",
    "init normal(0, 0.02) for weights and embeddings, zero biases, unit layer-norm gains",
    "dropout on embeddings, attention probabilities and both residual branches",
    "training sequences: last max_seq_len + 1 items of each user's train portion",
];

/// Train the transformer and write the checkpoint, history and summary.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord) + Send) -> Result<TrainSummary> {
    let data = load_dataset(cfg)?;
    let mcfg = cfg.model_config(data.split.item_count)?;
    let outcome = with_workers(cfg.workers, || train::<f32>(&data.split, &mcfg, &cfg.train, cfg.seed, on_epoch))??;
    save_checkpoint(&outcome.model, cfg.checkpoint_path())?;
    let mut history = String::new();
    for r in &outcome.history {
        history.push_str(&serde_json::to_string(r)?);
        history.push('\n');
    }
    write_file(&cfg.out_dir.join("train_history.jsonl"), history)?;
    let best_val_ndcg = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .map_or(0.0, |r| r.val_ndcg);
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        best_val_ndcg,
        parameter_count: outcome.model.params().parameter_count(),
        seed: cfg.train.seed.unwrap_or(cfg.seed),
        model: mcfg,
        train: cfg.train.clone(),
        architecture: ARCHITECTURE_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_file(&cfg.out_dir.join("train_summary.json"), text)?;
    Ok(summary)
}

/// Evaluate `strategies` on `users` with `model`. Users run in parallel on
/// the current rayon pool; results are collected in user order.
pub fn evaluate_strategies<M: NextItemModel>(
    model: &M,
    users: &[&UserHistory],
    strategies: &[StrategySpec],
    k: usize,
    seed: u64,
) -> Result<(Vec<StrategyReport>, Vec<StrategyTiming>)> {
    let mut reports = Vec::with_capacity(strategies.len());
    let mut timings = Vec::with_capacity(strategies.len());
    for spec in strategies {
        let start = Instant::now();
        let per_user: Vec<(UserMetrics, bool, f64)> = users
            .par_iter()
            .map(|u| {
                let t = Instant::now();
                let recs = spec.recommend(model, &u.train, u.user as u64, k, seed)?;
                let m = UserMetrics::compute(&recs.items, &u.holdout, k);
                Ok((m, recs.truncated, t.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;
        let total_secs = start.elapsed().as_secs_f64();
        let metrics: Vec<UserMetrics> = per_user.iter().map(|p| p.0.clone()).collect();
        let truncated = per_user.iter().filter(|p| p.1).count();
        let per_user_mean_secs = if users.is_empty() {
            0.0
        } else {
            per_user.iter().map(|p| p.2).sum::<f64>() / users.len() as f64
        };
        reports.push(StrategyReport::build(spec.label(), spec.descriptor(), &metrics, truncated));
        timings.push(StrategyTiming { name: spec.label(), users: users.len(), total_secs, per_user_mean_secs });
    }
    Ok((reports, timings))
}

/// Users of a partition, optionally capped.
pub fn select_users(split: &SplitDataset, part: Partition, max_users: Option<usize>) -> Vec<&UserHistory> {
    let mut users: Vec<_> = split.partition(part).collect();
    if let Some(cap) = max_users {
        users.truncate(cap);
    }
    users
}

/// Which model a command should load.
#[derive(Debug, Clone, Default)]
pub struct ModelChoice {
    pub checkpoint: Option<PathBuf>,
}

fn resolve_strategies(cfg: &RunConfig, specs: &[StrategySpec]) -> Result<Vec<StrategySpec>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.resolve(cfg.dataset.name.as_deref()).map_err(|e| match e {
                Error::Config { field, message } => Error::config(format!("strategies[{i}].{field}"), message),
                other => other,
            })
        })
        .collect()
}

/// Run `job` with whichever model the config selects.
fn with_model<T>(
    cfg: &RunConfig,
    data: &Dataset,
    choice: &ModelChoice,
    job: impl ModelJob<Output = T>,
) -> Result<T> {
    match cfg.eval.model {
        config::ModelSource::Checkpoint => {
            let path = choice.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let model: GptModel<f32> = load_checkpoint(&path)?;
            if model.item_count() != data.split.item_count {
                return Err(Error::Checkpoint(format!(
                    "checkpoint covers {} items but the dataset has {}",
                    model.item_count(),
                    data.split.item_count
                )));
            }
            job.run(&model)
        }
        config::ModelSource::Markov => {
            job.run(&MarkovModel::fit(data.split.item_count, data.split.train_sequences())?)
        }
        config::ModelSource::Popularity => {
            job.run(&PopularityModel::fit(data.split.item_count, data.split.train_sequences())?)
        }
    }
}

trait ModelJob {
    type Output;
    fn run<M: NextItemModel>(self, model: &M) -> Result<Self::Output>;
}

struct EvalJob<'a> {
    users: Vec<&'a UserHistory>,
    strategies: Vec<StrategySpec>,
    k: usize,
    seed: u64,
    workers: usize,
}

impl ModelJob for EvalJob<'_> {
    type Output = (Vec<StrategyReport>, Vec<StrategyTiming>);

    fn run<M: NextItemModel>(self, model: &M) -> Result<Self::Output> {
        with_workers(self.workers, || evaluate_strategies(model, &self.users, &self.strategies, self.k, self.seed))?
    }
}

fn build_report(
    cfg: &RunConfig,
    data: &Dataset,
    part: Partition,
    users: &[&UserHistory],
    strategies: Vec<StrategyReport>,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        version: REPORT_VERSION,
        split: partition_name(part).into(),
        k: cfg.eval.k,
        n_holdout: data.split.n_holdout,
        seed: cfg.seed,
        users: users.iter().map(|u| u.user).collect(),
        strategies,
    };
    report.add_significance()?;
    Ok(report)
}

pub fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Validation => "validation",
        Partition::Test => "test",
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub timings: Vec<StrategyTiming>,
    pub dir: PathBuf,
}

/// Evaluate every configured strategy on one partition and write the report.
pub fn cmd_evaluate(cfg: &RunConfig, choice: &ModelChoice, part: Partition) -> Result<Evaluation> {
    let data = load_dataset(cfg)?;
    let strategies = resolve_strategies(cfg, &cfg.strategies)?;
    let users = select_users(&data.split, part, cfg.eval.max_users);
    let job = EvalJob { users: users.clone(), strategies, k: cfg.eval.k, seed: cfg.seed, workers: cfg.workers };
    let (reports, timings) = with_model(cfg, &data, choice, job)?;
    let report = build_report(cfg, &data, part, &users, reports)?;
    let dir = cfg.out_dir.join(format!("eval-{}", partition_name(part)));
    report.write(&dir)?;
    let mut t = serde_json::to_string_pretty(&timings)?;
    t.push('\n');
    write_file(&dir.join("timings.json"), t)?;
    Ok(Evaluation { report, timings, dir })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sweep: String,
    pub index: usize,
    pub params: BTreeMap<String, Value>,
    pub strategy: String,
    pub report: PathBuf,
    pub ndcg: f64,
    pub recall: f64,
    pub map: f64,
}

/// Cartesian product of the grid, parameters in name order, last one fastest.
pub fn grid_points(grid: &BTreeMap<String, Vec<Value>>) -> Vec<BTreeMap<String, Value>> {
    let mut points = vec![BTreeMap::new()];
    for (name, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

fn sweep_strategies(cfg: &RunConfig, i: usize, sweep: &SweepSpec) -> Result<Vec<(BTreeMap<String, Value>, StrategySpec)>> {
    let base = cfg
        .strategies
        .iter()
        .find(|s| s.label() == sweep.base)
        .ok_or_else(|| Error::config(format!("sweeps[{i}].base"), format!("no strategy named `{}`", sweep.base)))?;
    let mut out = Vec::new();
    for point in grid_points(&sweep.grid) {
        let Value::Object(mut m) = base.descriptor() else { unreachable!("descriptors are objects") };
        m.remove("name");
        for (k, v) in &point {
            m.insert(k.clone(), v.clone());
        }
        let spec = StrategySpec::try_from(Value::Object(m))
            .map_err(|e| Error::config(format!("sweeps[{i}].grid"), e))?;
        spec.validate().map_err(|e| Error::config(format!("sweeps[{i}].grid"), e.to_string()))?;
        let spec = spec
            .resolve(cfg.dataset.name.as_deref())
            .map_err(|e| Error::config(format!("sweeps[{i}].grid"), e.to_string()))?;
        out.push((point, spec));
    }
    Ok(out)
}

/// Evaluate every grid point of every sweep. Writes one report per point
/// and one flat table per sweep.
pub fn cmd_sweep(cfg: &RunConfig, choice: &ModelChoice) -> Result<Vec<SweepPoint>> {
    let data = load_dataset(cfg)?;
    let mut all = Vec::new();
    for (i, sweep) in cfg.sweeps.iter().enumerate() {
        let points = sweep_strategies(cfg, i, sweep)?;
        let users = select_users(&data.split, sweep.split, cfg.eval.max_users);
        let specs: Vec<StrategySpec> = points.iter().map(|p| p.1.clone()).collect();
        let job = EvalJob { users: users.clone(), strategies: specs, k: cfg.eval.k, seed: cfg.seed, workers: cfg.workers };
        let (reports, _) = with_model(cfg, &data, choice, job)?;
        let dir = cfg.out_dir.join("sweeps").join(&sweep.name);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = vec!["point".into()];
        header.extend(sweep.grid.keys().cloned());
        header.extend(["strategy".into(), format!("ndcg@{}", cfg.eval.k), format!("recall@{}", cfg.eval.k), format!("map@{}", cfg.eval.k)]);
        w.write_record(&header)?;
        for (index, ((params, _), sr)) in points.into_iter().zip(reports).enumerate() {
            let report = build_report(cfg, &data, sweep.split, &users, vec![sr.clone()])?;
            let point_dir = dir.join(index.to_string());
            report.write(&point_dir)?;
            let mut row = vec![index.to_string()];
            row.extend(params.values().map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            row.extend([sr.name.clone(), sr.ndcg.to_string(), sr.recall.to_string(), sr.map.to_string()]);
            w.write_record(&row)?;
            all.push(SweepPoint {
                sweep: sweep.name.clone(),
                index,
                params,
                strategy: sr.name,
                report: point_dir.join("report.json"),
                ndcg: sr.ndcg,
                recall: sr.recall,
                map: sr.map,
            });
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        write_file(&cfg.out_dir.join("sweeps").join(format!("{}.csv", sweep.name)), bytes)?;
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub strategy: String,
    pub sequences: Option<usize>,
    pub users: usize,
    pub per_user_mean_secs: f64,
    pub total_secs: f64,
}

/// Time every strategy per user; aggregation strategies once per entry of
/// `timing.sequences`. Numbers are informational only.
pub fn cmd_timing(cfg: &RunConfig, choice: &ModelChoice) -> Result<Vec<TimingRow>> {
    let data = load_dataset(cfg)?;
    let mut specs = Vec::new();
    let mut seqs = Vec::new();
    for s in resolve_strategies(cfg, &cfg.strategies)? {
        match s.with_sequences(1) {
            Some(_) => {
                for &n in &cfg.timing.sequences {
                    specs.push(s.with_sequences(n).expect("aggregation strategy"));
                    seqs.push(Some(n));
                }
            }
            None => {
                specs.push(s);
                seqs.push(None);
            }
        }
    }
    let users = select_users(&data.split, cfg.eval.split, Some(cfg.timing.max_users));
    let job = EvalJob { users, strategies: specs, k: cfg.eval.k, seed: cfg.seed, workers: cfg.workers };
    let (_, timings) = with_model(cfg, &data, choice, job)?;
    let rows: Vec<TimingRow> = timings
        .into_iter()
        .zip(seqs)
        .map(|(t, sequences)| TimingRow {
            strategy: t.name,
            sequences,
            users: t.users,
            per_user_mean_secs: t.per_user_mean_secs,
            total_secs: t.total_secs,
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "sequences", "users", "per_user_mean_secs", "total_secs"])?;
    for r in &rows {
        w.write_record([
            r.strategy.clone(),
            r.sequences.map_or(String::new(), |s| s.to_string()),
            r.users.to_string(),
            r.per_user_mean_secs.to_string(),
            r.total_secs.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    write_file(&cfg.out_dir.join("timing.csv"), bytes)?;
    Ok(rows)
}

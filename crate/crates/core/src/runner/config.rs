use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::strategy::StrategySpec;
use crate::data::{InputFormat, Partition, PreprocessConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};

/// A whole experiment in one TOML document. Every omitted field falls back
/// to the default listed on its type.
///
/// ```toml
/// seed = 7
/// out_dir = "runs/ml20m"
///
/// [dataset]
/// path = "ratings.csv"
/// format = { user_col = "userId", item_col = "movieId", timestamp_col = "timestamp" }
///
/// [[strategies]]
/// strategy = "rra"
/// temperature = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Evaluation threads.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub strategies: Vec<StrategySpec>,
    pub sweeps: Vec<SweepSpec>,
    pub timing: TimingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            strategies: vec![StrategySpec::default()],
            sweeps: Vec::new(),
            timing: TimingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Raw interaction file.
    pub path: PathBuf,
    pub format: InputFormat,
    pub preprocess: PreprocessConfig,
    pub n_holdout: usize,
    pub val_fraction: f64,
    /// Name used to look up temperature presets.
    pub name: Option<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("interactions.csv"),
            format: InputFormat::default(),
            preprocess: PreprocessConfig::default(),
            n_holdout: 10,
            val_fraction: 0.5,
            name: None,
        }
    }
}

/// Which model the strategies query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// The trained transformer checkpoint.
    #[default]
    Checkpoint,
    /// Add-one smoothed first-order Markov chain fitted on the train portion.
    Markov,
    /// Global popularity fitted on the train portion.
    Popularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// List length `K`, also the generation horizon.
    pub k: usize,
    pub split: Partition,
    /// Evaluate only the first this-many users of the split.
    pub max_users: Option<usize>,
    pub model: ModelSource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10, split: Partition::Test, max_users: None, model: ModelSource::Checkpoint }
    }
}

/// Grid over parameters of one named strategy. Points are the cartesian
/// product of the value lists, parameters taken in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    /// Name of the strategy in `strategies` to vary.
    pub base: String,
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
    /// Defaults to validation: sweeps are for tuning.
    #[serde(default = "validation")]
    pub split: Partition,
}

fn validation() -> Partition {
    Partition::Validation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Sequence counts to time for the aggregation strategies.
    pub sequences: Vec<usize>,
    pub max_users: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { sequences: vec![1, 5, 10, 30, 60], max_users: 200 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| field_at(text, s.start)).unwrap_or_default();
            Error::config(field, e.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config; relative paths inside it are resolved against the
    /// directory holding the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.path = base.join(&cfg.dataset.path);
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if self.dataset.n_holdout == 0 {
            return Err(Error::config("dataset.n_holdout", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.dataset.val_fraction) {
            return Err(Error::config("dataset.val_fraction", "must lie in [0, 1]"));
        }
        if self.dataset.preprocess.min_user_len == 0 {
            return Err(Error::config("dataset.preprocess.min_user_len", "must be at least 1"));
        }
        if self.dataset.preprocess.min_item_count == 0 {
            return Err(Error::config("dataset.preprocess.min_item_count", "must be at least 1"));
        }
        if self.eval.k == 0 {
            return Err(Error::config("eval.k", "must be at least 1"));
        }
        self.train.validate()?;
        self.model_config(self.model.item_count.max(1))?;
        let mut names = std::collections::BTreeSet::new();
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate().map_err(|e| match e {
                Error::Config { field, message } => Error::config(format!("strategies[{i}].{field}"), message),
                other => Error::config(format!("strategies[{i}]"), other.to_string()),
            })?;
            if !names.insert(s.label()) {
                return Err(Error::config(format!("strategies[{i}].name"), format!("duplicate name `{}`", s.label())));
            }
        }
        for (i, sw) in self.sweeps.iter().enumerate() {
            if !names.contains(&sw.base) {
                return Err(Error::config(format!("sweeps[{i}].base"), format!("no strategy named `{}`", sw.base)));
            }
            if sw.grid.is_empty() || sw.grid.values().any(Vec::is_empty) {
                return Err(Error::config(format!("sweeps[{i}].grid"), "every parameter needs at least one value"));
            }
        }
        Ok(())
    }

    /// Model config with the catalog size filled in.
    pub fn model_config(&self, item_count: usize) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        m.item_count = item_count;
        m.validate()?;
        Ok(m)
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.out_dir.join("bundle")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }
}

/// Dotted path of the TOML key whose value starts near `offset`.
fn field_at(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_owned();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_owned();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

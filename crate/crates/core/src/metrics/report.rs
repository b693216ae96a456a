//! Evaluation report.
//!
//! `report.json` schema (version 1):
//!
//! ```text
//! {
//!   "version": 1,
//!   "split": "validation" | "test",
//!   "k": usize, "n_holdout": usize, "seed": u64,
//!   "users": [dense user id, ...],
//!   "strategies": [{
//!     "name": str, "descriptor": {...},
//!     "ndcg": f64, "recall": f64, "map": f64,
//!     "hitrate_by_position": [f64; n_holdout],
//!     "truncated_lists": usize,
//!     "per_user": { "ndcg": [f64], "recall": [f64], "map": [f64] },
//!     "vs_baseline": null | { "baseline": str, "ndcg": TTest, "recall": TTest, "map": TTest }
//!   }]
//! }
//! ```
//!
//! Per-user vectors follow the order of `users`. The baseline for the
//! t-tests is the first strategy. Timings are kept out of this file so that
//! reruns are byte-identical; see [`StrategyTiming`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{paired_ttest, TTest, UserMetrics};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUser {
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
    pub map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub baseline: String,
    pub ndcg: TTest,
    pub recall: TTest,
    pub map: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub descriptor: serde_json::Value,
    pub ndcg: f64,
    pub recall: f64,
    pub map: f64,
    pub hitrate_by_position: Vec<f64>,
    /// Users whose list came out shorter than `k`.
    pub truncated_lists: usize,
    pub per_user: PerUser,
    pub vs_baseline: Option<MetricTest>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl StrategyReport {
    /// `users` in evaluation order; every hit vector must have the same length.
    pub fn build(
        name: impl Into<String>,
        descriptor: serde_json::Value,
        users: &[UserMetrics],
        truncated_lists: usize,
    ) -> Self {
        let per_user = PerUser {
            ndcg: users.iter().map(|u| u.ndcg).collect(),
            recall: users.iter().map(|u| u.recall).collect(),
            map: users.iter().map(|u| u.map).collect(),
        };
        let positions = users.iter().map(|u| u.hits.len()).max().unwrap_or(0);
        let hitrate_by_position = (0..positions)
            .map(|p| {
                let col: Vec<f64> = users.iter().map(|u| u.hits.get(p).copied().unwrap_or(0.0)).collect();
                mean(&col)
            })
            .collect();
        Self {
            name: name.into(),
            descriptor,
            ndcg: mean(&per_user.ndcg),
            recall: mean(&per_user.recall),
            map: mean(&per_user.map),
            hitrate_by_position,
            truncated_lists,
            per_user,
            vs_baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub split: String,
    pub k: usize,
    pub n_holdout: usize,
    pub seed: u64,
    pub users: Vec<u32>,
    pub strategies: Vec<StrategyReport>,
}

impl EvalReport {
    /// Fill `vs_baseline` for every strategy after the first.
    pub fn add_significance(&mut self) -> Result<()> {
        let Some((base, rest)) = self.strategies.split_first_mut() else {
            return Ok(());
        };
        if base.per_user.ndcg.len() < 2 {
            return Ok(());
        }
        for s in rest {
            s.vs_baseline = Some(MetricTest {
                baseline: base.name.clone(),
                ndcg: paired_ttest(&s.per_user.ndcg, &base.per_user.ndcg)?,
                recall: paired_ttest(&s.per_user.recall, &base.per_user.recall)?,
                map: paired_ttest(&s.per_user.map, &base.per_user.map)?,
            });
        }
        Ok(())
    }

    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.version != REPORT_VERSION {
            return Err(Error::Contract(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }

    /// One row per strategy and metric.
    pub fn metrics_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["strategy", "metric", "value", "t_vs_baseline", "p_vs_baseline"])?;
        for s in &self.strategies {
            for (metric, value) in [("ndcg", s.ndcg), ("recall", s.recall), ("map", s.map)] {
                let test = s.vs_baseline.as_ref().map(|b| match metric {
                    "ndcg" => b.ndcg,
                    "recall" => b.recall,
                    _ => b.map,
                });
                let metric = format!("{metric}@{}", self.k);
                let (t, p) = test.map_or((String::new(), String::new()), |t| (t.t.to_string(), t.p.to_string()));
                w.write_record([s.name.as_str(), &metric, &value.to_string(), &t, &p])?;
            }
        }
        into_string(w)
    }

    /// One row per strategy and holdout position (1-based).
    pub fn hitrate_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["strategy", "position", "hitrate"])?;
        for s in &self.strategies {
            for (p, h) in s.hitrate_by_position.iter().enumerate() {
                w.write_record([s.name.as_str(), &(p + 1).to_string(), &h.to_string()])?;
            }
        }
        into_string(w)
    }

    /// Write `report.json`, `metrics.csv` and `hitrate.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.json", self.to_json()?),
            ("metrics.csv", self.metrics_table()?),
            ("hitrate.csv", self.hitrate_table()?),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Wall-clock cost of one strategy over an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub name: String,
    pub users: usize,
    pub total_secs: f64,
    pub per_user_mean_secs: f64,
}

//! Offline ranking metrics with binary relevance.
//!
//! * `NDCG@K = DCG / IDCG`, `DCG = sum_{j<=K} [rec_j in gt] / log2(j + 1)`,
//!   `IDCG = sum_{j<=min(K,|gt|)} 1 / log2(j + 1)`.
//! * `Recall@K = |top-K ∩ gt| / |gt|`.
//! * `MAP@K`: precision at each hit, summed and divided by `min(|gt|, K)`.
//!
//! Ground truth is collapsed to a set for these three; per-position hit
//! rate keeps the original order.

mod report;
mod ttest;

pub use report::{EvalReport, MetricTest, PerUser, StrategyReport, StrategyTiming, REPORT_VERSION};
pub use ttest::{paired_ttest, TTest};

use std::collections::BTreeSet;

use crate::data::ItemId;

fn gt_set(gt: &[ItemId]) -> BTreeSet<ItemId> {
    gt.iter().copied().collect()
}

fn discount(j: usize) -> f64 {
    1.0 / ((j + 1) as f64).log2()
}

/// `recs` is read as a ranking; only its first `k` entries count.
/// An empty ground truth scores 0.
pub fn ndcg_at_k(recs: &[ItemId], gt: &[ItemId], k: usize) -> f64 {
    let gt = gt_set(gt);
    if gt.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = recs
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| gt.contains(i))
        .map(|(j, _)| discount(j + 1))
        .sum();
    let idcg: f64 = (1..=k.min(gt.len())).map(discount).sum();
    dcg / idcg
}

pub fn recall_at_k(recs: &[ItemId], gt: &[ItemId], k: usize) -> f64 {
    let gt = gt_set(gt);
    if gt.is_empty() {
        return 0.0;
    }
    let hits = recs.iter().take(k).filter(|i| gt.contains(i)).count();
    hits as f64 / gt.len() as f64
}

pub fn map_at_k(recs: &[ItemId], gt: &[ItemId], k: usize) -> f64 {
    let gt = gt_set(gt);
    if gt.is_empty() || k == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, i) in recs.iter().take(k).enumerate() {
        if gt.contains(i) {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    sum / k.min(gt.len()) as f64
}

/// Entry `p` is 1 when `gt[p]` appears anywhere in the top `k`.
pub fn hitrate_by_position(recs: &[ItemId], gt: &[ItemId], k: usize) -> Vec<f64> {
    let top: BTreeSet<ItemId> = recs.iter().take(k).copied().collect();
    gt.iter().map(|i| if top.contains(i) { 1.0 } else { 0.0 }).collect()
}

/// Metrics of one user's list.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub ndcg: f64,
    pub recall: f64,
    pub map: f64,
    pub hits: Vec<f64>,
}

impl UserMetrics {
    pub fn compute(recs: &[ItemId], gt: &[ItemId], k: usize) -> Self {
        Self {
            ndcg: ndcg_at_k(recs, gt, k),
            recall: recall_at_k(recs, gt, k),
            map: map_at_k(recs, gt, k),
            hits: hitrate_by_position(recs, gt, k),
        }
    }
}

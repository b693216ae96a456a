//! Single-sequence recommendation strategies.
//!
//! All strategies share one tie rule: among equal scores the lower item id
//! wins (for beams, the lexicographically smaller item sequence).

mod distribution;
mod strategies;

pub use distribution::{apply_temperature, log_softmax, topk_filter};
pub use strategies::{
    beam_search, greedy_decode, temperature_sample, topk_prediction, SamplingParams,
    ARGMAX_TEMPERATURE,
};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::ItemId;
use crate::model::ScoreVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConstraints {
    /// Never emit an item that is already in the user's history.
    pub forbid_history: bool,
    /// Never emit the same item twice within one generated sequence.
    pub forbid_repeats: bool,
}

impl Default for GenerationConstraints {
    fn default() -> Self {
        Self { forbid_history: true, forbid_repeats: true }
    }
}

/// Output of one decoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence<S> {
    pub items: Vec<ItemId>,
    /// Log-probability of each chosen item under the distribution it was chosen from.
    pub log_probs: Vec<f64>,
    /// The distribution each item was drawn from, when requested.
    pub step_distributions: Option<Vec<ScoreVector<S>>>,
    /// Fewer than the requested number of items could be generated.
    pub truncated: bool,
    /// A beam search ran with fewer beams than requested at some step.
    pub beam_capped: bool,
}

impl<S> GeneratedSequence<S> {
    /// Joint log-probability of the sequence (sum of step log-probabilities).
    pub fn log_score(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Read positionally: the item at position `j` (1-based) gets relevance `1/j`.
    pub fn to_recommendations(&self) -> RecommendationList {
        RecommendationList {
            items: self.items.clone(),
            scores: (1..=self.items.len()).map(|j| 1.0 / j as f64).collect(),
            truncated: self.truncated,
        }
    }
}

/// Ranked items with non-increasing scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecommendationList {
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
    /// Shorter than requested because too few candidates were available.
    pub truncated: bool,
}

impl RecommendationList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Score descending, then item id ascending. NaN sorts last.
#[inline]
pub(crate) fn rank_order(a: (ItemId, f64), b: (ItemId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or_else(|| a.1.is_nan().cmp(&b.1.is_nan()))
        .then(a.0.cmp(&b.0))
}

/// The `k` best `(item, score)` pairs under [`rank_order`], sorted.
pub(crate) fn top_k(mut candidates: Vec<(ItemId, f64)>, k: usize) -> Vec<(ItemId, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(a, b));
    candidates
}

/// Build a ranked list of length at most `k` from candidate scores.
pub fn rank_candidates(candidates: Vec<(ItemId, f64)>, k: usize) -> RecommendationList {
    let available = candidates.len();
    let best = top_k(candidates, k);
    RecommendationList {
        items: best.iter().map(|c| c.0).collect(),
        scores: best.iter().map(|c| c.1).collect(),
        truncated: available < k,
    }
}

//! Multi-sequence generation and aggregation.
//!
//! `S` continuations are sampled independently, each is turned into a
//! relevance vector over the catalog, and the vectors are summed.
//! Reciprocal rank aggregation (RRA) gives the item at position `k` a
//! score of `1/k`; relevance aggregation (RA) adds up the whole per-step
//! distribution.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, PAD};
use crate::decode::{temperature_sample, GenerationConstraints, RecommendationList, SamplingParams};
use crate::error::{Error, Result};
use crate::model::{check_items, NextItemModel, ScoreKind, ScoreVector};
use crate::rng::rng_for;
use crate::scalar::{Scalar, Weight};

/// Per-item relevance over the catalog. Index 0 is padding and stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Relevance<W> {
    r: Vec<W>,
}

impl<W: Weight> Relevance<W> {
    pub fn zeros(item_count: usize) -> Self {
        Self { r: vec![W::zero(); item_count + 1] }
    }

    pub fn item_count(&self) -> usize {
        self.r.len() - 1
    }

    pub fn get(&self, item: ItemId) -> &W {
        &self.r[item as usize]
    }

    pub fn values(&self) -> &[W] {
        &self.r
    }

    pub fn total(&self) -> W {
        self.r.iter().cloned().fold(W::zero(), |a, b| a + b)
    }

    pub fn add(&mut self, other: &Self) -> Result<()> {
        if other.r.len() != self.r.len() {
            return Err(Error::Contract(format!(
                "cannot add relevance over {} items to one over {}",
                other.item_count(),
                self.item_count()
            )));
        }
        for (a, b) in self.r.iter_mut().zip(&other.r) {
            *a = a.clone() + b.clone();
        }
        Ok(())
    }

    pub fn scale(&mut self, c: W) {
        for v in self.r.iter_mut() {
            *v = v.clone() * c.clone();
        }
    }

    /// Sum in a fixed pairwise tree over the input order, so floating-point
    /// totals depend only on the order of `parts`, never on scheduling.
    pub fn tree_sum(mut parts: Vec<Self>) -> Result<Option<Self>> {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(mut a) = it.next() {
                if let Some(b) = it.next() {
                    a.add(&b)?;
                }
                next.push(a);
            }
            parts = next;
        }
        Ok(parts.pop())
    }

    /// Top-`k` items by relevance (ties to the lower id), skipping `exclude`.
    pub fn rank(&self, exclude: &[ItemId], k: usize) -> RecommendationList {
        let mut skip = vec![false; self.r.len()];
        skip[PAD as usize] = true;
        for &i in exclude {
            if let Some(s) = skip.get_mut(i as usize) {
                *s = true;
            }
        }
        let order = |a: &(ItemId, &W), b: &(ItemId, &W)| {
            b.1.partial_cmp(a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
        };
        let mut cands: Vec<(ItemId, &W)> = (0..self.r.len())
            .filter(|&i| !skip[i])
            .map(|i| (i as ItemId, &self.r[i]))
            .collect();
        let available = cands.len();
        if k > 0 && cands.len() > k {
            cands.select_nth_unstable_by(k - 1, order);
        }
        cands.truncate(k);
        cands.sort_unstable_by(order);
        RecommendationList {
            items: cands.iter().map(|c| c.0).collect(),
            scores: cands.iter().map(|c| c.1.to_f64().unwrap_or(f64::NAN)).collect(),
            truncated: available < k,
        }
    }
}

/// RRA relevance of one generated sequence: position `k` scores `1/k`.
pub fn rra_single<W: Weight>(items: &[ItemId], item_count: usize) -> Result<Relevance<W>> {
    check_items(items, item_count)?;
    let mut r: Relevance<W> = Relevance::zeros(item_count);
    for (pos, &item) in items.iter().enumerate() {
        let slot = &mut r.r[item as usize];
        if !slot.is_zero() {
            return Err(Error::Contract(format!("item {item} occurs twice in the sequence")));
        }
        let k = W::from_usize(pos + 1).expect("position fits the weight type");
        *slot = W::one() / k;
    }
    Ok(r)
}

/// RA relevance of one generated sequence: the sum of its step distributions.
pub fn ra_single<W: Weight, S: Scalar>(item_count: usize, steps: &[ScoreVector<S>]) -> Result<Relevance<W>> {
    let mut r: Relevance<W> = Relevance::zeros(item_count);
    for step in steps {
        if step.kind() != ScoreKind::Probabilities {
            return Err(Error::Contract("relevance aggregation needs probability vectors".into()));
        }
        if step.item_count() != item_count {
            return Err(Error::Contract(format!(
                "step distribution covers {} items, expected {item_count}",
                step.item_count()
            )));
        }
        for (a, &p) in r.r.iter_mut().zip(step.values()).skip(1) {
            *a = a.clone() + W::from_f64(p.as_f64()).expect("finite probability");
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    Rra,
    Ra,
}

/// Which step vectors RA accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaScores {
    /// The temperature-adjusted distribution each item was sampled from.
    #[default]
    Sampling,
    /// The temperature-1 softmax of the same masked logits.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub strategy: AggregationStrategy,
    /// Number of sampled sequences `S`.
    #[serde(default = "default_sequences")]
    pub sequences: usize,
    /// Horizon `K`: length of each sequence and of the final list.
    #[serde(default = "default_k")]
    pub k: usize,
    pub temperature: f64,
    /// top-k filter for RRA sampling; RA ignores it.
    #[serde(default = "default_topk")]
    pub topk: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ra_scores: RaScores,
}

fn default_sequences() -> usize {
    30
}
fn default_k() -> usize {
    10
}
fn default_topk() -> usize {
    10
}

impl AggregationConfig {
    pub fn new(strategy: AggregationStrategy, temperature: f64) -> Self {
        Self {
            strategy,
            sequences: default_sequences(),
            k: default_k(),
            temperature,
            topk: default_topk(),
            seed: 0,
            ra_scores: RaScores::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 {
            return Err(Error::InvalidParameter("number of sequences must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.strategy == AggregationStrategy::Rra && self.topk == 0 {
            return Err(Error::InvalidParameter("top-k must be at least 1".into()));
        }
        Ok(())
    }

    fn sampling(&self) -> (SamplingParams, GenerationConstraints) {
        match self.strategy {
            AggregationStrategy::Rra => (
                SamplingParams { topk: Some(self.topk), ..SamplingParams::new(self.temperature) },
                GenerationConstraints { forbid_history: true, forbid_repeats: true },
            ),
            AggregationStrategy::Ra => (
                SamplingParams {
                    record_steps: true,
                    record_softmax: self.ra_scores == RaScores::Softmax,
                    ..SamplingParams::new(self.temperature)
                },
                GenerationConstraints { forbid_history: true, forbid_repeats: false },
            ),
        }
    }
}

/// Best temperatures reported for the public benchmark datasets, as
/// `(dataset, RRA temperature, RA temperature)`.
pub const TEMPERATURE_PRESETS: &[(&str, f64, f64)] = &[
    ("ml-20m", 0.5, 1.2),
    ("yelp", 0.5, 1.8),
    ("steam", 0.3, 1.0),
    ("gowalla", 0.8, 1.6),
    ("twitch-100k", 0.4, 5.0),
    ("beeradvocate", 0.5, 2.0),
];

pub fn preset_temperature(dataset: &str, strategy: AggregationStrategy) -> Option<f64> {
    TEMPERATURE_PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(dataset))
        .map(|p| match strategy {
            AggregationStrategy::Rra => p.1,
            AggregationStrategy::Ra => p.2,
        })
}

/// One relevance vector per sampled sequence, in sequence order.
///
/// Sequence `s` of user `user` always draws from the same derived stream,
/// so the result does not depend on how the work is scheduled.
pub fn sample_relevances<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    user: u64,
    cfg: &AggregationConfig,
) -> Result<Vec<Relevance<f64>>> {
    cfg.validate()?;
    let (params, constraints) = cfg.sampling();
    let item_count = model.item_count();
    (0..cfg.sequences as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(cfg.seed, "aggregate", &[user, s]);
            let seq = temperature_sample(model, history, cfg.k, &params, &mut rng, &constraints)?;
            match cfg.strategy {
                AggregationStrategy::Rra => rra_single(&seq.items, item_count),
                AggregationStrategy::Ra => {
                    let mut steps = seq.step_distributions.unwrap_or_default();
                    // history mass is already zero under the sampling mask;
                    // this keeps the softmax variant consistent
                    for st in steps.iter_mut() {
                        st.mask_all(history);
                    }
                    let steps = steps
                        .iter()
                        .map(renormalize)
                        .collect::<Result<Vec<_>>>()?;
                    ra_single(item_count, &steps)
                }
            }
        })
        .collect()
}

fn renormalize<S: Scalar>(p: &ScoreVector<S>) -> Result<ScoreVector<S>> {
    let sum: S = p.values().iter().copied().sum();
    if !(sum > S::zero()) {
        return Err(Error::AllMasked);
    }
    Ok(ScoreVector::probabilities(p.values().iter().map(|&v| v / sum).collect()))
}

/// Sample `S` sequences, sum their relevance vectors and rank.
pub fn aggregate_recommend<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    user: u64,
    cfg: &AggregationConfig,
) -> Result<RecommendationList> {
    let parts = sample_relevances(model, history, user, cfg)?;
    let total = Relevance::tree_sum(parts)?.expect("at least one sequence");
    Ok(total.rank(history, cfg.k))
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;

    use super::*;

    type Exact = Ratio<i64>;

    #[test]
    fn rra_positions() {
        let r = rra_single::<Exact>(&[3, 1, 2], 4).unwrap();
        assert_eq!(r.values(), &[Exact::from(0), Exact::new(1, 2), Exact::new(1, 3), Exact::from(1), Exact::from(0)]);
        assert_eq!(rra_single::<Exact>(&[], 4).unwrap(), Relevance::zeros(4));
        assert!(matches!(rra_single::<f64>(&[1, 2, 1], 4), Err(Error::Contract(_))));
    }

    #[test]
    fn swapped_pairs_tie_to_lower_id() {
        let a = rra_single::<Exact>(&[4, 2], 5).unwrap();
        let b = rra_single::<Exact>(&[2, 4], 5).unwrap();
        let r = Relevance::tree_sum(vec![a, b]).unwrap().unwrap();
        assert_eq!(*r.get(2), Exact::new(3, 2));
        assert_eq!(*r.get(4), Exact::new(3, 2));
        assert_eq!(r.rank(&[], 2).items, vec![2, 4]);
    }

    #[test]
    fn ra_sums_steps() {
        let u = ScoreVector::probabilities(vec![0.0, 0.25, 0.25, 0.25, 0.25]);
        let r = ra_single::<f64, f64>(4, &[u.clone(), u.clone()]).unwrap();
        assert_eq!(&r.values()[1..], &[0.5; 4]);
        let l = ScoreVector::logits(vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(ra_single::<f64, f64>(4, &[l]).is_err());
    }

    #[test]
    fn tree_sum_shapes() {
        let parts: Vec<_> = (1..=5).map(|i| rra_single::<Exact>(&[i], 5).unwrap()).collect();
        let r = Relevance::tree_sum(parts).unwrap().unwrap();
        assert_eq!(r.total(), Exact::from(5));
        assert!(Relevance::<f64>::tree_sum(vec![]).unwrap().is_none());
    }

    #[test]
    fn presets() {
        assert_eq!(preset_temperature("ML-20M", AggregationStrategy::Ra), Some(1.2));
        assert_eq!(preset_temperature("nope", AggregationStrategy::Rra), None);
    }
}

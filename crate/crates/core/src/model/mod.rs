//! Next-item distribution models.
//!
//! Everything downstream (decoding, aggregation, evaluation) talks to a
//! model through [`NextItemModel`], which exposes both a one-shot
//! [`forward`](NextItemModel::forward) and an incremental
//! `begin`/`advance` pair so autoregressive decoding does not re-encode the
//! whole prefix at every step.

mod baselines;
mod checkpoint;
mod gpt;
mod train;

pub use baselines::{MarkovModel, PopularityModel};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gpt::{BlockParams, GptModel, GptState, ModelConfig, ModelParameters};
pub use train::{evaluate_topk_ndcg, train, EpochRecord, TrainConfig, TrainOutcome};

use rayon::prelude::*;

use crate::data::{ItemId, PAD};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Logits,
    Probabilities,
}

/// Scores over the whole catalog, indexed by item id. Index 0 is padding and
/// always masked: `-inf` for logits, `0` for probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<S> {
    values: Vec<S>,
    kind: ScoreKind,
}

impl<S: Scalar> ScoreVector<S> {
    pub fn logits(mut values: Vec<S>) -> Self {
        if let Some(v) = values.first_mut() {
            *v = S::neg_infinity();
        }
        Self { values, kind: ScoreKind::Logits }
    }

    pub fn probabilities(mut values: Vec<S>) -> Self {
        if let Some(v) = values.first_mut() {
            *v = S::zero();
        }
        Self { values, kind: ScoreKind::Probabilities }
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Number of real items (excludes padding).
    pub fn item_count(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn get(&self, item: ItemId) -> S {
        self.values[item as usize]
    }

    fn masked_value(&self) -> S {
        match self.kind {
            ScoreKind::Logits => S::neg_infinity(),
            ScoreKind::Probabilities => S::zero(),
        }
    }

    pub fn mask(&mut self, item: ItemId) {
        let m = self.masked_value();
        if let Some(v) = self.values.get_mut(item as usize) {
            *v = m;
        }
    }

    pub fn mask_all<'a>(&mut self, items: impl IntoIterator<Item = &'a ItemId>) {
        for &i in items {
            self.mask(i);
        }
    }

    pub fn is_masked(&self, item: ItemId) -> bool {
        let v = self.values[item as usize];
        match self.kind {
            ScoreKind::Logits => v == S::neg_infinity(),
            ScoreKind::Probabilities => v <= S::zero(),
        }
    }

    /// Items that are not masked, ascending.
    pub fn live_items(&self) -> impl Iterator<Item = ItemId> + '_ {
        (1..self.values.len() as ItemId).filter(move |&i| !self.is_masked(i))
    }

    /// Plain softmax (temperature 1).
    pub fn softmax(&self) -> Result<ScoreVector<S>> {
        crate::decode::apply_temperature(self, 1.0)
    }
}

/// A model that returns next-item logits for a prefix of dense item ids.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait NextItemModel: Sync {
    type Scalar: Scalar;
    /// Incremental decoding state for one sequence.
    type State: Clone + Send;

    fn item_count(&self) -> usize;

    /// Encode `prefix` and return the logits for the position after it.
    fn begin(&self, prefix: &[ItemId]) -> Result<(Self::State, ScoreVector<Self::Scalar>)>;

    /// Append `item` to the state and return the logits for the next position.
    fn advance(&self, state: &mut Self::State, item: ItemId) -> Result<ScoreVector<Self::Scalar>>;

    fn forward(&self, prefix: &[ItemId]) -> Result<ScoreVector<Self::Scalar>> {
        self.begin(prefix).map(|(_, s)| s)
    }

    fn forward_batch(&self, prefixes: &[&[ItemId]]) -> Result<Vec<ScoreVector<Self::Scalar>>> {
        prefixes.par_iter().map(|p| self.forward(p)).collect()
    }
}

pub(crate) fn check_prefix(prefix: &[ItemId], item_count: usize) -> Result<()> {
    if prefix.is_empty() {
        return Err(Error::InvalidParameter("prefix must contain at least one item".into()));
    }
    check_items(prefix, item_count)
}

pub(crate) fn check_items(items: &[ItemId], item_count: usize) -> Result<()> {
    match items.iter().find(|&&i| i == PAD || i as usize > item_count) {
        Some(&item) => Err(Error::OutOfCatalog { item, catalog: item_count }),
        None => Ok(()),
    }
}

//! Count-based reference models. Cheap to build, exactly computable, and
//! used as oracles for the decoding strategies.

use std::collections::BTreeMap;

use super::{check_items, check_prefix, NextItemModel, ScoreVector};
use crate::data::ItemId;
use crate::error::Result;

/// First-order transition model with add-one smoothing:
/// `P(j | i) = (c(i, j) + 1) / (c(i) + I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    item_count: usize,
    rows: Vec<BTreeMap<ItemId, u32>>,
    totals: Vec<u64>,
}

impl MarkovModel {
    pub fn fit<'a>(item_count: usize, sequences: impl IntoIterator<Item = &'a [ItemId]>) -> Result<Self> {
        let mut rows = vec![BTreeMap::new(); item_count + 1];
        let mut totals = vec![0u64; item_count + 1];
        for seq in sequences {
            check_items(seq, item_count)?;
            for w in seq.windows(2) {
                *rows[w[0] as usize].entry(w[1]).or_insert(0) += 1;
                totals[w[0] as usize] += 1;
            }
        }
        Ok(Self { item_count, rows, totals })
    }

    pub fn probability(&self, from: ItemId, to: ItemId) -> f64 {
        let c = self.rows[from as usize].get(&to).copied().unwrap_or(0) as f64;
        (c + 1.0) / (self.totals[from as usize] as f64 + self.item_count as f64)
    }

    fn row_logits(&self, from: ItemId) -> ScoreVector<f64> {
        let denom = self.totals[from as usize] as f64 + self.item_count as f64;
        let mut v = vec![(1.0 / denom).ln(); self.item_count + 1];
        for (&to, &c) in &self.rows[from as usize] {
            v[to as usize] = ((c as f64 + 1.0) / denom).ln();
        }
        ScoreVector::logits(v)
    }
}

impl NextItemModel for MarkovModel {
    type Scalar = f64;
    type State = ItemId;

    fn item_count(&self) -> usize {
        self.item_count
    }

    fn begin(&self, prefix: &[ItemId]) -> Result<(ItemId, ScoreVector<f64>)> {
        check_prefix(prefix, self.item_count)?;
        let last = *prefix.last().expect("non-empty");
        Ok((last, self.row_logits(last)))
    }

    fn advance(&self, state: &mut ItemId, item: ItemId) -> Result<ScoreVector<f64>> {
        check_items(&[item], self.item_count)?;
        *state = item;
        Ok(self.row_logits(item))
    }
}

/// Prefix-independent model: `P(i) = (c(i) + 1) / (N + I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityModel {
    logits: ScoreVector<f64>,
}

impl PopularityModel {
    pub fn fit<'a>(item_count: usize, sequences: impl IntoIterator<Item = &'a [ItemId]>) -> Result<Self> {
        let mut counts = vec![0u64; item_count + 1];
        let mut total = 0u64;
        for seq in sequences {
            check_items(seq, item_count)?;
            for &i in seq {
                counts[i as usize] += 1;
                total += 1;
            }
        }
        let denom = total as f64 + item_count as f64;
        let logits = counts.iter().map(|&c| ((c as f64 + 1.0) / denom).ln()).collect();
        Ok(Self { logits: ScoreVector::logits(logits) })
    }
}

impl NextItemModel for PopularityModel {
    type Scalar = f64;
    type State = ();

    fn item_count(&self) -> usize {
        self.logits.item_count()
    }

    fn begin(&self, prefix: &[ItemId]) -> Result<((), ScoreVector<f64>)> {
        check_prefix(prefix, self.item_count())?;
        Ok(((), self.logits.clone()))
    }

    fn advance(&self, _: &mut (), item: ItemId) -> Result<ScoreVector<f64>> {
        check_items(&[item], self.item_count())?;
        Ok(self.logits.clone())
    }
}

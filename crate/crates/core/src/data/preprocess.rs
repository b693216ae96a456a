use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ingest::RawEvents;
use super::{ItemId, PAD};
use crate::error::{Error, Result};

/// How the item-count and user-length filters are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Alternate both filters until neither removes anything.
    #[default]
    Fixpoint,
    /// Item filter once, then user filter once.
    OnePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_user_len: usize,
    pub min_item_count: usize,
    pub filter_mode: FilterMode,
    /// Drop repeated (user, item) events, keeping the earliest.
    pub dedup: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { min_user_len: 20, min_item_count: 5, filter_mode: FilterMode::Fixpoint, dedup: false }
    }
}

/// Dense id spaces. Items are `1..=item_count` (0 is padding), users are
/// `0..user_count`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    item_names: Vec<String>,
    user_names: Vec<String>,
    item_index: HashMap<String, ItemId>,
    user_index: HashMap<String, u32>,
}

impl Catalog {
    pub fn new(item_names: Vec<String>, user_names: Vec<String>) -> Result<Self> {
        let item_index: HashMap<_, _> =
            item_names.iter().enumerate().map(|(i, n)| (n.clone(), i as ItemId + 1)).collect();
        let user_index: HashMap<_, _> =
            user_names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        if item_index.len() != item_names.len() || user_index.len() != user_names.len() {
            return Err(Error::Bundle("catalog contains duplicate raw ids".into()));
        }
        Ok(Self { item_names, user_names, item_index, user_index })
    }

    /// Catalog with synthetic names `i1..iN` / `u0..uM`.
    pub fn synthetic(item_count: usize, user_count: usize) -> Self {
        let items = (1..=item_count).map(|i| format!("i{i}")).collect();
        let users = (0..user_count).map(|u| format!("u{u}")).collect();
        Self::new(items, users).expect("synthetic names are unique")
    }

    pub fn item_count(&self) -> usize {
        self.item_names.len()
    }

    pub fn user_count(&self) -> usize {
        self.user_names.len()
    }

    pub fn item_id(&self, raw: &str) -> Option<ItemId> {
        self.item_index.get(raw).copied()
    }

    pub fn user_id(&self, raw: &str) -> Option<u32> {
        self.user_index.get(raw).copied()
    }

    pub fn item_name(&self, id: ItemId) -> Option<&str> {
        if id == PAD {
            return None;
        }
        self.item_names.get(id as usize - 1).map(String::as_str)
    }

    pub fn user_name(&self, id: u32) -> Option<&str> {
        self.user_names.get(id as usize).map(String::as_str)
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }
}

/// Per-user chronological item sequences over a dense catalog, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    catalog: Catalog,
    items: Vec<ItemId>,
    offsets: Vec<u32>,
}

impl InteractionLog {
    /// Build from already-dense sequences. Every id must lie in `1..=catalog.item_count()`.
    pub fn from_parts(catalog: Catalog, items: Vec<ItemId>, offsets: Vec<u32>) -> Result<Self> {
        if offsets.len() != catalog.user_count() + 1
            || offsets.first() != Some(&0)
            || *offsets.last().unwrap() as usize != items.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Bundle("offsets do not describe the item array".into()));
        }
        let n = catalog.item_count();
        if let Some(&bad) = items.iter().find(|&&i| i == PAD || i as usize > n) {
            return Err(Error::OutOfCatalog { item: bad, catalog: n });
        }
        Ok(Self { catalog, items, offsets })
    }

    pub fn from_sequences(item_count: usize, sequences: &[Vec<ItemId>]) -> Result<Self> {
        let catalog = Catalog::synthetic(item_count, sequences.len());
        let mut items = Vec::with_capacity(sequences.iter().map(Vec::len).sum());
        let mut offsets = Vec::with_capacity(sequences.len() + 1);
        offsets.push(0);
        for s in sequences {
            items.extend_from_slice(s);
            offsets.push(items.len() as u32);
        }
        Self::from_parts(catalog, items, offsets)
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn user_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn sequence(&self, user: usize) -> &[ItemId] {
        &self.items[self.offsets[user] as usize..self.offsets[user + 1] as usize]
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[ItemId]> + '_ {
        (0..self.user_count()).map(move |u| self.sequence(u))
    }

    pub fn flat_items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn stats(&self) -> DatasetStats {
        let users = self.user_count();
        let items = self.catalog.item_count();
        let interactions = self.items.len();
        DatasetStats {
            users,
            items,
            interactions,
            avg_length: interactions as f64 / users.max(1) as f64,
            density: interactions as f64 / (users as f64 * items as f64).max(1.0),
        }
    }
}

/// The columns of the usual dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_length: f64,
    /// Fraction, not percent.
    pub density: f64,
}

impl DatasetStats {
    pub const HEADER: &'static str = "#Users\t#Items\t#Interactions\tAvg. length\tDensity";
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.1}\t{:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.avg_length,
            self.density * 100.0
        )
    }
}

pub fn preprocess(events: &RawEvents, cfg: &PreprocessConfig) -> Result<InteractionLog> {
    if cfg.min_user_len == 0 || cfg.min_item_count == 0 {
        return Err(Error::InvalidParameter("filter thresholds must be at least 1".into()));
    }

    // Group by user in first-appearance order; stable sort keeps input order on equal timestamps.
    let n_users = events.users.len();
    let mut per_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); n_users];
    for e in &events.events {
        per_user[e.user as usize].push((e.timestamp, e.item));
    }
    let mut seqs: Vec<(u32, Vec<u32>)> = per_user
        .into_iter()
        .enumerate()
        .map(|(u, mut evs)| {
            evs.sort_by_key(|&(ts, _)| ts);
            let mut items: Vec<u32> = evs.into_iter().map(|(_, i)| i).collect();
            if cfg.dedup {
                let mut seen = std::collections::HashSet::new();
                items.retain(|i| seen.insert(*i));
            }
            (u as u32, items)
        })
        .collect();

    let n_items = events.items.len();
    loop {
        let mut counts = vec![0usize; n_items];
        for (_, s) in &seqs {
            for &i in s {
                counts[i as usize] += 1;
            }
        }
        let mut changed = false;
        for (_, s) in seqs.iter_mut() {
            let before = s.len();
            s.retain(|&i| counts[i as usize] >= cfg.min_item_count);
            changed |= s.len() != before;
        }
        let before = seqs.len();
        seqs.retain(|(_, s)| s.len() >= cfg.min_user_len);
        changed |= seqs.len() != before;

        if cfg.filter_mode == FilterMode::OnePass || !changed {
            break;
        }
    }
    if seqs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut dense = vec![PAD; n_items];
    let mut item_names = Vec::new();
    let mut items = Vec::with_capacity(seqs.iter().map(|(_, s)| s.len()).sum());
    let mut offsets = Vec::with_capacity(seqs.len() + 1);
    let mut user_names = Vec::with_capacity(seqs.len());
    offsets.push(0u32);
    for (u, s) in &seqs {
        user_names.push(events.users.name(*u).to_owned());
        for &raw in s {
            let slot = &mut dense[raw as usize];
            if *slot == PAD {
                item_names.push(events.items.name(raw).to_owned());
                *slot = item_names.len() as ItemId;
            }
            items.push(*slot);
        }
        offsets.push(items.len() as u32);
    }
    InteractionLog::from_parts(Catalog::new(item_names, user_names)?, items, offsets)
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::preprocess::InteractionLog;
use super::ItemId;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Validation,
    Test,
}

/// One user's history cut at the evaluation boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user: u32,
    pub train: Vec<ItemId>,
    /// Held-out continuation, soonest first.
    pub holdout: Vec<ItemId>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub users: Vec<UserHistory>,
    pub item_count: usize,
    pub n_holdout: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitDataset {
    pub fn partition(&self, part: Partition) -> impl Iterator<Item = &UserHistory> + '_ {
        self.users.iter().filter(move |u| u.partition == part)
    }

    pub fn train_sequences(&self) -> impl Iterator<Item = &[ItemId]> + '_ {
        self.users.iter().map(|u| u.train.as_slice())
    }
}

/// Hold out the last `n_holdout` items of every user; users are labelled
/// validation with probability `val_fraction` from a seeded stream.
pub fn split(log: &InteractionLog, n_holdout: usize, val_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::InvalidParameter(format!("val_fraction {val_fraction} not in [0, 1]")));
    }
    let mut rng = rng_for(seed, "split", &[]);
    let mut users = Vec::with_capacity(log.user_count());
    for (u, seq) in log.sequences().enumerate() {
        if n_holdout >= seq.len() {
            let name = log.catalog().user_name(u as u32).unwrap_or("?").to_owned();
            return Err(Error::HoldoutTooLong { user: name, len: seq.len(), n_holdout });
        }
        let cut = seq.len() - n_holdout;
        let partition =
            if rng.random::<f64>() < val_fraction { Partition::Validation } else { Partition::Test };
        users.push(UserHistory {
            user: u as u32,
            train: seq[..cut].to_vec(),
            holdout: seq[cut..].to_vec(),
            partition,
        });
    }
    Ok(SplitDataset { users, item_count: log.catalog().item_count(), n_holdout, val_fraction, seed })
}

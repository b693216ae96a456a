//! Synthetic interaction generators with known structure, used as
//! learnability targets and as small end-to-end fixtures.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::ItemId;
use crate::rng::rng_for;

/// Each item is always followed by the next one on a ring of `item_count`.
pub fn cycle_sequences(users: usize, item_count: usize, len: usize, seed: u64) -> Vec<Vec<ItemId>> {
    let mut rng = rng_for(seed, "synthetic-cycle", &[]);
    (0..users)
        .map(|_| {
            let mut cur = rng.random_range(1..=item_count as ItemId);
            (0..len)
                .map(|_| {
                    let out = cur;
                    cur = cur % item_count as ItemId + 1;
                    out
                })
                .collect()
        })
        .collect()
}

/// Users walk a ring of items; each user follows one of several step
/// distributions ("behaviors") and never revisits an item.
#[derive(Debug, Clone)]
pub struct RingMixture {
    pub item_count: usize,
    /// Per behavior: (signed step, weight).
    pub behaviors: Vec<Vec<(i64, f64)>>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of jumping to a uniformly random unvisited item instead.
    pub jump_prob: f64,
}

impl Default for RingMixture {
    fn default() -> Self {
        Self {
            item_count: 100,
            behaviors: vec![
                vec![(1, 0.45), (2, 0.35), (4, 0.2)],
                vec![(-1, 0.5), (-3, 0.3), (-2, 0.2)],
                vec![(3, 0.4), (1, 0.3), (5, 0.3)],
            ],
            min_len: 25,
            max_len: 40,
            jump_prob: 0.05,
        }
    }
}

impl RingMixture {
    pub fn generate(&self, users: usize, seed: u64) -> Vec<Vec<ItemId>> {
        let n = self.item_count as i64;
        (0..users)
            .map(|u| {
                let mut rng = rng_for(seed, "synthetic-ring", &[u as u64]);
                let behavior = self.behaviors.choose(&mut rng).expect("at least one behavior");
                let len = rng.random_range(self.min_len..=self.max_len).min(self.item_count);
                let mut visited = vec![false; self.item_count + 1];
                let mut cur = rng.random_range(1..=n);
                let mut seq = Vec::with_capacity(len);
                loop {
                    visited[cur as usize] = true;
                    seq.push(cur as ItemId);
                    if seq.len() == len {
                        break;
                    }
                    let moves: Vec<(i64, f64)> = behavior
                        .iter()
                        .map(|&(step, w)| ((cur - 1 + step).rem_euclid(n) + 1, w))
                        .filter(|&(next, _)| !visited[next as usize])
                        .collect();
                    let total: f64 = moves.iter().map(|m| m.1).sum();
                    cur = if moves.is_empty() || rng.random::<f64>() < self.jump_prob {
                        let free: Vec<i64> = (1..=n).filter(|&i| !visited[i as usize]).collect();
                        *free.choose(&mut rng).expect("len <= item_count")
                    } else {
                        let mut x = rng.random::<f64>() * total;
                        let mut pick = moves[moves.len() - 1].0;
                        for &(next, w) in &moves {
                            if x < w {
                                pick = next;
                                break;
                            }
                            x -= w;
                        }
                        pick
                    };
                }
                seq
            })
            .collect()
    }
}

/// Write sequences as a `user,item,ts` CSV with one row per interaction.
pub fn write_csv<W: Write>(mut out: W, sequences: &[Vec<ItemId>]) -> std::io::Result<()> {
    writeln!(out, "user,item,ts")?;
    for (u, seq) in sequences.iter().enumerate() {
        for (t, item) in seq.iter().enumerate() {
            writeln!(out, "u{u},i{item},{t}")?;
        }
    }
    Ok(())
}

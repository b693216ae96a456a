//! Independent reference computations shared by the integration tests.
//! Nothing here goes through the decoding or aggregation code under test.
#![allow(dead_code)]

use seqgen::data::ItemId;
use seqgen::model::{GptModel, MarkovModel, ModelConfig, ModelParameters, NextItemModel};
use seqgen::Gpt64;

pub fn random_gpt(cfg: ModelConfig, std: f64, seed: u64) -> Gpt64 {
    let params = ModelParameters::random(&cfg, std, seed);
    GptModel::new(cfg, params).unwrap()
}

pub fn small_cfg(d: usize, blocks: usize, heads: usize, items: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: d,
        num_blocks: blocks,
        num_heads: heads,
        dropout: 0.0,
        max_seq_len: max_len,
        item_count: items,
    }
}

/// Log-softmax over `allowed` items of a raw logit row (index = item id).
pub fn masked_log_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = (1..logits.len()).filter(|&i| allowed[i]).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (1..logits.len()).filter(|&i| allowed[i]).map(|i| (logits[i] - max).exp()).sum();
    (0..logits.len())
        .map(|i| if i > 0 && allowed[i] { logits[i] - max - z.ln() } else { f64::NEG_INFINITY })
        .collect()
}

fn full_logits<M: NextItemModel>(model: &M, prefix: &[ItemId]) -> Vec<f64> {
    model.forward(prefix).unwrap().values().iter().map(|v| num_traits::ToPrimitive::to_f64(v).unwrap()).collect()
}

/// Exhaustive argmax of the summed log-probability over every
/// repetition-free continuation of length `k` avoiding the history.
/// Every step re-encodes the full prefix. Ties go to the lexicographically
/// smaller sequence.
pub fn exhaustive_best<M: NextItemModel>(model: &M, history: &[ItemId], k: usize) -> (Vec<ItemId>, f64, usize) {
    let n = model.item_count();
    let mut best: Option<(Vec<ItemId>, f64)> = None;
    let mut count = 0usize;
    let mut stack: Vec<(Vec<ItemId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((seq, score)) = stack.pop() {
        if seq.len() == k {
            count += 1;
            let better = match &best {
                None => true,
                Some((b, s)) => score > *s || (score == *s && seq < *b),
            };
            if better {
                best = Some((seq, score));
            }
            continue;
        }
        let mut prefix = history.to_vec();
        prefix.extend(&seq);
        let mut allowed = vec![true; n + 1];
        allowed[0] = false;
        for &i in &prefix {
            allowed[i as usize] = false;
        }
        if !allowed.iter().any(|&a| a) {
            continue;
        }
        let lp = masked_log_softmax(&full_logits(model, &prefix), &allowed);
        for item in 1..=n as ItemId {
            if allowed[item as usize] {
                let mut next = seq.clone();
                next.push(item);
                stack.push((next, score + lp[item as usize]));
            }
        }
    }
    let (seq, score) = best.expect("at least one feasible continuation");
    (seq, score, count)
}

/// Sum over steps of the exact marginal next-item distribution when
/// sampling from a Markov chain at temperature `t`, history items masked,
/// repeats allowed.
pub fn markov_step_marginals(m: &MarkovModel, history: &[ItemId], k: usize, t: f64) -> Vec<f64> {
    let n = m.item_count();
    let mut allowed = vec![true; n + 1];
    allowed[0] = false;
    for &h in history {
        allowed[h as usize] = false;
    }
    // row[i][j] = P_T(j | i) over allowed j
    let row = |i: ItemId| -> Vec<f64> {
        let w: Vec<f64> = (0..=n as ItemId)
            .map(|j| if allowed[j as usize] { m.probability(i, j).powf(1.0 / t) } else { 0.0 })
            .collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    };
    let mut state = vec![0.0; n + 1];
    state[*history.last().unwrap() as usize] = 1.0;
    let mut total = vec![0.0; n + 1];
    for _ in 0..k {
        let mut next = vec![0.0; n + 1];
        for (i, &q) in state.iter().enumerate() {
            if q > 0.0 {
                for (j, p) in row(i as ItemId).into_iter().enumerate() {
                    next[j] += q * p;
                }
            }
        }
        for (a, b) in total.iter_mut().zip(&next) {
            *a += b;
        }
        state = next;
    }
    total
}

/// Items ranked by score descending, ties to the lower id, excluding `skip`.
pub fn rank_desc(scores: &[f64], skip: &[ItemId], k: usize) -> Vec<ItemId> {
    let mut items: Vec<ItemId> = (1..scores.len() as ItemId).filter(|i| !skip.contains(i)).collect();
    items.sort_by(|&a, &b| scores[b as usize].partial_cmp(&scores[a as usize]).unwrap().then(a.cmp(&b)));
    items.truncate(k);
    items
}

/// Two-sided p-value of a t statistic by direct numerical integration of
/// the Student-t density (composite Simpson on a substituted variable).
pub fn t_pvalue_by_integration(t: f64, df: f64) -> f64 {
    use std::f64::consts::PI;
    let ln_gamma = |x: f64| -> f64 {
        // Lanczos, g = 7
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let tt = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * tt.ln() - tt + a.ln()
    };
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * PI).sqrt();
    let density = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    // integral of the density over [0, |t|], then p = 1 - 2 * that
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = density(0.0) + density(t.abs());
    for i in 1..n {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

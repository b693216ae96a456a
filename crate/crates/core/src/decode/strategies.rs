use std::cmp::Ordering;

use rand::Rng as _;

use super::{
    apply_temperature, log_softmax, rank_candidates, rank_order, topk_filter,
    GeneratedSequence, GenerationConstraints, RecommendationList,
};
use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::model::{NextItemModel, ScoreVector};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Temperatures at or below this are treated as the zero-temperature limit
/// (argmax) instead of evaluating `exp(l / T)`.
pub const ARGMAX_TEMPERATURE: f64 = 1e-4;

/// Items that may not be emitted next.
struct Blocklist {
    blocked: Vec<bool>,
    forbid_repeats: bool,
}

impl Blocklist {
    fn new(item_count: usize, history: &[ItemId], c: &GenerationConstraints) -> Self {
        let mut blocked = vec![false; item_count + 1];
        blocked[0] = true;
        if c.forbid_history {
            for &i in history {
                if let Some(b) = blocked.get_mut(i as usize) {
                    *b = true;
                }
            }
        }
        Self { blocked, forbid_repeats: c.forbid_repeats }
    }

    fn emitted(&mut self, item: ItemId) {
        if self.forbid_repeats {
            self.blocked[item as usize] = true;
        }
    }

    fn apply<S: Scalar>(&self, logits: &mut ScoreVector<S>) {
        for (i, &b) in self.blocked.iter().enumerate() {
            if b {
                logits.mask(i as ItemId);
            }
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    Ok(())
}

fn argmax<S: Scalar>(logits: &ScoreVector<S>) -> Option<ItemId> {
    logits
        .live_items()
        .map(|i| (i, logits.get(i).as_f64()))
        .min_by(|&a, &b| rank_order(a, b))
        .map(|(i, _)| i)
}

/// One forward pass; the `k` highest-scoring unmasked next items.
pub fn topk_prediction<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    k: usize,
    constraints: &GenerationConstraints,
) -> Result<RecommendationList> {
    check_k(k)?;
    let mut logits = model.forward(history)?;
    Blocklist::new(model.item_count(), history, constraints).apply(&mut logits);
    let candidates = logits.live_items().map(|i| (i, logits.get(i).as_f64())).collect();
    Ok(rank_candidates(candidates, k))
}

/// Pick the most probable next item `k` times, feeding each choice back in.
pub fn greedy_decode<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    k: usize,
    constraints: &GenerationConstraints,
) -> Result<GeneratedSequence<M::Scalar>> {
    check_k(k)?;
    let mut block = Blocklist::new(model.item_count(), history, constraints);
    let (mut state, mut logits) = model.begin(history)?;
    let mut out = GeneratedSequence {
        items: Vec::with_capacity(k),
        log_probs: Vec::with_capacity(k),
        step_distributions: None,
        truncated: false,
        beam_capped: false,
    };
    for step in 0..k {
        block.apply(&mut logits);
        let Some(item) = argmax(&logits) else {
            out.truncated = true;
            break;
        };
        out.log_probs.push(log_softmax(&logits)?[item as usize]);
        out.items.push(item);
        block.emitted(item);
        if step + 1 < k {
            logits = model.advance(&mut state, item)?;
        }
    }
    Ok(out)
}

struct Beam<M: NextItemModel> {
    items: Vec<ItemId>,
    log_probs: Vec<f64>,
    score: f64,
    state: M::State,
    logits: ScoreVector<M::Scalar>,
}

/// Keep the `beams` most probable partial continuations at every step,
/// scored by the sum of step log-probabilities (no length normalisation;
/// every beam has the same length). Returns the best finished beam.
pub fn beam_search<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    k: usize,
    beams: usize,
    constraints: &GenerationConstraints,
) -> Result<GeneratedSequence<M::Scalar>> {
    check_k(k)?;
    if beams == 0 {
        return Err(Error::InvalidParameter("beam width must be at least 1".into()));
    }
    let base = Blocklist::new(model.item_count(), history, constraints);
    let (state, logits) = model.begin(history)?;
    let mut live: Vec<Beam<M>> = vec![Beam { items: vec![], log_probs: vec![], score: 0.0, state, logits }];
    let mut capped = false;
    let mut truncated = false;

    for step in 0..k {
        // (parent, item, log p, total score)
        let mut candidates: Vec<(usize, ItemId, f64, f64)> = Vec::new();
        for (b, beam) in live.iter_mut().enumerate() {
            let mut logits = beam.logits.clone();
            base.apply(&mut logits);
            if constraints.forbid_repeats {
                logits.mask_all(&beam.items);
            }
            let Ok(lp) = log_softmax(&logits) else { continue };
            candidates.extend(
                logits.live_items().map(|i| (b, i, lp[i as usize], beam.score + lp[i as usize])),
            );
        }
        if candidates.is_empty() {
            truncated = true;
            break;
        }
        capped |= candidates.len() < beams;
        let order = |a: &(usize, ItemId, f64, f64), c: &(usize, ItemId, f64, f64)| {
            c.3.partial_cmp(&a.3).unwrap_or(Ordering::Equal).then_with(|| {
                live[a.0].items.cmp(&live[c.0].items).then(a.1.cmp(&c.1))
            })
        };
        if candidates.len() > beams {
            candidates.select_nth_unstable_by(beams - 1, order);
            candidates.truncate(beams);
        }
        candidates.sort_unstable_by(order);

        let mut next = Vec::with_capacity(candidates.len());
        for &(parent, item, lp, score) in &candidates {
            let p = &live[parent];
            let mut items = p.items.clone();
            items.push(item);
            let mut log_probs = p.log_probs.clone();
            log_probs.push(lp);
            let mut state = p.state.clone();
            let logits = if step + 1 < k { model.advance(&mut state, item)? } else { p.logits.clone() };
            next.push(Beam { items, log_probs, score, state, logits });
        }
        live = next;
    }
    let best = live.into_iter().next().expect("at least the initial beam");
    Ok(GeneratedSequence {
        truncated: truncated || best.items.len() < k,
        items: best.items,
        log_probs: best.log_probs,
        step_distributions: None,
        beam_capped: capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    /// Restrict each draw to the `topk` most probable items.
    pub topk: Option<usize>,
    /// Keep the distribution of every step.
    pub record_steps: bool,
    /// Record the temperature-1 softmax of the masked logits instead of the
    /// distribution actually sampled from.
    pub record_softmax: bool,
}

impl SamplingParams {
    pub fn new(temperature: f64) -> Self {
        Self { temperature, topk: None, record_steps: false, record_softmax: false }
    }
}

fn one_hot<S: Scalar>(len: usize, item: ItemId) -> ScoreVector<S> {
    let mut v = vec![S::zero(); len];
    v[item as usize] = S::one();
    ScoreVector::probabilities(v)
}

/// Draw one item from a probability vector by inverse CDF over ascending ids.
fn draw<S: Scalar>(probs: &ScoreVector<S>, rng: &mut Rng) -> Option<ItemId> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for i in probs.live_items() {
        acc += probs.get(i).as_f64();
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}

/// Sample `k` items: mask, apply temperature, optional top-k filter, draw.
pub fn temperature_sample<M: NextItemModel>(
    model: &M,
    history: &[ItemId],
    k: usize,
    params: &SamplingParams,
    rng: &mut Rng,
    constraints: &GenerationConstraints,
) -> Result<GeneratedSequence<M::Scalar>> {
    check_k(k)?;
    if !(params.temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {}",
            params.temperature
        )));
    }
    if params.topk == Some(0) {
        return Err(Error::InvalidParameter("top-k must be at least 1".into()));
    }
    let mut block = Blocklist::new(model.item_count(), history, constraints);
    let (mut state, mut logits) = model.begin(history)?;
    let mut out = GeneratedSequence {
        items: Vec::with_capacity(k),
        log_probs: Vec::with_capacity(k),
        step_distributions: params.record_steps.then(Vec::new),
        truncated: false,
        beam_capped: false,
    };
    for step in 0..k {
        block.apply(&mut logits);
        if logits.live_items().next().is_none() {
            out.truncated = true;
            break;
        }
        let (item, dist) = if params.temperature <= ARGMAX_TEMPERATURE {
            let item = argmax(&logits).ok_or(Error::AllMasked)?;
            (item, one_hot(logits.values().len(), item))
        } else {
            let mut p = apply_temperature(&logits, params.temperature)?;
            if let Some(tk) = params.topk {
                p = topk_filter(&p, tk)?;
            }
            (draw(&p, rng).ok_or(Error::AllMasked)?, p)
        };
        out.log_probs.push(dist.get(item).as_f64().ln());
        out.items.push(item);
        if let Some(steps) = out.step_distributions.as_mut() {
            steps.push(if params.record_softmax { logits.softmax()? } else { dist });
        }
        block.emitted(item);
        if step + 1 < k {
            logits = model.advance(&mut state, item)?;
        }
    }
    Ok(out)
}

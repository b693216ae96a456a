use super::top_k;
use crate::error::{Error, Result};
use crate::model::{ScoreKind, ScoreVector};
use crate::scalar::Scalar;

fn expect_kind<S: Scalar>(scores: &ScoreVector<S>, kind: ScoreKind) -> Result<()> {
    if scores.kind() != kind {
        return Err(Error::Contract(format!("expected {kind:?}, got {:?}", scores.kind())));
    }
    Ok(())
}

/// `P_T(i) = exp(l_i / T) / sum_j exp(l_j / T)` over unmasked items, with
/// the maximum subtracted first.
pub fn apply_temperature<S: Scalar>(logits: &ScoreVector<S>, temperature: f64) -> Result<ScoreVector<S>> {
    expect_kind(logits, ScoreKind::Logits)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
    }
    let values = logits.values();
    let max = values[1..].iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    if max == S::neg_infinity() {
        return Err(Error::AllMasked);
    }
    let t = S::of(temperature);
    let mut out: Vec<S> = values
        .iter()
        .map(|&v| if v == S::neg_infinity() { S::zero() } else { ((v - max) / t).exp() })
        .collect();
    out[0] = S::zero();
    let sum: S = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(ScoreVector::probabilities(out))
}

/// Log-softmax at temperature 1, in `f64`. Masked entries stay `-inf`.
pub fn log_softmax<S: Scalar>(logits: &ScoreVector<S>) -> Result<Vec<f64>> {
    expect_kind(logits, ScoreKind::Logits)?;
    let vals: Vec<f64> = logits.values().iter().map(|v| v.as_f64()).collect();
    let max = vals[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let lse = vals[1..]
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| (v - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    let mut out: Vec<f64> = vals.iter().map(|&v| v - lse).collect();
    out[0] = f64::NEG_INFINITY;
    Ok(out)
}

/// Keep the `k` most probable items (ties to the lower id) and renormalise.
pub fn topk_filter<S: Scalar>(probs: &ScoreVector<S>, k: usize) -> Result<ScoreVector<S>> {
    expect_kind(probs, ScoreKind::Probabilities)?;
    if k == 0 {
        return Err(Error::InvalidParameter("top-k must be at least 1".into()));
    }
    let live: Vec<_> = probs.live_items().map(|i| (i, probs.get(i).as_f64())).collect();
    if live.len() <= k {
        return Ok(probs.clone());
    }
    let keep = top_k(live, k);
    let mut out = vec![S::zero(); probs.values().len()];
    let mut sum = S::zero();
    for &(i, _) in &keep {
        out[i as usize] = probs.get(i);
        sum += probs.get(i);
    }
    for &(i, _) in &keep {
        out[i as usize] /= sum;
    }
    Ok(ScoreVector::probabilities(out))
}

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gpt::{GptModel, ModelConfig, ModelParameters};
use super::NextItemModel;
use crate::data::{ItemId, Partition, SplitDataset};
use crate::decode::{topk_prediction, GenerationConstraints};
use crate::error::{Error, Result};
use crate::metrics::ndcg_at_k;
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Cut-off of the validation NDCG used for early stopping.
    pub eval_k: usize,
    /// Evaluate early stopping on at most this many validation users.
    pub max_validation_users: Option<usize>,
    /// Overrides the run seed for initialisation, shuffling and dropout.
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            patience: 5,
            eval_k: 10,
            max_validation_users: None,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("train.{field}"), msg));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1");
        }
        if self.eval_k == 0 {
            return bad("eval_k", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "Adam moments must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters from the best validation epoch.
    pub model: GptModel<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Stop once the metric has failed to improve `patience` times in a row.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize) -> Self {
        Self { patience, best: f64::NEG_INFINITY, since_best: 0 }
    }

    /// Returns `(improved, stop)`.
    pub(crate) fn observe(&mut self, metric: f64) -> (bool, bool) {
        if metric > self.best {
            self.best = metric;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

struct Adam<S> {
    m: ModelParameters<S>,
    v: ModelParameters<S>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(cfg: &ModelConfig) -> Self {
        Self { m: ModelParameters::zeros(cfg), v: ModelParameters::zeros(cfg), step: 0 }
    }

    fn update(&mut self, params: &mut ModelParameters<S>, grads: &ModelParameters<S>, tc: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (S::of(tc.beta1), S::of(tc.beta2));
        let c1 = S::one() - b1.powi(self.step);
        let c2 = S::one() - b2.powi(self.step);
        let lr = S::of(tc.learning_rate);
        let eps = S::of(tc.adam_eps);
        let grads = grads.tensors();
        for ((((_, p), (_, m)), (_, v)), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

/// Mean NDCG@k of the one-shot top-k list over the given users, history masked.
pub fn evaluate_topk_ndcg<M: NextItemModel>(
    model: &M,
    users: &[&crate::data::UserHistory],
    k: usize,
) -> Result<f64> {
    if users.is_empty() {
        return Ok(0.0);
    }
    let per_user: Vec<f64> = users
        .par_iter()
        .map(|u| {
            let recs = topk_prediction(model, &u.train, k, &GenerationConstraints::default())?;
            Ok(ndcg_at_k(&recs.items, &u.holdout, k))
        })
        .collect::<Result<_>>()?;
    Ok(per_user.iter().sum::<f64>() / per_user.len() as f64)
}

/// Train from scratch with shifted-by-one cross-entropy and Adam, stopping
/// early on validation NDCG of the one-shot top-k list.
pub fn train<S: Scalar>(
    split: &SplitDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    tcfg.validate()?;
    let seed = tcfg.seed.unwrap_or(seed);
    let mut mcfg = mcfg.clone();
    if mcfg.item_count == 0 {
        mcfg.item_count = split.item_count;
    }
    mcfg.validate()?;

    let window = mcfg.max_seq_len + 1;
    let sequences: Vec<Vec<ItemId>> = split
        .train_sequences()
        .filter(|s| s.len() >= 2)
        .map(|s| s[s.len().saturating_sub(window)..].to_vec())
        .collect();
    if sequences.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut validation: Vec<_> = split.partition(Partition::Validation).collect();
    if validation.is_empty() {
        return Err(Error::InvalidParameter("validation partition is empty".into()));
    }
    if let Some(cap) = tcfg.max_validation_users {
        validation.truncate(cap.max(1));
    }

    let mut model = GptModel::<S>::init(mcfg.clone(), seed)?;
    let mut best = model.clone();
    let mut grads = ModelParameters::zeros(&mcfg);
    let mut adam = Adam::new(&mcfg);
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut history = Vec::new();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut dropout_rng = rng_for(seed, "dropout", &[]);

    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut rng_for(seed, "shuffle", &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut targets = 0usize;
        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<Vec<ItemId>> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            grads.fill_zero();
            let (loss, n) = model.accumulate_gradients(&batch, &mut grads, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss * n as f64;
            targets += n;
            adam.update(model.params_mut(), &grads, tcfg);
        }
        if !model.params().is_finite() {
            return Err(Error::Diverged { epoch, step: 0, loss: f64::NAN });
        }
        let val_ndcg = evaluate_topk_ndcg(&model, &validation, tcfg.eval_k)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / targets as f64, val_ndcg };
        on_epoch(&record);
        history.push(record);
        let (improved, stop) = stopper.observe(val_ndcg);
        if improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_constant_metric_stops_after_two() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(0.3), (true, false));
        assert_eq!(s.observe(0.3), (false, true));
    }

    #[test]
    fn patience_counts_consecutive_misses() {
        let mut s = EarlyStopping::new(2);
        assert!(!s.observe(0.1).1);
        assert!(!s.observe(0.05).1);
        assert_eq!(s.observe(0.2), (true, false));
        assert!(!s.observe(0.2).1);
        assert!(s.observe(0.19).1);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let tc = TrainConfig { patience: 0, ..Default::default() };
        assert!(matches!(tc.validate(), Err(Error::Config { ref field, .. }) if field == "train.patience"));
        let tc = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(tc.validate().is_err());
    }
}

//! Per-bag AdamW optimization of the bag cross-entropy with early stopping on
//! validation balanced accuracy.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::bagging::Bag;
use crate::error::{Error, Result};
use crate::evaluation::{balanced_accuracy, score_bags};
use crate::model::{self, AbmilParams, Gradients};
use crate::rng::{stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tau: f64,
    pub attn_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 100,
            patience: 10,
            tau: 0.5,
            attn_dim: model::DEFAULT_ATTENTION_DIM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} out of range")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs");
        }
        if self.patience > self.max_epochs {
            return bad("patience");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau");
        }
        if self.attn_dim == 0 {
            return bad("attn_dim");
        }
        Ok(())
    }
}

/// Moment estimates shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &AbmilParams) -> Self {
        let n = params.as_flat().len();
        AdamState { m: alloc::vec![0.0; n], v: alloc::vec![0.0; n], t: 0 }
    }
}

/// One AdamW update. Weight decay is applied to the parameters directly,
/// `theta -= lr * wd * theta`, before the bias-corrected Adam step.
pub fn adamw_step(params: &mut AbmilParams, grads: &Gradients, state: &mut AdamState, config: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(config.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(config.beta2, f64::from(t));
    let decay = 1.0 - config.lr * config.weight_decay;
    let it = params
        .as_flat_mut()
        .iter_mut()
        .zip(grads.as_flat())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for ((theta, &g), (m, v)) in it {
        *theta *= decay;
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= config.lr * m_hat / (libm::sqrt(v_hat) + config.eps);
    }
}

/// Arithmetic mean of per-bag cross-entropy losses.
pub fn mean_bce(params: &AbmilParams, bags: &[Bag]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Empty("bag set"));
    }
    let mut total = 0.0;
    for b in bags {
        total += model::bce_from_logit(model::forward(params, &b.embeddings)?.logit, b.label);
    }
    Ok(total / bags.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's per-bag updates, each taken before its step.
    pub train_loss: f64,
    pub val_ba: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub best_params: AbmilParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn best_val_ba(&self) -> f64 {
        self.history[self.best_epoch].val_ba
    }
}

/// Trains from a seeded initialization. Each epoch visits the training bags in
/// a seeded shuffled order with one update per bag, then scores the
/// validation bags. Training stops after `patience` epochs without a strict
/// improvement, and the best epoch's parameters are returned.
pub fn train(train_bags: &[Bag], val_bags: &[Bag], dim: usize, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_bags.is_empty() {
        return Err(Error::Empty("training bag set"));
    }
    if val_bags.is_empty() {
        return Err(Error::Empty("validation bag set"));
    }
    if let Some(b) = train_bags.iter().chain(val_bags).find(|b| b.embeddings.cols() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: b.embeddings.cols() });
    }
    let mut params = model::init_params(dim, config.attn_dim, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut rng = stream_rng(config.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, AbmilParams)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let bag = &train_bags[i];
            let (grads, loss) = model::backward(&params, &bag.embeddings, bag.label)?;
            loss_sum += loss;
            adamw_step(&mut params, &grads, &mut state, config);
        }
        let val_ba = balanced_accuracy(&score_bags(&params, val_bags)?, config.tau)?;
        history.push(EpochRecord { epoch, train_loss: loss_sum / train_bags.len() as f64, val_ba });
        if best.as_ref().is_none_or(|(_, ba, _)| val_ba > *ba) {
            best = Some((epoch, val_ba, params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch runs");
    Ok(TrainReport { best_params, best_epoch, history })
}

//! Mini-batch training with Adam and per-group learning rates.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::EpochSet;
use crate::error::{config_err, usage_err, Result};
use crate::model::{argmax, InputMode, ModelConfig, ModelSize, MsaCnnModel, ParamGroup};
use crate::rng::{streams, Rng};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the weights instead of through the gradient.
    pub decoupled: bool,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, decoupled: false }
    }
}

/// First and second moments of one parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One Adam update in place. The step counter is incremented before use, so
/// the first update runs with `t = 1`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, adam: &Adam) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(usage_err!(
            "Adam shapes disagree: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.t += 1;
    let c1 = 1.0 - crate::math::powf(adam.beta1, state.t as f64);
    let c2 = 1.0 - crate::math::powf(adam.beta2, state.t as f64);
    for i in 0..params.len() {
        let mut g = grads[i];
        if !adam.decoupled {
            g += adam.weight_decay * params[i];
        }
        state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (crate::math::sqrt(vh) + adam.eps);
        if adam.decoupled {
            params[i] -= lr * adam.weight_decay * params[i];
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Learning rate of the TCM and output layer, `base_lr` when absent.
    pub head_lr: Option<f64>,
    pub weight_decay: f64,
    pub decoupled_decay: bool,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainConfig {
    /// Learning rates by model size: small models use 1e-3; large models use
    /// 1e-4 with 1e-3 for the TCM and head when multichannel.
    pub fn for_model(config: &ModelConfig, seed: u64) -> Self {
        let (base_lr, head_lr) = match (config.size, config.mode) {
            (ModelSize::Small, _) => (1e-3, None),
            (ModelSize::Large, InputMode::Univariate) => (1e-4, None),
            (ModelSize::Large, _) => (1e-4, Some(1e-3)),
        };
        Self {
            epochs: 100,
            base_lr,
            head_lr,
            weight_decay: 1e-4,
            decoupled_decay: false,
            dropout: 0.1,
            batch_size: 64,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        if !(self.base_lr >= 0.0) || self.head_lr.is_some_and(|l| !(l >= 0.0)) {
            return Err(config_err!("learning rates must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout rate {} is outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err!("weight decay must be non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay, decoupled: self.decoupled_decay }
    }

    pub fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.base_lr,
            ParamGroup::Head => self.head_lr.unwrap_or(self.base_lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

/// Gradient of the mean cross-entropy over `batch` (indices into `set`),
/// accumulated one sample at a time. Returns per-sample losses and
/// train-mode predictions alongside.
pub fn batch_gradient(
    model: &MsaCnnModel,
    set: &EpochSet,
    batch: &[usize],
    rng: &mut Rng,
    train: bool,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    let mut grads: Vec<Vec<f64>> = model.params.values.iter().map(|v| vec![0.0; v.numel()]).collect();
    let mut losses = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    let seed = 1.0 / batch.len() as f64;
    for &i in batch {
        let mut tape = Tape::new();
        let g = model.graph(&mut tape, &set.epoch_tensor(i), rng, train)?;
        let loss = tape.cross_entropy(g.logits, &[set.label(i)])?;
        tape.backward_seeded(loss, seed)?;
        for (acc, &p) in grads.iter_mut().zip(&g.params) {
            if let Some(gr) = tape.grad(p) {
                crate::math::axpy(1.0, gr, acc);
            }
        }
        losses.push(tape.value(loss).data()[0]);
        preds.push(argmax(tape.value(g.probs).data()));
    }
    Ok((grads, losses, preds))
}

/// Trains on the epochs listed in `indices` for exactly `config.epochs`
/// passes. `on_epoch` sees each epoch's statistics as they complete.
pub fn train_on(
    model: &mut MsaCnnModel,
    set: &EpochSet,
    indices: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<History> {
    if indices.is_empty() {
        return Err(usage_err!("cannot train on an empty set"));
    }
    config.validate()?;
    model.config.tcm.dropout = config.dropout;
    let adam = config.adam();
    let lrs: Vec<f64> = model.params.specs.iter().map(|s| config.lr_for(s.group)).collect();
    let mut states: Vec<AdamState> = model.params.values.iter().map(|v| AdamState::new(v.numel())).collect();
    let mut dropout_rng = Rng::new(config.seed, streams::DROPOUT);
    let mut order = indices.to_vec();
    let mut history = History::default();
    for epoch in 0..config.epochs {
        Rng::at(config.seed, streams::SHUFFLE, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let (grads, losses, preds) = batch_gradient(model, set, batch, &mut dropout_rng, true)?;
            loss_sum += losses.iter().sum::<f64>();
            correct += batch.iter().zip(&preds).filter(|(&i, &p)| set.label(i) == p).count();
            for (((value, grad), state), &lr) in model.params.values.iter_mut().zip(&grads).zip(&mut states).zip(&lrs) {
                adam_step(value.data_mut(), grad, state, lr, &adam)?;
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Trains on every epoch of `set`.
pub fn train(model: &mut MsaCnnModel, set: &EpochSet, config: &TrainConfig) -> Result<History> {
    let all: Vec<usize> = (0..set.len()).collect();
    train_on(model, set, &all, config, |_| {})
}

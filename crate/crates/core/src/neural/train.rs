use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Mode, NeuralModel};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Epochs without a new best before the learning rate is scaled by
    /// `lr_decay_factor`; 0 disables the schedule.
    pub lr_decay_patience: usize,
    pub lr_decay_factor: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            early_stop_patience: 10,
            lr_decay_patience: 4,
            lr_decay_factor: 0.5,
            dropout_rate: 0.2,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("learning_rate > 0, batch_size >= 1 and max_epochs >= 1 required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!("lr_decay_factor {} outside (0, 1]", self.lr_decay_factor)));
        }
        Ok(())
    }
}

/// Flat sample storage: `inputs` is `len x input_len`, `targets` and
/// `masks` are `len x output_len`. A zero mask entry drops that output from
/// the loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    pub input_len: usize,
    pub output_len: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub masks: Vec<f64>,
}

impl SampleSet {
    pub fn new(input_len: usize, output_len: usize) -> Self {
        Self { input_len, output_len, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        if self.input_len == 0 {
            0
        } else {
            self.inputs.len() / self.input_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, input: &[f64], target: &[f64], mask: &[f64]) {
        assert_eq!(input.len(), self.input_len);
        assert_eq!(target.len(), self.output_len);
        assert_eq!(mask.len(), self.output_len);
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        self.masks.extend_from_slice(mask);
    }

    /// Rows `idx` as flat batch buffers `(inputs, targets, masks)`.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (ni, no) = (self.input_len, self.output_len);
        let mut x = Vec::with_capacity(idx.len() * ni);
        let mut t = Vec::with_capacity(idx.len() * no);
        let mut m = Vec::with_capacity(idx.len() * no);
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * ni..(i + 1) * ni]);
            t.extend_from_slice(&self.targets[i * no..(i + 1) * no]);
            m.extend_from_slice(&self.masks[i * no..(i + 1) * no]);
        }
        (x, t, m)
    }
}

/// Mean squared error over unmasked entries (zero when all are masked).
pub fn masked_mse(out: &[f64], targets: &[f64], mask: &[f64]) -> f64 {
    masked_mse_grad(out, targets, mask).0
}

pub(crate) fn masked_mse_grad(out: &[f64], targets: &[f64], mask: &[f64]) -> (f64, Vec<f64>) {
    let n: f64 = mask.iter().sum();
    if n == 0.0 {
        return (0.0, vec![0.0; out.len()]);
    }
    let mut loss = 0.0;
    let grad = out
        .iter()
        .zip(targets)
        .zip(mask)
        .map(|((y, t), m)| {
            let e = m * (y - t);
            loss += e * (y - t);
            2.0 * e / n
        })
        .collect();
    (loss / n, grad)
}

/// One Adam step on a batch in train mode; returns the batch loss.
pub fn backward_and_step(
    model: &mut NeuralModel,
    inputs: &[f64],
    targets: &[f64],
    masks: &[f64],
    config: &TrainingConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = inputs.len() / model.input.len().max(1);
    let (loss, grads) = model.loss_and_gradients(inputs, targets, masks, batch, Mode::Train, rng)?;
    model.adam_step(&grads, config.learning_rate);
    Ok(loss)
}

/// Masked MSE of the whole set in infer mode.
pub fn evaluate(model: &NeuralModel, set: &SampleSet) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut rng = seeded(0);
    for chunk in idx.chunks(256) {
        let (x, t, m) = set.gather(chunk);
        let y = model.forward(&x, chunk.len(), Mode::Infer, &mut rng)?;
        let n: f64 = m.iter().sum();
        se += masked_mse(&y, &t, &m) * n;
        count += n;
    }
    Ok(if count > 0.0 { se / count } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean batch loss over the epoch, dropout on.
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub initial_val_mse: f64,
    pub stopped_early: bool,
}

/// Shuffled mini-batch Adam with step decay on plateaus and early stopping
/// on validation MSE; the model is left at its best-validation snapshot. With an empty validation
/// set the training loss drives early stopping.
pub fn train(model: &mut NeuralModel, train_set: &SampleSet, val_set: &SampleSet, config: &TrainingConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train_set.input_len != model.input.len() || train_set.output_len != model.output_len() {
        return Err(Error::Model(format!(
            "samples are {} -> {}, model is {} -> {}",
            train_set.input_len,
            train_set.output_len,
            model.input.len(),
            model.output_len()
        )));
    }
    let mut rng = seeded(config.seed);
    let monitor = |m: &NeuralModel, train_loss: f64| -> Result<f64> {
        if val_set.is_empty() {
            Ok(train_loss)
        } else {
            evaluate(m, val_set)
        }
    };
    let initial = monitor(model, evaluate(model, train_set)?)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.layers.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step = *config;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, t, m) = train_set.gather(chunk);
            let loss = backward_and_step(model, &x, &t, &m, &step, &mut rng)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}; lower the learning rate")))?;
            total += loss * chunk.len() as f64;
        }
        let train_mse = total / train_set.len() as f64;
        let val_mse = monitor(model, train_mse)?;
        if !val_mse.is_finite() || val_mse > 10.0 * initial.max(1e-12) {
            return Err(Error::Diverged(format!("epoch {epoch}: validation MSE {val_mse:e} vs initial {initial:e}")));
        }
        curve.push(EpochLoss { epoch, train_mse, val_mse });
        if val_mse < best.0 {
            best = (val_mse, epoch, model.layers.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
            if config.lr_decay_patience > 0 && since_best % config.lr_decay_patience == 0 {
                step.learning_rate *= config.lr_decay_factor;
            }
        }
    }
    model.layers = best.2;
    Ok(TrainReport { curve, best_epoch: best.1, best_val_mse: best.0, initial_val_mse: initial, stopped_early })
}

/// Rows `(epoch, train_mse, val_mse)`.
pub fn write_curve_csv<W: Write>(out: &mut W, curve: &[EpochLoss]) -> std::io::Result<()> {
    writeln!(out, "epoch,train_mse,val_mse")?;
    for e in curve {
        writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.val_mse)?;
    }
    Ok(())
}

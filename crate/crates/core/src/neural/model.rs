use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::encode::Normalization;
use super::layers::{Cache, Layer};
use super::{Activation, LayerSpec, Mode, Padding, Shape, Tensor};
use crate::container;
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"OWCMODL1";
const VERSION: u32 = 2;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
struct AdamState {
    step: u64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the batch input.
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    /// Architecture tag: `paper_cnn`, `fc_dnn` or `custom`.
    pub arch: String,
    pub input: Shape,
    pub layers: Vec<Layer>,
    pub normalization: Option<Normalization>,
    pub seed: u64,
    adam: AdamState,
}

impl NeuralModel {
    /// Chains `specs` from `input`, checking shapes before any compute, and
    /// initialises parameters from `seed`.
    pub fn new(arch: &str, input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        for spec in specs {
            let l = Layer::new(*spec, shape)?;
            shape = l.output;
            layers.push(l);
        }
        if !matches!(shape, Shape::Flat(_)) {
            return Err(Error::Model(format!("model output must be flat, got {shape}")));
        }
        let mut rng = seeded(seed);
        layers.iter_mut().for_each(|l| l.init(&mut rng));
        Ok(Self { arch: arch.into(), input, layers, normalization: None, seed, adam: AdamState::default() })
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input.len(), |l| l.output.len())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    fn check_batch(&self, x: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || x.len() != batch * self.input.len() {
            return Err(Error::Model(format!(
                "input of {} values is not {batch} samples of shape {}",
                x.len(),
                self.input
            )));
        }
        Ok(())
    }

    /// Batched forward pass; `rng` draws dropout masks in train mode only.
    pub fn forward(&self, x: &[f64], batch: usize, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_batch(x, batch)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.forward(&a, batch, mode, rng).0;
        }
        Ok(a)
    }

    /// Single-sample inference with dropout off, plus its wall-clock time.
    pub fn infer(&self, input: &Tensor) -> Result<(Vec<f64>, Duration)> {
        if input.shape != self.input {
            return Err(Error::Model(format!("input shape {} does not match model input {}", input.shape, self.input)));
        }
        let start = Instant::now();
        let out = self.forward(&input.data, 1, Mode::Infer, &mut seeded(0))?;
        Ok((out, start.elapsed()))
    }

    /// Masked MSE of a batch and its gradients by backpropagation.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        targets: &[f64],
        mask: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, Gradients)> {
        self.check_batch(x, batch)?;
        let out_len = self.output_len();
        if targets.len() != batch * out_len || mask.len() != targets.len() {
            return Err(Error::Model(format!("targets must hold {batch} x {out_len} values")));
        }
        let mut acts = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            // infer-mode layers keep no cache, so backprop always runs train-mode
            // forwards; dropout is disabled separately for `Mode::Infer`.
            let layer_mode = if mode == Mode::Infer && matches!(l.spec, LayerSpec::Dropout { .. }) {
                Mode::Infer
            } else {
                Mode::Train
            };
            let (next, cache) = l.forward(&acts, batch, layer_mode, rng);
            caches.push(cache);
            acts = next;
        }
        let (loss, mut d) = super::train::masked_mse_grad(&acts, targets, mask);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss {loss}")));
        }
        let mut layers = vec![LayerGrad { weights: vec![], bias: vec![] }; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let cache = std::mem::replace(&mut caches[i], Cache::Nothing);
            let (dw, db, dx) = l.backward(&cache, &d, batch, true);
            layers[i] = LayerGrad { weights: dw, bias: db };
            d = dx.expect("input gradient requested");
        }
        Ok((loss, Gradients { layers, input: d }))
    }

    /// One Adam update with standard decay constants.
    pub fn adam_step(&mut self, grads: &Gradients, learning_rate: f64) {
        if self.adam.m.len() != self.layers.len() {
            let zeros = |l: &Layer| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]);
            self.adam.m = self.layers.iter().map(zeros).collect();
            self.adam.v = self.adam.m.clone();
            self.adam.step = 0;
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let g = &grads.layers[i];
            let (mw, mb) = &mut self.adam.m[i];
            let (vw, vb) = &mut self.adam.v[i];
            for (params, grad, m, v) in [(&mut l.weights, &g.weights, mw, vw), (&mut l.bias, &g.bias, mb, vb)] {
                for j in 0..params.len() {
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * grad[j];
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * grad[j] * grad[j];
                    params[j] -= learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }
}

/// Two 3x3 conv + ReLU + 2x2 max-pool stages (32 and 64 filters, same
/// padding), then dense 128 and 64 with ReLU and a linear output. Dropout
/// precedes each hidden dense layer.
pub fn build_paper_cnn(input: Shape, output_len: usize, dropout: f64, seed: u64) -> Result<NeuralModel> {
    match input {
        Shape::Grid { h, w, .. } if h >= 8 && w >= 8 => {}
        _ => return Err(Error::Model(format!("CNN input must be a grid of at least 8x8, got {input}"))),
    }
    let conv = |filters| LayerSpec::Conv { filters, kernel: 3, padding: Padding::Same, activation: Activation::Relu };
    let specs = [
        conv(32),
        LayerSpec::MaxPool { window: 2 },
        conv(64),
        LayerSpec::MaxPool { window: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { units: 128, activation: Activation::Relu },
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { units: 64, activation: Activation::Relu },
        LayerSpec::LinearOutput { units: output_len },
    ];
    NeuralModel::new("paper_cnn", input, &specs, seed)
}

/// Equal hidden width `h` for three dense layers totalling about `target`
/// parameters: `2 h^2 + (n + out + 3) h + out = target`.
pub fn fc_hidden_width(input_len: usize, output_len: usize, target: usize) -> usize {
    let count = |h: usize| input_len * h + h + 2 * (h * h + h) + h * output_len + output_len;
    // a = 2, b = n + out + 3, c = out - target
    let b = (input_len + output_len + 3) as f64;
    let c = output_len as f64 - target as f64;
    let h = ((-b + (b * b - 8.0 * c).sqrt()) / 4.0).max(1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    if count(lo).abs_diff(target) <= count(hi).abs_diff(target) {
        lo.max(1)
    } else {
        hi
    }
}

/// Fully connected baseline: flatten, three dense ReLU layers of equal width
/// sized for about 1.2 M parameters, linear output.
pub fn build_fc_dnn(input: Shape, output_len: usize, dropout: f64, seed: u64) -> Result<NeuralModel> {
    let h = fc_hidden_width(input.len(), output_len, 1_200_000);
    let dense = LayerSpec::Dense { units: h, activation: Activation::Relu };
    let mut specs = vec![];
    if matches!(input, Shape::Grid { .. }) {
        specs.push(LayerSpec::Flatten);
    }
    specs.extend([
        LayerSpec::Dropout { rate: dropout },
        dense,
        LayerSpec::Dropout { rate: dropout },
        dense,
        LayerSpec::Dropout { rate: dropout },
        dense,
        LayerSpec::LinearOutput { units: output_len },
    ]);
    NeuralModel::new("fc_dnn", input, &specs, seed)
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    arch: String,
    input: Shape,
    layers: Vec<LayerSpec>,
    param_lengths: Vec<(usize, usize)>,
    normalization: Option<Normalization>,
    seed: u64,
}

/// Atomic versioned write of architecture, parameters and normalization.
/// Optimizer state is not persisted.
pub fn save_model(model: &NeuralModel, path: &Path) -> Result<()> {
    let manifest = ModelManifest {
        arch: model.arch.clone(),
        input: model.input,
        layers: model.specs(),
        param_lengths: model.layers.iter().map(|l| (l.weights.len(), l.bias.len())).collect(),
        normalization: model.normalization.clone(),
        seed: model.seed,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    let mut payload = Vec::with_capacity(model.param_count());
    for l in &model.layers {
        payload.extend_from_slice(&l.weights);
        payload.extend_from_slice(&l.bias);
    }
    container::write_atomic(path, &container::encode(MAGIC, VERSION, &json, &payload))
}

pub fn load_model(path: &Path) -> Result<NeuralModel> {
    let bytes = container::read_bytes(path)?;
    let d = container::decode(path, &bytes, MAGIC, VERSION)?;
    let schema = |detail: String| Error::Schema { path: path.to_path_buf(), detail };
    let m: ModelManifest = serde_json::from_str(&d.manifest).map_err(|e| schema(format!("manifest: {e}")))?;
    let mut model = NeuralModel::new(&m.arch, m.input, &m.layers, m.seed).map_err(|e| schema(e.to_string()))?;
    let lengths: Vec<(usize, usize)> = model.layers.iter().map(|l| (l.weights.len(), l.bias.len())).collect();
    if lengths != m.param_lengths || d.payload.len() != model.param_count() {
        return Err(schema("parameter lengths do not match the architecture".into()));
    }
    let mut at = 0;
    for l in &mut model.layers {
        let nw = l.weights.len();
        l.weights.copy_from_slice(&d.payload[at..at + nw]);
        at += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&d.payload[at..at + nb]);
        at += nb;
    }
    model.normalization = m.normalization;
    Ok(model)
}

//! From-scratch CNN / dense networks for learned power allocation.
//!
//! Activations are stored batch-major, and image tensors use HWC order.

mod encode;
mod layers;
mod model;
mod train;

pub use encode::{
    cnn_allocate, decode_output, encode_input, encode_label, normalized_slots, raw_features, tile_canvas, CanvasLayout,
    Normalization, RawFeatures,
    FEATURE_CHANNELS, FEATURE_NAMES,
};
pub use layers::Layer;
pub use model::{build_fc_dnn, build_paper_cnn, fc_hidden_width, load_model, save_model, Gradients, LayerGrad, NeuralModel};
pub use train::{backward_and_step, evaluate, masked_mse, train, write_curve_csv, EpochLoss, SampleSet, TrainReport, TrainingConfig};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Grid { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Grid { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Grid { h, w, c } => write!(f, "{h}x{w}x{c}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Model(format!("{} values for shape {shape}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("tensor holds non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    /// Zero padding of `(k - 1) / 2` on each side (odd kernels only).
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, padding: Padding, activation: Activation },
    MaxPool { window: usize },
    Flatten,
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
    LinearOutput { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `C = op(A) op(B) + beta C`, all row-major; `op(A)` is m x k, `op(B)` k x n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gemm, Activation, LayerSpec, Mode, Padding, Shape};
use crate::rng::Rng;
use crate::{Error, Result};

/// One layer with its parameters. Conv weights are `[k*k*c_in, filters]`
/// (row index `(di*k + dj)*c_in + ch`), dense weights `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) enum Cache {
    Conv { cols: Vec<f64>, out: Vec<f64> },
    Pool { argmax: Vec<usize> },
    Dense { input: Vec<f64>, out: Vec<f64> },
    Dropout { mask: Vec<f64> },
    Nothing,
}

fn grid(shape: Shape, what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        Shape::Grid { h, w, c } => Ok((h, w, c)),
        Shape::Flat(_) => Err(Error::Model(format!("{what} needs a grid input, got {shape}"))),
    }
}

fn flat(shape: Shape, what: &str) -> Result<usize> {
    match shape {
        Shape::Flat(n) => Ok(n),
        Shape::Grid { .. } => Err(Error::Model(format!("{what} needs a flat input, got {shape}; add Flatten"))),
    }
}

fn activate(act: Activation, v: &mut [f64]) {
    if act == Activation::Relu {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    }
}

/// Gradient through the activation, using the post-activation output.
fn activation_grad(act: Activation, out: &[f64], d_out: &[f64]) -> Vec<f64> {
    match act {
        Activation::Linear => d_out.to_vec(),
        Activation::Relu => out.iter().zip(d_out).map(|(o, d)| if *o > 0.0 { *d } else { 0.0 }).collect(),
    }
}

impl Layer {
    pub fn new(spec: LayerSpec, input: Shape) -> Result<Self> {
        let (output, n_w, n_b) = match spec {
            LayerSpec::Conv { filters, kernel, padding, .. } => {
                let (h, w, c) = grid(input, "Conv")?;
                if filters == 0 || kernel == 0 {
                    return Err(Error::Model("Conv needs filters and kernel >= 1".into()));
                }
                let (ho, wo) = match padding {
                    Padding::Same if kernel % 2 == 0 => return Err(Error::Model("same padding needs an odd kernel".into())),
                    Padding::Same => (h, w),
                    Padding::Valid if kernel > h || kernel > w => {
                        return Err(Error::Model(format!("kernel {kernel} larger than input {input}")))
                    }
                    Padding::Valid => (h - kernel + 1, w - kernel + 1),
                };
                (Shape::Grid { h: ho, w: wo, c: filters }, kernel * kernel * c * filters, filters)
            }
            LayerSpec::MaxPool { window } => {
                let (h, w, c) = grid(input, "MaxPool")?;
                if window == 0 || h / window == 0 || w / window == 0 {
                    return Err(Error::Model(format!("pool window {window} collapses input {input}")));
                }
                (Shape::Grid { h: h / window, w: w / window, c }, 0, 0)
            }
            LayerSpec::Flatten => (Shape::Flat(input.len()), 0, 0),
            LayerSpec::Dense { units, .. } | LayerSpec::LinearOutput { units } => {
                let n = flat(input, "Dense")?;
                if units == 0 {
                    return Err(Error::Model("Dense needs units >= 1".into()));
                }
                (Shape::Flat(units), n * units, units)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Model(format!("dropout rate {rate} outside [0, 1)")));
                }
                (input, 0, 0)
            }
        };
        Ok(Self { spec, input, output, weights: vec![0.0; n_w], bias: vec![0.0; n_b] })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn fan_in(&self) -> usize {
        if self.bias.is_empty() {
            1
        } else {
            self.weights.len() / self.bias.len()
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub(crate) fn init(&mut self, rng: &mut Rng) {
        let a = (6.0 / self.fan_in() as f64).sqrt();
        self.weights.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub(crate) fn forward(&self, x: &[f64], batch: usize, mode: Mode, rng: &mut Rng) -> (Vec<f64>, Cache) {
        debug_assert_eq!(x.len(), batch * self.input.len());
        match self.spec {
            LayerSpec::Conv { kernel, padding, activation, filters } => {
                let cols = self.im2col(x, batch, kernel, padding);
                let rows = batch * self.output.len() / filters;
                let mut out = vec![0.0; rows * filters];
                for r in 0..rows {
                    out[r * filters..(r + 1) * filters].copy_from_slice(&self.bias);
                }
                gemm(rows, self.fan_in(), filters, &cols, false, &self.weights, false, 1.0, &mut out);
                activate(activation, &mut out);
                let cache = if mode == Mode::Train { Cache::Conv { cols, out: out.clone() } } else { Cache::Nothing };
                (out, cache)
            }
            LayerSpec::MaxPool { window } => {
                let Shape::Grid { h, w, c } = self.input else { unreachable!() };
                let Shape::Grid { h: ho, w: wo, .. } = self.output else { unreachable!() };
                let mut out = Vec::with_capacity(batch * self.output.len());
                let mut argmax = Vec::with_capacity(batch * self.output.len());
                for b in 0..batch {
                    let base = b * h * w * c;
                    for i in 0..ho {
                        for j in 0..wo {
                            for ch in 0..c {
                                let mut best = (f64::NEG_INFINITY, 0);
                                for di in 0..window {
                                    for dj in 0..window {
                                        let idx = base + ((i * window + di) * w + j * window + dj) * c + ch;
                                        if x[idx] > best.0 {
                                            best = (x[idx], idx);
                                        }
                                    }
                                }
                                out.push(best.0);
                                argmax.push(best.1);
                            }
                        }
                    }
                }
                let cache = if mode == Mode::Train { Cache::Pool { argmax } } else { Cache::Nothing };
                (out, cache)
            }
            LayerSpec::Flatten => (x.to_vec(), Cache::Nothing),
            LayerSpec::Dense { units, .. } | LayerSpec::LinearOutput { units } => {
                let act = match self.spec {
                    LayerSpec::Dense { activation, .. } => activation,
                    _ => Activation::Linear,
                };
                let n = self.input.len();
                let mut out = vec![0.0; batch * units];
                for r in 0..batch {
                    out[r * units..(r + 1) * units].copy_from_slice(&self.bias);
                }
                gemm(batch, n, units, x, false, &self.weights, false, 1.0, &mut out);
                activate(act, &mut out);
                let cache =
                    if mode == Mode::Train { Cache::Dense { input: x.to_vec(), out: out.clone() } } else { Cache::Nothing };
                (out, cache)
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Infer || rate == 0.0 {
                    return (x.to_vec(), Cache::Dropout { mask: vec![1.0; x.len()] });
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.len()).map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 }).collect();
                (x.iter().zip(&mask).map(|(a, m)| a * m).collect(), Cache::Dropout { mask })
            }
        }
    }

    /// Gradients of the parameters and, when `need_dx`, of the input.
    pub(crate) fn backward(
        &self,
        cache: &Cache,
        d_out: &[f64],
        batch: usize,
        need_dx: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        match (self.spec, cache) {
            (LayerSpec::Conv { kernel, padding, activation, filters }, Cache::Conv { cols, out }) => {
                let d_pre = activation_grad(activation, out, d_out);
                let rows = d_pre.len() / filters;
                let k_len = self.fan_in();
                let mut db = vec![0.0; filters];
                for r in 0..rows {
                    for (f, g) in db.iter_mut().enumerate() {
                        *g += d_pre[r * filters + f];
                    }
                }
                let mut dw = vec![0.0; k_len * filters];
                gemm(k_len, rows, filters, cols, true, &d_pre, false, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    let mut d_cols = vec![0.0; rows * k_len];
                    gemm(rows, filters, k_len, &d_pre, false, &self.weights, true, 0.0, &mut d_cols);
                    self.col2im(&d_cols, batch, kernel, padding)
                });
                (dw, db, dx)
            }
            (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                let dx = need_dx.then(|| {
                    let mut dx = vec![0.0; batch * self.input.len()];
                    for (g, &idx) in d_out.iter().zip(argmax) {
                        dx[idx] += g;
                    }
                    dx
                });
                (vec![], vec![], dx)
            }
            (LayerSpec::Flatten, _) => (vec![], vec![], need_dx.then(|| d_out.to_vec())),
            (LayerSpec::Dense { units, .. } | LayerSpec::LinearOutput { units }, Cache::Dense { input, out }) => {
                let act = match self.spec {
                    LayerSpec::Dense { activation, .. } => activation,
                    _ => Activation::Linear,
                };
                let d_pre = activation_grad(act, out, d_out);
                let n = self.input.len();
                let mut db = vec![0.0; units];
                for r in 0..batch {
                    for (u, g) in db.iter_mut().enumerate() {
                        *g += d_pre[r * units + u];
                    }
                }
                let mut dw = vec![0.0; n * units];
                gemm(n, batch, units, input, true, &d_pre, false, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    let mut dx = vec![0.0; batch * n];
                    gemm(batch, units, n, &d_pre, false, &self.weights, true, 0.0, &mut dx);
                    dx
                });
                (dw, db, dx)
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                (vec![], vec![], need_dx.then(|| d_out.iter().zip(mask).map(|(d, m)| d * m).collect()))
            }
            _ => unreachable!("cache does not match layer; backward needs a train-mode forward"),
        }
    }

    fn pad(kernel: usize, padding: Padding) -> usize {
        match padding {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn im2col(&self, x: &[f64], batch: usize, kernel: usize, padding: Padding) -> Vec<f64> {
        let Shape::Grid { h, w, c } = self.input else { unreachable!() };
        let Shape::Grid { h: ho, w: wo, .. } = self.output else { unreachable!() };
        let p = Self::pad(kernel, padding) as isize;
        let k_len = kernel * kernel * c;
        let mut cols = vec![0.0; batch * ho * wo * k_len];
        for b in 0..batch {
            let img = &x[b * h * w * c..(b + 1) * h * w * c];
            for i in 0..ho {
                for j in 0..wo {
                    let row = &mut cols[((b * ho + i) * wo + j) * k_len..][..k_len];
                    for di in 0..kernel {
                        let y = i as isize + di as isize - p;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dj in 0..kernel {
                            let xx = j as isize + dj as isize - p;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let src = (y as usize * w + xx as usize) * c;
                            row[(di * kernel + dj) * c..][..c].copy_from_slice(&img[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, d_cols: &[f64], batch: usize, kernel: usize, padding: Padding) -> Vec<f64> {
        let Shape::Grid { h, w, c } = self.input else { unreachable!() };
        let Shape::Grid { h: ho, w: wo, .. } = self.output else { unreachable!() };
        let p = Self::pad(kernel, padding) as isize;
        let k_len = kernel * kernel * c;
        let mut dx = vec![0.0; batch * h * w * c];
        for b in 0..batch {
            let img = &mut dx[b * h * w * c..(b + 1) * h * w * c];
            for i in 0..ho {
                for j in 0..wo {
                    let row = &d_cols[((b * ho + i) * wo + j) * k_len..][..k_len];
                    for di in 0..kernel {
                        let y = i as isize + di as isize - p;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dj in 0..kernel {
                            let xx = j as isize + dj as isize - p;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let dst = (y as usize * w + xx as usize) * c;
                            for ch in 0..c {
                                img[dst + ch] += row[(di * kernel + dj) * c + ch];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_kernel() {
        let spec = LayerSpec::Conv { filters: 1, kernel: 1, padding: Padding::Valid, activation: Activation::Linear };
        let mut l = Layer::new(spec, Shape::Grid { h: 3, w: 2, c: 1 }).unwrap();
        l.weights = vec![1.0];
        let x = vec![0.5, -1.0, 2.0, 3.0, -4.0, 7.0];
        let (y, _) = l.forward(&x, 1, Mode::Infer, &mut seeded(0));
        assert_eq!(y, x);
    }

    #[test]
    fn pool_of_constant() {
        let l = Layer::new(LayerSpec::MaxPool { window: 2 }, Shape::Grid { h: 4, w: 6, c: 2 }).unwrap();
        assert_eq!(l.output, Shape::Grid { h: 2, w: 3, c: 2 });
        let (y, _) = l.forward(&[0.3; 48], 1, Mode::Infer, &mut seeded(0));
        assert_eq!(y, vec![0.3; 12]);
    }

    #[test]
    fn shape_errors() {
        assert!(Layer::new(LayerSpec::Dense { units: 3, activation: Activation::Relu }, Shape::Grid { h: 2, w: 2, c: 1 }).is_err());
        assert!(Layer::new(LayerSpec::MaxPool { window: 2 }, Shape::Flat(4)).is_err());
        assert!(Layer::new(LayerSpec::MaxPool { window: 3 }, Shape::Grid { h: 2, w: 8, c: 1 }).is_err());
        let conv = LayerSpec::Conv { filters: 2, kernel: 4, padding: Padding::Same, activation: Activation::Relu };
        assert!(Layer::new(conv, Shape::Grid { h: 8, w: 8, c: 1 }).is_err());
        assert!(Layer::new(LayerSpec::Dropout { rate: 1.0 }, Shape::Flat(3)).is_err());
    }

    #[test]
    fn same_padding_keeps_dims() {
        let conv = LayerSpec::Conv { filters: 4, kernel: 3, padding: Padding::Same, activation: Activation::Relu };
        let l = Layer::new(conv, Shape::Grid { h: 5, w: 7, c: 2 }).unwrap();
        assert_eq!(l.output, Shape::Grid { h: 5, w: 7, c: 4 });
        assert_eq!(l.param_count(), 3 * 3 * 2 * 4 + 4);
    }

    #[test]
    fn dropout_expectation() {
        let l = Layer::new(LayerSpec::Dropout { rate: 0.2 }, Shape::Flat(4)).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut rng = seeded(11);
        let mut acc = [0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            let (y, _) = l.forward(&x, 1, Mode::Train, &mut rng);
            for (a, v) in acc.iter_mut().zip(&y) {
                *a += v / n as f64;
            }
        }
        for (a, v) in acc.iter().zip(&x) {
            assert!((a - v).abs() <= 0.01 * v.abs().max(1.0), "{a} vs {v}");
        }
        let (y, _) = l.forward(&x, 1, Mode::Infer, &mut rng);
        assert_eq!(y, x.to_vec());
    }
}

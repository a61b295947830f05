use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Affine map `x · weight + bias`, `weight: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Gaussian weights with variance `1 / in`, zero bias.
    pub fn random(inputs: usize, outputs: usize, rng: &mut StreamRng) -> Self {
        let std = 1.0 / libm::sqrt(inputs as f64);
        let data = (0..inputs * outputs)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Linear {
            weight: Matrix::from_vec(inputs, outputs, data),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn identity(n: usize) -> Self {
        Linear {
            weight: Matrix::identity(n),
            bias: Matrix::zeros(1, n),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        for r in 0..y.rows {
            y.row_mut(r)
                .iter_mut()
                .zip(&self.bias.data)
                .for_each(|(a, b)| *a += b);
        }
        y
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }

    /// Places the parameters on `tape`.
    pub fn leaves(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.affine(x, self.weight, self.bias)
    }
}

/// Per-feature batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        let mut gamma = Matrix::zeros(1, width);
        gamma.data.iter_mut().for_each(|g| *g = 1.0);
        BatchNorm {
            gamma,
            beta: Matrix::zeros(1, width),
        }
    }

    /// Normalizes each column with batch statistics.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mean = x.mean_rows();
        let mut var = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for c in 0..x.cols {
                let d = x.get(r, c) - mean.data[c];
                var.data[c] += d * d;
            }
        }
        let n = x.rows.max(1) as f64;
        let mut y = x.clone();
        for r in 0..x.rows {
            for c in 0..x.cols {
                let norm = (x.get(r, c) - mean.data[c]) / libm::sqrt(var.data[c] / n + BATCH_NORM_EPS);
                y.data[r * x.cols + c] = self.gamma.data[c] * norm + self.beta.data[c];
            }
        }
        y
    }
}

/// Two-layer MLP value head `φ`: affine, optional batch norm, ReLU, affine.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueHead {
    pub first: Linear,
    pub batch_norm: Option<BatchNorm>,
    pub second: Linear,
}

impl ValueHead {
    pub fn random(dim: usize, hidden: usize, batch_norm: bool, rng: &mut StreamRng) -> Self {
        ValueHead {
            first: Linear::random(dim, hidden, rng),
            batch_norm: batch_norm.then(|| BatchNorm::new(hidden)),
            second: Linear::random(hidden, dim, rng),
        }
    }

    /// Head computing `relu(x) − relu(−x) = x` through a hidden width of `2·dim`.
    pub fn identity(dim: usize) -> Self {
        let mut first = Matrix::zeros(dim, 2 * dim);
        let mut second = Matrix::zeros(2 * dim, dim);
        for i in 0..dim {
            first.data[i * 2 * dim + i] = 1.0;
            first.data[i * 2 * dim + dim + i] = -1.0;
            second.data[i * dim + i] = 1.0;
            second.data[(dim + i) * dim + i] = -1.0;
        }
        ValueHead {
            first: Linear {
                weight: first,
                bias: Matrix::zeros(1, 2 * dim),
            },
            batch_norm: None,
            second: Linear {
                weight: second,
                bias: Matrix::zeros(1, dim),
            },
        }
    }

    /// Values for a batch of keys (one per row). Batch norm, when present,
    /// uses the statistics of this batch.
    pub fn apply(&self, keys: &Matrix) -> Matrix {
        let mut h = self.first.apply(keys);
        if let Some(bn) = &self.batch_norm {
            h = bn.apply(&h);
        }
        h.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.second.apply(&h)
    }
}

/// All parameters of one network (online `θ` or target `ξ`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Linear patch encoder `f`: raw patch vector to feature.
    pub encoder: Linear,
    /// Memory value head `φ`.
    pub value_head: ValueHead,
    /// Contextual mixer `ψ`.
    pub mixer: Linear,
    /// Attention logit head `a` (`dim × 1`).
    pub attention: Linear,
    /// Pooling value head `ω`.
    pub pool_value: Linear,
    /// Projector `p`.
    pub projector: Linear,
    /// Predictor `q`.
    pub predictor: Linear,
}

/// Shapes of a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub patch_dim: usize,
    pub dim: usize,
    pub value_hidden: usize,
    pub proj_dim: usize,
    pub batch_norm: bool,
}

impl ModelParams {
    pub fn random(shape: &ModelShape, rng: &mut StreamRng) -> Self {
        ModelParams {
            encoder: Linear::random(shape.patch_dim, shape.dim, rng),
            value_head: ValueHead::random(shape.dim, shape.value_hidden, shape.batch_norm, rng),
            mixer: Linear::random(shape.dim, shape.dim, rng),
            attention: Linear::random(shape.dim, 1, rng),
            pool_value: Linear::random(shape.dim, shape.dim, rng),
            projector: Linear::random(shape.dim, shape.proj_dim, rng),
            predictor: Linear::random(shape.proj_dim, shape.proj_dim, rng),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = alloc::vec![
            ("encoder.weight", &self.encoder.weight),
            ("encoder.bias", &self.encoder.bias),
            ("value_head.first.weight", &self.value_head.first.weight),
            ("value_head.first.bias", &self.value_head.first.bias),
            ("value_head.second.weight", &self.value_head.second.weight),
            ("value_head.second.bias", &self.value_head.second.bias),
        ];
        if let Some(bn) = &self.value_head.batch_norm {
            out.push(("value_head.bn.gamma", &bn.gamma));
            out.push(("value_head.bn.beta", &bn.beta));
        }
        out.extend([
            ("mixer.weight", &self.mixer.weight),
            ("mixer.bias", &self.mixer.bias),
            ("attention.weight", &self.attention.weight),
            ("attention.bias", &self.attention.bias),
            ("pool_value.weight", &self.pool_value.weight),
            ("pool_value.bias", &self.pool_value.bias),
            ("projector.weight", &self.projector.weight),
            ("projector.bias", &self.projector.bias),
            ("predictor.weight", &self.predictor.weight),
            ("predictor.bias", &self.predictor.bias),
        ]);
        out
    }

    /// Mutable tensors, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = alloc::vec![
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.value_head.first.weight,
            &mut self.value_head.first.bias,
            &mut self.value_head.second.weight,
            &mut self.value_head.second.bias,
        ];
        if let Some(bn) = &mut self.value_head.batch_norm {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.extend([
            &mut self.mixer.weight,
            &mut self.mixer.bias,
            &mut self.attention.weight,
            &mut self.attention.bias,
            &mut self.pool_value.weight,
            &mut self.pool_value.bias,
            &mut self.projector.weight,
            &mut self.projector.bias,
            &mut self.predictor.weight,
            &mut self.predictor.bias,
        ]);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    /// All values flattened in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.data.iter().copied())
            .collect()
    }

    /// Overwrites all values from a slice in [`ModelParams::flatten`] order.
    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_values();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.data.len();
            m.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn same_shape(&self, other: &ModelParams) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ma), (nb, mb))| na == nb && ma.shape() == mb.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Target update `ξ ← decay · ξ + (1 − decay) · θ`, elementwise, evaluated
/// as `ξ + (1 − decay)(θ − ξ)` so that `θ = ξ` is an exact fixed point.
pub fn ema_update(online: &ModelParams, target: &mut ModelParams, decay: f64) -> Result<()> {
    if !online.same_shape(target) {
        return Err(Error::shape("online and target parameters differ in shape"));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::config(format!("EMA decay {decay} outside [0, 1]")));
    }
    for ((_, src), dst) in online.tensors().into_iter().zip(target.tensors_mut()) {
        dst.data
            .iter_mut()
            .zip(&src.data)
            .for_each(|(t, &o)| *t += (1.0 - decay) * (o - *t));
    }
    Ok(())
}

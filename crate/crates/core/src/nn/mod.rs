//! Framework-free numeric kernels.
//!
//! Batch normalization is folded into [`AffineLayer`] at inference, so a
//! "linear + BN" projection is a single `W·x + b`.

mod gradcheck;
pub mod pyramid;
mod sampler;
pub mod weights;

pub use gradcheck::{finite_diff_grad, finite_diff_jacobian, relative_error};
pub use pyramid::{FeatureMap, FeaturePyramid};
pub use sampler::{
    bilinear_sample, bilinear_sample_into, bilinear_with_jacobian, distance_to_cell_edge,
};
pub use weights::{Parameterized, WeightStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// `y = W·x + b` with `W` stored row-major as `c_out × c_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    weight: Vec<f64>,
    bias: Vec<f64>,
    c_in: usize,
    c_out: usize,
}

impl AffineLayer {
    pub fn new(weight: Vec<f64>, bias: Vec<f64>, c_in: usize, c_out: usize) -> Result<Self> {
        if weight.len() != c_in * c_out {
            return Err(Error::dim("affine weight", c_in * c_out, weight.len()));
        }
        if bias.len() != c_out {
            return Err(Error::dim("affine bias", c_out, bias.len()));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("affine parameters must be finite".into()));
        }
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
        })
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: vec![0.0; c_in * c_out],
            bias: vec![0.0; c_out],
            c_in,
            c_out,
        }
    }

    pub fn identity(c: usize) -> Self {
        let mut l = Self::zeros(c, c);
        for i in 0..c {
            l.weight[i * c + i] = 1.0;
        }
        l
    }

    /// Uniform in `[-k, k]` with `k = 1/sqrt(c_in)`, weights and bias alike.
    pub fn seeded(c_in: usize, c_out: usize, rng: &mut SeededRng) -> Self {
        let k = 1.0 / (c_in.max(1) as f64).sqrt();
        let weight = (0..c_in * c_out).map(|_| rng.symmetric_f32(k)).collect();
        let bias = (0..c_out).map(|_| rng.symmetric_f32(k)).collect();
        Self {
            weight,
            bias,
            c_in,
            c_out,
        }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.c_in..(o + 1) * self.c_in]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.c_in {
            return Err(Error::dim("affine input", self.c_in, x.len()));
        }
        let mut y = vec![0.0; self.c_out];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked variant for hot loops; panics on shape mismatch.
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.c_in);
        assert_eq!(y.len(), self.c_out);
        for (o, out) in y.iter_mut().enumerate() {
            let dot: f64 = self.row(o).iter().zip(x).map(|(w, v)| w * v).sum();
            *out = dot + self.bias[o];
        }
    }
}

pub fn affine_forward(layer: &AffineLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<AffineLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].c_out != w[1].c_in {
                return Err(Error::dim("mlp layer chain", w[0].c_out, w[1].c_in));
            }
        }
        Ok(Self { layers })
    }

    /// `widths = [c_in, hidden.., c_out]`.
    pub fn seeded(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Invalid("mlp needs input and output widths".into()));
        }
        Self::new(
            widths
                .windows(2)
                .map(|w| AffineLayer::seeded(w[0], w[1], rng))
                .collect(),
        )
    }

    pub fn c_in(&self) -> usize {
        self.layers[0].c_in
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.c_out)
    }

    pub fn activations(&self) -> Vec<Activation> {
        let n = self.layers.len();
        (0..n)
            .map(|i| {
                if i + 1 < n {
                    Activation::Relu
                } else {
                    Activation::Identity
                }
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < n {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }
}

pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    mlp.forward(x)
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn relu_in_place(xs: &mut [f64]) {
    for v in xs {
        *v = v.max(0.0);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

pub const FOCAL_EPS: f64 = 1e-6;

/// Binary focal loss of one score; `p` is clamped to `[1e-6, 1 - 1e-6]`.
pub fn focal_loss(p: f64, label: bool, params: FocalParams) -> f64 {
    let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let FocalParams { alpha, gamma } = params;
    if label {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

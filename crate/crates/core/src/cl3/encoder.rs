//! Two-layer MLP encoder from the 8-dim sensing vector to a 512-dim embedding.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::soil_forward::SensingVector;

pub const INPUT_DIM: usize = 8;
pub const EMBED_DIM: usize = 512;
pub const N_COMPONENTS: usize = 6;

/// Multiply-add FLOPs of one inference, counting the 6-way projection head.
pub const fn forward_flops(input: usize, hidden: usize, outputs: usize) -> usize {
    2 * (input * hidden + hidden * hidden + hidden * outputs)
}

/// Per-feature z-score statistics of the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl Default for Standardization {
    fn default() -> Self {
        Standardization {
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }
}

impl Standardization {
    /// Population statistics; constant features keep unit scale.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a SensingVector>) -> Self {
        let feats: Vec<[f64; INPUT_DIM]> = inputs.into_iter().map(|s| s.to_features()).collect();
        let n = feats.len().max(1) as f64;
        let mut mean = [0.0; INPUT_DIM];
        for f in &feats {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; INPUT_DIM];
        for f in &feats {
            for j in 0..INPUT_DIM {
                std[j] += (f[j] - mean[j]).powi(2);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &SensingVector) -> Result<[f64; INPUT_DIM]> {
        let f = x.to_features();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sensing vector {f:?}")));
        }
        Ok(std::array::from_fn(|j| (f[j] - self.mean[j]) / self.std[j]))
    }
}

/// Trainable tensors. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Weights {
    pub fn zeros() -> Self {
        Weights {
            w1: Array2::zeros((EMBED_DIM, INPUT_DIM)),
            b1: Array1::zeros(EMBED_DIM),
            w2: Array2::zeros((EMBED_DIM, EMBED_DIM)),
            b2: Array1::zeros(EMBED_DIM),
        }
    }

    /// Gaussian weights with std `scale/√fan_in`, zero biases.
    pub fn random(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let s = scale / (cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                s * z
            })
        };
        let w1 = draw(EMBED_DIM, INPUT_DIM);
        let w2 = draw(EMBED_DIM, EMBED_DIM);
        Weights {
            w1,
            b1: Array1::zeros(EMBED_DIM),
            w2,
            b2: Array1::zeros(EMBED_DIM),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
    }

    /// Visits every scalar of `self` and `other` in a fixed order.
    pub fn zip_for_each(&mut self, other: &Weights, mut f: impl FnMut(&mut f64, f64)) {
        Zip::from(&mut self.w1).and(&other.w1).for_each(|a, &b| f(a, b));
        Zip::from(&mut self.b1).and(&other.b1).for_each(|a, &b| f(a, b));
        Zip::from(&mut self.w2).and(&other.w2).for_each(|a, &b| f(a, b));
        Zip::from(&mut self.b2).and(&other.b2).for_each(|a, &b| f(a, b));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weights: Weights,
    pub standardization: Standardization,
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        if !self.weights.is_finite() {
            return Err(Error::Domain("encoder weights contain non-finite values".into()));
        }
        if self.standardization.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("standardization std must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediate activations of a batch forward pass (rows = samples).
#[derive(Debug, Clone)]
pub(crate) struct BatchForward {
    pub xhat: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub z: Array2<f64>,
}

pub(crate) fn forward_batch(w: &Weights, xhat: Array2<f64>) -> BatchForward {
    let mut hidden_pre = xhat.dot(&w.w1.t());
    hidden_pre += &w.b1.view().insert_axis(Axis(0));
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let mut z = hidden.dot(&w.w2.t());
    z += &w.b2.view().insert_axis(Axis(0));
    BatchForward {
        xhat,
        hidden_pre,
        hidden,
        z,
    }
}

pub(crate) fn standardize_batch(
    std: &Standardization,
    inputs: &[SensingVector],
) -> Result<Array2<f64>> {
    let mut xhat = Array2::zeros((inputs.len(), INPUT_DIM));
    for (mut row, x) in xhat.rows_mut().into_iter().zip(inputs) {
        row.assign(&ArrayView1::from(&std.apply(x)?));
    }
    Ok(xhat)
}

/// Embedding of one sensing vector.
pub fn encode(params: &EncoderParams, x: &SensingVector) -> Result<Array1<f64>> {
    let xhat = Array1::from(params.standardization.apply(x)?.to_vec());
    let w = &params.weights;
    let hidden = (w.w1.dot(&xhat) + &w.b1).mapv(|v| v.max(0.0));
    Ok(w.w2.dot(&hidden) + &w.b2)
}

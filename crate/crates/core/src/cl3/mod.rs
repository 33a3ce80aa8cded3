//! Contrastive cross-component learning.
//!
//! An MLP encoder maps sensing vectors to a 512-dim latent space. Training
//! shapes that space with two terms: a Separation Loss that matches pairwise
//! embedding distances to pairwise label distances, and an Orthogonality
//! Regularizer that drives the per-component shift directions (measured from
//! the reference sample) towards an orthonormal set. At inference the
//! displacement from the reference embedding is projected onto each
//! direction and mapped back to physical units.

mod checkpoint;
mod encoder;
mod gradcheck;
mod loss;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_bundle, save_bundle, CHECKPOINT_SCHEMA};
pub use encoder::{
    encode, forward_flops, EncoderParams, Standardization, Weights, EMBED_DIM, INPUT_DIM,
    N_COMPONENTS,
};
pub use loss::{
    compound_loss, compound_loss_parts, compute_directions, grad_compound, loss_ort, loss_sep,
    DirectionSet, LossParts,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{fit_calibration, train, train_with_report, validation_split, TrainReport};

use crate::dataset::NormSpec;
use crate::error::{Error, Result};
use crate::soil_forward::{SensingVector, SoilSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_sep: f64,
    pub lambda_ort: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Initial weight std is `init_scale / √fan_in`.
    pub init_scale: f64,
    /// Constant initial value of the hidden-layer bias.
    pub init_hidden_bias: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_sep: 0.82,
            lambda_ort: 0.18,
            learning_rate: 1e-3,
            max_epochs: 5000,
            patience: 200,
            seed: 0,
            init_scale: 0.1,
            init_hidden_bias: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sep >= 0.0 && self.lambda_ort >= 0.0) || self.lambda_sep + self.lambda_ort <= 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be >= 0 with a positive sum (got {}, {})",
                self.lambda_sep, self.lambda_ort
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.max_epochs == 0 {
            return Err(Error::Config("learning rate and epoch budget must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) || !self.init_hidden_bias.is_finite() {
            return Err(Error::Config("init scale must be positive and the init bias finite".into()));
        }
        Ok(())
    }
}

/// Per-component affine map from projection score to normalized label deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: [f64; N_COMPONENTS],
    pub intercept: [f64; N_COMPONENTS],
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration {
            slope: [1.0; N_COMPONENTS],
            intercept: [0.0; N_COMPONENTS],
        }
    }
}

/// Everything needed for inference on new samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: EncoderParams,
    pub directions: DirectionSet,
    pub norm: NormSpec,
    pub calibration: Calibration,
    pub ref_norm_labels: [f64; N_COMPONENTS],
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InferMode {
    /// Normalized projection followed by the fitted affine calibration.
    #[default]
    Calibrated,
    /// Raw dot-product scores added to the reference labels.
    Uncalibrated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub estimate: SoilSample,
    /// Projection scores before calibration.
    pub raw: [f64; N_COMPONENTS],
    /// Normalized estimate before clamping.
    pub normalized: [f64; N_COMPONENTS],
}

impl ModelBundle {
    pub fn check_directions(&self) -> Result<()> {
        for (g, row) in self.directions.z_avg.rows().into_iter().enumerate() {
            if row.dot(&row) == 0.0 {
                return Err(Error::Degenerate(format!(
                    "direction {} has zero norm",
                    crate::soil_forward::Component::ALL[g].name()
                )));
            }
        }
        if self.calibration.slope.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::Degenerate(format!(
                "calibration slopes {:?} must be finite and nonzero",
                self.calibration.slope
            )));
        }
        Ok(())
    }

    /// Projection scores of `x` relative to the reference embedding.
    pub fn scores(&self, x: &SensingVector, mode: InferMode) -> Result<[f64; N_COMPONENTS]> {
        self.check_directions()?;
        let z = encode(&self.params, x)?;
        let displacement = z - &self.directions.z0;
        let (dot, normalized) = loss::projection_scores(&displacement, &self.directions);
        Ok(match mode {
            InferMode::Calibrated => normalized,
            InferMode::Uncalibrated => dot,
        })
    }

    pub fn infer_detailed(&self, x: &SensingVector, mode: InferMode) -> Result<Inference> {
        let raw = self.scores(x, mode)?;
        let cal = match mode {
            InferMode::Calibrated => self.calibration,
            InferMode::Uncalibrated => Calibration::identity(),
        };
        let normalized: [f64; N_COMPONENTS] = std::array::from_fn(|g| {
            self.ref_norm_labels[g] + cal.slope[g] * raw[g] + cal.intercept[g]
        });
        let estimate = self.norm.denormalize(&normalized.map(|v| v.clamp(0.0, 1.0)));
        Ok(Inference {
            estimate,
            raw,
            normalized,
        })
    }
}

/// Component estimates for a new sensing vector, in physical units.
pub fn infer(bundle: &ModelBundle, x: &SensingVector, mode: InferMode) -> Result<SoilSample> {
    Ok(bundle.infer_detailed(x, mode)?.estimate)
}

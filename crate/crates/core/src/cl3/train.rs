//! Full-batch Adam training with early stopping, then calibration.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{EncoderParams, Standardization, Weights, N_COMPONENTS};
use super::loss::{batch_loss, batch_loss_and_grad, compute_directions, projection_scores, Batch, DirectionSet};
use super::{encode, Calibration, ModelBundle, TrainConfig};
use crate::dataset::{Dataset, GroupTag};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Seeds for the different random streams derived from the training seed.
const INIT_STREAM: u64 = 0x5EED_0001;
const SPLIT_STREAM: u64 = 0x5EED_0002;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    /// Training loss at the restored (best-validation) weights.
    pub final_loss: f64,
    pub best_validation_loss: f64,
    pub validation_indices: Vec<usize>,
}

/// Picks one held-out sample from every group that has at least two members.
/// Returns (training subset, held-out indices into `ds`).
pub fn validation_split(ds: &Dataset, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    ds.validate_training_structure()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
    let mut held_out = Vec::new();
    for c in crate::soil_forward::Component::ALL {
        let tag = GroupTag::for_component(c);
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].tag == tag).collect();
        if members.len() >= 2 {
            held_out.push(*members.choose(&mut rng).expect("non-empty"));
        }
    }
    held_out.sort_unstable();
    let train = Dataset {
        samples: ds
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| held_out.binary_search(i).is_err())
            .map(|(_, s)| *s)
            .collect(),
        norm: ds.norm,
        seed: ds.seed,
    };
    Ok((train, held_out))
}

struct Adam {
    m: Weights,
    v: Weights,
    step: i32,
}

impl Adam {
    fn new() -> Self {
        Adam {
            m: Weights::zeros(),
            v: Weights::zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Weights, grad: &Weights, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        self.m.zip_for_each(grad, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
        self.v.zip_for_each(grad, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
        // params -= lr * m̂ / (√v̂ + ε), walked tensor by tensor in fixed order
        let mut step = self.m.clone();
        step.zip_for_each(&self.v, |m, v| *m = lr * (*m / c1) / ((v / c2).sqrt() + ADAM_EPS));
        params.zip_for_each(&step, |p, s| *p -= s);
    }
}

/// Least-squares affine fit of normalized label deviation on normalized
/// projection score, per component, over every training sample.
pub fn fit_calibration(
    params: &EncoderParams,
    directions: &DirectionSet,
    training: &Dataset,
    ref_norm_labels: &[f64; N_COMPONENTS],
) -> Result<Calibration> {
    let labels = training.normalized_labels()?;
    let mut xs: Vec<[f64; N_COMPONENTS]> = Vec::with_capacity(training.len());
    for s in &training.samples {
        let z = encode(params, &s.sensing)?;
        xs.push(projection_scores(&(z - &directions.z0), directions).1);
    }
    let n = training.len() as f64;
    let mut cal = Calibration::identity();
    for g in 0..N_COMPONENTS {
        let x_mean = xs.iter().map(|x| x[g]).sum::<f64>() / n;
        let y_mean = labels.iter().map(|y| y[g] - ref_norm_labels[g]).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (x, y) in xs.iter().zip(&labels) {
            let dx = x[g] - x_mean;
            sxx += dx * dx;
            sxy += dx * (y[g] - ref_norm_labels[g] - y_mean);
        }
        let slope = sxy / sxx;
        if !(slope.is_finite() && slope != 0.0) {
            return Err(Error::Degenerate(format!(
                "calibration of {} is degenerate (slope {slope})",
                crate::soil_forward::Component::ALL[g].name()
            )));
        }
        cal.slope[g] = slope;
        cal.intercept[g] = y_mean - slope * x_mean;
    }
    Ok(cal)
}

pub fn train(training: &Dataset, cfg: &TrainConfig) -> Result<ModelBundle> {
    Ok(train_with_report(training, cfg)?.0)
}

pub fn train_with_report(training: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle, TrainReport)> {
    cfg.validate()?;
    training.norm.validate()?;
    training.validate_training_structure()?;

    let standardization = Standardization::fit(training.samples.iter().map(|s| &s.sensing));
    let mut params = EncoderParams {
        weights: Weights::random(cfg.seed ^ INIT_STREAM, cfg.init_scale),
        standardization,
    };
    params.weights.b1.fill(cfg.init_hidden_bias);

    let (fit_set, validation_indices) = validation_split(training, cfg.seed)?;
    let fit_batch = Batch::new(&params, &fit_set)?;
    let full_batch = Batch::new(&params, training)?;

    let initial_loss = batch_loss(&params.weights, &fit_batch, cfg).0.total;
    let mut best_val = batch_loss(&params.weights, &full_batch, cfg).0.total;
    let mut best_weights = params.weights.clone();
    let mut best_epoch = 0;
    let mut adam = Adam::new();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let (parts, grad) = batch_loss_and_grad(&params.weights, &fit_batch, cfg);
        if !parts.total.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: parts.total,
            });
        }
        adam.update(&mut params.weights, &grad, cfg.learning_rate);
        epochs_run = epoch;

        let val = batch_loss(&params.weights, &full_batch, cfg).0.total;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch, loss: val });
        }
        if val < best_val {
            best_val = val;
            best_weights = params.weights.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    params.weights = best_weights;
    let final_loss = batch_loss(&params.weights, &fit_batch, cfg).0.total;
    let directions = compute_directions(&params, training)?;
    let reference = training.reference().expect("validated");
    let ref_norm_labels = training.norm.normalize(&reference.composition)?;
    let calibration = fit_calibration(&params, &directions, training, &ref_norm_labels)?;

    let bundle = ModelBundle {
        params,
        directions,
        norm: training.norm,
        calibration,
        ref_norm_labels,
        seed: cfg.seed,
    };
    bundle.check_directions()?;
    Ok((
        bundle,
        TrainReport {
            epochs_run,
            best_epoch,
            initial_loss,
            final_loss,
            best_validation_loss: best_val,
            validation_indices,
        },
    ))
}

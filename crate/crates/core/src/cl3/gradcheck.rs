//! Central finite-difference check of [`grad_compound`].

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::EncoderParams;
use super::loss::{compound_loss, grad_compound};
use super::TrainConfig;
use crate::dataset::Dataset;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest |analytic − numeric| / max(|analytic|, |numeric|) over checked elements.
    pub max_rel_error: f64,
    /// Elements compared (those with |analytic| above the magnitude floor).
    pub checked: usize,
    /// Elements visited, including those skipped by the floor.
    pub visited: usize,
}

#[derive(Debug, Clone, Copy)]
enum Tensor {
    W1,
    B1,
    W2,
    B2,
}

fn element(params: &mut EncoderParams, t: Tensor, i: usize) -> &mut f64 {
    let w = &mut params.weights;
    match t {
        Tensor::W1 => &mut w.w1.as_slice_mut().unwrap()[i],
        Tensor::B1 => &mut w.b1[i],
        Tensor::W2 => &mut w.w2.as_slice_mut().unwrap()[i],
        Tensor::B2 => &mut w.b2[i],
    }
}

/// Compares the analytic gradient with central differences of step `h`.
///
/// Every bias element is checked; `per_matrix` seeded random elements are
/// drawn from each weight matrix. Elements whose analytic magnitude is at or
/// below `floor` are skipped.
pub fn gradient_check(
    params: &EncoderParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    h: f64,
    floor: f64,
    per_matrix: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let grad = grad_compound(params, ds, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(Tensor, usize, f64)> = Vec::new();
    for (t, len, g) in [
        (Tensor::W1, grad.w1.len(), grad.w1.as_slice().unwrap()),
        (Tensor::W2, grad.w2.len(), grad.w2.as_slice().unwrap()),
    ] {
        for i in index::sample(&mut rng, len, per_matrix.min(len)) {
            picks.push((t, i, g[i]));
        }
    }
    picks.extend(grad.b1.iter().enumerate().map(|(i, g)| (Tensor::B1, i, *g)));
    picks.extend(grad.b2.iter().enumerate().map(|(i, g)| (Tensor::B2, i, *g)));

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        visited: picks.len(),
    };
    for (t, i, analytic) in picks {
        if analytic.abs() <= floor {
            continue;
        }
        let orig = *element(&mut work, t, i);
        *element(&mut work, t, i) = orig + h;
        let plus = compound_loss(&work, ds, cfg)?;
        *element(&mut work, t, i) = orig - h;
        let minus = compound_loss(&work, ds, cfg)?;
        *element(&mut work, t, i) = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

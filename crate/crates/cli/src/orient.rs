//! Orientation sweep: permittivity recovered by the tetrahedral array under
//! different device poses, optionally through the chirp pipeline.

use std::f64::consts::FRAC_PI_2;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use soilx_core::chirp_sim::{apply_channel, extract_phase_triple, gen_preamble, ChirpConfig, Impairments, SwitchSchedule};
use soilx_core::rf_geometry::{
    forward_phases, invert_phases, invert_wrapped, wrap_phases, Orientation, PhaseTriple, RfConfig, TxDirection,
};
use soilx_core::Error;

use crate::report::Table;

/// Default sweep target permittivity (a moist loam).
pub const DEFAULT_SWEEP_EPSILON: f64 = 16.69;
pub const DEFAULT_EPS_RANGE: (f64, f64) = (3.0, 40.0);
/// Seed offset for the random throws, distinct from the noise stream.
const THROW_STREAM: u64 = 0x7_4800;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientOptions {
    pub epsilon: f64,
    /// Transmitter direction in the world frame.
    pub tx: [f64; 3],
    /// Std of additive phase noise for the Monte-Carlo column, radians (0 disables).
    pub phase_noise: f64,
    pub draws: usize,
    pub seed: u64,
    /// Route phases through the simulated chirp preamble.
    pub chirp: bool,
    /// Invert wrapped phases by integer search instead of the unwrapped closed form.
    pub wrapped: bool,
    pub eps_range: (f64, f64),
    pub random_throws: usize,
}

impl Default for OrientOptions {
    fn default() -> Self {
        OrientOptions {
            epsilon: DEFAULT_SWEEP_EPSILON,
            tx: [0.3, -0.2, 0.93],
            phase_noise: 0.01,
            draws: 100,
            seed: 0,
            chirp: false,
            wrapped: false,
            eps_range: DEFAULT_EPS_RANGE,
            random_throws: 3,
        }
    }
}

/// Identity, 90° about each body axis, then seeded random throws.
pub fn standard_orientations(seed: u64, random_throws: usize) -> Vec<(String, Orientation)> {
    let mut out = vec![
        ("identity".to_string(), Orientation::identity()),
        ("yaw90".to_string(), Orientation::from_euler(0.0, 0.0, FRAC_PI_2)),
        ("pitch90".to_string(), Orientation::from_euler(0.0, FRAC_PI_2, 0.0)),
        ("roll90".to_string(), Orientation::from_euler(FRAC_PI_2, 0.0, 0.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ THROW_STREAM);
    for i in 1..=random_throws {
        out.push((format!("throw{i}"), Orientation::random(&mut rng)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientRow {
    pub label: String,
    /// Noiseless estimate through the selected pipeline.
    pub epsilon_hat: f64,
    /// Number of consistent candidates (wrapped/chirp pipelines only).
    pub candidates: Option<usize>,
    pub noisy_mean: Option<f64>,
    pub noisy_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientSweep {
    pub rows: Vec<OrientRow>,
    /// max − min of the noiseless estimates.
    pub spread: f64,
}

impl OrientSweep {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["orientation", "eps_hat", "candidates", "noisy_mean", "noisy_std"]);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            t.push([
                r.label.clone(),
                format!("{:.9}", r.epsilon_hat),
                r.candidates.map_or_else(|| "-".to_string(), |c| c.to_string()),
                opt(r.noisy_mean),
                opt(r.noisy_std),
            ]);
        }
        t
    }
}

fn estimate(p: &PhaseTriple, rf: &RfConfig, opts: &OrientOptions, chirp_seed: u64) -> Result<(f64, Option<usize>)> {
    if opts.chirp {
        let cfg = ChirpConfig::default();
        let sched = SwitchSchedule::standard(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(chirp_seed);
        let imp = Impairments::from_triple(
            rng.random_range(-1000.0..1000.0),
            rng.random_range(0.0..std::f64::consts::TAU),
            &wrap_phases(p),
        );
        let frame = apply_channel(&gen_preamble(&cfg)?, &imp, &sched)?;
        let recovered = extract_phase_triple(&frame, &cfg, &sched)?;
        let inv = invert_wrapped(&recovered, rf, opts.eps_range)?;
        return Ok((inv.best().epsilon, Some(inv.candidates.len())));
    }
    if opts.wrapped {
        let inv = invert_wrapped(&wrap_phases(p), rf, opts.eps_range)?;
        return Ok((inv.best().epsilon, Some(inv.candidates.len())));
    }
    Ok((invert_phases(p, rf)?.epsilon, None))
}

pub fn cmd_orient_sweep(opts: &OrientOptions, orientations: &[(String, Orientation)]) -> Result<OrientSweep> {
    if !(opts.epsilon >= DEFAULT_EPS_RANGE.0 && opts.epsilon <= DEFAULT_EPS_RANGE.1) {
        return Err(Error::Config(format!("ε = {} outside [3, 40]", opts.epsilon)).into());
    }
    if !(opts.phase_noise >= 0.0 && opts.phase_noise.is_finite()) {
        return Err(Error::Config("phase noise must be >= 0".into()).into());
    }
    let rf = RfConfig::default();
    let tx = TxDirection::new(opts.tx.into())?;
    let noise = Normal::new(0.0, opts.phase_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(orientations.len());
    for (k, (label, orient)) in orientations.iter().enumerate() {
        let p = forward_phases(opts.epsilon, &tx, orient, &rf);
        let (epsilon_hat, candidates) =
            estimate(&p, &rf, opts, opts.seed.wrapping_add(k as u64)).with_context(|| format!("orientation {label}"))?;
        let (noisy_mean, noisy_std) = if opts.phase_noise > 0.0 && opts.draws >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(1000).wrapping_add(k as u64));
            let draws = (0..opts.draws)
                .map(|_| {
                    let noisy = PhaseTriple::unwrapped(p.phi.map(|v| v + noise.sample(&mut rng)));
                    Ok(invert_phases(&noisy, &rf)?.epsilon)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let var = draws.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (Some(mean), Some(var.sqrt()))
        } else {
            (None, None)
        };
        rows.push(OrientRow {
            label: label.clone(),
            epsilon_hat,
            candidates,
            noisy_mean,
            noisy_std,
        });
    }
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.epsilon_hat), hi.max(r.epsilon_hat)));
    Ok(OrientSweep { rows, spread: hi - lo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_true_epsilon() {
        let opts = OrientOptions {
            epsilon: 7.5,
            phase_noise: 0.0,
            ..Default::default()
        };
        let sweep = cmd_orient_sweep(&opts, &[("identity".into(), Orientation::identity())]).unwrap();
        assert!((sweep.rows[0].epsilon_hat - 7.5).abs() < 1e-12);
        assert_eq!(sweep.spread, 0.0);
    }

    #[test]
    fn standard_set_has_seven_poses() {
        let o = standard_orientations(0, 3);
        assert_eq!(o.len(), 7);
        assert_eq!(o[1].0, "yaw90");
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let opts = OrientOptions {
            epsilon: 50.0,
            ..Default::default()
        };
        let err = cmd_orient_sweep(&opts, &standard_orientations(0, 0)).unwrap_err();
        assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))));
    }

    #[test]
    fn chirp_pipeline_yields_candidates() {
        let opts = OrientOptions {
            chirp: true,
            phase_noise: 0.0,
            ..Default::default()
        };
        let sweep = cmd_orient_sweep(&opts, &standard_orientations(1, 1)).unwrap();
        for r in &sweep.rows {
            assert!(r.candidates.unwrap() >= 1);
        }
    }
}

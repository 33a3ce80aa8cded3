//! Chirp-pipeline Monte Carlo: random impairments and antenna phases pushed
//! through the switched preamble and recovered by chirp ratios.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soilx_core::chirp_sim::{
    add_awgn, apply_channel, extract_phase_triple, gen_preamble, write_iq, ChirpConfig, Impairments, SwitchSchedule,
};
use soilx_core::rf_geometry::{wrap_phase, PhaseTriple};
use soilx_core::Error;

use crate::report::Table;

pub const DEFAULT_TRIALS: usize = 200;
pub const MAX_CFO_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSimOptions {
    pub trials: usize,
    pub seed: u64,
    /// Per-sample SNR; `None` keeps the frame noiseless.
    pub snr_db: Option<f64>,
}

impl Default for PhaseSimOptions {
    fn default() -> Self {
        PhaseSimOptions {
            trials: DEFAULT_TRIALS,
            seed: 0,
            snr_db: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTrial {
    pub cfo: f64,
    pub phase0: f64,
    pub truth: [f64; 3],
    pub recovered: [f64; 3],
    /// Largest circular error over the three antennas, radians.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSimReport {
    pub trials: Vec<PhaseTrial>,
    pub max_error: f64,
    pub frame_duration: f64,
}

impl PhaseSimReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["trial", "cfo_hz", "phase0", "phi1", "phi2", "phi3", "err1", "err2", "err3"]);
        for (i, tr) in self.trials.iter().enumerate() {
            let err = std::array::from_fn::<f64, 3, _>(|k| wrap_phase(tr.recovered[k] - tr.truth[k]).0.abs());
            let mut row = vec![i.to_string(), format!("{:.3}", tr.cfo), format!("{:.6}", tr.phase0)];
            row.extend(tr.truth.iter().map(|v| format!("{v:.6}")));
            row.extend(err.iter().map(|v| format!("{v:.3e}")));
            t.push(row);
        }
        t
    }
}

/// A uniform draw from (−π, π].
fn half_open_phase<R: Rng>(rng: &mut R) -> f64 {
    PI - rng.random_range(0.0..TAU)
}

/// Runs the trials; when `iq_dir` is given the first trial's frame is written there.
pub fn cmd_phase_sim(opts: &PhaseSimOptions, iq_dir: Option<&Path>) -> Result<PhaseSimReport> {
    if opts.trials == 0 {
        return Err(Error::Config("at least one trial is required".into()).into());
    }
    let cfg = ChirpConfig::default();
    let sched = SwitchSchedule::standard(&cfg);
    let preamble = gen_preamble(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trials = Vec::with_capacity(opts.trials);
    for i in 0..opts.trials {
        let cfo = rng.random_range(-MAX_CFO_HZ..=MAX_CFO_HZ);
        let phase0 = rng.random_range(0.0..TAU);
        let truth = [(); 3].map(|_| half_open_phase(&mut rng));
        let imp = Impairments::from_triple(cfo, phase0, &PhaseTriple::wrapped(truth)?);
        let mut frame = apply_channel(&preamble, &imp, &sched)?;
        if let Some(snr) = opts.snr_db {
            frame = add_awgn(&frame, snr, opts.seed.wrapping_add(i as u64));
        }
        if i == 0 {
            if let Some(dir) = iq_dir {
                write_iq(&frame, &cfg, &dir.join("trial0.iq"))?;
            }
        }
        let recovered = extract_phase_triple(&frame, &cfg, &sched)?.phi;
        let max_error = (0..3)
            .map(|k| wrap_phase(recovered[k] - truth[k]).0.abs())
            .fold(0.0, f64::max);
        trials.push(PhaseTrial {
            cfo,
            phase0,
            truth,
            recovered,
            max_error,
        });
    }
    let max_error = trials.iter().map(|t| t.max_error).fold(0.0, f64::max);
    Ok(PhaseSimReport {
        trials,
        max_error,
        frame_duration: cfg.frame_duration(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_trials_recover_phases() {
        let r = cmd_phase_sim(&PhaseSimOptions { trials: 10, ..Default::default() }, None).unwrap();
        assert!(r.max_error < 1e-6, "{}", r.max_error);
        assert!((r.frame_duration - 0.032768).abs() < 1e-12);
    }

    #[test]
    fn noisy_trials_degrade_gracefully() {
        let opts = PhaseSimOptions {
            trials: 5,
            seed: 3,
            snr_db: Some(20.0),
        };
        let r = cmd_phase_sim(&opts, None).unwrap();
        assert!(r.max_error > 0.0 && r.max_error < 0.2, "{}", r.max_error);
    }

    #[test]
    fn zero_trials_is_config_error() {
        let err = cmd_phase_sim(&PhaseSimOptions { trials: 0, ..Default::default() }, None).unwrap_err();
        assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))));
    }
}

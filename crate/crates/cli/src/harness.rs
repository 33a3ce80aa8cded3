//! Training/evaluation experiments: single evaluation, ablations, data-size sweep.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soilx_core::cl3::{self, InferMode, ModelBundle, TrainConfig};
use soilx_core::dataset::{gen_test_set, gen_training_set, random_composition, Dataset, GroupTag, LabeledSample, DEFAULT_TEST_COUNT};
use soilx_core::rf_geometry::dual_epsilon_error_ratio;
use soilx_core::soil_forward::{sense, Component, NoiseConfig, SoilSample};
use anyhow::{Context, Result};
use soilx_core::Error;

use crate::report::{mae, MaeReport};

/// Smallest training set the sweep accepts: REF plus at least two per group
/// leaves headroom above the structural minimum of 13.
pub const MIN_SWEEP_SIZE: usize = 28;
pub const MIN_PER_GROUP: usize = 2;
pub const DEFAULT_GAMMA_DEG: f64 = 30.0;

/// Seed offset for samples added by the data-size sweep.
const AUGMENT_STREAM: u64 = 0xA06_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[value(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationMode {
    Full,
    NoSep,
    NoOrt,
    DualAntenna,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoSep,
        AblationMode::NoOrt,
        AblationMode::DualAntenna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "FULL",
            AblationMode::NoSep => "NO_SEP",
            AblationMode::NoOrt => "NO_ORT",
            AblationMode::DualAntenna => "DUAL_ANTENNA",
        }
    }

    /// Loss weights for this mode; the dual-antenna run trains like FULL.
    pub fn train_config(self, seed: u64) -> TrainConfig {
        let base = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        match self {
            AblationMode::Full | AblationMode::DualAntenna => base,
            AblationMode::NoSep => TrainConfig { lambda_sep: 0.0, ..base },
            AblationMode::NoOrt => TrainConfig { lambda_ort: 0.0, ..base },
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> soilx_core::Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub train_seed: u64,
    pub test_seed: u64,
    /// Noise applied to the test sensing vectors; training data is noiseless.
    pub sigma_epsilon_rel: f64,
    pub sigma_vnir: f64,
    pub mode: AblationMode,
    /// Array rotation for the dual-antenna mode, degrees.
    pub gamma_deg: f64,
    pub infer_mode: InferMode,
    pub test_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_seed: 0,
            test_seed: 1,
            sigma_epsilon_rel: 0.0,
            sigma_vnir: 0.0,
            mode: AblationMode::Full,
            gamma_deg: DEFAULT_GAMMA_DEG,
            infer_mode: InferMode::Calibrated,
            test_count: DEFAULT_TEST_COUNT,
        }
    }
}

impl EvalConfig {
    pub fn test_noise(&self) -> NoiseConfig {
        NoiseConfig {
            sigma_epsilon_rel: self.sigma_epsilon_rel,
            sigma_vnir: self.sigma_vnir,
            seed: self.test_seed,
        }
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "mode={} train_seed={} test_seed={} noise_eps={} noise_vnir={} gamma_deg={} infer={:?} n_test={}",
            self.mode,
            self.train_seed,
            self.test_seed,
            self.sigma_epsilon_rel,
            self.sigma_vnir,
            self.gamma_deg,
            self.infer_mode,
            self.test_count
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.test_noise().validate()?;
        if self.test_count == 0 {
            return Err(Error::Config("test count must be positive".into()).into());
        }
        if !self.gamma_deg.is_finite() {
            return Err(Error::Config("gamma must be finite".into()).into());
        }
        Ok(())
    }

    pub fn test_set(&self) -> Result<Dataset> {
        Ok(gen_test_set(self.test_count, self.test_seed, &self.test_noise())?)
    }
}

/// Predicts the per-component mean of the training labels.
pub fn mean_predictor(training: &Dataset) -> SoilSample {
    let n = training.len() as f64;
    let mut mean = [0.0; 6];
    for s in &training.samples {
        for (m, v) in mean.iter_mut().zip(s.composition.to_array()) {
            *m += v / n;
        }
    }
    SoilSample::from_array(mean)
}

pub fn baseline_report(training: &Dataset, test: &Dataset) -> Result<MaeReport> {
    let m = mean_predictor(training);
    let preds = vec![m; test.len()];
    let truth: Vec<SoilSample> = test.samples.iter().map(|s| s.composition).collect();
    Ok(mae(&preds, &truth)?.with_fingerprint("mean-predictor"))
}

/// Sensing ε as reported by a dual-antenna probe rotated by `gamma_deg`.
pub fn dual_antenna_view(test: &Dataset, gamma_deg: f64) -> Dataset {
    let ratio = dual_epsilon_error_ratio(gamma_deg.to_radians());
    let samples = test
        .samples
        .iter()
        .map(|s| {
            let mut s = *s;
            s.sensing.epsilon *= ratio;
            s
        })
        .collect();
    Dataset { samples, ..test.clone() }
}

/// MAE of a trained bundle on a test set.
pub fn evaluate(bundle: &ModelBundle, test: &Dataset, infer_mode: InferMode) -> Result<MaeReport> {
    let preds = test
        .samples
        .iter()
        .map(|s| cl3::infer(bundle, &s.sensing, infer_mode))
        .collect::<soilx_core::Result<Vec<_>>>()?;
    let truth: Vec<SoilSample> = test.samples.iter().map(|s| s.composition).collect();
    Ok(mae(&preds, &truth)?)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MaeReport,
    pub baseline: MaeReport,
    pub bundle: ModelBundle,
    pub report_train: cl3::TrainReport,
}

/// Trains on the canonical set in the configured mode and evaluates.
pub fn cmd_eval(cfg: &EvalConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let training = gen_training_set(&NoiseConfig::noiseless(cfg.train_seed));
    let test = cfg.test_set()?;
    eval_on(&training, &test, cfg)
}

/// Trains on `training` per `cfg.mode` and evaluates on `test`.
pub fn eval_on(training: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<EvalOutcome> {
    let (bundle, report_train) = train_mode(training, cfg.mode, cfg.train_seed)?;
    let report = evaluate_mode(&bundle, test, cfg)?;
    Ok(EvalOutcome {
        report,
        baseline: baseline_report(training, test)?,
        bundle,
        report_train,
    })
}

/// Evaluates an already trained bundle under the mode's test-time view.
pub fn evaluate_mode(bundle: &ModelBundle, test: &Dataset, cfg: &EvalConfig) -> Result<MaeReport> {
    let view = match cfg.mode {
        AblationMode::DualAntenna => dual_antenna_view(test, cfg.gamma_deg),
        _ => test.clone(),
    };
    Ok(evaluate(bundle, &view, cfg.infer_mode)?.with_fingerprint(cfg.fingerprint()))
}

fn train_mode(training: &Dataset, mode: AblationMode, seed: u64) -> Result<(ModelBundle, cl3::TrainReport)> {
    cl3::train_with_report(training, &mode.train_config(seed)).with_context(|| format!("training in mode {mode}"))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub report: MaeReport,
}

/// Runs every ablation mode under the same seeds. Modes train in parallel;
/// the dual-antenna mode reuses the FULL model since it trains identically.
pub fn cmd_ablate(base: &EvalConfig) -> Result<(Vec<AblationRow>, MaeReport)> {
    base.validate()?;
    let training = gen_training_set(&NoiseConfig::noiseless(base.train_seed));
    let test = base.test_set()?;
    let trained_modes = [AblationMode::Full, AblationMode::NoSep, AblationMode::NoOrt];
    let bundles: Vec<Result<ModelBundle>> = std::thread::scope(|scope| {
        let handles: Vec<_> = trained_modes
            .iter()
            .map(|mode| {
                let training = &training;
                scope.spawn(move || train_mode(training, *mode, base.train_seed).map(|(b, _)| b))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let bundles = bundles.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for mode in AblationMode::ALL {
        let bundle = match mode {
            AblationMode::Full | AblationMode::DualAntenna => &bundles[0],
            AblationMode::NoSep => &bundles[1],
            AblationMode::NoOrt => &bundles[2],
        };
        let cfg = EvalConfig { mode, ..*base };
        rows.push(AblationRow {
            mode,
            report: evaluate_mode(bundle, &test, &cfg)?,
        });
    }
    Ok((rows, baseline_report(&training, &test)?))
}

/// Canonical set resized to `size`: groups are thinned (largest first, never
/// below two members, REF kept) or random in-range samples are appended.
pub fn resize_training_set(canonical: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size < MIN_SWEEP_SIZE {
        return Err(Error::Config(format!("training size {size} is below the minimum {MIN_SWEEP_SIZE}")).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ AUGMENT_STREAM);
    let mut samples: Vec<LabeledSample> = canonical.samples.clone();
    while samples.len() > size {
        let mut best: Option<(GroupTag, usize)> = None;
        for c in Component::ALL {
            let tag = GroupTag::for_component(c);
            let n = samples.iter().filter(|s| s.tag == tag).count();
            if n > MIN_PER_GROUP && best.is_none_or(|(_, m)| n > m) {
                best = Some((tag, n));
            }
        }
        let (tag, _) = best.ok_or_else(|| Error::Structure("cannot thin groups further".into()))?;
        let members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].tag == tag).collect();
        let victim = *members.choose(&mut rng).expect("group non-empty");
        samples.remove(victim);
    }
    let noiseless = NoiseConfig::noiseless(seed);
    while samples.len() < size {
        let composition = random_composition(&mut rng);
        samples.push(LabeledSample {
            composition,
            sensing: sense(&composition, &noiseless),
            tag: GroupTag::Rnd,
        });
    }
    let ds = Dataset { samples, ..canonical.clone() };
    ds.validate_training_structure()?;
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub size: usize,
    pub report: MaeReport,
}

/// Retrains at each training-set size (FULL mode) and evaluates on the same test set.
pub fn cmd_data_sweep(sizes: &[usize], base: &EvalConfig) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if sizes.is_empty() {
        return Err(Error::Config("no training sizes given".into()).into());
    }
    let canonical = gen_training_set(&NoiseConfig::noiseless(base.train_seed));
    let test = base.test_set()?;
    let sets = sizes
        .iter()
        .map(|&n| resize_training_set(&canonical, n, base.train_seed))
        .collect::<Result<Vec<_>>>()?;
    let cfg = EvalConfig {
        mode: AblationMode::Full,
        ..*base
    };
    let reports: Vec<Result<MaeReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sets
            .iter()
            .map(|set| {
                let test = &test;
                scope.spawn(move || eval_on(set, test, &cfg).map(|o| o.report))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    sizes
        .iter()
        .zip(reports)
        .map(|(&size, r)| {
            Ok(SweepRow {
                size,
                report: r?.with_fingerprint(format!("{} size={size}", cfg.fingerprint())),
            })
        })
        .collect()
}

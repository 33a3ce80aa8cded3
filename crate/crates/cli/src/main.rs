use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use soilx_cli::harness::{self, AblationMode, EvalConfig, DEFAULT_GAMMA_DEG};
use soilx_cli::manifest::Manifest;
use soilx_cli::orient::{self, OrientOptions};
use soilx_cli::phase::{self, PhaseSimOptions};
use soilx_cli::report::Table;
use soilx_core::cl3::{self, InferMode};
use soilx_core::dataset::{self, DEFAULT_TEST_COUNT};
use soilx_core::soil_forward::NoiseConfig;
use soilx_core::Error;

#[derive(Parser, Debug)]
#[command(name = "soilx", version, about = "Soil sensing simulator and 3CL learning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed (training seed for learning commands).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for reports, models and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct Noise {
    /// Relative std of multiplicative permittivity noise.
    #[arg(long, default_value_t = 0.0)]
    noise_eps: f64,
    /// Std of additive VNIR voltage noise, volts.
    #[arg(long, default_value_t = 0.0)]
    noise_vnir: f64,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    noise: Noise,
    /// Seed of the random test set.
    #[arg(long, default_value_t = 1)]
    test_seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEST_COUNT)]
    test_count: usize,
    /// Dual-antenna array rotation, degrees.
    #[arg(long, default_value_t = DEFAULT_GAMMA_DEG)]
    gamma: f64,
    /// Uncalibrated dot-product inference.
    #[arg(long)]
    uncalibrated: bool,
}

impl EvalArgs {
    fn config(&self, mode: AblationMode) -> EvalConfig {
        EvalConfig {
            train_seed: self.common.seed,
            test_seed: self.test_seed,
            sigma_epsilon_rel: self.noise.noise_eps,
            sigma_vnir: self.noise.noise_vnir,
            mode,
            gamma_deg: self.gamma,
            infer_mode: infer_mode(self.uncalibrated),
            test_count: self.test_count,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the canonical 43-sample training set and a random test set as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        noise: Noise,
        #[arg(long, default_value_t = 1)]
        test_seed: u64,
        #[arg(long, default_value_t = DEFAULT_TEST_COUNT)]
        test_count: usize,
    },
    /// Train a model and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training CSV; defaults to the canonical noiseless set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AblationMode::Full)]
        mode: AblationMode,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Run a saved model on a dataset CSV and report MAE against its labels.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        uncalibrated: bool,
    },
    /// Train on the canonical set and evaluate on random test samples.
    Eval {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, value_enum, default_value_t = AblationMode::Full)]
        mode: AblationMode,
    },
    /// Evaluate every ablation mode under the same seeds.
    Ablate {
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Recover permittivity under rotated device poses.
    OrientSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = orient::DEFAULT_SWEEP_EPSILON)]
        epsilon: f64,
        /// Phase noise std for the Monte-Carlo column, radians.
        #[arg(long, default_value_t = 0.01)]
        phase_noise: f64,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 3)]
        throws: usize,
        /// Invert wrapped phases by integer search.
        #[arg(long)]
        wrapped: bool,
        /// Route phases through the chirp simulator.
        #[arg(long)]
        chirp: bool,
    },
    /// Retrain with varying training-set sizes.
    DataSweep {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [28usize, 43, 53])]
        sizes: Vec<usize>,
    },
    /// Monte Carlo over the chirp phase-extraction pipeline.
    PhaseSim {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = phase::DEFAULT_TRIALS)]
        trials: usize,
        /// Per-sample SNR in dB; omit for a noiseless channel.
        #[arg(long)]
        snr: Option<f64>,
        /// Also write the first trial's IQ frame.
        #[arg(long)]
        write_iq: bool,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn infer_mode(uncalibrated: bool) -> InferMode {
    if uncalibrated {
        InferMode::Uncalibrated
    } else {
        InferMode::Calibrated
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn emit(table: &Table, dir: &Path, stem: &str) -> Result<()> {
    print!("{table}");
    table.write(dir, stem)?;
    Ok(())
}

fn eval_manifest(name: &str, argv: Vec<String>, cfg: &EvalConfig) -> Manifest {
    Manifest::new(name, argv)
        .seed("train", cfg.train_seed)
        .seed("test", cfg.test_seed)
        .flag("noise_eps", cfg.sigma_epsilon_rel)
        .flag("noise_vnir", cfg.sigma_vnir)
        .flag("mode", cfg.mode)
        .flag("gamma_deg", cfg.gamma_deg)
        .flag("infer", format!("{:?}", cfg.infer_mode))
        .flag("test_count", cfg.test_count)
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            noise,
            test_seed,
            test_count,
        } => {
            prepare_out(&common.out)?;
            let train_noise = NoiseConfig {
                sigma_epsilon_rel: noise.noise_eps,
                sigma_vnir: noise.noise_vnir,
                seed: common.seed,
            };
            train_noise.validate()?;
            let training = dataset::gen_training_set(&train_noise);
            let test = dataset::gen_test_set(test_count, test_seed, &NoiseConfig { seed: test_seed, ..train_noise })?;
            dataset::save_csv(&training, &common.out.join("train.csv"))?;
            dataset::save_csv(&test, &common.out.join("test.csv"))?;
            let mut t = Table::new(["group", "count"]);
            for (tag, n) in training.group_counts() {
                t.push([tag.to_string(), n.to_string()]);
            }
            t.push(["total".to_string(), training.len().to_string()]);
            emit(&t, &common.out, "groups")?;
            Manifest::new("gen-data", argv)
                .seed("train", common.seed)
                .seed("test", test_seed)
                .flag("noise_eps", noise.noise_eps)
                .flag("noise_vnir", noise.noise_vnir)
                .flag("test_count", test_count)
                .write(&common.out)
        }
        Command::Train {
            common,
            data,
            mode,
            max_epochs,
        } => {
            prepare_out(&common.out)?;
            let training = match &data {
                Some(p) => dataset::load_csv(p)?,
                None => dataset::gen_training_set(&NoiseConfig::noiseless(common.seed)),
            };
            let mut cfg = mode.train_config(common.seed);
            if let Some(n) = max_epochs {
                cfg.max_epochs = n;
            }
            let (bundle, report) =
                cl3::train_with_report(&training, &cfg).with_context(|| format!("training in mode {mode}"))?;
            cl3::save_bundle(&bundle, &common.out.join("model.txt"))?;
            let mut t = Table::new(["quantity", "value"]);
            t.push(["epochs_run".to_string(), report.epochs_run.to_string()]);
            t.push(["best_epoch".to_string(), report.best_epoch.to_string()]);
            t.push(["initial_loss".to_string(), format!("{:.6e}", report.initial_loss)]);
            t.push(["final_loss".to_string(), format!("{:.6e}", report.final_loss)]);
            t.push(["best_validation_loss".to_string(), format!("{:.6e}", report.best_validation_loss)]);
            t.push(["gram_max_off_diagonal".to_string(), format!("{:.6e}", bundle.directions.max_off_diagonal())]);
            emit(&t, &common.out, "train_report")?;
            let mut m = Manifest::new("train", argv)
                .seed("train", common.seed)
                .flag("mode", mode)
                .flag("max_epochs", cfg.max_epochs);
            if let Some(p) = data {
                m = m.flag("data", p.display());
            }
            m.write(&common.out)
        }
        Command::Infer {
            common,
            model,
            input,
            uncalibrated,
        } => {
            prepare_out(&common.out)?;
            let bundle = cl3::load_bundle(&model)?;
            let ds = dataset::load_csv(&input)?;
            let mode = infer_mode(uncalibrated);
            let mut t = Table::per_component("sample");
            let mut preds = Vec::with_capacity(ds.len());
            for (i, s) in ds.samples.iter().enumerate() {
                let est = cl3::infer(&bundle, &s.sensing, mode)?;
                let mut row = vec![i.to_string()];
                row.extend(est.to_array().iter().map(|v| format!("{v:.6}")));
                t.push(row);
                preds.push(est);
            }
            t.write(&common.out, "predictions")?;
            let truth: Vec<_> = ds.samples.iter().map(|s| s.composition).collect();
            let report = soilx_cli::mae(&preds, &truth)?;
            let mut summary = Table::per_component("metric");
            summary.push_report("MAE", &report);
            emit(&summary, &common.out, "mae")?;
            Manifest::new("infer", argv)
                .flag("model", model.display())
                .flag("input", input.display())
                .flag("infer", format!("{mode:?}"))
                .write(&common.out)
        }
        Command::Eval { args, mode } => {
            prepare_out(&args.common.out)?;
            let cfg = args.config(mode);
            let outcome = harness::cmd_eval(&cfg)?;
            cl3::save_bundle(&outcome.bundle, &args.common.out.join("model.txt"))?;
            let mut t = Table::per_component("predictor");
            t.push_report(mode.as_str(), &outcome.report);
            t.push_report("mean-predictor", &outcome.baseline);
            let mut ratio = vec!["ratio".to_string()];
            ratio.extend(outcome.report.ratio_to(&outcome.baseline).iter().map(|r| format!("{r:.4}")));
            t.push(ratio);
            emit(&t, &args.common.out, "mae")?;
            println!("gram max off-diagonal: {:.6}", outcome.bundle.directions.max_off_diagonal());
            eval_manifest("eval", argv, &cfg).write(&args.common.out)
        }
        Command::Ablate { args } => {
            prepare_out(&args.common.out)?;
            let cfg = args.config(AblationMode::Full);
            let (rows, baseline) = harness::cmd_ablate(&cfg)?;
            let full_avg = rows[0].report.average();
            let mut t = Table::per_component("mode");
            t.headers.extend(["average".to_string(), "vs FULL".to_string()]);
            for r in &rows {
                let mut row = vec![r.mode.to_string()];
                row.extend(r.report.mae.iter().map(|v| format!("{v:.4}")));
                row.push(format!("{:.4}", r.report.average()));
                row.push(format!("{:+.1}%", 100.0 * (r.report.average() / full_avg - 1.0)));
                t.push(row);
            }
            let mut row = vec!["mean-predictor".to_string()];
            row.extend(baseline.mae.iter().map(|v| format!("{v:.4}")));
            row.extend([format!("{:.4}", baseline.average()), "-".to_string()]);
            t.push(row);
            emit(&t, &args.common.out, "ablation")?;
            eval_manifest("ablate", argv, &cfg).write(&args.common.out)
        }
        Command::OrientSweep {
            common,
            epsilon,
            phase_noise,
            draws,
            throws,
            wrapped,
            chirp,
        } => {
            prepare_out(&common.out)?;
            let opts = OrientOptions {
                epsilon,
                phase_noise,
                draws,
                seed: common.seed,
                chirp,
                wrapped,
                random_throws: throws,
                ..OrientOptions::default()
            };
            let sweep = orient::cmd_orient_sweep(&opts, &orient::standard_orientations(common.seed, throws))?;
            emit(&sweep.table(), &common.out, "orient_sweep")?;
            println!("noiseless spread: {:.3e}", sweep.spread);
            Manifest::new("orient-sweep", argv)
                .seed("master", common.seed)
                .flag("epsilon", epsilon)
                .flag("phase_noise", phase_noise)
                .flag("draws", draws)
                .flag("throws", throws)
                .flag("wrapped", wrapped)
                .flag("chirp", chirp)
                .write(&common.out)
        }
        Command::DataSweep { args, sizes } => {
            prepare_out(&args.common.out)?;
            let cfg = args.config(AblationMode::Full);
            let rows = harness::cmd_data_sweep(&sizes, &cfg)?;
            let mut t = Table::per_component("train_size");
            for r in &rows {
                t.push_report(&r.size.to_string(), &r.report);
            }
            emit(&t, &args.common.out, "data_sweep")?;
            let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
            eval_manifest("data-sweep", argv, &cfg)
                .flag("sizes", sizes.join(","))
                .write(&args.common.out)
        }
        Command::PhaseSim {
            common,
            trials,
            snr,
            write_iq,
        } => {
            prepare_out(&common.out)?;
            let opts = PhaseSimOptions {
                trials,
                seed: common.seed,
                snr_db: snr,
            };
            let report = phase::cmd_phase_sim(&opts, write_iq.then_some(common.out.as_path()))?;
            report.table().write(&common.out, "phase_sim")?;
            let mut t = Table::new(["quantity", "value"]);
            t.push(["trials".to_string(), trials.to_string()]);
            t.push(["max_phase_error_rad".to_string(), format!("{:.3e}", report.max_error)]);
            t.push(["frame_duration_ms".to_string(), format!("{:.6}", report.frame_duration * 1e3)]);
            emit(&t, &common.out, "phase_summary")?;
            let mut m = Manifest::new("phase-sim", argv)
                .seed("master", common.seed)
                .flag("trials", trials)
                .flag("write_iq", write_iq);
            if let Some(s) = snr {
                m = m.flag("snr_db", s);
            }
            m.write(&common.out)
        }
        Command::Replay { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let args = m.replay_args(&out);
            let cli = Cli::try_parse_from(std::iter::once("soilx".to_string()).chain(args.iter().cloned()))
                .map_err(|e| Error::Config(format!("manifest arguments do not parse: {e}")))?;
            if matches!(cli.command, Command::Replay { .. }) {
                return Err(Error::Config("a manifest cannot replay another replay".into()).into());
            }
            run(cli, args)
        }
    }
}

/// 2 for configuration errors, 3 for numerical divergence, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Divergence { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::Schedule(_)
            | Error::Domain(_)
            | Error::Structure(_)
            | Error::EpsilonOutOfRange { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let div: anyhow::Error = Error::Divergence { epoch: 3, loss: f64::NAN }.into();
        assert_eq!(exit_code(&div.context("training in mode FULL")), 3);
        assert_eq!(exit_code(&Error::Config("x".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}

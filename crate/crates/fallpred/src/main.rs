use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fallpred::cli::{self, FaultFilter};
use fallpred::config::RunConfig;
use fallpred::Error;

/// Fall-prediction toolkit for a standing planar biped: simulate force
/// faults, train the three-stage pipeline, evaluate, and stream predictions.
#[derive(Parser)]
#[command(name = "fallpred", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate force ranges and simulate the configured episodes into a
    /// dataset directory.
    Generate {
        /// Run configuration (TOML); defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the three models on a generated dataset and write the bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Output run directory (bundle + logs).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also export the materialized window tensors (large).
        #[arg(long)]
        export_windows: bool,
    },
    /// Evaluate a bundle on a dataset's held-out test trajectories.
    Eval {
        /// Bundle directory produced by `train`.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one fault type.
        #[arg(long, default_value = "all")]
        fault_type: FaultFilter,
        /// Truncate trajectories at this CoM height before evaluating.
        #[arg(long)]
        trim_height: Option<f64>,
    },
    /// Stream per-window predictions over one trajectory CSV. Exit status
    /// 10 signals that a fault was flagged; 0 means no fault.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        /// Trajectory CSV (same columns as generated trajectory files).
        #[arg(long)]
        trajectory: PathBuf,
        /// Output prediction CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seeds.master = s;
        config.sim.seed = s;
    }
    Ok(config)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Toml(_) | Error::InvalidParams(_) => 2,
        Error::Data(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::EmptySet
        | Error::StratumTooSmall { .. }
        | Error::ClassMissing { .. }
        | Error::EmptyTargetRange
        | Error::SimulationDiverged { .. }
        | Error::CalibrationFailed { .. } => 3,
        Error::BundleVersion { .. }
        | Error::BundleCorrupt(_)
        | Error::ShapeMismatch { .. }
        | Error::NonFinite { .. }
        | Error::NonFiniteGradient { .. }
        | Error::ThresholdUnattainable { .. } => 4,
    }
}

fn run(args: Args) -> Result<u8, Error> {
    match args.command {
        Command::Generate { config, out, seed } => {
            let config = load_config(&config, seed)?;
            let summary = cli::cmd_generate(&config, &out)?;
            println!(
                "calibrated: abrupt {:.1} N, incipient {:.1} N, oscillation {:.1} N",
                summary.calibration.abrupt.bound,
                summary.calibration.incipient.bound,
                summary.calibration.oscillation_bound
            );
            for (kind, total, n_unsafe) in summary.counts {
                println!("{kind}: {total} episodes, {n_unsafe} unsafe");
            }
            println!("dataset written to {}", out.display());
            Ok(0)
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            export_windows,
        } => {
            let config = load_config(&config, seed)?;
            let summary = cli::cmd_train(&config, &data, &out, export_windows)?;
            println!(
                "split: {} train / {} val / {} test",
                summary.split.train.len(),
                summary.split.val.len(),
                summary.split.test.len()
            );
            match summary.val_lead {
                Some(lead) => println!(
                    "threshold p* = {:.2} (val FPR {:.3}, val lead {:.2} s)",
                    summary.p_star, summary.val_fpr, lead
                ),
                None => println!(
                    "threshold p* = {:.2} (val FPR {:.3})",
                    summary.p_star, summary.val_fpr
                ),
            }
            println!("bundle written to {}", out.join("bundle").display());
            Ok(0)
        }
        Command::Eval {
            bundle,
            data,
            out,
            fault_type,
            trim_height,
        } => {
            let summary = cli::cmd_eval(&bundle, &data, &out, fault_type, trim_height)?;
            println!(
                "evaluated {} trajectories; reports in {}",
                summary.n_trajectories,
                out.display()
            );
            print!("{}", summary.report.to_table());
            Ok(0)
        }
        Command::Predict {
            bundle,
            trajectory,
            out,
        } => {
            let summary = cli::cmd_predict(&bundle, &trajectory, &out)?;
            match summary.first_detection_time {
                Some(t) => println!(
                    "fault flagged at t = {t:.3} s ({} windows); predictions in {}",
                    summary.n_windows,
                    out.display()
                ),
                None => println!(
                    "no fault flagged over {} windows; predictions in {}",
                    summary.n_windows,
                    out.display()
                ),
            }
            Ok(if summary.any_fault { 10 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

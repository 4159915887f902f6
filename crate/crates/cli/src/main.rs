//! Command-line interface for the pose pipeline: synthetic data, prior
//! fitting, single-view 3D lifting, multiview triangulation, evaluation,
//! gait analytics and feature export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure. Logs go to standard error; data goes to files or standard
//! output only.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(
    name = "mouselift",
    version,
    about = "Single-view 3D mouse pose lifting and gait analytics"
)]
struct Cli {
    /// Config file with defaults (also via $MOUSELIFT_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice of the invoked command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for per-frame fitting (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence (ground truth, observations, calibration).
    Synth(commands::SynthArgs),
    /// Fit the Gaussian-mixture pose prior from pose files.
    FitPrior(commands::FitPriorArgs),
    /// Lift 2D keypoint tracks to 3D poses for one camera.
    FitPose(commands::FitPoseArgs),
    /// Triangulate multiview 2D labels into 3D ground truth.
    Triangulate(commands::TriangulateArgs),
    /// Object-keypoint-similarity threshold table of predictions vs truth.
    EvalOks(commands::EvalOksArgs),
    /// Registered per-joint 3D error of fitted poses vs ground truth.
    #[command(name = "eval-3d")]
    Eval3d(commands::Eval3dArgs),
    /// Stride analytics from a fitted track or a raw trace.
    Gait(commands::GaitArgs),
    /// Export windowed feature matrices for downstream classifiers.
    ExportFeatures(commands::ExportFeaturesArgs),
}

/// Usage-level failure (exit code 1), as opposed to bad data (2) or a
/// numeric failure (3).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<mouselift::Error>() {
            return match core.category() {
                mouselift::ErrorCategory::Data => 2,
                mouselift::ErrorCategory::Numeric => 3,
            };
        }
    }
    2
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep help/version on stdout with success, everything else is a
            // usage error on stderr.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let file_config = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    };
    let ctx = commands::Context {
        seed: cli.seed,
        threads: cli.threads,
        config: file_config,
    };

    let result = match cli.command {
        Command::Synth(args) => commands::synth(&ctx, args),
        Command::FitPrior(args) => commands::fit_prior(&ctx, args),
        Command::FitPose(args) => commands::fit_pose(&ctx, args),
        Command::Triangulate(args) => commands::triangulate(&ctx, args),
        Command::EvalOks(args) => commands::eval_oks(&ctx, args),
        Command::Eval3d(args) => commands::eval_3d(&ctx, args),
        Command::Gait(args) => commands::gait(&ctx, args),
        Command::ExportFeatures(args) => commands::export_features(&ctx, args),
    };

    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code_for(&e));
        }
    }
}

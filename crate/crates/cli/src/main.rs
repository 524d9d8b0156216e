mod commands;
mod config;
mod plot;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "posture",
    version,
    about = "Pose-guided domain adaptation for body-part segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every config-driven command.
#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Replace existing outputs of this command.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// `source`, `target` or a domain file (TOML or JSON).
        #[arg(long)]
        domain: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Domain tag written to the manifest; defaults from the preset name.
        #[arg(long, value_parser = ["source", "target"])]
        tag: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Train the segmenter on labelled source data.
    Pretrain(ConfigArgs),
    /// Train the keypoint-to-mask prior on source annotations.
    TrainPrior(ConfigArgs),
    /// Adapt the pretrained segmenter to the target domain.
    Adapt {
        #[command(flatten)]
        args: ConfigArgs,
        /// Drop the source term and never read source data.
        #[arg(long)]
        source_free: bool,
        /// Pose estimator quality preset: none, adapted or unadapted.
        #[arg(long)]
        pose_corruption: Option<String>,
    },
    /// Per-class IoU of a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Ablation ladder over independent seeds.
    Ablate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Threshold sensitivity grid.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        /// TOML with `alpha_beta = [[a, b], ...]` and `gamma = [...]`.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Loss and mIoU curves of a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Stable tag of the innermost recognised cause.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<posture_core::Error>() {
            return e.kind();
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "runtime"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let message = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", message));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(error_kind(&e), &message));
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use speckle_sim::config::ExperimentConfig;
use speckle_sim::pipeline;
use speckle_sim::Error;

/// Blind speckle structured-illumination simulation and reconstruction.
#[derive(Parser)]
#[command(name = "speckle-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the speckle and noise seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a measurement stack, ground truth and metadata.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the primal-dual solver on a stack and write the estimates.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Stack directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare an estimate with the truth (RAPS curve and summary).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Background image for the correlation check.
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Fit the covariance-matching estimator (small grids only).
    Marginal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// simulate, reconstruct, evaluate and (if enabled) marginal in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> speckle_sim::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn output_dir(common: &Common, cfg: &ExperimentConfig) -> speckle_sim::Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config {
            line: 0,
            key: "output_dir".into(),
            message: "no output directory; pass --out or set output_dir".into(),
        })
}

fn run(cli: Cli) -> speckle_sim::Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            let out = output_dir(&common, &cfg)?;
            let y = pipeline::cmd_simulate(&cfg, &out, common.overwrite)?;
            eprintln!("wrote stack to {}", y.display());
        }
        Command::Reconstruct { common, input } => {
            let cfg = load_config(&common)?;
            let out = output_dir(&common, &cfg)?;
            pipeline::cmd_reconstruct(&cfg, &input, &out, common.overwrite)?;
        }
        Command::Evaluate {
            common,
            estimate,
            truth,
            background,
        } => {
            let cfg = load_config(&common)?;
            let out = output_dir(&common, &cfg)?;
            let eval = pipeline::cmd_evaluate(
                &estimate,
                &truth,
                background.as_deref(),
                &out,
                common.overwrite,
            )?;
            print!("{}", eval.summary());
        }
        Command::Marginal { common, input } => {
            let cfg = load_config(&common)?;
            let out = output_dir(&common, &cfg)?;
            pipeline::cmd_marginal(&cfg, &input, &out, common.overwrite)?;
        }
        Command::Pipeline { common } => {
            let cfg = load_config(&common)?;
            let out = output_dir(&common, &cfg)?;
            pipeline::cmd_pipeline(&cfg, &out, common.overwrite)?;
            eprintln!("pipeline outputs in {}", out.display());
        }
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("SPECKLE_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

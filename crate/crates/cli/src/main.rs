mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, PipelineConfig};

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON pipeline configuration; omitted keys take built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single run seed (the scene seed for `make-synthetic`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for multi-seed training and ablation.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic scene (cube, labels, training mask).
    MakeSynthetic,
    /// Fit PCA on the configured cube.
    PcaFit,
    /// Reduce the cube, extract patches and fix the split.
    Preprocess,
    /// Train one model per seed and evaluate each on the test partition.
    Train,
    /// Score a checkpoint on the train, val and test partitions.
    Evaluate {
        /// Defaults to `<output_dir>/seed-<first seed>/best.ckp`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify the scene and render a colour map.
    PredictMap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of the full model gradient.
    Gradcheck {
        #[arg(long, default_value_t = 25)]
        samples: usize,
    },
    /// Parameter, FLOP and MAC counts for the configured model.
    Params,
    /// Train and evaluate the four ablation variants.
    Ablate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeSynthetic => "make-synthetic",
            Command::PcaFit => "pca-fit",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::PredictMap { .. } => "predict-map",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Params => "params",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cvm", version, about = "Hyperspectral patch classification pipeline")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let root = Root::parse();
    match run(&root) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            output::report_error(&e);
            ExitCode::FAILURE
        }
    }
}

fn run(root: &Root) -> anyhow::Result<()> {
    let flags = Overrides {
        seed: root.common.seed,
        seed_scene: matches!(root.command, Command::MakeSynthetic),
        out: root.common.out.clone(),
        workers: root.common.workers,
    };
    let cfg = PipelineConfig::resolve(root.common.config.as_deref(), std::env::vars(), &flags)?;
    let name = root.command.name();
    let mut ctx = commands::Context::start(cfg, name)?;
    let outcome = match &root.command {
        Command::MakeSynthetic => commands::make_synthetic(&mut ctx),
        Command::PcaFit => commands::pca_fit(&mut ctx),
        Command::Preprocess => commands::preprocess(&mut ctx),
        Command::Train => commands::train(&mut ctx),
        Command::Evaluate { checkpoint } => commands::evaluate(&mut ctx, checkpoint.as_deref()),
        Command::PredictMap { checkpoint } => commands::predict_map(&mut ctx, checkpoint.as_deref()),
        Command::Gradcheck { samples } => commands::gradcheck(&mut ctx, *samples),
        Command::Params => commands::params(&mut ctx),
        Command::Ablate => commands::ablate(&mut ctx),
    };
    ctx.finish(outcome.is_ok())?;
    outcome
}

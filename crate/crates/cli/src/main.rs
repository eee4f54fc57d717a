use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{manifest_path, write_json, Manifest};

#[derive(Parser)]
#[command(
    name = "jcseg",
    version,
    about = "J-regularized segmentation losses, ground-truth transforms, simulations and metrics"
)]
struct Cli {
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON settings file or a previous run manifest; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,

    /// Manifest path [default: <first output>.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance map
    GenScene(commands::GenSceneArgs),
    /// Instance map to three- or four-class semantic map
    Transform(commands::TransformArgs),
    /// Evaluate a loss and its gradient on a target and a prediction
    LossEval(commands::LossEvalArgs),
    /// Finite-difference check of a loss gradient on random problems
    GradCheck(commands::GradCheckArgs),
    /// Chance classifiers under class imbalance
    SimImbalance(commands::SimImbalanceArgs),
    /// Gradient norms along a shrinking segmentation trajectory
    SimShrinkwrap(commands::SimShrinkwrapArgs),
    /// Loss values on a 2D slice around the optimum
    Landscape(commands::LandscapeArgs),
    /// Probability field to instance map
    Postprocess(commands::PostprocessArgs),
    /// Panoptic metrics of predicted instance maps
    Evaluate(commands::EvaluateArgs),
    /// Optimize a logit field on the two-squares scene
    TrainToy(commands::TrainToyArgs),
}

/// Usage errors exit with 1, data errors with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(anyhow::anyhow!(msg.into()))
    }
}

impl From<jcseg::Error> for Failure {
    fn from(e: jcseg::Error) -> Self {
        match e {
            jcseg::Error::InvalidConfig(_) => Failure::Usage(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

/// What a subcommand did, for the manifest.
pub struct Outcome {
    pub name: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn dispatch(command: Command) -> Result<(Outcome, Common), Failure> {
    Ok(match command {
        Command::GenScene(a) => (commands::gen_scene(&a)?, a.common),
        Command::Transform(a) => (commands::transform(&a)?, a.common),
        Command::LossEval(a) => (commands::loss_eval(&a)?, a.common),
        Command::GradCheck(a) => (commands::grad_check(&a)?, a.common),
        Command::SimImbalance(a) => (commands::sim_imbalance(&a)?, a.common),
        Command::SimShrinkwrap(a) => (commands::sim_shrinkwrap(&a)?, a.common),
        Command::Landscape(a) => (commands::landscape(&a)?, a.common),
        Command::Postprocess(a) => (commands::postprocess(&a)?, a.common),
        Command::Evaluate(a) => (commands::evaluate(&a)?, a.common),
        Command::TrainToy(a) => (commands::train_toy(&a)?, a.common),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be >= 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Usage(anyhow::anyhow!("thread pool: {e}")))?;
    let start = Instant::now();
    let (outcome, common) = pool.install(|| dispatch(cli.command))?;

    if let Some(path) = manifest_path(common.manifest.as_deref(), &outcome.outputs) {
        let manifest = Manifest {
            subcommand: outcome.name,
            version: env!("CARGO_PKG_VERSION"),
            seed: outcome.seed,
            config: &outcome.config,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            threads: pool.current_num_threads(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        write_json(Some(&path), &manifest)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

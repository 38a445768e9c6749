use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvsup::harness::config::{ExperimentConfig, Row};
use mvsup::harness::experiment::{bootstrap, evaluate_checkpoint, ingest, run_experiment, transfer_viz, write_bootstrap, write_scene};
use mvsup::model::{PredictorConfig, PredictorWeights};

#[derive(Parser)]
#[command(name = "mvsup", about = "Multiview semi-supervised keypoint training on synthetic rigs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Scene directory to read instead of generating one.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated scene directory.
    Synth(Common),
    /// Augment the sparse labels and pretrain on them.
    Bootstrap(Common),
    /// Bootstrap, refine one row, evaluate.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        row: String,
    },
    /// Evaluate saved weights on held-out frames and an unseen scene.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Dump plane distributions and their back-projections for a view pair.
    TransferViz {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
        views: Vec<usize>,
        /// Use predicted heatmaps instead of ground truth.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run every configured row for every configured seed.
    Ablate(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, u64), Box<dyn std::error::Error>> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.experiment.seed = seed;
    }
    if common.scene.is_some() {
        config.scene_dir = common.scene.clone();
    }
    let seed = config.experiment.seed;
    Ok((config, seed))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Synth(c) => {
            let (config, seed) = load(&c)?;
            write_scene(&config, seed, &c.out)?;
        }
        Command::Bootstrap(c) => {
            let (config, seed) = load(&c)?;
            let data = ingest(&config, seed)?;
            let boot = bootstrap(&config, &data, seed)?;
            write_bootstrap(&config, &boot, &data, &c.out)?;
        }
        Command::Train { common, row } => {
            let (mut config, _) = load(&common)?;
            config.experiment.rows = vec![Row::parse(&row).ok_or_else(|| format!("unknown row {row:?}"))?];
            config.experiment.seeds = 1;
            let report = run_experiment(&config, Some(&common.out))?;
            print!("{}", report.summary());
        }
        Command::Eval { common, weights } => {
            let (config, seed) = load(&common)?;
            let eval = evaluate_checkpoint(&config, &weights, seed)?;
            eval.write(seed, &common.out)?;
            print!("{}", eval.csv(seed));
        }
        Command::TransferViz { common, frame, views, weights } => {
            let (config, seed) = load(&common)?;
            let [i, j] = views[..] else { return Err("--views takes two indices".into()) };
            let data = ingest(&config, seed)?;
            let w = weights.map(|p| PredictorWeights::load(&p, PredictorConfig::new(data.channels()))).transpose()?;
            transfer_viz(&data, w.as_ref(), frame, i, j, config.losses.sigma_gt, &common.out)?;
        }
        Command::Ablate(c) => {
            let (config, _) = load(&c)?;
            let report = run_experiment(&config, Some(&c.out))?;
            print!("{}", report.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Runs the loss-mask ablation on the default synthetic scene and prints the
//! summary table.
//!
//!     cargo run --release --example ablation -- [config.toml] [seeds]

use std::path::PathBuf;
use std::time::Instant;

use mvsup::harness::config::{ExperimentConfig, Row};
use mvsup::harness::experiment::run_experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = match args.next() {
        Some(path) => ExperimentConfig::load(&PathBuf::from(path))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = args.next() {
        config.experiment.seeds = seeds.parse()?;
    }
    config.experiment.rows = vec![Row::Supervised, Row::Temporal, Row::Cross, Row::Full];

    let start = Instant::now();
    let report = run_experiment(&config, None)?;
    print!("{}", report.summary());
    for r in &report.results {
        println!(
            "seed {} {:<12} held-out PCK {:.3}  unseen PCK {:.3}",
            r.seed,
            r.row.name(),
            r.eval.held_out.pck,
            r.eval.unseen.pck
        );
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

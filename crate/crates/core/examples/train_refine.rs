//! A short semi-supervised refinement: bootstrap on 4% of the images, then
//! train with label, cross-view, temporal and visibility losses and compare
//! against the bootstrap on held-out frames.

use mvsup::harness::config::{ExperimentConfig, Row};
use mvsup::harness::experiment::{bootstrap, evaluate_weights, ingest, refine_row, EvalSets};
use mvsup::harness::train::PencilTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::default();
    config.train.steps = 200;
    let seed = 0;
    let data = ingest(&config, seed)?;
    let pencils = PencilTable::new(&data.cameras, config.losses.eps_c)?;
    println!("{} adjacent camera pairs", pencils.adjacent_pairs());

    let boot = bootstrap(&config, &data, seed)?;
    println!("{} bootstrapped images, pretrain loss {:.3}", boot.labeled.len(), boot.pretrained.epoch_losses.last().unwrap_or(&f64::NAN));
    let (weights, losses) = refine_row(&config, &data, &pencils, &boot, Row::Full, seed, None)?;
    for (step, l) in losses.iter().step_by(50) {
        println!("step {step:3}: L_L {:.3} L_C {:.3} L_T {:.3} L_V {:.4}", l.label, l.cross, l.temporal, l.visibility);
    }

    let sets = EvalSets::new(&config, data, seed)?;
    let before = evaluate_weights(&config, &boot.pretrained.weights, &sets)?;
    let after = evaluate_weights(&config, &weights, &sets)?;
    println!("held-out PCK@0.2: bootstrap {:.3}, refined {:.3}", before.held_out.pck, after.held_out.pck);
    println!("unseen PCK@0.2:   bootstrap {:.3}, refined {:.3}", before.unseen.pck, after.unseen.pck);
    Ok(())
}

//! Bootstrapping from sparse labels: triangulate the human labels of a few
//! views with RANSAC, reproject into every view with ray-cast visibility, and
//! pretrain the predictor on the result.

use mvsup::bootstrap::{augment_labels, pretrain, AugmentOptions, LabeledImage, PretrainOptions};
use mvsup::harness::io::Dataset;
use mvsup::heatmap::{Annotation, Provenance};
use mvsup::model::{PredictorConfig, PredictorWeights};
use mvsup::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig::default();
    let scene = generate(&config, 1)?;
    let data = Dataset::from_scene(&scene, &[], 0.0);

    let mut set = Vec::new();
    for t in [0, 16, 33, 49] {
        let human: Vec<(usize, &Annotation)> = [0, 2, 4, 6].iter().map(|&v| (v, &data.annotations[t][v])).collect();
        let aug = augment_labels(&human, &data.cameras, &data.occluders[t], &AugmentOptions::default())?;
        let mut spread = 0;
        let mut worst: f64 = 0.0;
        for (v, ann) in aug.annotations.iter().enumerate() {
            for (c, k) in ann.keypoints.iter().enumerate() {
                let (Some(k), Some(truth)) = (k, &data.annotations[t][v].keypoints[c]) else { continue };
                if k.provenance == Provenance::Augmented {
                    spread += 1;
                    worst = worst.max((k.position - truth.position).norm());
                }
            }
            set.push(LabeledImage { image: data.images[t][v].clone(), annotation: ann.clone() });
        }
        println!("frame {t:2}: {spread} labels added, largest error {worst:.3} cells, failures {:?}", aug.failures);
    }

    let weights = PredictorWeights::init(PredictorConfig::new(config.channels), 0);
    let out = pretrain(weights, &set, &PretrainOptions { epochs: 10, ..PretrainOptions::default() })?;
    for (e, l) in out.epoch_losses.iter().enumerate() {
        println!("epoch {e:2}: label loss {l:.3}");
    }
    Ok(())
}

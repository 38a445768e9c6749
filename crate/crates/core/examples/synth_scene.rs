//! Generates the default synthetic rig, checks its ground truth, and writes
//! it as a scene directory that `mvsup --scene DIR` can read back.
//!
//!     cargo run --release --example synth_scene -- [out_dir]

use std::path::PathBuf;

use mvsup::harness::io::Dataset;
use mvsup::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mvsup_scene"));
    let config = SynthConfig::default();
    let scene = generate(&config, 0)?;
    scene.check_invariants()?;

    let views = scene.view_count();
    let frames = scene.frame_count();
    let keypoints = config.keypoints();
    let occluded = (0..frames)
        .flat_map(|t| (0..views).flat_map(move |v| (0..keypoints).map(move |k| (v, t, k))))
        .filter(|&(v, t, k)| !scene.is_visible(v, t, k))
        .count();
    println!("{views} cameras, {frames} frames, {keypoints} keypoints + background");
    println!("occluded keypoint views: {occluded} of {}", views * frames * keypoints);

    let data = Dataset::from_scene(&scene, &[2, 4], 0.0);
    data.save(&out)?;
    let back = Dataset::load(&out)?;
    println!("wrote {} ({} flows), reload identical: {}", out.display(), back.flows.len(), back.images == data.images);
    Ok(())
}

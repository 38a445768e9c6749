//! Temporal supervision: warp a later heatmap back along optical flow, gate
//! on flow magnitude, and compare with the earlier heatmap.

use mvsup::heatmap::render_gaussian;
use mvsup::geometry::Vec2;
use mvsup::temporal::{gate, temporal_loss, warp, FlowField, TemporalOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (32, 32);
    let p_t1 = render_gaussian(Vec2::new(10.0, 12.0), 1.0, w, h);
    let p_t2 = render_gaussian(Vec2::new(13.0, 10.0), 1.0, w, h);

    // the flow at each t1 cell points to where that content sits at t2
    let flow = FlowField::constant(p_t1.dims(), 3.0, -2.0);
    let (warped, _) = warp(p_t2.channel(0), &flow)?;
    let peak = warped.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| (k % w, k / w));
    println!("warped peak at {peak:?}, expected (10, 12)");

    let t = temporal_loss(p_t1.channel(0), p_t2.channel(0), &flow, TemporalOptions::default())?;
    println!("KL with the right flow: {:.4}", t.value);
    let wrong = FlowField::constant(p_t1.dims(), 0.0, 0.0);
    let t = temporal_loss(p_t1.channel(0), p_t2.channel(0), &wrong, TemporalOptions::default())?;
    println!("KL with zero flow: {:.4}", t.value);

    println!("sum of flow magnitudes {:.1}", flow.integral_magnitude());
    println!("gate (5, 5000) passes: {}", gate(&flow, 5.0, 5000.0));
    println!("gate on a static scene passes: {}", gate(&wrong, 5.0, 5000.0));
    Ok(())
}

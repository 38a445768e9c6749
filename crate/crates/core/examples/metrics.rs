//! PCK, PCKh and AUC on a tiny hand-made set.

use mvsup::geometry::Vec2;
use mvsup::grid::Dims;
use mvsup::harness::metrics::{auc, default_thresholds, pck, pck_curve, Normalizer};
use mvsup::heatmap::{Annotation, Keypoint, Provenance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let point = |x: f64, y: f64| Some(Keypoint { position: Vec2::new(x, y), visible: true, provenance: Provenance::Human });
    let truth = Annotation { dims: Dims::new(32, 32), keypoints: vec![point(10.0, 10.0), point(14.0, 10.0), point(12.0, 20.0), point(8.0, 26.0)] };
    let predictions = vec![vec![Vec2::new(10.0, 11.0), Vec2::new(14.0, 10.0), Vec2::new(15.0, 20.0), Vec2::new(8.0, 17.0)]];
    let truth = vec![truth];

    println!("PCK@0.2 (bbox)  {:.3}", pck(&predictions, &truth, 0.2, Normalizer::BoundingBox)?);
    println!("PCKh@0.5        {:.3}", pck(&predictions, &truth, 0.5, Normalizer::Head(0, 1))?);
    let curve = pck_curve(&predictions, &truth, &default_thresholds(), Normalizer::BoundingBox)?;
    for (t, v) in curve.iter().step_by(10) {
        println!("  threshold {t:.2}: {v:.2}");
    }
    println!("AUC             {:.3}", auc(&curve)?);
    Ok(())
}

//! PCK, PCKh, and AUC.

use thiserror::Error;

use crate::geometry::Vec2;
use crate::heatmap::Annotation;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no visible ground-truth keypoints to evaluate")]
    EmptyEvaluationSet,
    #[error("prediction and ground-truth sets are misaligned: {0}")]
    Misaligned(String),
    #[error("bad PCK curve: {0}")]
    BadCurve(String),
}

/// Length that scales the PCK threshold for each image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalizer {
    /// Diagonal of the box around all annotated keypoints.
    BoundingBox,
    /// Ground-truth distance between two channels.
    Head(usize, usize),
}

impl Normalizer {
    fn length(&self, gt: &Annotation) -> Option<f64> {
        match *self {
            Normalizer::BoundingBox => {
                let pts: Vec<Vec2> = gt.keypoints.iter().flatten().map(|k| k.position).collect();
                if pts.is_empty() {
                    return None;
                }
                let lo = pts.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
                let hi = pts.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
                Some((hi - lo).norm())
            }
            Normalizer::Head(a, b) => {
                let pa = gt.keypoints.get(a)?.as_ref()?.position;
                let pb = gt.keypoints.get(b)?.as_ref()?.position;
                Some((pa - pb).norm())
            }
        }
    }
}

/// Fraction of visible ground-truth keypoints whose prediction lies strictly
/// closer than `threshold × normalizer`. Images with a zero or undefined
/// normalizer are skipped.
pub fn pck(predictions: &[Vec<Vec2>], truth: &[Annotation], threshold: f64, normalizer: Normalizer) -> Result<f64, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::Misaligned(format!("{} predictions vs {} annotations", predictions.len(), truth.len())));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (pred, gt) in predictions.iter().zip(truth) {
        let Some(scale) = normalizer.length(gt).filter(|l| *l > 0.0) else { continue };
        for (c, k) in gt.keypoints.iter().enumerate() {
            let Some(k) = k.as_ref().filter(|k| k.visible) else { continue };
            let p = pred.get(c).ok_or_else(|| MetricsError::Misaligned(format!("no prediction for channel {c}")))?;
            total += 1;
            if (p - k.position).norm() < threshold * scale {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyEvaluationSet);
    }
    Ok(hits as f64 / total as f64)
}

/// Thresholds `0, 0.01, …, 0.5`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=50).map(|k| k as f64 / 100.0).collect()
}

pub fn pck_curve(
    predictions: &[Vec<Vec2>],
    truth: &[Annotation],
    thresholds: &[f64],
    normalizer: Normalizer,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    thresholds.iter().map(|&t| pck(predictions, truth, t, normalizer).map(|v| (t, v))).collect()
}

/// Trapezoidal area under a PCK curve divided by its threshold span.
pub fn auc(curve: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if curve.len() < 2 {
        return Err(MetricsError::BadCurve("need at least two samples".into()));
    }
    if curve.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(MetricsError::BadCurve("thresholds must be strictly ascending".into()));
    }
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Ok(area / (curve[curve.len() - 1].0 - curve[0].0))
}

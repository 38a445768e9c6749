//! Initialization from sparse labels: triangulate each labeled keypoint with
//! RANSAC, project it into every view with ray-cast visibility, then train
//! the predictor on the label loss alone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, triangulate_ransac, Camera, GeometryError, Observation, Vec3};
use crate::grid::Grid;
use crate::heatmap::{Annotation, Keypoint, Provenance};
use crate::model::{backward, forward, step, ModelError, OptimizerState, PredictorWeights};
use crate::supervise::{label_loss, SuperviseError};
use crate::visibility::{raycast_visibility, OccluderSet, RaycastMode};

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("view {0} has no camera")]
    UnknownView(usize),
    #[error("annotations disagree on grid size or channel count")]
    InconsistentAnnotations,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Supervise(#[from] SuperviseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    /// RANSAC inlier threshold in grid cells.
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { inlier_threshold: 2.0, iterations: 500, seed: 0 }
    }
}

/// Augmented annotations for every view at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub annotations: Vec<Annotation>,
    /// Triangulated point per channel, when RANSAC succeeded.
    pub points: Vec<Option<Vec3>>,
    /// Per channel, which labeled views RANSAC kept.
    pub inliers: Vec<Vec<(usize, bool)>>,
    /// Channels that had labels but failed to triangulate.
    pub failures: Vec<(usize, GeometryError)>,
}

/// Spreads human labels at one frame to all `cameras`.
///
/// `labeled` holds `(view, annotation)` pairs. Human keypoints are never
/// overwritten. Channels with fewer than two labeled views, or without a
/// RANSAC consensus, stay absent in the other views.
pub fn augment_labels(
    labeled: &[(usize, &Annotation)],
    cameras: &[Camera],
    occluders: &OccluderSet,
    options: &AugmentOptions,
) -> Result<Augmentation, BootstrapError> {
    let Some((_, first)) = labeled.first() else {
        return Ok(Augmentation { annotations: Vec::new(), points: Vec::new(), inliers: Vec::new(), failures: Vec::new() });
    };
    let (dims, channels) = (first.dims, first.keypoints.len());
    for (view, ann) in labeled {
        if *view >= cameras.len() {
            return Err(BootstrapError::UnknownView(*view));
        }
        if ann.dims != dims || ann.keypoints.len() != channels {
            return Err(BootstrapError::InconsistentAnnotations);
        }
    }

    let mut annotations = vec![Annotation::empty(dims, channels); cameras.len()];
    for (view, ann) in labeled {
        annotations[*view] = (*ann).clone();
    }
    let mut points = vec![None; channels];
    let mut inliers = vec![Vec::new(); channels];
    let mut failures = Vec::new();

    for c in 0..channels {
        let sources: Vec<(usize, Observation<'_>)> = labeled
            .iter()
            .filter_map(|(view, ann)| ann.keypoints[c].as_ref().map(|k| (*view, (&cameras[*view], k.position))))
            .collect();
        if sources.is_empty() {
            continue;
        }
        let observations: Vec<Observation<'_>> = sources.iter().map(|(_, o)| *o).collect();
        let seed = options.seed.wrapping_add(c as u64);
        let fit = match triangulate_ransac(&observations, options.inlier_threshold, options.iterations, seed) {
            Ok(fit) => fit,
            Err(e) => {
                failures.push((c, e));
                continue;
            }
        };
        inliers[c] = sources.iter().map(|(v, _)| *v).zip(fit.inliers.iter().copied()).collect();
        points[c] = Some(fit.point);
        for (view, cam) in cameras.iter().enumerate() {
            if annotations[view].keypoints[c].is_some() {
                continue;
            }
            let Ok(x) = project(cam, &fit.point) else { continue };
            if !Annotation::in_bounds(dims, &x) {
                continue;
            }
            let visible = matches!(raycast_visibility(&fit.point, cam, RaycastMode::Analytic(occluders)), Ok(v) if v > 0.5);
            annotations[view].keypoints[c] = Some(Keypoint { position: x, visible, provenance: Provenance::Augmented });
        }
    }
    Ok(Augmentation { annotations, points, inliers, failures })
}

/// One training image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Grid,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub sigma_gt: f64,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 3e-3, sigma_gt: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub weights: PredictorWeights,
    pub optimizer: OptimizerState,
    /// Mean label loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Label-loss-only training, one image per update, in a seeded shuffled
/// order per epoch.
pub fn pretrain(weights: PredictorWeights, set: &[LabeledImage], options: &PretrainOptions) -> Result<Pretrained, BootstrapError> {
    let mut weights = weights;
    let mut optimizer = OptimizerState::new(&weights, options.learning_rate);
    let mut epoch_losses = Vec::with_capacity(options.epochs);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..options.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let item = &set[k];
            let out = forward(&weights, &item.image)?;
            let terms = label_loss(&out.heatmap, &out.visibility, &item.annotation, options.sigma_gt)?;
            total += terms.value;
            let grads = backward(&weights, &out.cache, &terms.grad_p, &terms.grad_v);
            step(&mut optimizer, &mut weights, &grads);
        }
        epoch_losses.push(total / set.len().max(1) as f64);
    }
    Ok(Pretrained { weights, optimizer, epoch_losses })
}

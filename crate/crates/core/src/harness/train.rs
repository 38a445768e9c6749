//! Semi-supervised refinement and evaluation of a pretrained predictor.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::epipolar_transfer::BinnedPencil;
use crate::geometry::{Camera, GeometryError, Vec2};
use crate::heatmap::{argmax_peak, Annotation};
use crate::harness::config::EvalSection;
use crate::harness::io::Dataset;
use crate::harness::metrics::{auc, default_thresholds, pck, pck_curve, MetricsError, Normalizer};
use crate::model::{backward, forward, step, ModelError, OptimizerState, Prediction, PredictorWeights};
use crate::supervise::{overall_loss, Batch, LossBreakdown, LossWeights, SlotRef, SuperviseError, TemporalPartner, ViewPartner};
use crate::temporal::TemporalOptions;
use crate::visibility::posterior;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Supervise(#[from] SuperviseError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("loss became non-finite at step {0}")]
    Diverged(usize),
    #[error("no labeled images to supervise with")]
    NoLabels,
    #[error("no flow stored for view {view} between frames {t1} and {t2}")]
    MissingFlow { view: usize, t1: usize, t2: usize },
}

/// Binned pencils for every ordered camera pair, with adjacency flags.
#[derive(Debug, Clone)]
pub struct PencilTable {
    views: usize,
    pencils: Vec<Option<BinnedPencil>>,
    adjacent: Vec<bool>,
}

impl PencilTable {
    pub fn new(cameras: &[Camera], eps_c: f64) -> Result<Self, GeometryError> {
        let n = cameras.len();
        let mut pencils = Vec::with_capacity(n * n);
        let mut adjacent = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    pencils.push(None);
                    adjacent.push(false);
                } else {
                    pencils.push(Some(BinnedPencil::from_cameras(&cameras[i], &cameras[j], None)?));
                    adjacent.push((cameras[i].center - cameras[j].center).norm() < eps_c);
                }
            }
        }
        Ok(Self { views: n, pencils, adjacent })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<(&BinnedPencil, bool)> {
        let k = i * self.views + j;
        self.pencils.get(k)?.as_ref().map(|p| (p, self.adjacent[k]))
    }

    pub fn adjacent_pairs(&self) -> usize {
        self.adjacent.iter().filter(|a| **a).count() / 2
    }
}

/// What the refinement loop draws from.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    pub dataset: &'a Dataset,
    /// `(frame, view, annotation)` for every bootstrapped label.
    pub labeled: Vec<(usize, usize, Annotation)>,
    /// Frames whose images are used without labels.
    pub unlabeled_frames: Vec<usize>,
    pub pencils: &'a PencilTable,
}

#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub steps: usize,
    pub unlabeled_per_step: usize,
    pub strides: Vec<usize>,
    pub weights: LossWeights,
    pub temporal: TemporalOptions,
    pub seed: u64,
    /// Save `weights` and optimizer state every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub weights: PredictorWeights,
    pub optimizer: OptimizerState,
    /// Loss components for every step run in this call, keyed by step.
    pub losses: Vec<(usize, LossBreakdown)>,
}

/// Draws of one step. Every row consumes the same draws so row masks are the
/// only difference between ablation runs.
#[derive(Debug, Clone, PartialEq)]
struct StepPlan {
    labeled: usize,
    unlabeled: Vec<UnlabeledDraw>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UnlabeledDraw {
    frame: usize,
    view: usize,
    partner_frame: Option<usize>,
    partner_view: usize,
}

fn plan_step(set: &TrainingSet<'_>, options: &RefineOptions, step_index: usize) -> StepPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (step_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let views = set.dataset.views();
    let frames = set.dataset.frames();
    let labeled = rng.random_range(0..set.labeled.len());
    let unlabeled = (0..options.unlabeled_per_step)
        .filter_map(|_| {
            if set.unlabeled_frames.is_empty() {
                return None;
            }
            let frame = set.unlabeled_frames[rng.random_range(0..set.unlabeled_frames.len())];
            let view = rng.random_range(0..views);
            let stride = options.strides[rng.random_range(0..options.strides.len())];
            let forward_first = rng.random_bool(0.5);
            let ahead = Some(frame + stride).filter(|&t| t < frames);
            let behind = frame.checked_sub(stride);
            let partner_frame = if forward_first { ahead.or(behind) } else { behind.or(ahead) };
            let partner_view = (view + rng.random_range(1..views.max(2))) % views;
            Some(UnlabeledDraw { frame, view, partner_frame, partner_view })
        })
        .collect();
    StepPlan { labeled, unlabeled }
}

fn slot_of(keys: &mut Vec<(usize, usize)>, key: (usize, usize)) -> usize {
    keys.iter().position(|k| *k == key).unwrap_or_else(|| {
        keys.push(key);
        keys.len() - 1
    })
}

/// Runs one optimizer step; returns the loss before the update.
pub fn refine_step(
    weights: &mut PredictorWeights,
    optimizer: &mut OptimizerState,
    set: &TrainingSet<'_>,
    options: &RefineOptions,
    step_index: usize,
) -> Result<LossBreakdown, TrainError> {
    let plan = plan_step(set, options, step_index);
    let w = &options.weights;
    let use_temporal = w.lambda_t > 0.0;
    let use_view = w.lambda_c > 0.0 || w.lambda_v > 0.0;

    let mut keys: Vec<(usize, usize)> = Vec::new();
    struct Pending {
        reference: usize,
        annotation: Option<usize>,
        temporal: Option<(usize, usize, usize, usize)>,
        view: Option<(usize, usize, usize)>,
    }
    let mut pending = Vec::new();
    let (lt, lv, _) = &set.labeled[plan.labeled];
    pending.push(Pending { reference: slot_of(&mut keys, (*lt, *lv)), annotation: Some(plan.labeled), temporal: None, view: None });
    for d in &plan.unlabeled {
        if !use_temporal && !use_view {
            continue;
        }
        let reference = slot_of(&mut keys, (d.frame, d.view));
        let temporal = match d.partner_frame {
            Some(t2) if use_temporal => Some((slot_of(&mut keys, (t2, d.view)), d.view, d.frame, t2)),
            _ => None,
        };
        let view = use_view.then(|| (slot_of(&mut keys, (d.frame, d.partner_view)), d.view, d.partner_view));
        pending.push(Pending { reference, annotation: None, temporal, view });
    }

    let predictions: Vec<Prediction> =
        keys.iter().map(|&(t, v)| forward(weights, &set.dataset.images[t][v])).collect::<Result<_, _>>()?;
    let slots: Vec<SlotRef<'_>> = predictions.iter().map(|p| SlotRef { heatmap: &p.heatmap, visibility: &p.visibility }).collect();
    let mut batches = Vec::with_capacity(pending.len());
    for p in &pending {
        let temporal = match p.temporal {
            Some((slot, view, t1, t2)) => {
                let flow = set.dataset.flows.get(&(view, t1, t2)).ok_or(TrainError::MissingFlow { view, t1, t2 })?;
                Some(TemporalPartner { slot, flow })
            }
            None => None,
        };
        let view = p.view.and_then(|(slot, i, j)| set.pencils.get(i, j).map(|(pencil, adjacent)| ViewPartner { slot, pencil, adjacent }));
        batches.push(Batch { reference: p.reference, annotation: p.annotation.map(|k| &set.labeled[k].2), temporal, view });
    }

    let objective = overall_loss(&slots, &batches, w, options.temporal)?;
    if !objective.loss.total.is_finite() {
        return Err(TrainError::Diverged(step_index));
    }
    let mut grads = PredictorWeights::zeros(weights.config);
    for (k, pred) in predictions.iter().enumerate() {
        let g = backward(weights, &pred.cache, &objective.grad_heatmaps[k], &objective.grad_visibility[k]);
        grads.scaled_add(&g, 1.0);
    }
    step(optimizer, weights, &grads);
    if !weights.is_finite() {
        return Err(TrainError::Diverged(step_index));
    }
    Ok(objective.loss)
}

pub fn checkpoint_paths(dir: &Path, step_index: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("refine_{step_index:06}.weights")), dir.join(format!("refine_{step_index:06}.adam")))
}

/// Refines until `options.steps` optimizer steps have been taken in total.
/// The step counter of `optimizer` says where to resume.
pub fn refine(
    weights: PredictorWeights,
    optimizer: OptimizerState,
    set: &TrainingSet<'_>,
    options: &RefineOptions,
) -> Result<Refined, TrainError> {
    if set.labeled.is_empty() {
        return Err(TrainError::NoLabels);
    }
    let (mut weights, mut optimizer) = (weights, optimizer);
    let mut losses = Vec::new();
    for s in optimizer.step as usize..options.steps {
        losses.push((s, refine_step(&mut weights, &mut optimizer, set, options, s)?));
        let done = s + 1;
        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && (done % options.checkpoint_every == 0 || done == options.steps) {
                std::fs::create_dir_all(dir).map_err(ModelError::from)?;
                let (wp, op) = checkpoint_paths(dir, done);
                weights.save(&wp)?;
                optimizer.save(&op)?;
            }
        }
    }
    Ok(Refined { weights, optimizer, losses })
}

/// Keypoint estimates as posterior argmax for every channel except background.
pub fn predict_keypoints(prediction: &Prediction) -> Result<Vec<Vec2>, TrainError> {
    let post = posterior(&prediction.heatmap, &prediction.visibility).map_err(SuperviseError::from)?;
    let keypoints = post.heatmap.channels().saturating_sub(1);
    Ok((0..keypoints).map(|c| argmax_peak(&post.heatmap, c)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub pck: f64,
    pub pckh: f64,
    pub auc: f64,
}

/// PCK and AUC under the bounding-box normalizer, PCKh under the head one.
pub fn evaluate(weights: &PredictorWeights, items: &[(&crate::grid::Grid, &Annotation)], eval: &EvalSection) -> Result<EvalReport, TrainError> {
    let mut predictions = Vec::with_capacity(items.len());
    for (image, _) in items {
        predictions.push(predict_keypoints(&forward(weights, image)?)?);
    }
    let truth: Vec<Annotation> = items.iter().map(|(_, a)| (*a).clone()).collect();
    let [a, b] = eval.head_channels;
    let curve = pck_curve(&predictions, &truth, &default_thresholds(), Normalizer::BoundingBox)?;
    Ok(EvalReport {
        images: items.len(),
        pck: pck(&predictions, &truth, eval.pck_threshold, Normalizer::BoundingBox)?,
        pckh: pck(&predictions, &truth, eval.pckh_threshold, Normalizer::Head(a, b))?,
        auc: auc(&curve)?,
    })
}

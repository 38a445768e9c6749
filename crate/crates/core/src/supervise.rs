//! The overall semi-supervised objective.
//!
//! Each [`Batch`] pairs a reference prediction with an optional temporal
//! partner (same view, other frame) and an optional view partner (other view,
//! same frame). Predictions live in slots so one prediction can take part in
//! several batches; gradients are summed per slot.
//!
//! The last heatmap channel is treated as background. It never carries an
//! annotation and is left out of the three self-supervised terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epipolar_transfer::{cross_view_loss, BinnedPencil, TransferError};
use crate::grid::{Grid, GridError};
use crate::heatmap::{argmax_index, gaussian_plane, kl_divergence, Annotation, Heatmap, KL_EPS};
use crate::temporal::{gate, temporal_loss, FlowField, TemporalError, TemporalOptions};
use crate::visibility::{visibility_loss, VisibilityMap, OCCLUDED_LABEL, VISIBLE_LABEL};

#[derive(Debug, Error)]
pub enum SuperviseError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("annotation for channel {0} lies outside the grid")]
    OutOfBoundsAnnotation(usize),
    #[error("prediction slot {0} does not exist")]
    MissingSlot(usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("batch {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<SuperviseError>,
    },
}

/// Loss weights and the thresholds that decide which terms fire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_t: f64,
    pub lambda_v: f64,
    /// Lower bound on the integral flow magnitude (grid units).
    pub eps_m: f64,
    /// Upper bound on the integral flow magnitude (grid units).
    pub eps_big_m: f64,
    /// Camera adjacency radius (world units).
    pub eps_c: f64,
    /// Label Gaussian width (grid units).
    pub sigma_gt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_c: 0.3, lambda_t: 0.3, lambda_v: 0.3, eps_m: 5.0, eps_big_m: 5000.0, eps_c: 5.0, sigma_gt: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), SuperviseError> {
        let all = [self.lambda_c, self.lambda_t, self.lambda_v, self.eps_m, self.eps_big_m, self.eps_c, self.sigma_gt];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SuperviseError::InvalidWeights("weights and bounds must be finite and non-negative".into()));
        }
        if self.eps_m >= self.eps_big_m {
            return Err(SuperviseError::InvalidWeights(format!("eps_m {} must be below eps_M {}", self.eps_m, self.eps_big_m)));
        }
        if self.sigma_gt <= 0.0 {
            return Err(SuperviseError::InvalidWeights("sigma_gt must be positive".into()));
        }
        Ok(())
    }

    /// Same thresholds with every self-supervision weight multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        Self { lambda_c: a * self.lambda_c, lambda_t: a * self.lambda_t, lambda_v: a * self.lambda_v, ..*self }
    }
}

/// Label term value split into its parts, with gradients for `P` and `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTerms {
    pub value: f64,
    pub keypoint: f64,
    pub visibility: f64,
    pub grad_p: Grid,
    pub grad_v: Grid,
}

/// Gaussian target for every annotated channel, or `None`.
pub fn label_targets(annotation: &Annotation, sigma: f64) -> Vec<Option<Vec<f64>>> {
    annotation.keypoints.iter().map(|k| k.as_ref().map(|k| gaussian_plane(k.position, sigma, annotation.dims))).collect()
}

/// `Σ_c KL(Ḡ_c ‖ P_c) + KL_bin(v̄_c ‖ max V_c)` over annotated channels.
///
/// `Ḡ_c` is a Gaussian at the annotated position. The visibility part is the
/// binary KL between the soft label and the channel maximum of `V`, with the
/// gradient routed to the maximizing cell.
pub fn label_loss(p: &Heatmap, v: &VisibilityMap, annotation: &Annotation, sigma: f64) -> Result<LabelTerms, SuperviseError> {
    p.grid().check_same_shape(v.grid())?;
    if annotation.dims != p.dims() || annotation.keypoints.len() != p.channels() {
        return Err(GridError::ShapeMismatch(format!(
            "annotation {}x{} with {} channels vs heatmap {}x{}x{}",
            annotation.dims.width,
            annotation.dims.height,
            annotation.keypoints.len(),
            p.dims().width,
            p.dims().height,
            p.channels()
        ))
        .into());
    }
    annotation.validate().map_err(SuperviseError::OutOfBoundsAnnotation)?;

    let (w, h, c) = (p.dims().width, p.dims().height, p.channels());
    let mut grad_p = Grid::zeros(w, h, c);
    let mut grad_v = Grid::zeros(w, h, c);
    let (mut keypoint, mut visibility) = (0.0, 0.0);
    for (ch, target) in label_targets(annotation, sigma).into_iter().enumerate() {
        let Some(target) = target else { continue };
        let kl = kl_divergence(&target, p.channel(ch), KL_EPS)?;
        keypoint += kl.value;
        grad_p.channel_mut(ch).copy_from_slice(&kl.grad_q);

        let y = if annotation.keypoints[ch].as_ref().is_some_and(|k| k.visible) { VISIBLE_LABEL } else { OCCLUDED_LABEL };
        let peak = argmax_index(v.channel(ch));
        let m = v.channel(ch)[peak].clamp(KL_EPS, 1.0 - KL_EPS);
        visibility += y * (y / m).ln() + (1.0 - y) * ((1.0 - y) / (1.0 - m)).ln();
        grad_v.channel_mut(ch)[peak] = -y / m + (1.0 - y) / (1.0 - m);
    }
    Ok(LabelTerms { value: keypoint + visibility, keypoint, visibility, grad_p, grad_v })
}

/// A prediction taking part in the objective.
#[derive(Debug, Clone, Copy)]
pub struct SlotRef<'a> {
    pub heatmap: &'a Heatmap,
    pub visibility: &'a VisibilityMap,
}

#[derive(Debug, Clone, Copy)]
pub struct TemporalPartner<'a> {
    /// Slot of the same view at the other frame `t2`.
    pub slot: usize,
    /// Backward flow `t2 → t1` on the prediction grid.
    pub flow: &'a FlowField,
}

#[derive(Debug, Clone, Copy)]
pub struct ViewPartner<'a> {
    /// Slot of the other view at the same frame.
    pub slot: usize,
    /// Pencil with the reference as view `i` and the partner as view `j`.
    pub pencil: &'a BinnedPencil,
    /// Whether the two camera centers are within `eps_c`.
    pub adjacent: bool,
}

/// The reference, temporal, and view pathways for one reference prediction.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub reference: usize,
    pub annotation: Option<&'a Annotation>,
    pub temporal: Option<TemporalPartner<'a>>,
    pub view: Option<ViewPartner<'a>>,
}

impl<'a> Batch<'a> {
    pub fn reference(slot: usize) -> Self {
        Self { reference: slot, annotation: None, temporal: None, view: None }
    }
}

/// Unweighted component values and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub label: f64,
    pub cross: f64,
    pub temporal: f64,
    pub visibility: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,L_L,L_C,L_T,L_V,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!("{step},{:e},{:e},{:e},{:e},{:e}", self.label, self.cross, self.temporal, self.visibility, self.total)
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.label += other.label;
        self.cross += other.cross;
        self.temporal += other.temporal;
        self.visibility += other.visibility;
        self.total += other.total;
    }
}

/// Total loss plus `∂L/∂P` and `∂L/∂V` for every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: LossBreakdown,
    pub grad_heatmaps: Vec<Grid>,
    pub grad_visibility: Vec<Grid>,
}

/// `L_L + λ_C ΣL_C + λ_T ΣL_T + λ_V ΣL_V` over all batches.
///
/// Temporal partners whose flow fails the magnitude gate contribute nothing.
pub fn overall_loss(
    slots: &[SlotRef<'_>],
    batches: &[Batch<'_>],
    weights: &LossWeights,
    temporal_options: TemporalOptions,
) -> Result<Objective, SuperviseError> {
    weights.validate()?;
    let mut grad_heatmaps: Vec<Grid> = slots.iter().map(|s| Grid::zeros(s.heatmap.dims().width, s.heatmap.dims().height, s.heatmap.channels())).collect();
    let mut grad_visibility = grad_heatmaps.clone();
    let mut loss = LossBreakdown::default();

    for (index, batch) in batches.iter().enumerate() {
        evaluate_batch(slots, batch, weights, temporal_options, &mut loss, &mut grad_heatmaps, &mut grad_visibility)
            .map_err(|e| SuperviseError::InBatch { index, source: Box::new(e) })?;
    }
    loss.total = loss.label + weights.lambda_c * loss.cross + weights.lambda_t * loss.temporal + weights.lambda_v * loss.visibility;
    Ok(Objective { loss, grad_heatmaps, grad_visibility })
}

fn evaluate_batch(
    slots: &[SlotRef<'_>],
    batch: &Batch<'_>,
    weights: &LossWeights,
    temporal_options: TemporalOptions,
    loss: &mut LossBreakdown,
    grad_p: &mut [Grid],
    grad_v: &mut [Grid],
) -> Result<(), SuperviseError> {
    let slot = |k: usize| slots.get(k).copied().ok_or(SuperviseError::MissingSlot(k));
    let r = batch.reference;
    let reference = slot(r)?;
    let keypoint_channels = reference.heatmap.channels().saturating_sub(1);

    if let Some(annotation) = batch.annotation {
        let terms = label_loss(reference.heatmap, reference.visibility, annotation, weights.sigma_gt)?;
        loss.label += terms.value;
        grad_p[r].accumulate(&terms.grad_p)?;
        grad_v[r].accumulate(&terms.grad_v)?;
    }

    if let Some(partner) = batch.temporal {
        let other = slot(partner.slot)?;
        other.heatmap.grid().check_same_shape(reference.heatmap.grid())?;
        if weights.lambda_t > 0.0 && gate(partner.flow, weights.eps_m, weights.eps_big_m) {
            for c in 0..keypoint_channels {
                let t = temporal_loss(reference.heatmap.channel(c), other.heatmap.channel(c), partner.flow, temporal_options)?;
                loss.temporal += t.value;
                add_scaled(grad_p[r].channel_mut(c), &t.grad_t1, weights.lambda_t);
                add_scaled(grad_p[partner.slot].channel_mut(c), &t.grad_t2, weights.lambda_t);
            }
        }
    }

    if let Some(partner) = batch.view {
        let other = slot(partner.slot)?;
        if other.heatmap.channels() != reference.heatmap.channels() {
            return Err(GridError::ShapeMismatch("view partner channel count differs".into()).into());
        }
        if weights.lambda_c > 0.0 {
            for c in 0..keypoint_channels {
                let t = cross_view_loss(reference.heatmap.channel(c), other.heatmap.channel(c), partner.pencil)?;
                loss.cross += t.value;
                add_scaled(grad_p[r].channel_mut(c), &t.grad_i, weights.lambda_c);
                add_scaled(grad_p[partner.slot].channel_mut(c), &t.grad_j, weights.lambda_c);
            }
        }
        if partner.adjacent && weights.lambda_v > 0.0 {
            for c in 0..keypoint_channels {
                let t = visibility_loss(&[reference.visibility.channel(c), other.visibility.channel(c)], &[(0, 1)]);
                loss.visibility += t.value;
                add_scaled(grad_v[r].channel_mut(c), &t.grads[0], weights.lambda_v);
                add_scaled(grad_v[partner.slot].channel_mut(c), &t.grads[1], weights.lambda_v);
            }
        }
    }
    Ok(())
}

fn add_scaled(dst: &mut [f64], src: &[f64], alpha: f64) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += alpha * b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Camera, Vec2, Vec3};
    use crate::grid::Dims;
    use crate::heatmap::{Keypoint, Provenance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annotation(points: &[Option<(f64, f64, bool)>], dims: Dims) -> Annotation {
        Annotation {
            dims,
            keypoints: points
                .iter()
                .map(|p| p.map(|(x, y, visible)| Keypoint { position: Vec2::new(x, y), visible, provenance: Provenance::Human }))
                .collect(),
        }
    }

    fn gaussians(points: &[(f64, f64)], dims: Dims, sigma: f64) -> Heatmap {
        let planes: Vec<Vec<f64>> = points.iter().map(|&(x, y)| gaussian_plane(Vec2::new(x, y), sigma, dims)).collect();
        let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
        Heatmap::from_channels(dims, &refs).unwrap()
    }

    fn random_heatmap(rng: &mut ChaCha8Rng, dims: Dims, c: usize) -> Heatmap {
        let g = Grid::from_vec(dims.width, dims.height, c, (0..dims.len() * c).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        Heatmap::normalized(g).unwrap()
    }

    fn random_vis(rng: &mut ChaCha8Rng, dims: Dims, c: usize) -> VisibilityMap {
        VisibilityMap::new(Grid::from_vec(dims.width, dims.height, c, (0..dims.len() * c).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()).unwrap()
    }

    #[test]
    fn label_loss_vanishes_at_truth() {
        let dims = Dims::new(12, 10);
        let ann = annotation(&[Some((3.0, 4.0, true)), Some((8.0, 2.0, false)), None], dims);
        let p = gaussians(&[(3.0, 4.0), (8.0, 2.0), (5.0, 5.0)], dims, 1.0);
        let mut v = Grid::filled(12, 10, 3, VISIBLE_LABEL);
        v.channel_mut(1).fill(OCCLUDED_LABEL);
        let terms = label_loss(&p, &VisibilityMap::new(v).unwrap(), &ann, 1.0).unwrap();
        assert!(terms.value.abs() < 1e-6, "{}", terms.value);
    }

    #[test]
    fn label_loss_grows_with_offset() {
        let dims = Dims::new(16, 16);
        let ann = annotation(&[Some((8.0, 8.0, true)), None], dims);
        let v = VisibilityMap::filled(16, 16, 2, VISIBLE_LABEL);
        let at = |dx: f64| label_loss(&gaussians(&[(8.0 + dx, 8.0), (1.0, 1.0)], dims, 1.0), &v, &ann, 1.0).unwrap().value;
        assert!(at(5.0) > at(1.0));
        assert!(at(1.0) > at(0.0));
    }

    #[test]
    fn label_loss_rejects_out_of_bounds() {
        let dims = Dims::new(8, 8);
        let ann = annotation(&[Some((9.0, 1.0, true)), None], dims);
        let err = label_loss(&Heatmap::uniform(8, 8, 2), &VisibilityMap::filled(8, 8, 2, 0.5), &ann, 1.0);
        assert!(matches!(err, Err(SuperviseError::OutOfBoundsAnnotation(0))));
    }

    #[test]
    fn label_gradient_matches_central_differences() {
        let dims = Dims::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ann = annotation(&[Some((2.3, 5.1, true)), Some((6.0, 1.0, false)), None], dims);
        let p = random_heatmap(&mut rng, dims, 3);
        let v = random_vis(&mut rng, dims, 3);
        let terms = label_loss(&p, &v, &ann, 1.2).unwrap();
        let h = 1e-6;
        for k in 0..p.grid().data.len() {
            let mut gp = p.grid().clone();
            gp.data[k] += h;
            let mut gm = p.grid().clone();
            gm.data[k] -= h;
            let f = |g: Grid| label_loss(&Heatmap::from_raw(g), &v, &ann, 1.2).unwrap().value;
            let fd = (f(gp) - f(gm)) / (2.0 * h);
            let an = terms.grad_p.data[k];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{k}: {fd} vs {an}");
        }
        for k in 0..v.grid().data.len() {
            let mut gp = v.grid().clone();
            gp.data[k] += h;
            let mut gm = v.grid().clone();
            gm.data[k] -= h;
            let f = |g: Grid| label_loss(&p, &VisibilityMap::new(g).unwrap(), &ann, 1.2).unwrap().value;
            let fd = (f(gp) - f(gm)) / (2.0 * h);
            let an = terms.grad_v.data[k];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{k}: {fd} vs {an}");
        }
    }

    fn rig() -> (Camera, Camera) {
        let a = Camera::look_at(20.0, 8, 8, Vec3::new(-1.0, -6.0, 0.5), Vec3::zeros(), Vec3::z()).unwrap();
        let b = Camera::look_at(20.0, 8, 8, Vec3::new(1.5, -6.0, 0.0), Vec3::zeros(), Vec3::z()).unwrap();
        (a, b)
    }

    #[test]
    fn zero_weights_without_labels_give_zero() {
        let dims = Dims::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = rig();
        let pencil = BinnedPencil::from_cameras(&a, &b, None).unwrap();
        let flow = FlowField::constant(dims, 1.0, 0.5);
        let hs = [random_heatmap(&mut rng, dims, 3), random_heatmap(&mut rng, dims, 3), random_heatmap(&mut rng, dims, 3)];
        let vs = [random_vis(&mut rng, dims, 3), random_vis(&mut rng, dims, 3), random_vis(&mut rng, dims, 3)];
        let slots: Vec<SlotRef> = hs.iter().zip(&vs).map(|(h, v)| SlotRef { heatmap: h, visibility: v }).collect();
        let batch = Batch {
            reference: 0,
            annotation: None,
            temporal: Some(TemporalPartner { slot: 1, flow: &flow }),
            view: Some(ViewPartner { slot: 2, pencil: &pencil, adjacent: true }),
        };
        let w = LossWeights { lambda_c: 0.0, lambda_t: 0.0, lambda_v: 0.0, eps_m: 1.0, ..LossWeights::default() };
        let obj = overall_loss(&slots, &[batch], &w, TemporalOptions::default()).unwrap();
        assert_eq!(obj.loss.total, 0.0);
        assert!(obj.grad_heatmaps.iter().chain(&obj.grad_visibility).all(|g| g.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn errors_carry_the_batch_index() {
        let h = Heatmap::uniform(4, 4, 2);
        let v = VisibilityMap::filled(4, 4, 2, 0.5);
        let slots = [SlotRef { heatmap: &h, visibility: &v }];
        let err = overall_loss(&slots, &[Batch::reference(0), Batch::reference(3)], &LossWeights::default(), TemporalOptions::default());
        match err {
            Err(SuperviseError::InBatch { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, SuperviseError::MissingSlot(3)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaled_weights_scale_only_self_supervision() {
        let w = LossWeights { lambda_c: 1.0, ..LossWeights::default() }.scaled(2.5);
        assert_eq!(w.lambda_c, 2.5);
        assert_eq!(w.sigma_gt, 1.0);
        assert!(LossWeights { eps_m: 10.0, eps_big_m: 5.0, ..LossWeights::default() }.validate().is_err());
    }

    #[test]
    fn csv_row_has_six_columns() {
        let row = LossBreakdown { label: 1.0, cross: 2.0, temporal: 3.0, visibility: 4.0, total: 10.0 }.csv_row(7);
        assert_eq!(row.split(',').count(), LossBreakdown::CSV_HEADER.split(',').count());
        assert!(row.starts_with("7,"));
    }
}

//! Cross-view supervision through the common epipolar plane.
//!
//! A keypoint distribution in one view is max-pooled along the image lines of
//! the pencil planes, giving a distribution over the plane angle θ. Both views
//! of a pair map onto the same θ axis, so their distributions can be compared
//! directly with KL divergence without triangulating anything.

use crate::geometry::{Camera, EpipolarPencil, GeometryError, Vec2, View};
use crate::grid::{Dims, Grid, GridError};
use crate::heatmap::{argmax_index, kl_divergence, Heatmap, KL_EPS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("plane distribution has no mass on the usable bins")]
    EmptyDistribution,
}

/// Per-pixel θ-bin lookup for one camera of a pencil.
#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    pub dims: Dims,
    /// `None` for the pixel (if any) that coincides with the epipole.
    pub bins: Vec<Option<usize>>,
    /// The epipole projects inside the image; the pencil lines all meet there.
    pub epipole_inside: bool,
}

impl BinTable {
    pub fn build(pencil: &EpipolarPencil, camera: &Camera) -> Self {
        let dims = Dims::new(camera.width, camera.height);
        let mut bins = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                let dir = camera.ray_direction(&Vec2::new(x as f64, y as f64));
                bins.push(pencil.theta_of_direction(&dir).ok().map(|t| pencil.bin_of_theta(t)));
            }
        }
        let other = if camera.center == pencil.cam_i.center { &pencil.cam_j } else { &pencil.cam_i };
        let epipole_inside = crate::geometry::project(camera, &other.center)
            .map(|e| camera.contains_pixel(&e))
            .unwrap_or(false);
        Self { dims, bins, epipole_inside }
    }
}

/// An epipolar pencil with the θ-bin tables of both views precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPencil {
    pub pencil: EpipolarPencil,
    pub table_i: BinTable,
    pub table_j: BinTable,
}

impl BinnedPencil {
    pub fn new(pencil: EpipolarPencil) -> Self {
        let table_i = BinTable::build(&pencil, &pencil.cam_i);
        let table_j = BinTable::build(&pencil, &pencil.cam_j);
        Self { pencil, table_i, table_j }
    }

    pub fn from_cameras(cam_i: &Camera, cam_j: &Camera, bin_count: Option<usize>) -> Result<Self, GeometryError> {
        Ok(Self::new(EpipolarPencil::new(cam_i.clone(), cam_j.clone(), bin_count)?))
    }

    pub fn table(&self, view: View) -> &BinTable {
        match view {
            View::I => &self.table_i,
            View::J => &self.table_j,
        }
    }

    pub fn bin_count(&self) -> usize {
        self.pencil.bin_count
    }
}

/// Distribution over pencil-plane angles for one channel of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarDistribution {
    pub view: View,
    /// Normalized over all bins.
    pub bins: Vec<f64>,
    /// Per-bin maximum before normalization.
    pub pooled: Vec<f64>,
    /// Row-major pixel index holding each bin's maximum; `None` for bins no
    /// pixel falls into.
    pub argmax_pixels: Vec<Option<usize>>,
    pub epipole_inside: bool,
}

impl EpipolarDistribution {
    pub fn occupied(&self, b: usize) -> bool {
        self.argmax_pixels[b].is_some()
    }

    pub fn peak_bin(&self) -> usize {
        argmax_index(&self.bins)
    }
}

/// Max-pools one channel over the pencil lines of `view`.
pub fn transfer(p: &[f64], pencil: &BinnedPencil, view: View) -> Result<EpipolarDistribution, TransferError> {
    let table = pencil.table(view);
    if p.len() != table.dims.len() {
        return Err(GridError::ShapeMismatch(format!(
            "{} cells for a {}x{} view",
            p.len(),
            table.dims.width,
            table.dims.height
        ))
        .into());
    }
    let b_count = pencil.bin_count();
    let mut pooled = vec![0.0; b_count];
    let mut argmax_pixels: Vec<Option<usize>> = vec![None; b_count];
    for (k, bin) in table.bins.iter().enumerate() {
        let Some(b) = *bin else { continue };
        match argmax_pixels[b] {
            Some(_) if p[k] <= pooled[b] => {}
            _ => {
                pooled[b] = p[k];
                argmax_pixels[b] = Some(k);
            }
        }
    }
    let total: f64 = pooled.iter().sum();
    if !(total > 0.0) {
        return Err(TransferError::EmptyDistribution);
    }
    let bins = pooled.iter().map(|v| v / total).collect();
    Ok(EpipolarDistribution { view, bins, pooled, argmax_pixels, epipole_inside: table.epipole_inside })
}

/// Transfers every channel of a heatmap.
pub fn transfer_heatmap(
    p: &Heatmap,
    pencil: &BinnedPencil,
    view: View,
) -> Result<Vec<EpipolarDistribution>, TransferError> {
    (0..p.channels()).map(|c| transfer(p.channel(c), pencil, view)).collect()
}

/// Packs plane distributions into a `B×1×C` grid for dumping.
pub fn distributions_to_grid(qs: &[EpipolarDistribution]) -> Grid {
    let b = qs.first().map_or(0, |q| q.bins.len());
    let planes: Vec<&[f64]> = qs.iter().map(|q| q.bins.as_slice()).collect();
    Grid::from_planes(Dims::new(b, 1), &planes).expect("equal bin counts")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewTerms {
    pub value: f64,
    pub grad_i: Vec<f64>,
    pub grad_j: Vec<f64>,
}

/// Symmetric KL between the plane distributions of a view pair.
///
/// Bins empty in either view are dropped and both distributions renormalized
/// over the shared bins. Gradients flow through the renormalization and then
/// entirely to each bin's argmax pixel.
pub fn cross_view_loss(p_i: &[f64], p_j: &[f64], pencil: &BinnedPencil) -> Result<CrossViewTerms, TransferError> {
    let qi = transfer(p_i, pencil, View::I)?;
    let qj = transfer(p_j, pencil, View::J)?;
    let common: Vec<usize> = (0..pencil.bin_count()).filter(|&b| qi.occupied(b) && qj.occupied(b)).collect();

    let restrict = |q: &EpipolarDistribution| -> Result<(Vec<f64>, f64), TransferError> {
        let m: Vec<f64> = common.iter().map(|&b| q.pooled[b]).collect();
        let s: f64 = m.iter().sum();
        if !(s > 0.0) {
            return Err(TransferError::EmptyDistribution);
        }
        Ok((m.into_iter().map(|v| v / s).collect(), s))
    };
    let (ni, si) = restrict(&qi)?;
    let (nj, sj) = restrict(&qj)?;

    let fwd = kl_divergence(&ni, &nj, KL_EPS)?;
    let bwd = kl_divergence(&nj, &ni, KL_EPS)?;
    let value = fwd.value + bwd.value;
    let g_ni: Vec<f64> = fwd.grad_p.iter().zip(&bwd.grad_q).map(|(a, b)| a + b).collect();
    let g_nj: Vec<f64> = fwd.grad_q.iter().zip(&bwd.grad_p).map(|(a, b)| a + b).collect();

    let route = |g_n: &[f64], n: &[f64], s: f64, q: &EpipolarDistribution, len: usize| -> Vec<f64> {
        let dot: f64 = g_n.iter().zip(n).map(|(g, v)| g * v).sum();
        let mut grad = vec![0.0; len];
        for (k, &b) in common.iter().enumerate() {
            let pixel = q.argmax_pixels[b].expect("common bins are occupied");
            grad[pixel] += (g_n[k] - dot) / s;
        }
        grad
    };
    Ok(CrossViewTerms {
        value,
        grad_i: route(&g_ni, &ni, si, &qi, p_i.len()),
        grad_j: route(&g_nj, &nj, sj, &qj, p_j.len()),
    })
}

/// Spreads a plane distribution back over the image of `target`, whose center
/// must lie on the pencil's baseline. Visualization only.
pub fn backproject(q: &EpipolarDistribution, pencil: &EpipolarPencil, target: &Camera) -> Result<Heatmap, TransferError> {
    let dims = Dims::new(target.width, target.height);
    let mut plane = vec![0.0; dims.len()];
    for y in 0..dims.height {
        for x in 0..dims.width {
            let dir = target.ray_direction(&Vec2::new(x as f64, y as f64));
            if let Ok(theta) = pencil.theta_of_direction(&dir) {
                plane[dims.index(x, y)] = q.bins[pencil.bin_of_theta(theta)];
            }
        }
    }
    let s: f64 = plane.iter().sum();
    if !(s > 0.0) {
        return Err(TransferError::EmptyDistribution);
    }
    plane.iter_mut().for_each(|v| *v /= s);
    Ok(Heatmap::new(Grid::from_vec(dims.width, dims.height, 1, plane)?)?)
}

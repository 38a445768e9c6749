//! Keypoint probability grids: Gaussian targets, KL divergence with analytic
//! gradients, and peak extraction.

use crate::geometry::Vec2;
use crate::grid::{Dims, Grid, GridError};

/// Smoothing added inside the logarithms of every KL term.
pub const KL_EPS: f64 = 1e-8;

/// Per-channel normalized `W×H×C` probability grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(Grid);

/// Gradient of a scalar loss with respect to a grid.
pub type GradientGrid = Grid;

impl Heatmap {
    /// Wraps a grid after checking non-negativity, `≤ 1`, and per-channel unit mass.
    pub fn new(grid: Grid) -> Result<Self, GridError> {
        for (index, &v) in grid.data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(GridError::Invariant { what: "probability in [0, 1]", index, value: v });
            }
        }
        for c in 0..grid.channels {
            let s = grid.channel_sum(c);
            if (s - 1.0).abs() > 1e-9 {
                return Err(GridError::Invariant { what: "channel sums to 1", index: c, value: s });
            }
        }
        Ok(Self(grid))
    }

    /// Wraps a grid without any checks. Finite-difference probes use this to
    /// step off the probability simplex.
    pub fn from_raw(grid: Grid) -> Self {
        Self(grid)
    }

    /// Normalizes each channel of a non-negative grid.
    pub fn normalized(mut grid: Grid) -> Result<Self, GridError> {
        for c in 0..grid.channels {
            let plane = grid.channel_mut(c);
            let s: f64 = plane.iter().sum();
            if !(s > 0.0) || plane.iter().any(|&v| v < 0.0) {
                return Err(GridError::Invariant { what: "positive channel mass", index: c, value: s });
            }
            plane.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self(grid))
    }

    pub fn uniform(width: usize, height: usize, channels: usize) -> Self {
        Self(Grid::filled(width, height, channels, 1.0 / (width * height) as f64))
    }

    pub fn from_channels(dims: Dims, planes: &[&[f64]]) -> Result<Self, GridError> {
        Self::new(Grid::from_planes(dims, planes)?)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.0.channel(c)
    }
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Human,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Grid coordinates.
    pub position: Vec2,
    pub visible: bool,
    pub provenance: Provenance,
}

/// Per-channel optional keypoint labels for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub dims: Dims,
    pub keypoints: Vec<Option<Keypoint>>,
}

impl Annotation {
    pub fn empty(dims: Dims, channels: usize) -> Self {
        Self { dims, keypoints: vec![None; channels] }
    }

    pub fn in_bounds(dims: Dims, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < dims.width as f64 && p.y < dims.height as f64
    }

    /// Checks the in-bounds invariant for every present keypoint.
    pub fn validate(&self) -> Result<(), usize> {
        match self
            .keypoints
            .iter()
            .position(|k| k.is_some_and(|k| !Self::in_bounds(self.dims, &k.position)))
        {
            Some(c) => Err(c),
            None => Ok(()),
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.keypoints.iter().flatten().count()
    }
}

/// Single-channel isotropic Gaussian centered at `center`, renormalized to
/// unit mass over the grid.
pub fn render_gaussian(center: Vec2, sigma: f64, width: usize, height: usize) -> Heatmap {
    Heatmap(Grid::from_vec(width, height, 1, gaussian_plane(center, sigma, Dims::new(width, height))).unwrap())
}

pub(crate) fn gaussian_plane(center: Vec2, sigma: f64, dims: Dims) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut plane = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        let dy = y as f64 - center.y;
        for x in 0..dims.width {
            let dx = x as f64 - center.x;
            plane.push((-(dx * dx + dy * dy) * inv).exp());
        }
    }
    let s: f64 = plane.iter().sum();
    if s > 0.0 && s.is_finite() {
        plane.iter_mut().for_each(|v| *v /= s);
    } else {
        // center far outside the grid: all cells underflow, fall back to the nearest cell
        let cx = center.x.round().clamp(0.0, dims.width as f64 - 1.0) as usize;
        let cy = center.y.round().clamp(0.0, dims.height as f64 - 1.0) as usize;
        plane.iter_mut().for_each(|v| *v = 0.0);
        plane[dims.index(cx, cy)] = 1.0;
    }
    plane
}

/// Value and gradients of a KL divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct KlTerms {
    pub value: f64,
    pub grad_p: Vec<f64>,
    pub grad_q: Vec<f64>,
}

/// `Σ P ln((P+eps)/(Q+eps))` with gradients in both arguments.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<KlTerms, GridError> {
    if p.len() != q.len() {
        return Err(GridError::ShapeMismatch(format!("KL over {} vs {} cells", p.len(), q.len())));
    }
    let mut value = 0.0;
    let mut grad_p = vec![0.0; p.len()];
    let mut grad_q = vec![0.0; p.len()];
    for k in 0..p.len() {
        let (pe, qe) = (p[k] + eps, q[k] + eps);
        if p[k] == 0.0 && eps == 0.0 {
            // 0·ln 0 = 0; gradient taken as zero at the boundary
            continue;
        }
        let log_ratio = (pe / qe).ln();
        value += p[k] * log_ratio;
        grad_p[k] = log_ratio + p[k] / pe;
        grad_q[k] = -p[k] / qe;
    }
    Ok(KlTerms { value, grad_p, grad_q })
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Grid coordinate of the channel maximum, ties broken in row-major order.
pub fn argmax_peak(p: &Heatmap, channel: usize) -> Vec2 {
    let (x, y) = p.dims().coords(argmax_index(p.channel(channel)));
    Vec2::new(x as f64, y as f64)
}

/// Probability-weighted mean coordinate of a channel.
pub fn soft_argmax(p: &Heatmap, channel: usize) -> Vec2 {
    soft_argmax_plane(p.dims(), p.channel(channel))
}

pub(crate) fn soft_argmax_plane(dims: Dims, plane: &[f64]) -> Vec2 {
    let mut acc = Vec2::zeros();
    let mut mass = 0.0;
    for (k, &v) in plane.iter().enumerate() {
        let (x, y) = dims.coords(k);
        acc += Vec2::new(x as f64, y as f64) * v;
        mass += v;
    }
    acc / mass
}

//! Flow-warped keypoint distributions and the tracking loss.
//!
//! A [`FlowField`] stored for the pair `(t1, t2)` holds, at every cell `x` of
//! the `t1` grid, the offset to the location in frame `t2` showing the same
//! content. Warping samples `P_t2` at `x + flow(x)`, which yields a
//! distribution on the `t1` grid that can be compared with `P_t1`.

use crate::grid::{Dims, Grid, GridError};
use crate::heatmap::{kl_divergence, KL_EPS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("every warped sample fell outside the grid")]
    EmptyWarp,
}

/// Dense two-channel displacement field (`u`, `v`) in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Grid);

impl FlowField {
    pub fn new(grid: Grid) -> Result<Self, GridError> {
        if grid.channels != 2 {
            return Err(GridError::ShapeMismatch(format!("flow needs 2 channels, got {}", grid.channels)));
        }
        if let Some(index) = grid.data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::Invariant { what: "finite flow", index, value: grid.data[index] });
        }
        Ok(Self(grid))
    }

    pub fn zeros(dims: Dims) -> Self {
        Self(Grid::zeros(dims.width, dims.height, 2))
    }

    pub fn constant(dims: Dims, u: f64, v: f64) -> Self {
        let mut g = Grid::zeros(dims.width, dims.height, 2);
        g.channel_mut(0).fill(u);
        g.channel_mut(1).fill(v);
        Self(g)
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn at(&self, index: usize) -> (f64, f64) {
        (self.0.channel(0)[index], self.0.channel(1)[index])
    }

    pub fn set(&mut self, index: usize, u: f64, v: f64) {
        self.0.channel_mut(0)[index] = u;
        self.0.channel_mut(1)[index] = v;
    }

    /// `Σ_x ‖flow(x)‖`.
    pub fn integral_magnitude(&self) -> f64 {
        self.0.channel(0).iter().zip(self.0.channel(1)).map(|(u, v)| u.hypot(*v)).sum()
    }

    pub fn negated(&self) -> Self {
        let mut g = self.0.clone();
        g.data.iter_mut().for_each(|v| *v = -*v);
        Self(g)
    }
}

/// Linear map from `P_t2` to the warped grid, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpJacobian {
    /// `(output cell, source cell, bilinear weight)`.
    taps: Vec<(usize, usize, f64)>,
    /// Mass of the raw samples; `None` when renormalization was a no-op.
    mass: Option<f64>,
    output: Vec<f64>,
    len: usize,
}

impl WarpJacobian {
    /// Pulls a gradient on the warped grid back onto `P_t2`.
    pub fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let grad_raw: Vec<f64> = match self.mass {
            Some(s) => {
                let dot: f64 = grad_out.iter().zip(&self.output).map(|(g, o)| g * o).sum();
                grad_out.iter().map(|g| (g - dot) / s).collect()
            }
            None => grad_out.to_vec(),
        };
        let mut grad = vec![0.0; self.len];
        for &(out, src, w) in &self.taps {
            grad[src] += w * grad_raw[out];
        }
        grad
    }
}

/// Bilinear backward warp of one channel, renormalized to unit mass.
///
/// Samples outside the grid contribute nothing. Renormalization is skipped
/// when the sampled mass is already within `1e-12` of one, so the zero flow
/// reproduces its input bit for bit.
pub fn warp(p_t2: &[f64], flow: &FlowField) -> Result<(Vec<f64>, WarpJacobian), TemporalError> {
    let dims = flow.dims();
    if p_t2.len() != dims.len() {
        return Err(GridError::ShapeMismatch(format!("{} cells vs flow {}x{}", p_t2.len(), dims.width, dims.height)).into());
    }
    let (w, h) = (dims.width as i64, dims.height as i64);
    let mut taps = Vec::with_capacity(4 * dims.len());
    let mut raw = vec![0.0; dims.len()];
    for (k, r) in raw.iter_mut().enumerate() {
        let (x, y) = dims.coords(k);
        let (u, v) = flow.at(k);
        let (sx, sy) = (x as f64 + u, y as f64 + v);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        for (dx, dy, wt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (cx, cy) = (x0 + dx, y0 + dy);
            if wt == 0.0 || cx < 0 || cy < 0 || cx >= w || cy >= h {
                continue;
            }
            let src = cy as usize * dims.width + cx as usize;
            *r += wt * p_t2[src];
            taps.push((k, src, wt));
        }
    }
    let s: f64 = raw.iter().sum();
    if !(s > 0.0) {
        return Err(TemporalError::EmptyWarp);
    }
    let mass = if (s - 1.0).abs() > 1e-12 {
        raw.iter_mut().for_each(|v| *v /= s);
        Some(s)
    } else {
        None
    };
    let jac = WarpJacobian { taps, mass, output: raw.clone(), len: dims.len() };
    Ok((raw, jac))
}

/// Whether the integral flow magnitude lies strictly inside `(eps_m, eps_big_m)`.
pub fn gate(flow: &FlowField, eps_m: f64, eps_big_m: f64) -> bool {
    let total = flow.integral_magnitude();
    eps_m < total && total < eps_big_m
}

/// Which arguments of the tracking loss receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct TemporalOptions {
    /// Treat the warped `P_t2` as a fixed target.
    pub freeze_warped: bool,
    /// Add the reverse direction `KL(warped ‖ P_t1)`.
    pub symmetric: bool,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        Self { freeze_warped: false, symmetric: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTerms {
    pub value: f64,
    pub grad_t1: Vec<f64>,
    pub grad_t2: Vec<f64>,
}

/// `KL(P_t1 ‖ warp(P_t2))`, optionally symmetrized.
pub fn temporal_loss(
    p_t1: &[f64],
    p_t2: &[f64],
    flow: &FlowField,
    options: TemporalOptions,
) -> Result<TemporalTerms, TemporalError> {
    if p_t1.len() != p_t2.len() {
        return Err(GridError::ShapeMismatch(format!("{} vs {} cells", p_t1.len(), p_t2.len())).into());
    }
    let (warped, jac) = warp(p_t2, flow)?;
    let fwd = kl_divergence(p_t1, &warped, KL_EPS)?;
    let mut value = fwd.value;
    let mut grad_t1 = fwd.grad_p;
    let mut grad_w = fwd.grad_q;
    if options.symmetric {
        let bwd = kl_divergence(&warped, p_t1, KL_EPS)?;
        value += bwd.value;
        grad_t1.iter_mut().zip(&bwd.grad_q).for_each(|(a, b)| *a += b);
        grad_w.iter_mut().zip(&bwd.grad_p).for_each(|(a, b)| *a += b);
    }
    let grad_t2 = if options.freeze_warped { vec![0.0; p_t2.len()] } else { jac.backward(&grad_w) };
    Ok(TemporalTerms { value, grad_t1, grad_t2 })
}

//! Visibility maps, the visibility-gated posterior, camera-adjacency
//! visibility loss, and ray-cast visibility labels.

use std::fmt::Write as _;

use crate::geometry::{Camera, Vec3};
use crate::grid::{Grid, GridError};
use crate::heatmap::{argmax_index, Heatmap};
use thiserror::Error;

/// Soft label for an occluded keypoint.
pub const OCCLUDED_LABEL: f64 = 0.02;
/// Soft label for a visible keypoint.
pub const VISIBLE_LABEL: f64 = 0.98;

#[derive(Debug, Error)]
pub enum VisibilityError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("invalid occluder: {0}")]
    InvalidOccluder(String),
    #[error("occluder file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Per-pixel, per-channel visibility probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap(Grid);

impl VisibilityMap {
    pub fn new(grid: Grid) -> Result<Self, GridError> {
        if let Some(index) = grid.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(GridError::Invariant { what: "visibility in [0, 1]", index, value: grid.data[index] });
        }
        Ok(Self(grid))
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(Grid::filled(width, height, channels, value)).expect("value in [0, 1]")
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.0.channel(c)
    }

    /// Spatial maximum of a channel.
    pub fn channel_max(&self, c: usize) -> f64 {
        self.channel(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of gating a heatmap with a visibility map.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub heatmap: Heatmap,
    /// Channels whose product vanished everywhere and fell back to `P`.
    pub fallback: Vec<bool>,
}

/// `ξ = P · V`, renormalized per channel.
pub fn posterior(p: &Heatmap, v: &VisibilityMap) -> Result<Posterior, GridError> {
    p.grid().check_same_shape(v.grid())?;
    let mut grid = p.grid().clone();
    let mut fallback = vec![false; grid.channels];
    for c in 0..grid.channels {
        let vis = v.channel(c);
        let plane = grid.channel_mut(c);
        plane.iter_mut().zip(vis).for_each(|(a, b)| *a *= b);
        let s: f64 = plane.iter().sum();
        if s > 0.0 {
            plane.iter_mut().for_each(|a| *a /= s);
        } else {
            plane.copy_from_slice(p.channel(c));
            fallback[c] = true;
        }
    }
    Ok(Posterior { heatmap: Heatmap::new(grid)?, fallback })
}

/// Unordered camera pairs `(i, j)`, `i < j`, whose centers are closer than `eps_c`.
pub fn adjacency(cameras: &[Camera], eps_c: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..cameras.len() {
        for j in (i + 1)..cameras.len() {
            if (cameras[i].center - cameras[j].center).norm() < eps_c {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityTerms {
    pub value: f64,
    /// One gradient plane per input view.
    pub grads: Vec<Vec<f64>>,
}

/// `Σ_(i,j) (max V_i − max V_j)²` over adjacent pairs. Each view's gradient
/// lands on its argmax cell.
pub fn visibility_loss(views: &[&[f64]], pairs: &[(usize, usize)]) -> VisibilityTerms {
    let mut grads: Vec<Vec<f64>> = views.iter().map(|v| vec![0.0; v.len()]).collect();
    let peaks: Vec<usize> = views.iter().map(|v| argmax_index(v)).collect();
    let mut value = 0.0;
    for &(i, j) in pairs {
        let diff = views[i][peaks[i]] - views[j][peaks[j]];
        value += diff * diff;
        grads[i][peaks[i]] += 2.0 * diff;
        grads[j][peaks[j]] -= 2.0 * diff;
    }
    VisibilityTerms { value, grads }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Occluder {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Occluder {
    pub fn validate(&self) -> Result<(), VisibilityError> {
        match *self {
            Occluder::Sphere { radius, .. } if !(radius > 0.0) => {
                Err(VisibilityError::InvalidOccluder(format!("sphere radius {radius} must be positive")))
            }
            Occluder::Box { min, max } if !(min.x < max.x && min.y < max.y && min.z < max.z) => {
                Err(VisibilityError::InvalidOccluder("box min must be below max on every axis".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Occluder::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
            Occluder::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
        }
    }

    /// Whether the open segment `(a, b)` meets the solid.
    pub fn hits_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        match *self {
            Occluder::Sphere { center, radius } => {
                let len2 = d.norm_squared();
                if len2 == 0.0 {
                    return false;
                }
                // the infimum over the open segment equals the minimum over the closed one
                let t = ((center - a).dot(&d) / len2).clamp(0.0, 1.0);
                (a + d * t - center).norm_squared() < radius * radius
            }
            Occluder::Box { min, max } => {
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                for k in 0..3 {
                    if d[k].abs() < 1e-300 {
                        if a[k] < min[k] || a[k] > max[k] {
                            return false;
                        }
                    } else {
                        let (mut lo, mut hi) = ((min[k] - a[k]) / d[k], (max[k] - a[k]) / d[k]);
                        if lo > hi {
                            std::mem::swap(&mut lo, &mut hi);
                        }
                        t0 = t0.max(lo);
                        t1 = t1.min(hi);
                    }
                }
                t0 < t1 && t1 > 0.0 && t0 < 1.0
            }
        }
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        match *self {
            Occluder::Sphere { center, radius } => (center - Vec3::repeat(radius), center + Vec3::repeat(radius)),
            Occluder::Box { min, max } => (min, max),
        }
    }
}

/// Solid primitives that block lines of sight.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccluderSet {
    pub occluders: Vec<Occluder>,
}

impl OccluderSet {
    pub fn new(occluders: Vec<Occluder>) -> Result<Self, VisibilityError> {
        occluders.iter().try_for_each(Occluder::validate)?;
        Ok(Self { occluders })
    }

    pub fn is_empty(&self) -> bool {
        self.occluders.is_empty()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.occluders.iter().any(|o| o.contains(p))
    }

    pub fn blocks_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        self.occluders.iter().any(|o| o.hits_segment(a, b))
    }

    /// Parses `sphere cx cy cz r` / `box minx miny minz maxx maxy maxz`
    /// records. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, VisibilityError> {
        let mut occluders = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| VisibilityError::Parse { line: n + 1, msg };
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            let occ = match (kind, nums.as_slice()) {
                ("sphere", [x, y, z, r]) => Occluder::Sphere { center: Vec3::new(*x, *y, *z), radius: *r },
                ("box", [a, b, c, d, e, f]) => Occluder::Box { min: Vec3::new(*a, *b, *c), max: Vec3::new(*d, *e, *f) },
                ("sphere", _) | ("box", _) => return Err(err(format!("wrong field count for {kind}"))),
                _ => return Err(err(format!("unknown record {kind:?}"))),
            };
            occ.validate().map_err(|e| err(e.to_string()))?;
            occluders.push(occ);
        }
        Ok(Self { occluders })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for o in &self.occluders {
            match o {
                Occluder::Sphere { center: c, radius } => {
                    writeln!(s, "sphere {} {} {} {}", c.x, c.y, c.z, radius).unwrap();
                }
                Occluder::Box { min, max } => {
                    writeln!(s, "box {} {} {} {} {} {}", min.x, min.y, min.z, max.x, max.y, max.z).unwrap();
                }
            }
        }
        s
    }
}

/// Occupancy of an [`OccluderSet`] sampled at voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub shape: [usize; 3],
    occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn from_occluders(set: &OccluderSet, voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        if set.is_empty() {
            return Self { origin: Vec3::zeros(), voxel_size, shape: [0; 3], occupied: Vec::new() };
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for o in &set.occluders {
            let (a, b) = o.bounds();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        let origin = lo - Vec3::repeat(voxel_size);
        let shape = [0, 1, 2].map(|k| (((hi[k] - origin[k]) / voxel_size).ceil() as usize) + 1);
        let mut occupied = vec![false; shape[0] * shape[1] * shape[2]];
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    let c = origin + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * voxel_size;
                    occupied[(z * shape[1] + y) * shape[0] + x] = set.contains(&c);
                }
            }
        }
        Self { origin, voxel_size, shape, occupied }
    }

    fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.voxel_size).floor() as i64)
    }

    fn in_grid(&self, c: [i64; 3]) -> bool {
        (0..3).all(|k| c[k] >= 0 && (c[k] as usize) < self.shape[k])
    }

    pub fn is_occupied(&self, c: [i64; 3]) -> bool {
        self.in_grid(c) && self.occupied[(c[2] as usize * self.shape[1] + c[1] as usize) * self.shape[0] + c[0] as usize]
    }

    /// 3-D DDA walk from `a` to `b`; true if any occupied voxel other than the
    /// one containing `b` is crossed.
    pub fn blocks_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        if self.occupied.is_empty() {
            return false;
        }
        let end = self.cell_of(b);
        let mut cell = self.cell_of(a);
        let d = b - a;
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if d[k] > 0.0 {
                step[k] = 1;
                let boundary = self.origin[k] + (cell[k] + 1) as f64 * self.voxel_size;
                t_max[k] = (boundary - a[k]) / d[k];
                t_delta[k] = self.voxel_size / d[k];
            } else if d[k] < 0.0 {
                step[k] = -1;
                let boundary = self.origin[k] + cell[k] as f64 * self.voxel_size;
                t_max[k] = (boundary - a[k]) / d[k];
                t_delta[k] = -self.voxel_size / d[k];
            }
        }
        loop {
            if cell == end {
                return false;
            }
            if self.is_occupied(cell) {
                return true;
            }
            let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[k] > 1.0 {
                return false;
            }
            cell[k] += step[k];
            t_max[k] += t_delta[k];
        }
    }
}

/// How lines of sight are tested.
#[derive(Debug, Clone, Copy)]
pub enum RaycastMode<'a> {
    Analytic(&'a OccluderSet),
    Voxel(&'a VoxelGrid),
}

/// 1 when the segment from the camera center to `point` is unobstructed, else 0.
pub fn raycast_visibility(point: &Vec3, camera: &Camera, mode: RaycastMode<'_>) -> Result<f64, VisibilityError> {
    if camera.depth(point) <= 0.0 {
        return Err(VisibilityError::BehindCamera);
    }
    let blocked = match mode {
        RaycastMode::Analytic(set) => set.blocks_segment(&camera.center, point),
        RaycastMode::Voxel(grid) => grid.blocks_segment(&camera.center, point),
    };
    Ok(if blocked { 0.0 } else { 1.0 })
}

/// Constant-per-channel visibility label grid for one view: keypoint channels
/// first, then one background channel fixed at [`VISIBLE_LABEL`].
pub fn render_visibility_label(
    keypoints: &[Vec3],
    camera: &Camera,
    occluders: &OccluderSet,
    width: usize,
    height: usize,
) -> VisibilityMap {
    let mut grid = Grid::zeros(width, height, keypoints.len() + 1);
    for (c, kp) in keypoints.iter().enumerate() {
        let label = match raycast_visibility(kp, camera, RaycastMode::Analytic(occluders)) {
            Ok(v) if v > 0.5 => VISIBLE_LABEL,
            _ => OCCLUDED_LABEL,
        };
        grid.channel_mut(c).fill(label);
    }
    grid.channel_mut(keypoints.len()).fill(VISIBLE_LABEL);
    VisibilityMap(grid)
}

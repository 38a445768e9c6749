//! Synthetic multiview scenes: a camera rig around a small articulated
//! "creature", smooth keypoint trajectories, a torso occluder, rendered
//! images, and ground-truth heatmaps, visibility, and flow.
//!
//! Cameras are calibrated on the prediction grid (`grid_size²`). Images are
//! rendered `image_scale` times finer through [`Camera::rescaled`].

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, Camera, Vec2, Vec3};
use crate::grid::{Dims, Grid};
use crate::heatmap::{gaussian_plane, Annotation, Heatmap, Keypoint, Provenance};
use crate::temporal::FlowField;
use crate::visibility::{raycast_visibility, render_visibility_label, Occluder, OccluderSet, RaycastMode, VisibilityMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rig {
    Ring,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub cameras: usize,
    pub frames: usize,
    /// Keypoints plus one background channel.
    pub channels: usize,
    pub rig: Rig,
    pub rig_radius: f64,
    pub camera_height: f64,
    pub height_jitter: f64,
    /// Focal length on the prediction grid.
    pub focal: f64,
    pub grid_size: usize,
    pub image_scale: usize,
    pub torso_radius: f64,
    /// Distance of each keypoint's rest position from the torso center.
    pub limb_length: f64,
    /// Per-axis amplitude bound of the torso drift.
    pub body_motion: f64,
    /// Per-axis amplitude bound of each keypoint's motion relative to the torso.
    pub limb_motion: f64,
    /// Largest heading swing of the body around the vertical axis (radians).
    pub heading_swing: f64,
    /// Blob width in image pixels.
    pub blob_sigma: f64,
    /// Left/right keypoint pairs share one color.
    pub symmetric_colors: bool,
    /// Static keypoint-colored blobs painted into each view's background.
    pub distractors: usize,
    pub pixel_noise: f64,
    /// Relative amplitude of a slow global brightness change over time.
    pub lighting_drift: f64,
    /// Amplitude (radians) of a marker hue rotation that varies over time.
    pub hue_drift: f64,
    /// Period of the hue rotation in frames.
    pub hue_period: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cameras: 8,
            frames: 50,
            channels: 6,
            rig: Rig::Ring,
            rig_radius: 6.0,
            camera_height: 1.5,
            height_jitter: 0.3,
            focal: 22.0,
            grid_size: 32,
            image_scale: 2,
            torso_radius: 0.6,
            limb_length: 1.2,
            body_motion: 0.4,
            limb_motion: 0.25,
            heading_swing: 1.2,
            blob_sigma: 1.6,
            symmetric_colors: false,
            distractors: 0,
            pixel_noise: 0.02,
            lighting_drift: 0.0,
            hue_drift: 1.0,
            hue_period: 16.0,
        }
    }
}

impl SynthConfig {
    pub fn keypoints(&self) -> usize {
        self.channels - 1
    }

    pub fn image_size(&self) -> usize {
        self.grid_size * self.image_scale
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        if self.cameras < 2 {
            return bad("at least two cameras are required");
        }
        if self.frames < 2 {
            return bad("at least two frames are required");
        }
        if self.channels < 2 {
            return bad("at least one keypoint channel plus background is required");
        }
        if self.grid_size < 8 || self.image_scale == 0 {
            return bad("grid_size must be at least 8 and image_scale positive");
        }
        let positive = [self.hue_period, self.rig_radius, self.focal, self.torso_radius, self.limb_length, self.blob_sigma];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("radii, focal length, limb length and blob width must be positive");
        }
        let non_negative = [self.body_motion, self.limb_motion, self.heading_swing, self.height_jitter, self.pixel_noise, self.lighting_drift, self.hue_drift];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("motion, jitter, noise and drift must be non-negative");
        }
        if self.limb_length - self.limb_motion * 3f64.sqrt() <= self.torso_radius {
            return bad("keypoints could enter the torso; increase limb_length or reduce limb_motion");
        }
        Ok(())
    }
}

/// Three seeded sinusoids per axis.
#[derive(Debug, Clone, PartialEq)]
struct Wave {
    terms: Vec<[(f64, f64, f64); 3]>,
}

impl Wave {
    fn new(rng: &mut ChaCha8Rng, amplitude: [f64; 3]) -> Self {
        let terms = (0..3)
            .map(|_| {
                let mut t = [(0.0, 0.0, 0.0); 3];
                for (axis, slot) in t.iter_mut().enumerate() {
                    *slot = (
                        rng.random_range(0.0..=amplitude[axis] / 3.0),
                        rng.random_range(0.04..0.22),
                        rng.random_range(0.0..TAU),
                    );
                }
                t
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> Vec3 {
        let mut v = Vec3::zeros();
        for term in &self.terms {
            for (axis, &(a, w, p)) in term.iter().enumerate() {
                v[axis] += a * (w * t + p).sin();
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SynthConfig,
    pub seed: u64,
    /// Cameras on the prediction grid.
    pub cameras: Vec<Camera>,
    /// `keypoints[t][k]`, world units.
    pub keypoints: Vec<Vec<Vec3>>,
    /// Occluders at each frame.
    pub occluders: Vec<OccluderSet>,
    /// RGB color of each keypoint.
    pub colors: Vec<[f64; 3]>,
    /// Per view: background tint and distractor blobs `(x, y, color)` in image pixels.
    backgrounds: Vec<([f64; 3], Vec<(f64, f64, [f64; 3])>)>,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.95, 0.95, 0.95],
    [0.95, 0.15, 0.15],
    [0.15, 0.85, 0.2],
    [0.2, 0.35, 1.0],
    [1.0, 0.85, 0.1],
    [0.9, 0.2, 0.9],
    [0.1, 0.9, 0.9],
    [1.0, 0.55, 0.1],
];
const TORSO_COLOR: [f64; 3] = [0.55, 0.5, 0.45];

// Rest direction of each keypoint in the body frame: a head in front, then
// left/right pairs from front to back.
fn rest_directions(keypoints: usize) -> Vec<Vec3> {
    let pairs = (keypoints.saturating_sub(1)).div_ceil(2);
    (0..keypoints)
        .map(|k| {
            if k == 0 {
                Vec3::new(0.35f64.cos(), 0.0, 0.35f64.sin())
            } else {
                let p = (k - 1) / 2;
                let side = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
                let azimuth = side * (p + 1) as f64 * PI / (pairs + 1) as f64;
                let elevation: f64 = -0.55;
                Vec3::new(azimuth.cos() * elevation.cos(), azimuth.sin() * elevation.cos(), elevation.sin())
            }
        })
        .collect()
}

fn color_of(keypoint: usize, symmetric: bool) -> [f64; 3] {
    let idx = if keypoint == 0 { 0 } else if symmetric { 1 + (keypoint - 1) / 2 } else { keypoint };
    PALETTE[idx % PALETTE.len()]
}

fn rig_cameras(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Camera>, SynthError> {
    let n = config.cameras;
    let size = config.grid_size;
    let centers: Vec<Vec3> = match config.rig {
        Rig::Ring => (0..n)
            .map(|k| {
                let a = k as f64 * TAU / n as f64;
                let z = config.camera_height + rng.random_range(-config.height_jitter..=config.height_jitter);
                Vec3::new(config.rig_radius * a.cos(), config.rig_radius * a.sin(), z)
            })
            .collect(),
        Rig::Sphere => {
            // golden-angle spiral over elevations 10°..60°
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let f = (k as f64 + 0.5) / n as f64;
                    let elevation = (10.0 + 50.0 * f).to_radians();
                    let a = k as f64 * golden;
                    let r = config.rig_radius;
                    let jitter = rng.random_range(-config.height_jitter..=config.height_jitter);
                    Vec3::new(r * elevation.cos() * a.cos(), r * elevation.cos() * a.sin(), r * elevation.sin() + jitter)
                })
                .collect()
        }
    };
    centers
        .into_iter()
        .map(|c| {
            Camera::look_at(config.focal, size, size, c, Vec3::zeros(), Vec3::z())
                .map_err(|e| SynthError::ConfigInvalid(format!("camera placement: {e}")))
        })
        .collect()
}

/// Deterministic scene for `(config, seed)`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Scene, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = rig_cameras(config, &mut rng)?;
    let k_count = config.keypoints();

    let body = Wave::new(&mut rng, [config.body_motion, config.body_motion, 0.5 * config.body_motion]);
    let heading0 = rng.random_range(0.0..TAU);
    let heading_rate = rng.random_range(0.03..0.09);
    let heading_phase = rng.random_range(0.0..TAU);
    let limbs: Vec<Wave> = (0..k_count).map(|_| Wave::new(&mut rng, [config.limb_motion; 3])).collect();
    let rest = rest_directions(k_count);

    let mut keypoints = Vec::with_capacity(config.frames);
    let mut occluders = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let tf = t as f64;
        let center = body.at(tf);
        let heading = heading0 + config.heading_swing * (heading_rate * tf + heading_phase).sin();
        let (s, c) = heading.sin_cos();
        let rotate = |v: Vec3| Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
        keypoints.push((0..k_count).map(|k| center + rotate(rest[k] * config.limb_length + limbs[k].at(tf))).collect());
        occluders.push(
            OccluderSet::new(vec![Occluder::Sphere { center, radius: config.torso_radius }])
                .map_err(|e| SynthError::ConfigInvalid(e.to_string()))?,
        );
    }

    let image_size = config.image_size() as f64;
    let backgrounds = (0..config.cameras)
        .map(|_| {
            let tint = [rng.random_range(0.25..0.4), rng.random_range(0.25..0.4), rng.random_range(0.25..0.4)];
            let blobs = (0..config.distractors)
                .map(|_| {
                    let color = color_of(rng.random_range(0..k_count), config.symmetric_colors);
                    (rng.random_range(2.0..image_size - 3.0), rng.random_range(2.0..image_size - 3.0), color)
                })
                .collect();
            (tint, blobs)
        })
        .collect();

    let scene = Scene {
        config: config.clone(),
        seed,
        cameras,
        keypoints,
        occluders,
        colors: (0..k_count).map(|k| color_of(k, config.symmetric_colors)).collect(),
        backgrounds,
    };
    scene.check_invariants()?;
    Ok(scene)
}

impl Scene {
    pub fn dims(&self) -> Dims {
        Dims::new(self.config.grid_size, self.config.grid_size)
    }

    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn frame_count(&self) -> usize {
        self.keypoints.len()
    }

    /// Camera `view` at image resolution.
    pub fn image_camera(&self, view: usize) -> Camera {
        let s = self.config.image_size();
        self.cameras[view].rescaled(self.config.image_scale as f64, s, s)
    }

    /// Twice the rig radius.
    pub fn diameter(&self) -> f64 {
        2.0 * self.config.rig_radius
    }

    /// Every keypoint projects at least one cell inside every grid, stays
    /// clear of the torso, and moves less than a fifth of the scene diameter
    /// per frame.
    pub fn check_invariants(&self) -> Result<(), SynthError> {
        let size = self.config.grid_size as f64;
        for (t, points) in self.keypoints.iter().enumerate() {
            for (k, p) in points.iter().enumerate() {
                if self.occluders[t].contains(p) {
                    return Err(SynthError::ConfigInvalid(format!("keypoint {k} inside an occluder at frame {t}")));
                }
                for (v, cam) in self.cameras.iter().enumerate() {
                    let x = project(cam, p).map_err(|e| SynthError::ConfigInvalid(format!("view {v} frame {t}: {e}")))?;
                    if !(x.x >= 1.0 && x.y >= 1.0 && x.x <= size - 2.0 && x.y <= size - 2.0) {
                        return Err(SynthError::ConfigInvalid(format!(
                            "keypoint {k} leaves view {v} at frame {t} ({:.2}, {:.2})",
                            x.x, x.y
                        )));
                    }
                }
                if t > 0 && (p - self.keypoints[t - 1][k]).norm() > 0.2 * self.diameter() {
                    return Err(SynthError::ConfigInvalid(format!("keypoint {k} jumps between frames {} and {t}", t - 1)));
                }
            }
        }
        Ok(())
    }

    /// Grid-unit projection of keypoint `k` in `view` at frame `t`.
    pub fn projection(&self, view: usize, t: usize, k: usize) -> Vec2 {
        project(&self.cameras[view], &self.keypoints[t][k]).expect("scene invariants keep keypoints in front")
    }

    pub fn is_visible(&self, view: usize, t: usize, k: usize) -> bool {
        matches!(
            raycast_visibility(&self.keypoints[t][k], &self.cameras[view], RaycastMode::Analytic(&self.occluders[t])),
            Ok(v) if v > 0.5
        )
    }
}

/// Marker hue rotation at frame `t`.
pub fn hue_angle(config: &SynthConfig, t: usize) -> f64 {
    config.hue_drift * (TAU * t as f64 / config.hue_period).sin()
}

// Rotation about the gray axis.
fn rotate_hue(color: &[f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let v = Vec3::new(color[0], color[1], color[2]);
    let axis = Vec3::new(k, k, k);
    let r = v * c + axis.cross(&v) * s + axis * axis.dot(&v) * (1.0 - c);
    [r.x.clamp(0.0, 1.0), r.y.clamp(0.0, 1.0), r.z.clamp(0.0, 1.0)]
}

fn blend(image: &mut Grid, x: usize, y: usize, color: &[f64; 3], alpha: f64) {
    for (c, &col) in color.iter().enumerate() {
        let v = image.get(x, y, c);
        image.set(x, y, c, v + alpha * (col - v));
    }
}

/// `S×S×3` image in `[0, 1]` with items painted far to near.
pub fn render(scene: &Scene, view: usize, t: usize) -> Grid {
    let cfg = &scene.config;
    let size = cfg.image_size();
    let cam = scene.image_camera(view);
    let (tint, distractors) = &scene.backgrounds[view];
    let mut image = Grid::zeros(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let shade = 0.85 + 0.3 * (y as f64 / size as f64);
            for c in 0..3 {
                image.set(x, y, c, tint[c] * shade);
            }
        }
    }

    let sigma = cfg.blob_sigma;
    let paint_blob = |image: &mut Grid, cx: f64, cy: f64, color: &[f64; 3]| {
        let reach = (3.0 * sigma).ceil() as i64;
        for y in (cy.round() as i64 - reach).max(0)..=(cy.round() as i64 + reach).min(size as i64 - 1) {
            for x in (cx.round() as i64 - reach).max(0)..=(cx.round() as i64 + reach).min(size as i64 - 1) {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                blend(image, x as usize, y as usize, color, (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    };
    for (x, y, color) in distractors {
        paint_blob(&mut image, *x, *y, color);
    }

    // per pixel: nearest occluder surface along the pixel ray, as camera depth
    let surfaces: Vec<Option<f64>> = (0..size * size)
        .map(|idx| {
            let dir = cam.ray_direction(&Vec2::new((idx % size) as f64, (idx / size) as f64));
            scene.occluders[t]
                .occluders
                .iter()
                .filter_map(|o| first_hit(o, &cam.center, &dir))
                .map(|lambda| cam.depth(&(cam.center + dir * lambda)))
                .min_by(f64::total_cmp)
        })
        .collect();
    let hue = hue_angle(cfg, t);
    let mut blobs: Vec<(f64, Vec2, [f64; 3])> = (0..scene.colors.len())
        .filter(|&k| scene.is_visible(view, t, k))
        .map(|k| {
            let p = &scene.keypoints[t][k];
            (cam.depth(p), project(&cam, p).expect("in front"), rotate_hue(&scene.colors[k], hue))
        })
        .collect();
    blobs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for idx in 0..size * size {
        let (x, y) = (idx % size, idx / size);
        let mut torso_drawn = false;
        for (depth, p, color) in &blobs {
            if let Some(d) = surfaces[idx] {
                if !torso_drawn && d > *depth {
                    blend(&mut image, x, y, &TORSO_COLOR, 1.0);
                    torso_drawn = true;
                }
            }
            let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
            if d2 <= (3.0 * sigma).powi(2) {
                blend(&mut image, x, y, color, (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        if surfaces[idx].is_some() && !torso_drawn {
            blend(&mut image, x, y, &TORSO_COLOR, 1.0);
        }
    }

    let gain = 1.0 + cfg.lighting_drift * (TAU * t as f64 / cfg.frames as f64 + view as f64).sin();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ ((view as u64) << 32) ^ (t as u64).wrapping_mul(0x9E37_79B9));
    let noise = Normal::new(0.0, cfg.pixel_noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    for v in &mut image.data {
        let n = if cfg.pixel_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        *v = (*v * gain + n).clamp(0.0, 1.0);
    }
    image
}

// Ray parameter of the first surface crossing in front of `origin`.
fn first_hit(occluder: &Occluder, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    match occluder {
        Occluder::Sphere { center, radius } => {
            let oc = origin - center;
            let a = dir.norm_squared();
            let b = oc.dot(dir);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let near = (-b - disc.sqrt()) / a;
            let far = (-b + disc.sqrt()) / a;
            [near, far].into_iter().find(|&l| l > 0.0)
        }
        Occluder::Box { min, max } => {
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            for axis in 0..3 {
                if dir[axis].abs() < 1e-15 {
                    if origin[axis] < min[axis] || origin[axis] > max[axis] {
                        return None;
                    }
                    continue;
                }
                let t0 = (min[axis] - origin[axis]) / dir[axis];
                let t1 = (max[axis] - origin[axis]) / dir[axis];
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
            (lo <= hi).then_some(lo)
        }
    }
}

/// Ground-truth heatmap, visibility labels, and annotation for one image.
///
/// Keypoint channels are Gaussians of width `sigma` at the projections. The
/// background channel is the normalized complement of the keypoint peaks.
pub fn ground_truth(scene: &Scene, view: usize, t: usize, sigma: f64) -> (Heatmap, VisibilityMap, Annotation) {
    let dims = scene.dims();
    let k_count = scene.config.keypoints();
    let mut planes: Vec<Vec<f64>> = (0..k_count).map(|k| gaussian_plane(scene.projection(view, t, k), sigma, dims)).collect();
    let mut background = vec![1.0; dims.len()];
    for plane in &planes {
        let peak = plane.iter().cloned().fold(0.0, f64::max);
        for (b, v) in background.iter_mut().zip(plane) {
            *b = f64::min(*b, 1.0 - v / peak);
        }
    }
    let s: f64 = background.iter().sum();
    background.iter_mut().for_each(|v| *v /= s);
    planes.push(background);
    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    let heatmap = Heatmap::from_channels(dims, &refs).expect("normalized planes");

    let visibility = render_visibility_label(&scene.keypoints[t], &scene.cameras[view], &scene.occluders[t], dims.width, dims.height);
    let mut annotation = Annotation::empty(dims, scene.config.channels);
    for k in 0..k_count {
        annotation.keypoints[k] =
            Some(Keypoint { position: scene.projection(view, t, k), visible: scene.is_visible(view, t, k), provenance: Provenance::Human });
    }
    (heatmap, visibility, annotation)
}

/// Backward flow `t2 → t1` on the prediction grid of `view`.
///
/// At the nearest cell of each keypoint's `t1` projection the flow is the
/// exact integer offset to the nearest cell of its `t2` projection.
/// Elsewhere the keypoint offsets are blended with inverse squared distance
/// weights. Optional Gaussian noise of width `noise` is added off the anchor
/// cells.
pub fn ground_truth_flow(scene: &Scene, view: usize, t1: usize, t2: usize, noise: f64, seed: u64) -> FlowField {
    let dims = scene.dims();
    let mut flow = FlowField::zeros(dims);
    if t1 == t2 {
        return flow;
    }
    let round = |p: Vec2| (p.x.round(), p.y.round());
    let mut anchors: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for k in 0..scene.config.keypoints() {
        let a = round(scene.projection(view, t1, k));
        let b = round(scene.projection(view, t2, k));
        if !anchors.iter().any(|(p, _)| *p == a) {
            anchors.push((a, (b.0 - a.0, b.1 - a.1)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    for idx in 0..dims.len() {
        let (x, y) = dims.coords(idx);
        let (x, y) = (x as f64, y as f64);
        let (mut u, mut v) = (0.0, 0.0);
        if let Some((_, d)) = anchors.iter().find(|(p, _)| *p == (x, y)) {
            flow.set(idx, d.0, d.1);
            continue;
        }
        let mut wsum = 0.0;
        for ((px, py), (du, dv)) in &anchors {
            let w = 1.0 / ((x - px).powi(2) + (y - py).powi(2));
            wsum += w;
            u += w * du;
            v += w * dv;
        }
        let (mut u, mut v) = (u / wsum, v / wsum);
        if noise > 0.0 {
            u += normal.sample(&mut rng);
            v += normal.sample(&mut rng);
        }
        flow.set(idx, u, v);
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{argmax_index, argmax_peak};
    use crate::temporal::warp;

    fn scene() -> Scene {
        generate(&SynthConfig::default(), 7).unwrap()
    }

    #[test]
    fn default_scene_is_valid_and_deterministic() {
        let a = scene();
        assert_eq!(a.view_count(), 8);
        assert_eq!(a.frame_count(), 50);
        assert_eq!(a.keypoints[0].len(), 5);
        assert_eq!(a, scene());
        assert_ne!(a, generate(&SynthConfig::default(), 8).unwrap());
        for seed in 0..20 {
            generate(&SynthConfig::default(), seed).unwrap();
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SynthConfig { cameras: 1, ..SynthConfig::default() },
            SynthConfig { frames: 1, ..SynthConfig::default() },
            SynthConfig { channels: 1, ..SynthConfig::default() },
            SynthConfig { limb_length: 0.5, ..SynthConfig::default() },
            SynthConfig { focal: 200.0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg, 1), Err(SynthError::ConfigInvalid(_))), "{cfg:?}");
        }
    }

    #[test]
    fn sphere_rig_generates() {
        let s = generate(&SynthConfig { rig: Rig::Sphere, ..SynthConfig::default() }, 3).unwrap();
        assert!(s.cameras.iter().all(|c| c.center.z > 0.0));
    }

    #[test]
    fn ground_truth_peaks_at_projections() {
        let s = scene();
        for (v, t) in [(0, 0), (3, 17), (7, 49)] {
            let (h, vis, ann) = ground_truth(&s, v, t, 1.0);
            ann.validate().unwrap();
            for k in 0..5 {
                let p = s.projection(v, t, k);
                assert_eq!(argmax_peak(&h, k), Vec2::new(p.x.round(), p.y.round()));
                assert_eq!(vis.channel_max(k) > 0.5, s.is_visible(v, t, k));
            }
            assert!(ann.keypoints[5].is_none());
            assert!((h.channel(5).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blobs_appear_only_when_visible() {
        let s = generate(&SynthConfig { pixel_noise: 0.0, ..SynthConfig::default() }, 7).unwrap();
        let (mut visible, mut occluded) = (0, 0);
        for t in (0..50).step_by(3) {
            for v in 0..8 {
                let img = render(&s, v, t);
                assert!(img.data.iter().all(|x| (0.0..=1.0).contains(x)));
                let cam = s.image_camera(v);
                let pts: Vec<Vec2> = (0..5).map(|k| project(&cam, &s.keypoints[t][k]).unwrap()).collect();
                let hue = hue_angle(&s.config, t);
                for k in 0..5 {
                    let isolated = (0..5).all(|j| {
                        j == k || (pts[j] - pts[k]).norm() > 3.0 * s.config.blob_sigma || !(s.is_visible(v, t, j) || s.is_visible(v, t, k))
                    });
                    let Occluder::Sphere { center, radius } = s.occluders[t].occluders[0] else { unreachable!() };
                    let rim = cam.intrinsics[(0, 0)] * radius / cam.depth(&center);
                    let grazing = ((project(&cam, &center).unwrap() - pts[k]).norm() - rim).abs() < 0.75;
                    if !isolated || grazing {
                        continue;
                    }
                    let (x, y) = (pts[k].x.round() as usize, pts[k].y.round() as usize);
                    let dist = (0..3).map(|c| (img.get(x, y, c) - rotate_hue(&s.colors[k], hue)[c]).powi(2)).sum::<f64>().sqrt();
                    if s.is_visible(v, t, k) {
                        visible += 1;
                        assert!(dist < 0.25, "view {v} frame {t} keypoint {k}: {dist}");
                    } else {
                        occluded += 1;
                        assert!(dist > 0.3, "view {v} frame {t} keypoint {k}: {dist}");
                    }
                }
            }
        }
        assert!(visible > 100 && occluded > 5, "{visible} visible, {occluded} occluded");
        assert_eq!(render(&s, 2, 3), render(&s, 2, 3));
    }

    #[test]
    fn hue_rotation_keeps_gray_and_brightness() {
        let gray = [0.4, 0.4, 0.4];
        let g = rotate_hue(&gray, 1.3);
        assert!(g.iter().all(|v| (v - 0.4).abs() < 1e-12));
        let red = [0.8, 0.2, 0.2];
        let r = rotate_hue(&red, 0.7);
        assert!((r.iter().sum::<f64>() - 1.2).abs() < 1e-9);
        assert_ne!(r, red);
        let still = SynthConfig { hue_drift: 0.0, ..SynthConfig::default() };
        assert_eq!(hue_angle(&still, 5), 0.0);
    }

    #[test]
    fn flow_carries_keypoints_exactly() {
        let s = scene();
        for (v, t1, t2) in [(0, 10, 13), (5, 30, 26), (2, 0, 1)] {
            let flow = ground_truth_flow(&s, v, t1, t2, 0.0, 0);
            let (h1, _, _) = ground_truth(&s, v, t1, 1.0);
            let (h2, _, _) = ground_truth(&s, v, t2, 1.0);
            for k in 0..5 {
                let p1 = s.projection(v, t1, k);
                let cell = s.dims().index(p1.x.round() as usize, p1.y.round() as usize);
                let (u, w) = flow.at(cell);
                assert_eq!(u.fract(), 0.0);
                assert_eq!(w.fract(), 0.0);
                let (warped, _) = warp(h2.channel(k), &flow).unwrap();
                // distinct keypoints may share a cell; the first anchor wins
                let first = (0..5).find(|&j| {
                    let q = s.projection(v, t1, j);
                    (q.x.round(), q.y.round()) == (p1.x.round(), p1.y.round())
                });
                if first == Some(k) {
                    assert_eq!(argmax_index(&warped), argmax_index(h1.channel(k)), "view {v} {t1}->{t2} kp {k}");
                }
            }
        }
        let zero = ground_truth_flow(&s, 1, 4, 4, 0.3, 1);
        assert!(zero.grid().data.iter().all(|&x| x == 0.0));
        assert_eq!(ground_truth_flow(&s, 1, 4, 6, 0.0, 1), ground_truth_flow(&s, 1, 4, 6, 0.0, 2));
    }
}

//! Pinhole cameras, fundamental matrices, the epipolar-plane pencil, and
//! linear / RANSAC triangulation.
//!
//! Pixel coordinates follow the grid convention used throughout the crate:
//! origin at the top-left cell, `x` is the column and `y` the row, with cell
//! centers at integer coordinates.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has camera depth {0:e}, at or behind the optical center")]
    DegenerateDepth(f64),
    #[error("camera centers coincide; fundamental matrix undefined")]
    CoincidentCenters,
    #[error("epipolar line vanishes (input pixel is the epipole)")]
    DegenerateLine,
    #[error("plane projects to an undefined image line")]
    PlaneThroughPrincipalAxis,
    #[error("pixel coincides with the epipole")]
    EpipolePixel,
    #[error("need at least 2 views to triangulate, got {0}")]
    InsufficientViews(usize),
    #[error("triangulation design matrix is rank deficient")]
    DegenerateConfiguration,
    #[error("RANSAC consensus too small ({0} inliers)")]
    NoConsensus(usize),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Calibrated pinhole camera. Projection is `K [R | -R C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub center: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Builds a camera and checks the rotation / intrinsics invariants.
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        center: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation not orthonormal (deviation {ortho:e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(GeometryError::InvalidCamera("rotation has determinant -1".into()));
        }
        if (intrinsics[(2, 2)] - 1.0).abs() > 1e-12
            || intrinsics[(1, 0)] != 0.0
            || intrinsics[(2, 0)] != 0.0
            || intrinsics[(2, 1)] != 0.0
        {
            return Err(GeometryError::InvalidCamera(
                "intrinsics must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive".into()));
        }
        Ok(Self { intrinsics, rotation, center, width, height })
    }

    /// Camera at `center` looking at `target`, with image `y` pointing along
    /// world `-up` as far as possible.
    pub fn look_at(
        focal: f64,
        width: usize,
        height: usize,
        center: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Result<Self, GeometryError> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera("target equals center".into()))?;
        let right = forward
            .cross(&(-up))
            .try_normalize(1e-9)
            .ok_or_else(|| GeometryError::InvalidCamera("up parallel to viewing direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let intrinsics = Matrix3::new(
            focal,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            focal,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(intrinsics, rotation, center, width, height)
    }

    /// The same camera sampled on a grid `factor` times finer (or coarser).
    /// Cell centers stay at integer coordinates in both grids.
    pub fn rescaled(&self, factor: f64, width: usize, height: usize) -> Self {
        let mut k = self.intrinsics;
        k[(0, 0)] *= factor;
        k[(0, 1)] *= factor;
        k[(1, 1)] *= factor;
        k[(0, 2)] = (k[(0, 2)] + 0.5) * factor - 0.5;
        k[(1, 2)] = (k[(1, 2)] + 0.5) * factor - 0.5;
        Self { intrinsics: k, rotation: self.rotation, center: self.center, width, height }
    }

    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let t = -(self.rotation * self.center);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &t);
        self.intrinsics * rt
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, point: &Vec3) -> f64 {
        (self.rotation * (point - self.center)).z
    }

    pub fn contains_pixel(&self, x: &Vec2) -> bool {
        x.x >= -0.5 && x.y >= -0.5 && x.x < self.width as f64 - 0.5 && x.y < self.height as f64 - 0.5
    }

    fn inverse_intrinsics(&self) -> Matrix3<f64> {
        // upper triangular with positive diagonal: always invertible
        self.intrinsics.try_inverse().expect("intrinsics invertible")
    }

    /// World-frame direction (not normalized) of the ray through pixel `x`.
    pub fn ray_direction(&self, x: &Vec2) -> Vec3 {
        self.rotation.transpose() * (self.inverse_intrinsics() * Vec3::new(x.x, x.y, 1.0))
    }
}

/// Projects a world point to pixel coordinates.
pub fn project(camera: &Camera, point: &Vec3) -> Result<Vec2, GeometryError> {
    let cam = camera.rotation * (point - camera.center);
    if cam.z <= MIN_DEPTH {
        return Err(GeometryError::DegenerateDepth(cam.z));
    }
    let h = camera.intrinsics * cam;
    Ok(Vec2::new(h.x / h.z, h.y / h.z))
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    /// Scaled so that the largest absolute entry is 1.
    pub matrix: Matrix3<f64>,
    pub view_pair: (usize, usize),
}

impl FundamentalMatrix {
    /// Algebraic residual `x_j^T F x_i`.
    pub fn residual(&self, x_i: &Vec2, x_j: &Vec2) -> f64 {
        Vec3::new(x_j.x, x_j.y, 1.0).dot(&(self.matrix * Vec3::new(x_i.x, x_i.y, 1.0)))
    }
}

/// Fundamental matrix mapping pixels of `cam_i` to epipolar lines in `cam_j`,
/// so that `x_j^T F x_i = 0` for corresponding pixels.
pub fn fundamental_from_cameras(
    cam_i: &Camera,
    cam_j: &Camera,
    view_pair: (usize, usize),
) -> Result<FundamentalMatrix, GeometryError> {
    if (cam_i.center - cam_j.center).norm() <= 1e-9 {
        return Err(GeometryError::CoincidentCenters);
    }
    let r_rel = cam_j.rotation * cam_i.rotation.transpose();
    let t = cam_j.rotation * (cam_i.center - cam_j.center);
    let essential = skew(&t) * r_rel;
    let f = cam_j.inverse_intrinsics().transpose() * essential * cam_i.inverse_intrinsics();
    let scale = f.abs().max();
    Ok(FundamentalMatrix { matrix: f / scale, view_pair })
}

/// Epipolar line `F x` in the second view, scaled so `(l1, l2)` has unit norm.
pub fn epipolar_line(f: &FundamentalMatrix, x: &Vec2) -> Result<Vec3, GeometryError> {
    let xh = Vec3::new(x.x, x.y, 1.0);
    let l = f.matrix * xh;
    let n = l.xy().norm();
    if n <= 1e-12 * xh.norm() {
        return Err(GeometryError::DegenerateLine);
    }
    Ok(l / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn point_at(&self, lambda: f64) -> Vec3 {
        self.origin + self.direction * lambda
    }
}

pub fn inverse_ray(camera: &Camera, x: &Vec2) -> Ray {
    Ray { origin: camera.center, direction: camera.ray_direction(x).normalize() }
}

/// Which camera of a pencil a pixel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    I,
    J,
}

/// One-parameter family of planes containing both camera centers, indexed by
/// the rotation angle `theta ∈ [0, π)` about the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPencil {
    pub cam_i: Camera,
    pub cam_j: Camera,
    /// Unit vector from `C_i` to `C_j`.
    pub baseline: Vec3,
    /// `±baseline`, sign fixed so the pencil of `(j, i)` shares this pair's θ axis.
    pub axis: Vec3,
    pub reference_normal: Vec3,
    pub bin_count: usize,
}

impl EpipolarPencil {
    /// Pencil with `bin_count` θ bins. `None` selects `max(W, H)` of view `i`.
    pub fn new(cam_i: Camera, cam_j: Camera, bin_count: Option<usize>) -> Result<Self, GeometryError> {
        let baseline = (cam_j.center - cam_i.center)
            .try_normalize(1e-9)
            .ok_or(GeometryError::CoincidentCenters)?;
        let axis = canonical_sign(baseline);
        let up = Vec3::z();
        let helper = if axis.dot(&up).abs() > 1.0 - 1e-6 { Vec3::x() } else { up };
        let reference_normal = axis.cross(&helper).normalize();
        let bin_count = bin_count.unwrap_or_else(|| cam_i.width.max(cam_i.height)).max(1);
        Ok(Self { cam_i, cam_j, baseline, axis, reference_normal, bin_count })
    }

    pub fn camera(&self, view: View) -> &Camera {
        match view {
            View::I => &self.cam_i,
            View::J => &self.cam_j,
        }
    }

    pub fn bin_width(&self) -> f64 {
        std::f64::consts::PI / self.bin_count as f64
    }

    /// Bin index of an angle in `[0, π)`.
    pub fn bin_of_theta(&self, theta: f64) -> usize {
        ((theta / self.bin_width()).floor() as usize).min(self.bin_count - 1)
    }

    /// Center angle of bin `b`.
    pub fn theta_of_bin(&self, b: usize) -> f64 {
        (b as f64 + 0.5) * self.bin_width()
    }

    /// Unit normal of the plane at angle `theta`.
    pub fn normal(&self, theta: f64) -> Vec3 {
        let m = self.axis.cross(&self.reference_normal);
        self.reference_normal * theta.cos() + m * theta.sin()
    }

    /// Angle in `[0, π)` of the pencil plane containing world direction `dir`
    /// (taken from any point on the baseline line).
    pub fn theta_of_direction(&self, dir: &Vec3) -> Result<f64, GeometryError> {
        let n = self.axis.cross(dir);
        let len = n.norm();
        if len <= 1e-12 * dir.norm() {
            return Err(GeometryError::EpipolePixel);
        }
        let n = n / len;
        let m = self.axis.cross(&self.reference_normal);
        let theta = n.dot(&m).atan2(n.dot(&self.reference_normal));
        Ok(wrap_half_turn(theta))
    }
}

// First non-negligible component positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    let lead = v.iter().copied().find(|c| c.abs() > 1e-9).unwrap_or(1.0);
    if lead < 0.0 {
        -v
    } else {
        v
    }
}

pub(crate) fn wrap_half_turn(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut t = theta.rem_euclid(pi);
    if t >= pi {
        t = 0.0;
    }
    t
}

/// Homogeneous plane `(n, -n·C_i)` of the pencil at angle `theta`.
pub fn plane_of_theta(pencil: &EpipolarPencil, theta: f64) -> Vector4<f64> {
    let n = pencil.normal(theta);
    Vector4::new(n.x, n.y, n.z, -n.dot(&pencil.cam_i.center))
}

/// Image line of a plane passing through the camera center.
pub fn line_of_plane(camera: &Camera, plane: &Vector4<f64>) -> Result<Vec3, GeometryError> {
    let n = plane.xyz();
    let l = camera.inverse_intrinsics().transpose() * (camera.rotation * n);
    let len = l.xy().norm();
    if len <= 1e-12 * l.norm().max(f64::MIN_POSITIVE) {
        return Err(GeometryError::PlaneThroughPrincipalAxis);
    }
    Ok(l / len)
}

pub fn theta_of_pixel(pencil: &EpipolarPencil, view: View, x: &Vec2) -> Result<f64, GeometryError> {
    pencil.theta_of_direction(&pencil.camera(view).ray_direction(x))
}

// Hartley conditioning: centroid to origin, mean distance √2.
fn normalizing_transform(points: &[Vec2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

/// One camera observation of a point.
pub type Observation<'a> = (&'a Camera, Vec2);

/// Linear least-squares (DLT) triangulation.
pub fn triangulate_dlt(observations: &[Observation<'_>]) -> Result<Vec3, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientViews(observations.len()));
    }
    let pixels: Vec<Vec2> = observations.iter().map(|(_, x)| *x).collect();
    let t = normalizing_transform(&pixels);
    let rows = 2 * observations.len();
    let mut a = DMatrix::<f64>::zeros(rows.max(4), 4);
    for (k, (cam, x)) in observations.iter().enumerate() {
        let p = t * cam.projection_matrix();
        let xn = t * Vec3::new(x.x, x.y, 1.0);
        let r0 = p.row(2) * xn.x - p.row(0);
        let r1 = p.row(2) * xn.y - p.row(1);
        for c in 0..4 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    if sv[order[2]] <= 1e-12 * sv[order[0]] {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = v_t.row(order[3]);
    if h[3].abs() <= 1e-14 * h.norm() {
        return Err(GeometryError::DegenerateConfiguration);
    }
    Ok(Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Reprojection error in pixels; infinite when the point is behind the camera.
pub fn reprojection_error(camera: &Camera, point: &Vec3, x: &Vec2) -> f64 {
    match project(camera, point) {
        Ok(p) => (p - x).norm(),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub point: Vec3,
    pub inliers: Vec<bool>,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// RANSAC over two-view minimal samples, followed by a DLT refit on the
/// largest consensus set. When all view pairs fit in the iteration budget they
/// are enumerated exhaustively instead of sampled.
pub fn triangulate_ransac(
    observations: &[Observation<'_>],
    inlier_threshold_px: f64,
    iterations: usize,
    seed: u64,
) -> Result<RansacResult, GeometryError> {
    let n = observations.len();
    if n < 2 {
        return Err(GeometryError::InsufficientViews(n));
    }
    assert!(inlier_threshold_px > 0.0, "inlier threshold must be positive");

    let score = |point: &Vec3| -> (Vec<bool>, usize, f64) {
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut err_sum = 0.0;
        for (k, (cam, x)) in observations.iter().enumerate() {
            let e = reprojection_error(cam, point, x);
            if e <= inlier_threshold_px {
                mask[k] = true;
                count += 1;
                err_sum += e;
            }
        }
        (mask, count, err_sum)
    };

    let pair_count = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if pair_count <= iterations {
        (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..iterations)
            .map(|_| {
                let s = sample(&mut rng, n, 2);
                (s.index(0), s.index(1))
            })
            .collect()
    };

    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    for (a, b) in pairs {
        let Ok(candidate) = triangulate_dlt(&[observations[a], observations[b]]) else {
            continue;
        };
        let (mask, count, err) = score(&candidate);
        let better = match &best {
            None => true,
            Some((_, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((mask, count, err));
        }
    }
    let (mask, count, _) = best.ok_or(GeometryError::NoConsensus(0))?;
    if count < 2 {
        return Err(GeometryError::NoConsensus(count));
    }
    let consensus: Vec<Observation<'_>> =
        observations.iter().zip(&mask).filter(|(_, &m)| m).map(|(o, _)| *o).collect();
    let point = triangulate_dlt(&consensus)?;
    let (inliers, refit_count, _) = score(&point);
    if refit_count < 2 {
        return Err(GeometryError::NoConsensus(refit_count));
    }
    Ok(RansacResult { point, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn canonical() -> Camera {
        Camera::new(Matrix3::identity(), Matrix3::identity(), Vec3::zeros(), 64, 64).unwrap()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(3.0..8.0);
        let center = Vec3::new(radius * angle.cos(), radius * angle.sin(), rng.random_range(-1.0..2.0));
        let target = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0);
        Camera::look_at(rng.random_range(20.0..60.0), 32, 32, center, target, Vec3::z()).unwrap()
    }

    #[test]
    fn canonical_projection() {
        let cam = canonical();
        assert_eq!(project(&cam, &Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec2::new(0.0, 0.0));
        assert_eq!(project(&cam, &Vec3::new(2.0, 4.0, 2.0)).unwrap(), Vec2::new(1.0, 2.0));
        assert!(matches!(
            project(&cam, &Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::DegenerateDepth(_))
        ));
    }

    #[test]
    fn fundamental_pure_translation_and_transpose() {
        let a = canonical();
        let mut b = canonical();
        b.center = Vec3::new(1.0, 0.0, 0.0);
        let f = fundamental_from_cameras(&a, &b, (0, 1)).unwrap();
        // horizontal stereo: epipolar lines are rows
        let l = epipolar_line(&f, &Vec2::new(0.3, 0.7)).unwrap();
        assert!(l.x.abs() < 1e-12);
        assert!((l.z / l.y + 0.7).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c1 = random_camera(&mut rng);
        let c2 = random_camera(&mut rng);
        let f12 = fundamental_from_cameras(&c1, &c2, (0, 1)).unwrap().matrix;
        let f21 = fundamental_from_cameras(&c2, &c1, (1, 0)).unwrap().matrix;
        let ft = f21.transpose();
        assert!((ft - f12).abs().max() < 1e-9 || (ft + f12).abs().max() < 1e-9);
        assert_eq!(
            fundamental_from_cameras(&c1, &c1, (0, 0)).unwrap_err(),
            GeometryError::CoincidentCenters
        );
    }

    #[test]
    fn fundamental_is_rank_two_with_epipole_in_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ci = random_camera(&mut rng);
            let cj = random_camera(&mut rng);
            let f = fundamental_from_cameras(&ci, &cj, (0, 1)).unwrap();
            let sv = f.matrix.svd(false, false).singular_values;
            let (max, min) = (sv.max(), sv.min());
            assert!(min < 1e-8 * max);
            if let Ok(ej) = project(&cj, &ci.center) {
                let e = Vec3::new(ej.x, ej.y, 1.0);
                let left = e.transpose() * f.matrix;
                assert!(left.norm() < 1e-8 * e.norm());
            }
        }
    }

    #[test]
    fn epipolar_line_contains_correspondence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ci = random_camera(&mut rng);
        let cj = random_camera(&mut rng);
        let f = fundamental_from_cameras(&ci, &cj, (0, 1)).unwrap();
        for _ in 0..100 {
            let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (xi, xj) = (project(&ci, &x).unwrap(), project(&cj, &x).unwrap());
            assert!(f.residual(&xi, &xj).abs() < 1e-9);
            let l = epipolar_line(&f, &xi).unwrap();
            assert!((l.xy().norm() - 1.0).abs() < 1e-12);
            assert!(l.dot(&Vec3::new(xj.x, xj.y, 1.0)).abs() < 1e-9);
        }
        let epipole_i = project(&ci, &cj.center).unwrap();
        assert_eq!(epipolar_line(&f, &epipole_i), Err(GeometryError::DegenerateLine));
    }

    #[test]
    fn inverse_ray_round_trip() {
        let cam = canonical();
        let r = inverse_ray(&cam, &Vec2::zeros());
        assert!((r.direction - Vec3::z()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = random_camera(&mut rng);
        for _ in 0..50 {
            let x = Vec2::new(rng.random_range(0.0..32.0), rng.random_range(0.0..32.0));
            let ray = inverse_ray(&cam, &x);
            assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
            assert_eq!(ray.origin, cam.center);
            for lambda in [1.0, 5.0, 10.0] {
                assert!((project(&cam, &ray.point_at(lambda)).unwrap() - x).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn pencil_planes_contain_both_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pencil = EpipolarPencil::new(random_camera(&mut rng), random_camera(&mut rng), None).unwrap();
        assert!(pencil.reference_normal.dot(&pencil.baseline).abs() < 1e-10);
        let p0 = plane_of_theta(&pencil, 0.0);
        assert!((p0.xyz() - pencil.reference_normal).norm() < 1e-15);
        for _ in 0..50 {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let p = plane_of_theta(&pencil, theta);
            for c in [pencil.cam_i.center, pencil.cam_j.center] {
                assert!(p.dot(&c.push(1.0)).abs() < 1e-9);
            }
            let q = plane_of_theta(&pencil, theta + std::f64::consts::FRAC_PI_2);
            assert!(p.xyz().dot(&q.xyz()).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_normal_fallback_for_vertical_baseline() {
        let a = canonical();
        let mut b = canonical();
        b.center = Vec3::new(0.0, 0.0, 3.0);
        let pencil = EpipolarPencil::new(a, b, Some(8)).unwrap();
        assert!((pencil.reference_normal.norm() - 1.0).abs() < 1e-12);
        assert!(pencil.reference_normal.dot(&pencil.baseline).abs() < 1e-12);
    }

    #[test]
    fn line_of_plane_matches_epipolar_line_and_theta_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ci = random_camera(&mut rng);
        let cj = random_camera(&mut rng);
        let f = fundamental_from_cameras(&ci, &cj, (0, 1)).unwrap();
        let pencil = EpipolarPencil::new(ci.clone(), cj.clone(), None).unwrap();
        for _ in 0..30 {
            let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (xi, xj) = (project(&ci, &x).unwrap(), project(&cj, &x).unwrap());
            let ti = theta_of_pixel(&pencil, View::I, &xi).unwrap();
            let tj = theta_of_pixel(&pencil, View::J, &xj).unwrap();
            let d = (ti - tj).abs();
            assert!(d.min(std::f64::consts::PI - d) < 1e-8);

            let plane = plane_of_theta(&pencil, ti);
            assert!(plane.dot(&x.push(1.0)).abs() < 1e-8 * (1.0 + x.norm()));
            let lj = line_of_plane(&cj, &plane).unwrap();
            assert!((lj.xy().norm() - 1.0).abs() < 1e-12);
            assert!(lj.dot(&xj.push(1.0)).abs() < 1e-8);
            let fl = epipolar_line(&f, &xi).unwrap();
            assert!(fl.cross(&lj).norm() < 1e-7 * (1.0 + fl.norm() * lj.norm()));

            // round trip: a point on the projected line maps back to θ
            let li = line_of_plane(&ci, &plane).unwrap();
            let foot = -li.z * li.xy();
            let tangent = Vec2::new(-li.y, li.x);
            for s in [-7.0, 3.0, 11.0] {
                let p = foot + tangent * s;
                if let Ok(t) = theta_of_pixel(&pencil, View::I, &p) {
                    let d = (t - ti).abs();
                    assert!(d.min(std::f64::consts::PI - d) < 1e-8);
                    assert!((0.0..std::f64::consts::PI).contains(&t));
                }
            }
        }
        let epi = project(&ci, &cj.center).unwrap();
        assert_eq!(theta_of_pixel(&pencil, View::I, &epi), Err(GeometryError::EpipolePixel));
    }

    #[test]
    fn dlt_recovers_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams: Vec<Camera> = (0..2).map(|_| random_camera(&mut rng)).collect();
        let x = Vec3::new(0.1, 0.2, 0.5);
        let obs: Vec<Observation> = cams.iter().map(|c| (c, project(c, &x).unwrap())).collect();
        let est = triangulate_dlt(&obs).unwrap();
        assert!((est - x).norm() < 1e-7 * x.norm());
        assert_eq!(triangulate_dlt(&obs[..1]), Err(GeometryError::InsufficientViews(1)));
    }

    #[test]
    fn ransac_rejects_planted_outliers_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cams: Vec<Camera> = (0..10).map(|_| random_camera(&mut rng)).collect();
        let x = Vec3::new(-0.2, 0.3, 0.1);
        let mut obs: Vec<Observation> = cams.iter().map(|c| (c, project(c, &x).unwrap())).collect();
        for k in [1, 4, 7] {
            obs[k].1 += Vec2::new(50.0, 0.0);
        }
        let r = triangulate_ransac(&obs, 2.0, 500, 42).unwrap();
        assert!((r.point - x).norm() < 1e-6);
        for (k, &m) in r.inliers.iter().enumerate() {
            assert_eq!(m, ![1, 4, 7].contains(&k));
        }
        assert_eq!(r, triangulate_ransac(&obs, 2.0, 500, 42).unwrap());
        // sampled branch (fewer iterations than pairs) is deterministic too
        assert_eq!(triangulate_ransac(&obs, 2.0, 20, 9).unwrap(), triangulate_ransac(&obs, 2.0, 20, 9).unwrap());
    }
}

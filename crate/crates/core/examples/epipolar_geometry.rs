//! Two-camera geometry: the fundamental matrix, the epipolar-plane pencil,
//! and robust triangulation of a point seen by a ring of cameras with one
//! corrupted observation.

use mvsup::geometry::{
    epipolar_line, fundamental_from_cameras, project, theta_of_pixel, triangulate_ransac, Camera, EpipolarPencil, Vec2, Vec3,
    View,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ring: Vec<Camera> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 6.0;
            Camera::look_at(40.0, 64, 64, Vec3::new(5.0 * a.cos(), 5.0 * a.sin(), 1.2), Vec3::zeros(), Vec3::z())
        })
        .collect::<Result<_, _>>()?;
    let point = Vec3::new(0.3, -0.2, 0.4);

    let (a, b) = (&ring[0], &ring[1]);
    let f = fundamental_from_cameras(a, b, (0, 1))?;
    let (xa, xb) = (project(a, &point)?, project(b, &point)?);
    let line = epipolar_line(&f, &xa)?;
    println!("x_a = {:.3?}, x_b = {:.3?}", xa.as_slice(), xb.as_slice());
    println!("residual x_b' F x_a = {:.2e}", f.residual(&xa, &xb));
    println!("distance of x_b from its epipolar line = {:.2e} px", line.dot(&Vec3::new(xb.x, xb.y, 1.0)));

    // both pixels lie on the same plane of the pencil
    let pencil = EpipolarPencil::new(a.clone(), b.clone(), None)?;
    let (ta, tb) = (theta_of_pixel(&pencil, View::I, &xa)?, theta_of_pixel(&pencil, View::J, &xb)?);
    println!("theta in view a = {ta:.6}, in view b = {tb:.6}, bin {} of {}", pencil.bin_of_theta(ta), pencil.bin_count);

    let mut observations: Vec<(&Camera, Vec2)> = ring.iter().map(|c| Ok((c, project(c, &point)?))).collect::<Result<_, mvsup::geometry::GeometryError>>()?;
    observations[3].1 += Vec2::new(9.0, -6.0);
    let fit = triangulate_ransac(&observations, 2.0, 200, 7)?;
    println!("RANSAC point {:.6?}, error {:.2e}, inliers {:?}", fit.point.as_slice(), (fit.point - point).norm(), fit.inliers);
    Ok(())
}

//! Visibility from ray casting against occluders (analytic and voxel modes),
//! camera adjacency on a ring, and the visibility-gated posterior picking the
//! right mode of a two-peaked heatmap.

use mvsup::geometry::{project, Camera, Vec3};
use mvsup::grid::Grid;
use mvsup::heatmap::{argmax_peak, render_gaussian, soft_argmax, Heatmap};
use mvsup::visibility::{adjacency, posterior, raycast_visibility, Occluder, OccluderSet, RaycastMode, VisibilityMap, VoxelGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ring: Vec<Camera> = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 8.0;
            Camera::look_at(22.0, 32, 32, Vec3::new(6.0 * a.cos(), 6.0 * a.sin(), 1.5), Vec3::zeros(), Vec3::z())
        })
        .collect::<Result<_, _>>()?;
    let occluders = OccluderSet::new(vec![Occluder::Sphere { center: Vec3::zeros(), radius: 0.6 }])?;
    let voxels = VoxelGrid::from_occluders(&occluders, 0.05);
    let behind = Vec3::new(-1.0, 0.0, 0.2);
    for (k, cam) in ring.iter().enumerate() {
        let a = raycast_visibility(&behind, cam, RaycastMode::Analytic(&occluders))?;
        let v = raycast_visibility(&behind, cam, RaycastMode::Voxel(&voxels))?;
        println!("camera {k}: analytic {a}, voxel {v}");
    }
    println!("adjacent pairs within 5.0: {:?}", adjacency(&ring, 5.0));

    // two equal modes; only the left one is visible
    let cam = &ring[0];
    let left = project(cam, &Vec3::new(0.0, 1.0, 0.3))?;
    let right = project(cam, &Vec3::new(0.0, -1.0, 0.3))?;
    let a = render_gaussian(left, 1.0, 32, 32);
    let b = render_gaussian(right, 1.0, 32, 32);
    let mixed: Vec<f64> = a.channel(0).iter().zip(b.channel(0)).map(|(x, y)| 0.48 * x + 0.52 * y).collect();
    let p = Heatmap::new(Grid::from_vec(32, 32, 1, mixed)?)?;
    let vis: Vec<f64> = (0..1024).map(|k| if ((k % 32) as f64 - left.x).abs() < 6.0 { 0.95 } else { 0.05 }).collect();
    let v = VisibilityMap::new(Grid::from_vec(32, 32, 1, vis)?)?;
    let post = posterior(&p, &v)?;
    println!("visible mode {:.1?}, occluded mode {:.1?}", left.as_slice(), right.as_slice());
    println!("soft argmax {:.1?}", soft_argmax(&p, 0).as_slice());
    println!("argmax of P {:.1?}", argmax_peak(&p, 0).as_slice());
    println!("argmax of P*V {:.1?}", argmax_peak(&post.heatmap, 0).as_slice());
    Ok(())
}

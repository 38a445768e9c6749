//! Epipolar transfer of keypoint heatmaps, and the cross-view loss acting as
//! a consensus: each of eight views holds the true peak plus one spurious
//! peak at a random spot. Gradient descent on the summed pairwise loss alone
//! removes the spurious peaks, because only the true one lies on matching
//! epipolar planes in every view pair.

use mvsup::epipolar_transfer::{cross_view_loss, transfer, BinnedPencil};
use mvsup::geometry::{project, Camera, Vec2, Vec3, View};
use mvsup::heatmap::{argmax_index, render_gaussian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 8;
    let cams: Vec<Camera> = (0..n)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / n as f64;
            Camera::look_at(22.0, 32, 32, Vec3::new(6.0 * a.cos(), 6.0 * a.sin(), 1.5), Vec3::zeros(), Vec3::z())
        })
        .collect::<Result<_, _>>()?;
    let point = Vec3::new(0.4, 0.2, 0.3);
    let truth: Vec<Vec2> = cams.iter().map(|c| project(c, &point)).collect::<Result<_, _>>()?;

    let pencil01 = BinnedPencil::from_cameras(&cams[0], &cams[1], None)?;
    let h0 = render_gaussian(truth[0], 1.0, 32, 32);
    let h1 = render_gaussian(truth[1], 1.0, 32, 32);
    let q0 = transfer(h0.channel(0), &pencil01, View::I)?;
    let q1 = transfer(h1.channel(0), &pencil01, View::J)?;
    println!("peak bins of the true point: view 0 -> {}, view 1 -> {}", q0.peak_bin(), q1.peak_bin());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut logits: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            let fake = Vec2::new(rng.random_range(3.0..29.0), rng.random_range(3.0..29.0));
            let a = render_gaussian(*t, 1.0, 32, 32);
            let b = render_gaussian(fake, 1.0, 32, 32);
            // the spurious peak is slightly stronger than the true one
            a.channel(0).iter().zip(b.channel(0)).map(|(x, y)| (0.9 * x + 1.1 * y + 1e-4).ln()).collect()
        })
        .collect();
    let pencils: Vec<Vec<Option<BinnedPencil>>> =
        (0..n).map(|i| (0..n).map(|j| (i != j).then(|| BinnedPencil::from_cameras(&cams[i], &cams[j], None)).transpose()).collect()).collect::<Result<_, _>>()?;

    let correct = |logits: &[Vec<f64>]| {
        logits.iter().zip(&truth).filter(|(l, t)| {
            let k = argmax_index(l);
            (Vec2::new((k % 32) as f64, (k / 32) as f64) - **t).norm() < 2.0
        }).count()
    };
    println!("views with the argmax on the true point before: {}/{n}", correct(&logits));
    for step in 0..300 {
        let ps: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
        let mut grads = vec![vec![0.0; 1024]; n];
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let terms = cross_view_loss(&ps[i], &ps[j], pencils[i][j].as_ref().expect("i != j"))?;
                total += terms.value;
                grads[i].iter_mut().zip(&terms.grad_i).for_each(|(g, d)| *g += d);
                grads[j].iter_mut().zip(&terms.grad_j).for_each(|(g, d)| *g += d);
            }
        }
        // chain through the softmax
        for (l, (p, g)) in logits.iter_mut().zip(ps.iter().zip(&grads)) {
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            l.iter_mut().zip(p.iter().zip(g)).for_each(|(l, (p, g))| *l -= 0.5 * p * (g - dot));
        }
        if step % 100 == 0 {
            println!("step {step:3}: summed cross-view loss {total:.4}");
        }
    }
    println!("views with the argmax on the true point after: {}/{n}", correct(&logits));
    Ok(())
}

//! Bundle adjustment of a small perturbed camera ring with one fixed camera.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use submap_slam::bundle_adjust::{solve_ba, BAObservation, BAOptions, BAProblem, CameraBlock, PointBlock};
use submap_slam::lie::{so3_exp, Se3Pose};
use submap_slam::multiview::{project, CameraIntrinsics, ImageSize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let size = ImageSize::new(1280, 960);
    let k = CameraIntrinsics::centered(1751.0, size);
    let pixel_noise = Normal::new(0.0, 0.5)?;

    let truth_points: Vec<Vector3<f64>> = (0..400)
        .map(|_| Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0)))
        .collect();
    let truth_cams: Vec<Se3Pose> = (0..8)
        .map(|i| {
            let c = Vector3::new(-7.0 + 2.0 * i as f64, 0.0, 40.0);
            // looking straight down
            Se3Pose::from_center(so3_exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0)), c)
        })
        .collect();

    let mut problem = BAProblem::new(k.principal_point);
    for (i, pose) in truth_cams.iter().enumerate() {
        let noisy = pose.retract(
            &Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0),
            &Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0),
        );
        problem.cameras.push(if i < 2 { CameraBlock::fixed(*pose, k.focal) } else { CameraBlock::new(noisy, k.focal) });
    }
    for (j, x) in truth_points.iter().enumerate() {
        let offset = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        problem.points.push(PointBlock::new(x + offset));
        for (i, pose) in truth_cams.iter().enumerate() {
            if let Some(p) = project(&k, pose, x).filter(|p| size.contains(p)) {
                let pixel = p + Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
                problem.observations.push(BAObservation { camera: i, point: j, pixel });
            }
        }
    }

    let result = solve_ba(&problem, &BAOptions::default())?;
    println!(
        "{} cameras, {} points, {} observations",
        problem.cameras.len(),
        problem.points.len(),
        problem.observations.len()
    );
    println!(
        "rms {:.3} px -> {:.3} px in {} accepted steps (converged: {})",
        result.initial_rms,
        result.rms,
        result.accepted_steps(),
        result.converged
    );
    for it in &result.log {
        println!("  cost {:12.4} lambda {:.1e} {}", it.cost, it.lambda, if it.accepted { "accepted" } else { "rejected" });
    }
    Ok(())
}

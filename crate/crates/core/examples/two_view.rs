//! Two-view geometry on synthetic points: relative pose, triangulation,
//! PnP and Sim(3) RANSAC with injected outliers.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use submap_slam::lie::{so3_exp, Se3Pose, Sim3Transform};
use submap_slam::multiview::{
    estimate_relative_pose, pnp_ransac, project, sim3_ransac, triangulate, CameraIntrinsics, Correspondence2D3D,
    Correspondence3D3D, ImageSize, RansacConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = CameraIntrinsics::centered(1751.0, ImageSize::new(1280, 960));
    let a = Se3Pose::identity();
    let b = Se3Pose::new(so3_exp(&Vector3::new(0.02, -0.05, 0.01)), Vector3::new(-1.0, 0.1, 0.05));

    let points: Vec<Vector3<f64>> = (0..300)
        .map(|_| Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0), rng.random_range(15.0..40.0)))
        .collect();
    let matches: Vec<(Vector2<f64>, Vector2<f64>)> = points
        .iter()
        .filter_map(|x| Some((project(&k, &a, x)?, project(&k, &b, x)?)))
        .collect();

    let rel = estimate_relative_pose(&matches, &k, &RansacConfig::default())?;
    let t_true = b.translation.normalize();
    println!(
        "relative pose: {} / {} inliers, translation direction error {:.2e}",
        rel.inlier_count(),
        matches.len(),
        (rel.pose.translation - t_true).norm()
    );

    let (pa, pb) = matches[0];
    let x = triangulate(&a, &b, &k, &pa, &pb)?;
    println!("triangulated first point with true baseline, error {:.2e}", (x - points[0]).norm());

    // 30% of the 2D-3D correspondences get a random pixel
    let corrs: Vec<Correspondence2D3D> = points
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let mut pixel = project(&k, &b, x)?;
            if i % 10 < 3 {
                pixel = Vector2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..960.0));
            }
            Some(Correspondence2D3D::new(i as u64, *x, pixel))
        })
        .collect();
    let pnp = pnp_ransac(&corrs, &k, &RansacConfig::default())?;
    let (rot_err, pos_err) = pnp.pose.distance(&b);
    println!("pnp: {} inliers, rotation error {rot_err:.2e} rad, position error {pos_err:.2e}", pnp.inlier_count());

    let g = Sim3Transform::new(so3_exp(&Vector3::new(0.4, 0.1, -0.3)), 2.5, Vector3::new(3.0, -1.0, 7.0));
    let pairs: Vec<Correspondence3D3D> = points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let y = if i % 10 < 3 { Vector3::new(rng.random_range(-50.0..50.0), 0.0, 0.0) } else { g.apply(x) };
            Correspondence3D3D::new(*x, y)
        })
        .collect();
    let fit = sim3_ransac(&pairs, &RansacConfig::default().with_threshold(0.1))?;
    println!("sim3: {} inliers, scale {:.6} (true 2.5)", fit.inlier_count(), fit.transform.scale);
    Ok(())
}

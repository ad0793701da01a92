use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use super::{CameraIntrinsics, MultiviewError};
use crate::lie::Se3Pose;

/// Rays closer to parallel than this are rejected.
pub const DEFAULT_MIN_TRIANGULATION_ANGLE_DEG: f64 = 1.0;

/// Angle in degrees between the rays from both camera centers to `x`.
pub fn triangulation_angle(
    pose_a: &Se3Pose,
    pose_b: &Se3Pose,
    x: &Vector3<f64>,
) -> Result<f64, MultiviewError> {
    let ra = x - pose_a.center();
    let rb = x - pose_b.center();
    let (na, nb) = (ra.norm(), rb.norm());
    if na < 1e-12 || nb < 1e-12 {
        return Err(MultiviewError::CoincidentCenter);
    }
    Ok(ray_angle_deg(&(ra / na), &(rb / nb)))
}

fn ray_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 keeps precision for tiny and near-180° angles.
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

pub fn triangulate(
    pose_a: &Se3Pose,
    pose_b: &Se3Pose,
    k: &CameraIntrinsics,
    pix_a: &Vector2<f64>,
    pix_b: &Vector2<f64>,
) -> Result<Vector3<f64>, MultiviewError> {
    triangulate_with_min_angle(
        pose_a,
        pose_b,
        k,
        pix_a,
        pix_b,
        DEFAULT_MIN_TRIANGULATION_ANGLE_DEG,
    )
}

/// Midpoint triangulation refined by Gauss-Newton on the two-view
/// reprojection error.
pub fn triangulate_with_min_angle(
    pose_a: &Se3Pose,
    pose_b: &Se3Pose,
    k: &CameraIntrinsics,
    pix_a: &Vector2<f64>,
    pix_b: &Vector2<f64>,
    min_angle_deg: f64,
) -> Result<Vector3<f64>, MultiviewError> {
    let ca = pose_a.center();
    let cb = pose_b.center();
    let baseline = cb - ca;
    if baseline.norm() < 1e-12 {
        return Err(MultiviewError::DegenerateTriangulation("zero baseline"));
    }
    let da = (pose_a.rotation.transpose() * k.ray(pix_a)).normalize();
    let db = (pose_b.rotation.transpose() * k.ray(pix_b)).normalize();
    if ray_angle_deg(&da, &db) < min_angle_deg {
        return Err(MultiviewError::DegenerateTriangulation("rays nearly parallel"));
    }
    // Closest points on the two rays: ca + la da ≈ cb + lb db.
    let dab = da.dot(&db);
    let denom = 1.0 - dab * dab;
    let la = (baseline.dot(&da) - dab * baseline.dot(&db)) / denom;
    let lb = (dab * baseline.dot(&da) - baseline.dot(&db)) / denom;
    if la <= 0.0 || lb <= 0.0 {
        return Err(MultiviewError::DegenerateTriangulation("point behind a camera"));
    }
    let mut x = ((ca + da * la) + (cb + db * lb)) * 0.5;

    let views = [(pose_a, pix_a), (pose_b, pix_b)];
    for _ in 0..10 {
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        let mut cost = 0.0;
        for (pose, pix) in views {
            let xc = pose.apply(&x);
            if xc.z <= 0.0 {
                return Err(MultiviewError::DegenerateTriangulation("point behind a camera"));
            }
            let r = k.project_camera(&xc).unwrap_or_default() - pix;
            let j = projection_jacobian(k.focal, &xc) * pose.rotation;
            h += j.transpose() * j;
            g += j.transpose() * r;
            cost += r.norm_squared();
        }
        let Some(step) = h.lu().solve(&g) else { break };
        let candidate = x - step;
        let new_cost: f64 = views
            .iter()
            .map(|(pose, pix)| {
                k.project_camera(&pose.apply(&candidate))
                    .map(|p| (p - *pix).norm_squared())
                    .unwrap_or(f64::INFINITY)
            })
            .sum();
        if new_cost > cost {
            break;
        }
        x = candidate;
        if step.norm() <= 1e-14 * (1.0 + x.norm()) {
            break;
        }
    }
    Ok(x)
}

/// Derivative of the pixel with respect to the camera-frame point.
pub(crate) fn projection_jacobian(focal: f64, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / xc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        focal * iz,
        0.0,
        -focal * xc.x * iz2,
        0.0,
        focal * iz,
        -focal * xc.y * iz2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::so3_exp;
    use crate::multiview::project;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 500.0, 400.0)
    }

    #[test]
    fn angle_examples() {
        let a = Se3Pose::from_center(Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0));
        let b = Se3Pose::from_center(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let angle = triangulation_angle(&a, &b, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((angle - 90.0).abs() < 1e-12);
        assert_eq!(
            triangulation_angle(&a, &a, &Vector3::new(-1.0, 0.0, 0.0)),
            Err(MultiviewError::CoincidentCenter)
        );
    }

    #[test]
    fn angle_matches_acos_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 3.0).unwrap();
        for _ in 0..200 {
            let a = Se3Pose::from_center(Matrix3::identity(), Vector3::from_fn(|_, _| n.sample(&mut rng)));
            let b = Se3Pose::from_center(Matrix3::identity(), Vector3::from_fn(|_, _| n.sample(&mut rng)));
            let x = Vector3::from_fn(|_, _| n.sample(&mut rng));
            let ra = (x - a.center()).normalize();
            let rb = (x - b.center()).normalize();
            let direct = ra.dot(&rb).clamp(-1.0, 1.0).acos().to_degrees();
            let got = triangulation_angle(&a, &b, &x).unwrap();
            assert!((got - direct).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_free_point_reprojects() {
        let a = Se3Pose::identity();
        let b = Se3Pose::from_center(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let x = Vector3::new(0.5, 0.0, 10.0);
        let pa = project(&k(), &a, &x).unwrap();
        let pb = project(&k(), &b, &x).unwrap();
        let est = triangulate(&a, &b, &k(), &pa, &pb).unwrap();
        assert!((project(&k(), &a, &est).unwrap() - pa).norm() < 1e-8);
        assert!((project(&k(), &b, &est).unwrap() - pb).norm() < 1e-8);
        assert!((est - x).norm() < 1e-9);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let a = Se3Pose::identity();
        let p = Vector2::new(500.0, 400.0);
        assert!(matches!(
            triangulate(&a, &a, &k(), &p, &p),
            Err(MultiviewError::DegenerateTriangulation(_))
        ));
    }

    #[test]
    fn reprojection_identity_over_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut tested = 0;
        for _ in 0..500 {
            let a = Se3Pose::from_center(
                so3_exp(&(Vector3::from_fn(|_, _| n.sample(&mut rng)) * 0.1)),
                Vector3::from_fn(|_, _| n.sample(&mut rng)),
            );
            let b = Se3Pose::from_center(
                so3_exp(&(Vector3::from_fn(|_, _| n.sample(&mut rng)) * 0.1)),
                Vector3::from_fn(|_, _| n.sample(&mut rng)),
            );
            let x = Vector3::from_fn(|_, _| n.sample(&mut rng)) + Vector3::new(0.0, 0.0, 8.0);
            let (Some(pa), Some(pb)) = (project(&k(), &a, &x), project(&k(), &b, &x)) else {
                continue;
            };
            if triangulation_angle(&a, &b, &x).unwrap() <= 1.0 {
                continue;
            }
            let est = triangulate(&a, &b, &k(), &pa, &pb).unwrap();
            assert!((project(&k(), &a, &est).unwrap() - pa).norm() < 1e-8);
            assert!((project(&k(), &b, &est).unwrap() - pb).norm() < 1e-8);
            tested += 1;
        }
        assert!(tested > 300);
    }

    #[test]
    fn noise_matches_first_order_sensitivity() {
        // 30° between the rays: centers at ±d, point at depth d / tan 15°.
        let d = 1.0;
        let depth = d / 15f64.to_radians().tan();
        let a = Se3Pose::from_center(Matrix3::identity(), Vector3::new(-d, 0.0, 0.0));
        let b = Se3Pose::from_center(Matrix3::identity(), Vector3::new(d, 0.0, 0.0));
        let x = Vector3::new(0.0, 0.0, depth);
        assert!((triangulation_angle(&a, &b, &x).unwrap() - 30.0).abs() < 1e-9);
        let pa = project(&k(), &a, &x).unwrap();
        let pb = project(&k(), &b, &x).unwrap();

        // First-order covariance from a central-difference Jacobian with
        // respect to the four pixel coordinates.
        let h = 1e-4;
        let mut predicted = 0.0;
        for i in 0..4 {
            let mut da = Vector2::zeros();
            let mut db = Vector2::zeros();
            if i < 2 {
                da[i] = h;
            } else {
                db[i - 2] = h;
            }
            let plus = triangulate(&a, &b, &k(), &(pa + da), &(pb + db)).unwrap();
            let minus = triangulate(&a, &b, &k(), &(pa - da), &(pb - db)).unwrap();
            predicted += ((plus - minus) / (2.0 * h)).norm_squared();
        }
        let predicted_rms = predicted.sqrt();

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let trials = 1000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let na = Vector2::from_fn(|_, _| noise.sample(&mut rng));
            let nb = Vector2::from_fn(|_, _| noise.sample(&mut rng));
            let est = triangulate(&a, &b, &k(), &(pa + na), &(pb + nb)).unwrap();
            sum += (est - x).norm_squared();
        }
        let rms = (sum / trials as f64).sqrt();
        assert!(
            rms < 1.15 * predicted_rms && rms > 0.85 * predicted_rms,
            "monte-carlo rms {rms} vs first-order {predicted_rms}"
        );
    }
}

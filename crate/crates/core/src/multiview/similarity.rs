use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ransac::{adaptive_iterations, draw};
use super::{MultiviewError, RansacConfig};
use crate::lie::{Se3Pose, Sim3Transform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D3D {
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    pub id_a: u64,
    pub id_b: u64,
}

impl Correspondence3D3D {
    pub fn new(point_a: Vector3<f64>, point_b: Vector3<f64>) -> Self {
        Self {
            point_a,
            point_b,
            id_a: 0,
            id_b: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sim3Fit {
    /// Maps `point_a` onto `point_b`.
    pub transform: Sim3Transform,
    pub inliers: Vec<bool>,
}

impl Sim3Fit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

struct Moments {
    mean_a: Vector3<f64>,
    mean_b: Vector3<f64>,
    var_a: f64,
    cross: Matrix3<f64>,
    scatter_a: Matrix3<f64>,
}

fn moments(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Moments {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<Vector3<f64>>() / n;
    let mean_b = b.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    let mut scatter_a = Matrix3::zeros();
    let mut var_a = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        let da = pa - mean_a;
        let db = pb - mean_b;
        cross += db * da.transpose();
        scatter_a += da * da.transpose();
        var_a += da.norm_squared();
    }
    Moments {
        mean_a,
        mean_b,
        var_a: var_a / n,
        cross: cross / n,
        scatter_a: scatter_a / n,
    }
}

fn check_rank(m: &Moments) -> Result<(), MultiviewError> {
    let mut sv: Vec<f64> = m.scatter_a.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(MultiviewError::RankDeficient);
    }
    Ok(())
}

fn rotation_and_trace(cross: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = cross.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let smallest = (0..3)
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap();
        d[(smallest, smallest)] = -1.0;
    }
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    (u * d * v_t, trace)
}

/// Least-squares similarity with `s R a + t ≈ b`.
pub fn umeyama_sim3(corrs: &[Correspondence3D3D]) -> Result<Sim3Transform, MultiviewError> {
    if corrs.len() < 3 {
        return Err(MultiviewError::TooFewCorrespondences {
            needed: 3,
            got: corrs.len(),
        });
    }
    let a: Vec<_> = corrs.iter().map(|c| c.point_a).collect();
    let b: Vec<_> = corrs.iter().map(|c| c.point_b).collect();
    umeyama_points(&a, &b)
}

pub(crate) fn umeyama_points(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Sim3Transform, MultiviewError> {
    let m = moments(a, b);
    check_rank(&m)?;
    let (rotation, trace) = rotation_and_trace(&m.cross);
    let scale = trace / m.var_a;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(MultiviewError::RankDeficient);
    }
    let translation = m.mean_b - rotation * m.mean_a * scale;
    Ok(Sim3Transform::new(rotation, scale, translation))
}

/// Least-squares rigid motion with `R a + t ≈ b`.
pub fn rigid_from_points(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Se3Pose, MultiviewError> {
    if a.len() < 3 || a.len() != b.len() {
        return Err(MultiviewError::TooFewCorrespondences {
            needed: 3,
            got: a.len().min(b.len()),
        });
    }
    let m = moments(a, b);
    check_rank(&m)?;
    let (rotation, _) = rotation_and_trace(&m.cross);
    Ok(Se3Pose::new(rotation, m.mean_b - rotation * m.mean_a))
}

/// Three-point similarity hypotheses scored by post-transform distance,
/// then refit on the consensus set.
pub fn sim3_ransac(corrs: &[Correspondence3D3D], cfg: &RansacConfig) -> Result<Sim3Fit, MultiviewError> {
    let n = corrs.len();
    if n < 3 {
        return Err(MultiviewError::TooFewCorrespondences { needed: 3, got: n });
    }
    let required = cfg.min_inliers.max(3);
    let thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let classify = |g: &Sim3Transform| -> (Vec<bool>, usize, f64) {
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut sum = 0.0;
        for (i, c) in corrs.iter().enumerate() {
            let d2 = (g.apply(&c.point_a) - c.point_b).norm_squared();
            if d2 < thr2 {
                mask[i] = true;
                count += 1;
                sum += d2;
            }
        }
        (mask, count, sum)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Sim3Transform, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let s = draw(&mut rng, n, 3);
        let a: Vec<_> = s.iter().map(|&i| corrs[i].point_a).collect();
        let b: Vec<_> = s.iter().map(|&i| corrs[i].point_b).collect();
        let Ok(g) = umeyama_points(&a, &b) else { continue };
        let (_, count, sum) = classify(&g);
        let better = match &best {
            None => count > 0,
            Some((_, bc, bs)) => count > *bc || (count == *bc && sum < *bs),
        };
        if better {
            best = Some((g, count, sum));
            needed = adaptive_iterations(count as f64 / n as f64, 3, cfg.confidence, cfg.max_iterations);
        }
    }
    let Some((g, count, _)) = best else {
        return Err(MultiviewError::EstimationFailed { inliers: 0, required });
    };
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    let (mut mask, _, _) = classify(&g);
    let mut transform = g;
    for _ in 0..3 {
        let a: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| corrs[i].point_a).collect();
        let b: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| corrs[i].point_b).collect();
        let Ok(refit) = umeyama_points(&a, &b) else { break };
        let (new_mask, new_count, _) = classify(&refit);
        if new_count < required {
            break;
        }
        transform = refit;
        if new_mask == mask {
            break;
        }
        mask = new_mask;
    }
    let count = mask.iter().filter(|&&b| b).count();
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    Ok(Sim3Fit { transform, inliers: mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{so3_exp, Sim3Tangent};
    use rand::Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform {
        let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let t = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        Sim3Transform::new(so3_exp(&w), rng.random_range(0.3..3.0), t)
    }

    fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0))).collect()
    }

    fn sim3_close(a: &Sim3Transform, b: &Sim3Transform, tol: f64) -> bool {
        (a.rotation - b.rotation).abs().max() < tol
            && (a.scale - b.scale).abs() < tol
            && (a.translation - b.translation).abs().max() < tol
    }

    #[test]
    fn identity_and_constructed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = points(&mut rng, 10);
        let same: Vec<_> = pts.iter().map(|p| Correspondence3D3D::new(*p, *p)).collect();
        assert!(sim3_close(&umeyama_sim3(&same).unwrap(), &Sim3Transform::identity(), 1e-12));
        let scaled: Vec<_> = pts
            .iter()
            .map(|p| Correspondence3D3D::new(*p, p * 2.0 + Vector3::new(1.0, 0.0, 0.0)))
            .collect();
        let g = umeyama_sim3(&scaled).unwrap();
        assert!(sim3_close(&g, &Sim3Transform::new(Matrix3::identity(), 2.0, Vector3::x()), 1e-12));
    }

    #[test]
    fn recovers_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = random_sim3(&mut rng);
            let corrs: Vec<_> = points(&mut rng, 20)
                .into_iter()
                .map(|p| Correspondence3D3D::new(p, g.apply(&p)))
                .collect();
            let est = umeyama_sim3(&corrs).unwrap();
            assert!(sim3_close(&est, &g, 1e-9));
        }
    }

    #[test]
    fn collinear_is_rank_deficient() {
        let corrs: Vec<_> = (0..5)
            .map(|i| {
                let p = Vector3::new(i as f64, 2.0 * i as f64, 0.0);
                Correspondence3D3D::new(p, p)
            })
            .collect();
        assert_eq!(umeyama_sim3(&corrs), Err(MultiviewError::RankDeficient));
        assert!(matches!(
            umeyama_sim3(&corrs[..2]),
            Err(MultiviewError::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn least_squares_optimality_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_sim3(&mut rng);
        let corrs: Vec<_> = points(&mut rng, 30)
            .into_iter()
            .map(|p| {
                let noise: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
                Correspondence3D3D::new(p, g.apply(&p) + noise * 0.3)
            })
            .collect();
        let est = umeyama_sim3(&corrs).unwrap();
        let cost = |h: &Sim3Transform| -> f64 {
            corrs.iter().map(|c| (h.apply(&c.point_a) - c.point_b).norm_squared()).sum()
        };
        let base = cost(&est);
        let n = Normal::new(0.0, 1e-3).unwrap();
        for _ in 0..100 {
            let v = Sim3Tangent::from_vector(&crate::lie::Vector7::from_fn(|_, _| n.sample(&mut rng)));
            let perturbed = est.compose(&v.exp());
            assert!(cost(&perturbed) >= base);
        }
    }

    #[test]
    fn rigid_fit_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = Se3Pose::new(so3_exp(&Vector3::new(0.3, -0.2, 1.0)), Vector3::new(1.0, 2.0, 3.0));
        let a = points(&mut rng, 8);
        let b: Vec<_> = a.iter().map(|p| pose.apply(p)).collect();
        let est = rigid_from_points(&a, &b).unwrap();
        assert!((est.rotation - pose.rotation).abs().max() < 1e-12);
        assert!((est.translation - pose.translation).abs().max() < 1e-12);
    }

    fn contaminated(seed: u64, n: usize, outlier_fraction: f64) -> (Sim3Transform, Vec<Correspondence3D3D>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_sim3(&mut rng);
        let n_out = (n as f64 * outlier_fraction).round() as usize;
        let mut corrs = Vec::new();
        let mut outlier = Vec::new();
        for (i, p) in points(&mut rng, n).into_iter().enumerate() {
            let mut q = g.apply(&p);
            if i < n_out {
                let dir: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
                q += dir.normalize() * rng.random_range(1.0..20.0);
            }
            corrs.push(Correspondence3D3D::new(p, q));
            outlier.push(i < n_out);
        }
        (g, corrs, outlier)
    }

    #[test]
    fn ransac_separates_labeled_outliers() {
        let (g, corrs, outlier) = contaminated(5, 100, 0.4);
        let cfg = RansacConfig::default().with_threshold(0.1);
        let fit = sim3_ransac(&corrs, &cfg).unwrap();
        for (i, &o) in outlier.iter().enumerate() {
            assert_eq!(fit.inliers[i], !o);
        }
        assert!(sim3_close(&fit.transform, &g, 1e-6));
    }

    #[test]
    fn ransac_matches_closed_form_on_clean_data() {
        let (_, corrs, _) = contaminated(6, 40, 0.0);
        let cfg = RansacConfig::default().with_threshold(0.1);
        let fit = sim3_ransac(&corrs, &cfg).unwrap();
        let direct = umeyama_sim3(&corrs).unwrap();
        assert!(sim3_close(&fit.transform, &direct, 1e-12));
        assert_eq!(fit.inlier_count(), 40);
    }

    #[test]
    fn all_outliers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = points(&mut rng, 30);
        let b = points(&mut rng, 30);
        let corrs: Vec<_> = a.into_iter().zip(b).map(|(p, q)| Correspondence3D3D::new(p, q)).collect();
        let cfg = RansacConfig::default().with_threshold(0.05);
        assert!(matches!(
            sim3_ransac(&corrs, &cfg),
            Err(MultiviewError::EstimationFailed { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (_, corrs, _) = contaminated(8, 60, 0.3);
        let cfg = RansacConfig::default().with_threshold(0.1).with_seed(3);
        assert_eq!(sim3_ransac(&corrs, &cfg), sim3_ransac(&corrs, &cfg));
    }
}

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::poly::{poly_mul, poly_scale, poly_sub, real_roots};
use super::ransac::{adaptive_iterations, draw};
use super::similarity::rigid_from_points;
use super::triangulate::projection_jacobian;
use super::{CameraIntrinsics, MultiviewError, RansacConfig};
use crate::lie::{skew, Se3Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence2D3D {
    pub landmark_id: u64,
    pub world_point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

impl Correspondence2D3D {
    pub fn new(landmark_id: u64, world_point: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self {
            landmark_id,
            world_point,
            pixel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub pose: Se3Pose,
    pub inliers: Vec<bool>,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Pixel distance between the projection and the observation; infinite
/// when the point is behind the camera.
pub fn reprojection_error(k: &CameraIntrinsics, pose: &Se3Pose, c: &Correspondence2D3D) -> f64 {
    k.project_camera(&pose.apply(&c.world_point))
        .map(|p| (p - c.pixel).norm())
        .unwrap_or(f64::INFINITY)
}

/// All camera poses consistent with three bearing/point pairs.
///
/// With depths `s₂ = u s₁`, `s₃ = v s₁` the three cosine-law constraints give
/// two quadratics in `u` whose resultant is a quartic in `v`.
pub fn p3p(rays: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Se3Pose> {
    let f = rays.map(|r| r.normalize());
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if a2 < 1e-24 || b2 < 1e-24 || c2 < 1e-24 {
        return Vec::new();
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    let d = [1.0, -2.0 * cb, 1.0];
    let c1 = poly_sub(&[b2], &poly_scale(&d, c2));
    let c2p = poly_sub(&[0.0, 0.0, b2], &poly_scale(&d, a2));
    let b1 = [-2.0 * b2 * cg];
    let b2p = [0.0, -2.0 * b2 * ca];

    // With A₁ = A₂ = b², the resultant reduces to
    // b⁴ (C₂ − C₁)² − b² (B₂ − B₁)(B₁ C₂ − B₂ C₁).
    let dc = poly_sub(&c2p, &c1);
    let db = poly_sub(&b2p, &b1);
    let cross = poly_sub(&poly_mul(&b1, &c2p), &poly_mul(&b2p, &c1));
    let quartic = poly_sub(&poly_scale(&poly_mul(&dc, &dc), b2), &poly_mul(&db, &cross));

    let eval = |p: &[f64], x: f64| p.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let denom = -eval(&db, v);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = eval(&dc, v) / denom;
        let dv = eval(&d, v);
        if u <= 0.0 || dv <= 0.0 {
            continue;
        }
        let s1 = (b2 / dv).sqrt();
        let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        if let Ok(pose) = rigid_from_points(points, &cam) {
            if pose.rotation.iter().all(|x| x.is_finite()) {
                out.push(pose);
            }
        }
    }
    out
}

fn normal_equations(
    k: &CameraIntrinsics,
    pose: &Se3Pose,
    corrs: &[Correspondence2D3D],
    idx: &[usize],
) -> (Matrix6<f64>, Vector6<f64>, f64) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    let mut cost = 0.0;
    for &i in idx {
        let c = &corrs[i];
        let xc = pose.apply(&c.world_point);
        let Some(p) = k.project_camera(&xc) else {
            cost += 1e12;
            continue;
        };
        let r = p - c.pixel;
        let jp = projection_jacobian(k.focal, &xc);
        let mut jx = nalgebra::Matrix3x6::zeros();
        jx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&xc)));
        jx.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
        let j = jp * jx;
        h += j.transpose() * j;
        g += j.transpose() * r;
        cost += r.norm_squared();
    }
    (h, g, cost)
}

fn squared_cost(k: &CameraIntrinsics, pose: &Se3Pose, corrs: &[Correspondence2D3D], idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| {
            k.project_camera(&pose.apply(&corrs[i].world_point))
                .map(|p| (p - corrs[i].pixel).norm_squared())
                .unwrap_or(1e12)
        })
        .sum()
}

/// Levenberg-Marquardt on the reprojection error of the masked
/// correspondences, with left perturbations of the pose.
pub fn refine_pose(k: &CameraIntrinsics, pose: &Se3Pose, corrs: &[Correspondence2D3D], mask: &[bool]) -> Se3Pose {
    let idx: Vec<usize> = (0..corrs.len()).filter(|&i| mask[i]).collect();
    if idx.len() < 3 {
        return *pose;
    }
    let mut current = *pose;
    let mut lambda = 1e-4;
    for _ in 0..50 {
        let (h, g, cost) = normal_equations(k, &current, corrs, &idx);
        if cost == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(step[0], step[1], step[2]);
            let v = Vector3::new(step[3], step[4], step[5]);
            let cand = current.retract(&w, &v);
            let new_cost = squared_cost(k, &cand, corrs, &idx);
            if new_cost < cost {
                current = cand;
                lambda = (lambda * 0.2).max(1e-12);
                accepted = (cost - new_cost) > 1e-15 * cost;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    current
}

pub fn pnp_ransac(
    corrs: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpResult, MultiviewError> {
    pnp_ransac_with_prior(corrs, k, cfg, None)
}

/// PnP inside RANSAC. Each sample has four correspondences: three feed the
/// minimal solver, the fourth selects among its solutions. An optional prior
/// pose (for example the previous frame) is scored as an extra hypothesis.
pub fn pnp_ransac_with_prior(
    corrs: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    prior: Option<&Se3Pose>,
) -> Result<PnpResult, MultiviewError> {
    let n = corrs.len();
    if n < 4 {
        return Err(MultiviewError::TooFewCorrespondences { needed: 4, got: n });
    }
    let required = cfg.min_inliers.max(4);
    let thr = cfg.inlier_threshold;
    let classify = |pose: &Se3Pose| -> (Vec<bool>, usize, f64) {
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut sum = 0.0;
        for (i, c) in corrs.iter().enumerate() {
            let e = reprojection_error(k, pose, c);
            if e < thr {
                mask[i] = true;
                count += 1;
                sum += e * e;
            }
        }
        (mask, count, sum)
    };
    let rays: Vec<Vector3<f64>> = corrs.iter().map(|c| k.ray(&c.pixel)).collect();

    let mut best: Option<(Se3Pose, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let consider = |pose: Se3Pose, best: &mut Option<(Se3Pose, usize, f64)>, needed: &mut usize| {
        let (_, count, sum) = classify(&pose);
        let better = match best {
            None => count > 0,
            Some((_, bc, bs)) => count > *bc || (count == *bc && sum < *bs),
        };
        if better {
            *best = Some((pose, count, sum));
            *needed = adaptive_iterations(count as f64 / n as f64, 4, cfg.confidence, cfg.max_iterations);
        }
    };
    if let Some(p) = prior {
        consider(*p, &mut best, &mut needed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let s = draw(&mut rng, n, 4);
        let r = [rays[s[0]], rays[s[1]], rays[s[2]]];
        let x = [corrs[s[0]].world_point, corrs[s[1]].world_point, corrs[s[2]].world_point];
        let chosen = p3p(&r, &x)
            .into_iter()
            .map(|p| (reprojection_error(k, &p, &corrs[s[3]]), p))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((err, pose)) = chosen {
            if err < thr {
                consider(pose, &mut best, &mut needed);
            }
        }
    }
    let Some((pose, count, _)) = best else {
        return Err(MultiviewError::EstimationFailed { inliers: 0, required });
    };
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    let (mut mask, _, _) = classify(&pose);
    let mut pose = refine_pose(k, &pose, corrs, &mask);
    for _ in 0..2 {
        let (new_mask, _, _) = classify(&pose);
        if new_mask == mask {
            break;
        }
        mask = new_mask;
        pose = refine_pose(k, &pose, corrs, &mask);
    }
    let count = mask.iter().filter(|&&b| b).count();
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    Ok(PnpResult { pose, inliers: mask })
}

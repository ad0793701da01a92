//! Essential-matrix estimation with the five-point minimal solver.
//!
//! Relative pose convention: `x_b = R x_a + t`, so `E = t× R` and
//! `x̂_bᵀ E x̂_a = 0` for normalized image rays.

use nalgebra::{DMatrix, Matrix3, SMatrix, Schur, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ransac::{adaptive_iterations, draw};
use super::{CameraIntrinsics, MultiviewError, RansacConfig};
use crate::lie::{skew, so3_exp, Se3Pose};

/// Pixel observations of the same point in views `a` and `b`.
pub type PixelMatch = (Vector2<f64>, Vector2<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    /// Pose of view `b` relative to view `a`, with unit translation.
    pub pose: Se3Pose,
    pub inliers: Vec<bool>,
    pub essential: Matrix3<f64>,
}

impl RelativePose {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

pub fn essential_from_pose(pose: &Se3Pose) -> Matrix3<f64> {
    skew(&pose.translation) * pose.rotation
}

// Monomials of degree <= 3 in (x, y, z). The ten cubics come first; the
// remaining ten form the quotient basis used by the action matrix.
const MONOMIALS: [[u8; 3]; 20] = [
    [3, 0, 0],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [1, 1, 1],
    [1, 0, 2],
    [0, 3, 0],
    [0, 2, 1],
    [0, 1, 2],
    [0, 0, 3],
    [2, 0, 0],
    [1, 1, 0],
    [1, 0, 1],
    [0, 2, 0],
    [0, 1, 1],
    [0, 0, 2],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [0, 0, 0],
];

fn monomial_index(e: [u8; 3]) -> usize {
    MONOMIALS
        .iter()
        .position(|m| *m == e)
        .expect("monomial degree above 3")
}

#[derive(Clone, Copy)]
struct Poly([f64; 20]);

impl Poly {
    fn zero() -> Self {
        Poly([0.0; 20])
    }

    fn linear(x: f64, y: f64, z: f64, c: f64) -> Self {
        let mut p = Poly::zero();
        p.0[16] = x;
        p.0[17] = y;
        p.0[18] = z;
        p.0[19] = c;
        p
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut p = *self;
        for (a, b) in p.0.iter_mut().zip(o.0.iter()) {
            *a += b;
        }
        p
    }

    fn scale(&self, s: f64) -> Poly {
        let mut p = *self;
        p.0.iter_mut().for_each(|a| *a *= s);
        p
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut p = Poly::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in o.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let (ea, eb) = (MONOMIALS[i], MONOMIALS[j]);
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                p.0[monomial_index(e)] += a * b;
            }
        }
        p
    }
}

type PolyMat = [[Poly; 3]; 3];

fn pm_mul(a: &PolyMat, b: &PolyMat) -> PolyMat {
    let mut out = [[Poly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Poly::zero();
            for k in 0..3 {
                acc = acc.add(&a[i][k].mul(&b[k][j]));
            }
            out[i][j] = acc;
        }
    }
    out
}

fn pm_transpose(a: &PolyMat) -> PolyMat {
    let mut out = [[Poly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Candidate essential matrices from exactly five normalized correspondences
/// (rays `(x, y)` with implicit `z = 1`).
pub fn five_point(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Vec<Matrix3<f64>> {
    if a.len() != 5 || b.len() != 5 {
        return Vec::new();
    }
    let mut q = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..5 {
        let xa = Vector3::new(a[i].x, a[i].y, 1.0);
        let xb = Vector3::new(b[i].x, b[i].y, 1.0);
        for r in 0..3 {
            for c in 0..3 {
                q[(i, 3 * r + c)] = xb[r] * xa[c];
            }
        }
    }
    let svd = q.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return Vec::new();
    };
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let basis: Vec<Matrix3<f64>> = order[..4]
        .iter()
        .map(|&row| Matrix3::from_fn(|r, c| v_t[(row, 3 * r + c)]))
        .collect();

    // E = x E0 + y E1 + z E2 + E3
    let mut e: PolyMat = [[Poly::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            e[r][c] = Poly::linear(basis[0][(r, c)], basis[1][(r, c)], basis[2][(r, c)], basis[3][(r, c)]);
        }
    }

    let mut eqs: Vec<Poly> = Vec::with_capacity(10);
    let det = e[0][0].mul(&e[1][1].mul(&e[2][2]).add(&e[1][2].mul(&e[2][1]).scale(-1.0)))
        .add(&e[0][1].mul(&e[1][2].mul(&e[2][0]).add(&e[1][0].mul(&e[2][2]).scale(-1.0))))
        .add(&e[0][2].mul(&e[1][0].mul(&e[2][1]).add(&e[1][1].mul(&e[2][0]).scale(-1.0))));
    eqs.push(det);
    let eet = pm_mul(&e, &pm_transpose(&e));
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = pm_mul(&eet, &e);
    for r in 0..3 {
        for c in 0..3 {
            eqs.push(eete[r][c].scale(2.0).add(&trace.mul(&e[r][c]).scale(-1.0)));
        }
    }

    let m = DMatrix::from_fn(10, 20, |r, c| eqs[r].0[c]);
    let lead = m.view((0, 0), (10, 10)).into_owned();
    let rest = m.view((0, 10), (10, 10)).into_owned();
    let Some(g) = lead.lu().solve(&rest) else {
        return Vec::new();
    };

    // Multiplication by x on the basis monomials (indices 10..20).
    let mut action = DMatrix::<f64>::zeros(10, 10);
    for j in 0..10 {
        let bm = MONOMIALS[10 + j];
        let target = monomial_index([bm[0] + 1, bm[1], bm[2]]);
        if target >= 10 {
            action[(j, target - 10)] = 1.0;
        } else {
            for k in 0..10 {
                action[(j, k)] = -g[(target, k)];
            }
        }
    }
    let Some(schur) = Schur::try_new(action.clone(), f64::EPSILON, 1000) else {
        return Vec::new();
    };
    let idx_x = monomial_index([1, 0, 0]) - 10;
    let idx_y = monomial_index([0, 1, 0]) - 10;
    let idx_z = monomial_index([0, 0, 1]) - 10;
    let idx_1 = monomial_index([0, 0, 0]) - 10;

    let mut out = Vec::new();
    for ev in schur.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-8 * (1.0 + ev.re.abs()) {
            continue;
        }
        let mut shifted = action.clone();
        for i in 0..10 {
            shifted[(i, i)] -= ev.re;
        }
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (row, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let v = vt.row(row);
        if v[idx_1].abs() < 1e-12 {
            continue;
        }
        let (x, y, z) = (v[idx_x] / v[idx_1], v[idx_y] / v[idx_1], v[idx_z] / v[idx_1]);
        let em = basis[0] * x + basis[1] * y + basis[2] * z + basis[3];
        let norm = em.norm();
        if norm > 0.0 && norm.is_finite() {
            out.push(em / norm);
        }
    }
    out
}

/// The four `(R, t)` factorizations of an essential matrix, `‖t‖ = 1`.
pub fn decompose_essential(e: &Matrix3<f64>) -> [Se3Pose; 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap_or_else(Matrix3::identity);
    let mut v_t = svd.v_t.unwrap_or_else(Matrix3::identity);
    // Sort so the smallest singular value is last.
    let s = svd.singular_values;
    let smallest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
    if smallest != 2 {
        u.swap_columns(smallest, 2);
        v_t.swap_rows(smallest, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned().normalize();
    [
        Se3Pose::new(r1, t),
        Se3Pose::new(r1, -t),
        Se3Pose::new(r2, t),
        Se3Pose::new(r2, -t),
    ]
}

/// RMS of the two point-to-epipolar-line distances, in units of the inputs
/// (multiply by the focal length for pixels when inputs are normalized).
pub fn symmetric_epipolar_distance(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let lb = e * xa;
    let la = e.transpose() * xb;
    let c = xb.dot(&lb);
    let db2 = c * c / (lb.x * lb.x + lb.y * lb.y).max(1e-300);
    let da2 = c * c / (la.x * la.x + la.y * la.y).max(1e-300);
    ((da2 + db2) * 0.5).sqrt()
}

fn sampson(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let lb = e * xa;
    let la = e.transpose() * xb;
    let c = xb.dot(&lb);
    c / (lb.x * lb.x + lb.y * lb.y + la.x * la.x + la.y * la.y).max(1e-300).sqrt()
}

fn cheirality_count(pose: &Se3Pose, a: &[Vector2<f64>], b: &[Vector2<f64>], mask: &[bool]) -> usize {
    // Depths along both rays from the linear two-view relation
    // λb xb = λa R xa + t.
    let mut count = 0;
    for i in 0..a.len() {
        if !mask[i] {
            continue;
        }
        let ra = pose.rotation * Vector3::new(a[i].x, a[i].y, 1.0);
        let xb = Vector3::new(b[i].x, b[i].y, 1.0);
        // Solve [ra, -xb] [λa, λb]ᵀ = -t in least squares.
        let m = nalgebra::Matrix3x2::from_columns(&[ra, -xb]);
        let mtm = m.transpose() * m;
        let Some(inv) = mtm.try_inverse() else { continue };
        let l = inv * (m.transpose() * (-pose.translation));
        if l.x > 0.0 && l.y > 0.0 {
            count += 1;
        }
    }
    count
}

fn select_by_cheirality(e: &Matrix3<f64>, a: &[Vector2<f64>], b: &[Vector2<f64>], mask: &[bool]) -> Se3Pose {
    let cands = decompose_essential(e);
    let mut best = cands[0];
    let mut best_count = 0;
    for c in cands {
        let n = cheirality_count(&c, a, b, mask);
        if n > best_count {
            best_count = n;
            best = c;
        }
    }
    best
}

/// Levenberg-Marquardt on the Sampson error over the inliers, with the
/// translation kept on the unit sphere.
fn refine_relative_pose(pose: &Se3Pose, a: &[Vector2<f64>], b: &[Vector2<f64>], mask: &[bool]) -> Se3Pose {
    let idx: Vec<usize> = (0..a.len()).filter(|&i| mask[i]).collect();
    if idx.len() < 6 {
        return *pose;
    }
    let cost_of = |p: &Se3Pose| -> f64 {
        let e = essential_from_pose(p);
        idx.iter().map(|&i| sampson(&e, &a[i], &b[i]).powi(2)).sum()
    };
    let perturb = |p: &Se3Pose, d: &SMatrix<f64, 5, 1>| -> Se3Pose {
        let t = p.translation;
        let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u1 = t.cross(&helper).normalize();
        let u2 = t.cross(&u1).normalize();
        let rotation = so3_exp(&Vector3::new(d[0], d[1], d[2])) * p.rotation;
        let translation = (t + u1 * d[3] + u2 * d[4]).normalize();
        Se3Pose::new(rotation, translation)
    };
    let mut current = *pose;
    let mut cost = cost_of(&current);
    let mut lambda = 1e-3;
    for _ in 0..30 {
        let e0 = essential_from_pose(&current);
        let r0: Vec<f64> = idx.iter().map(|&i| sampson(&e0, &a[i], &b[i])).collect();
        let mut jac = DMatrix::<f64>::zeros(idx.len(), 5);
        let h = 1e-7;
        for k in 0..5 {
            let mut d = SMatrix::<f64, 5, 1>::zeros();
            d[k] = h;
            let ep = essential_from_pose(&perturb(&current, &d));
            d[k] = -h;
            let em = essential_from_pose(&perturb(&current, &d));
            for (row, &i) in idx.iter().enumerate() {
                jac[(row, k)] = (sampson(&ep, &a[i], &b[i]) - sampson(&em, &a[i], &b[i])) / (2.0 * h);
            }
        }
        let r = nalgebra::DVector::from_vec(r0);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj.clone();
            for d in 0..5 {
                damped[(d, d)] += lambda * (jtj[(d, d)] + 1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else { break };
            let d = SMatrix::<f64, 5, 1>::from_column_slice(step.as_slice());
            let cand = perturb(&current, &d);
            let c = cost_of(&cand);
            if c < cost {
                current = cand;
                let rel = (cost - c) / cost.max(1e-300);
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost < 1e-28 {
            break;
        }
    }
    current
}

/// RANSAC over five-point hypotheses followed by nonlinear refinement on the
/// inliers. Inliers are judged by symmetric epipolar distance in pixels.
pub fn estimate_relative_pose(
    matches: &[PixelMatch],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RelativePose, MultiviewError> {
    let n = matches.len();
    if n < 5 {
        return Err(MultiviewError::TooFewCorrespondences { needed: 5, got: n });
    }
    let a: Vec<Vector2<f64>> = matches.iter().map(|m| k.normalize(&m.0)).collect();
    let b: Vec<Vector2<f64>> = matches.iter().map(|m| k.normalize(&m.1)).collect();
    let thr = cfg.inlier_threshold / k.focal;

    let classify = |e: &Matrix3<f64>| -> (Vec<bool>, usize, f64) {
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut sum = 0.0;
        for i in 0..n {
            let d = symmetric_epipolar_distance(e, &a[i], &b[i]);
            if d < thr {
                mask[i] = true;
                count += 1;
                sum += d * d;
            }
        }
        (mask, count, sum)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<f64>, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let s = draw(&mut rng, n, 5);
        let sa: Vec<_> = s.iter().map(|&i| a[i]).collect();
        let sb: Vec<_> = s.iter().map(|&i| b[i]).collect();
        for e in five_point(&sa, &sb) {
            let (_, count, sum) = classify(&e);
            let better = match &best {
                None => true,
                Some((_, bc, bs)) => count > *bc || (count == *bc && sum < *bs),
            };
            if better {
                best = Some((e, count, sum));
                needed = adaptive_iterations(count as f64 / n as f64, 5, cfg.confidence, cfg.max_iterations);
            }
        }
    }
    let Some((e, count, _)) = best else {
        return Err(MultiviewError::EstimationFailed {
            inliers: 0,
            required: cfg.min_inliers.max(5),
        });
    };
    let required = cfg.min_inliers.max(5);
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    let (mask, _, _) = classify(&e);
    let pose = select_by_cheirality(&e, &a, &b, &mask);
    let mut pose = refine_relative_pose(&pose, &a, &b, &mask);
    let mut essential = essential_from_pose(&pose);
    let (mut mask, mut count, _) = classify(&essential);
    if count >= required {
        pose = refine_relative_pose(&pose, &a, &b, &mask);
        essential = essential_from_pose(&pose);
        let reclass = classify(&essential);
        mask = reclass.0;
        count = reclass.1;
    }
    if count < required {
        return Err(MultiviewError::EstimationFailed { inliers: count, required });
    }
    Ok(RelativePose {
        pose,
        inliers: mask,
        essential,
    })
}

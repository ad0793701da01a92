//! Sim(3) and SE(3) group operations.
//!
//! A similarity `G = (R, s, t)` acts on points as `G(x) = s R x + t`. Its
//! tangent vector is ordered `(ω, σ, μ)`: rotation, translation component
//! and log-scale.
//!
//! Composition convention: `a.compose(&b)` applies `a` first, then `b`, so
//! `a.compose(&b).apply(x) == b.apply(a.apply(x))`. In matrix terms this is
//! the product `M_b · M_a`.
//!
//! State updates are left-multiplicative: a tangent increment `v` moves `G`
//! to `exp(v) · G`, i.e. `G.compose(&exp(v))`.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector7 = SVector<f64, 7>;
pub type Matrix3x7 = SMatrix<f64, 3, 7>;

/// Rotations whose angle is this close to π have an ambiguous logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle {angle} is too close to pi, logarithm axis is ambiguous")]
    DegenerateLogarithm { angle: f64 },
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues exponential of an axis-angle vector.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle logarithm of a rotation matrix.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let asym = vee(&(r - r.transpose())) * 0.5;
    let sin = asym.norm();
    let theta = sin.atan2(cos);
    if theta > std::f64::consts::PI - LOG_PI_MARGIN {
        return Err(LieError::DegenerateLogarithm { angle: theta });
    }
    if theta < 1e-6 {
        return Ok(asym * (1.0 + theta * theta / 6.0));
    }
    if theta < 2.5 {
        return Ok(asym * (theta / sin));
    }
    // Near pi the antisymmetric part loses precision; read the axis off the
    // symmetric part (1 - cos) a aᵀ instead.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis = sym.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&asym) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Coefficients `(A, B, C)` of `W = A I + B ω× + C ω×²`, the matrix that maps
/// the translation tangent σ to the group translation.
///
/// `W = ∫₀¹ e^{μτ} exp(τ ω×) dτ`. With `z = μ + iθ`, `A + i θ B` and
/// `A - θ² C` are the imaginary/real parts of `(e^z - 1)/z`; for `|z| < 2`
/// the power series is summed with recurrences free of any division by θ.
fn sim3_w_coefficients(theta: f64, mu: f64) -> (f64, f64, f64) {
    let theta2 = theta * theta;
    if theta2 + mu * mu < 4.0 {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        // z^k = p + i θ q_red; mu_pow = μ^k; p_red = (μ^k - p) / θ²
        let (mut mu_pow, mut p, mut q_red, mut p_red) = (1.0, 1.0, 0.0, 0.0);
        let mut fact = 1.0; // (k+1)!
        for k in 0..32 {
            fact *= (k + 1) as f64;
            a += mu_pow / fact;
            b += q_red / fact;
            c += p_red / fact;
            let p_next = mu * p - theta2 * q_red;
            let q_next = mu * q_red + p;
            let pr_next = mu * p_red + q_red;
            mu_pow *= mu;
            p = p_next;
            q_red = q_next;
            p_red = pr_next;
        }
        return (a, b, c);
    }
    let em = mu.exp();
    let a = if mu == 0.0 { 1.0 } else { mu.exp_m1() / mu };
    if theta < 1e-6 {
        let mu2 = mu * mu;
        let b = ((mu - 1.0) * em + 1.0) / mu2;
        let c = (em * (mu2 - 2.0 * mu + 2.0) - 2.0) / (2.0 * mu2 * mu);
        return (a, b, c);
    }
    let (sin, cos) = theta.sin_cos();
    let denom = theta2 + mu * mu;
    // ∫ e^{μτ} sin θτ and ∫ e^{μτ} cos θτ over [0, 1]
    let int_sin = (em * mu * sin + theta - em * theta * cos) / denom;
    let int_cos = (em * (mu * cos + theta * sin) - mu) / denom;
    (a, int_sin / theta, (a - int_cos) / theta2)
}

fn sim3_w(omega: &Vector3<f64>, mu: f64) -> Matrix3<f64> {
    let (a, b, c) = sim3_w_coefficients(omega.norm(), mu);
    let k = skew(omega);
    Matrix3::identity() * a + k * b + k * k * c
}

/// Element of the Lie algebra sim(3), ordered `(ω, σ, μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3Tangent {
    pub omega: Vector3<f64>,
    pub sigma: Vector3<f64>,
    pub mu: f64,
}

impl Sim3Tangent {
    pub fn zero() -> Self {
        Self {
            omega: Vector3::zeros(),
            sigma: Vector3::zeros(),
            mu: 0.0,
        }
    }

    pub fn new(omega: Vector3<f64>, sigma: Vector3<f64>, mu: f64) -> Self {
        Self { omega, sigma, mu }
    }

    pub fn from_vector(v: &Vector7) -> Self {
        Self {
            omega: Vector3::new(v[0], v[1], v[2]),
            sigma: Vector3::new(v[3], v[4], v[5]),
            mu: v[6],
        }
    }

    pub fn to_vector(&self) -> Vector7 {
        Vector7::from_column_slice(&[
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.sigma.x,
            self.sigma.y,
            self.sigma.z,
            self.mu,
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn exp(&self) -> Sim3Transform {
        sim3_exp(self)
    }
}

/// 7-DoF similarity transform acting as `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3Transform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            scale: 1.0,
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, scale: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            scale,
            translation,
        }
    }

    pub fn from_se3(pose: &Se3Pose) -> Self {
        Self::new(pose.rotation, 1.0, pose.translation)
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        sim3_apply(self, x)
    }

    pub fn compose(&self, then: &Sim3Transform) -> Sim3Transform {
        sim3_compose(self, then)
    }

    pub fn inverse(&self) -> Sim3Transform {
        sim3_inverse(self)
    }

    pub fn log(&self) -> Result<Sim3Tangent, LieError> {
        sim3_log(self)
    }

    /// Homogeneous 4×4 form `[sR t; 0 1]`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest elementwise deviation of `RᵀR` from identity, plus the
    /// deviation of det(R) from one.
    pub fn orthonormality_error(&self) -> f64 {
        rotation_error(&self.rotation)
    }

    pub fn is_valid(&self) -> bool {
        self.scale > 0.0 && self.scale.is_finite() && self.orthonormality_error() < 1e-9
    }
}

pub(crate) fn rotation_error(r: &Matrix3<f64>) -> f64 {
    let e = (r.transpose() * r - Matrix3::identity()).abs().max();
    e.max((r.determinant() - 1.0).abs())
}

/// Project a near-rotation back onto SO(3).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let q = UnitQuaternion::from_matrix_eps(r, 1e-15, 100, UnitQuaternion::identity());
    q.to_rotation_matrix().into_inner()
}

pub fn sim3_exp(v: &Sim3Tangent) -> Sim3Transform {
    Sim3Transform {
        rotation: so3_exp(&v.omega),
        scale: v.mu.exp(),
        translation: sim3_w(&v.omega, v.mu) * v.sigma,
    }
}

pub fn sim3_log(g: &Sim3Transform) -> Result<Sim3Tangent, LieError> {
    if !(g.scale > 0.0 && g.scale.is_finite()) {
        return Err(LieError::NonPositiveScale(g.scale));
    }
    let omega = so3_log(&g.rotation)?;
    let mu = g.scale.ln();
    let w = sim3_w(&omega, mu);
    // W is invertible for every rotation angle below π.
    let sigma = w
        .lu()
        .solve(&g.translation)
        .unwrap_or_else(|| g.translation);
    Ok(Sim3Tangent { omega, sigma, mu })
}

/// `first` applied, then `then`.
pub fn sim3_compose(first: &Sim3Transform, then: &Sim3Transform) -> Sim3Transform {
    Sim3Transform {
        rotation: then.rotation * first.rotation,
        scale: then.scale * first.scale,
        translation: then.rotation * first.translation * then.scale + then.translation,
    }
}

pub fn sim3_inverse(g: &Sim3Transform) -> Sim3Transform {
    let rt = g.rotation.transpose();
    let inv_s = 1.0 / g.scale;
    Sim3Transform {
        rotation: rt,
        scale: inv_s,
        translation: -(rt * g.translation) * inv_s,
    }
}

pub fn sim3_apply(g: &Sim3Transform, x: &Vector3<f64>) -> Vector3<f64> {
    g.rotation * x * g.scale + g.translation
}

/// Group element paired with its tangent, updated multiplicatively from
/// the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3State {
    pub group: Sim3Transform,
    pub tangent: Sim3Tangent,
}

impl Default for Sim3State {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3State {
    pub fn identity() -> Self {
        Self {
            group: Sim3Transform::identity(),
            tangent: Sim3Tangent::zero(),
        }
    }

    pub fn from_group(group: Sim3Transform) -> Result<Self, LieError> {
        Ok(Self {
            tangent: sim3_log(&group)?,
            group,
        })
    }

    pub fn from_tangent(tangent: Sim3Tangent) -> Self {
        Self {
            group: sim3_exp(&tangent),
            tangent,
        }
    }
}

/// `G_up = exp(v_up)`, `υ = log(G_up · exp(υ))`, `G = G_up · G`.
pub fn sim3_manifold_update(state: &Sim3State, v_up: &Sim3Tangent) -> Result<Sim3State, LieError> {
    let g_up = sim3_exp(v_up);
    let tangent = sim3_log(&sim3_compose(&sim3_exp(&state.tangent), &g_up))?;
    let group = sim3_compose(&state.group, &g_up);
    Ok(Sim3State { group, tangent })
}

/// Residual of one observation edge and its Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentJacobians {
    pub residual: Vector3<f64>,
    /// Columns ordered `(ω, σ, μ)` for a left perturbation of the pose.
    pub pose: Matrix3x7,
    pub landmark: Matrix3<f64>,
}

/// `r = s R x + t − X` with derivatives taken at the transformed point
/// `y = s R x + t`: `∂y/∂ω = −y×`, `∂y/∂σ = I`, `∂y/∂μ = y`.
pub fn alignment_residual_and_jacobians(
    g: &Sim3Transform,
    local: &Vector3<f64>,
    global: &Vector3<f64>,
) -> AlignmentJacobians {
    let y = sim3_apply(g, local);
    let mut pose = Matrix3x7::zeros();
    pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&y)));
    pose.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    pose.fixed_view_mut::<3, 1>(0, 6).copy_from(&y);
    AlignmentJacobians {
        residual: y - global,
        pose,
        landmark: -Matrix3::identity(),
    }
}

/// Rigid camera-from-world pose: `x_cam = R X + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Se3Pose {
        let rt = self.rotation.transpose();
        Se3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` applied first, then `then`.
    pub fn compose(&self, then: &Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: then.rotation * self.rotation,
            translation: then.rotation * self.translation + then.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Build a camera-from-world pose from a camera center and a
    /// world-from-camera rotation.
    pub fn from_center(world_from_camera: Matrix3<f64>, center: Vector3<f64>) -> Se3Pose {
        let rotation = world_from_camera.transpose();
        Se3Pose {
            rotation,
            translation: -(rotation * center),
        }
    }

    /// Left update `exp(δ) · T` using a first-order retraction:
    /// rotation by `Exp(δω)`, translation shifted by `δv`.
    pub fn retract(&self, delta_omega: &Vector3<f64>, delta_v: &Vector3<f64>) -> Se3Pose {
        let dr = so3_exp(delta_omega);
        Se3Pose {
            rotation: dr * self.rotation,
            translation: dr * self.translation + delta_v,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix_eps(&self.rotation, 1e-15, 100, UnitQuaternion::identity())
    }

    /// Rotation angle (radians) between two poses and translation distance
    /// between their camera centers.
    pub fn distance(&self, other: &Se3Pose) -> (f64, f64) {
        let dr = self.rotation * other.rotation.transpose();
        let cos = ((dr.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = (vee(&(dr - dr.transpose())) * 0.5).norm();
        (sin.atan2(cos), (self.center() - other.center()).norm())
    }

    /// Promote to a similarity frame: `global = G ∘ local`, where the pose
    /// maps world points of the local frame into the camera. Returns the
    /// camera-from-global pose with the scale removed.
    pub fn transformed_by(&self, g: &Sim3Transform) -> Se3Pose {
        // x_cam = R_c X_local + t_c and X_global = s R X_local + t, so
        // x_cam = R_c Rᵀ (X_global - t)/s + t_c; scale the camera frame by s.
        let rotation = self.rotation * g.rotation.transpose();
        let translation = self.translation * g.scale - rotation * g.translation;
        Se3Pose {
            rotation,
            translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tangent(rng: &mut ChaCha8Rng, max_angle: f64) -> Sim3Tangent {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..max_angle);
        Sim3Tangent::new(
            axis * angle,
            Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
            rng.random_range(-1.5..1.5),
        )
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        )
    }

    fn max_diff(a: &Sim3Transform, b: &Sim3Transform) -> f64 {
        (a.rotation - b.rotation)
            .abs()
            .max()
            .max((a.scale - b.scale).abs())
            .max((a.translation - b.translation).abs().max())
    }

    #[test]
    fn exp_trivial_cases() {
        let g = sim3_exp(&Sim3Tangent::zero());
        assert_eq!(g, Sim3Transform::identity());

        let g = sim3_exp(&Sim3Tangent::new(
            Vector3::zeros(),
            Vector3::new(1.0, 2.0, 3.0),
            0.0,
        ));
        assert_eq!(g.rotation, Matrix3::identity());
        assert!((g.scale - 1.0).abs() < 1e-15);
        assert!((g.translation - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-15);

        let g = sim3_exp(&Sim3Tangent::new(Vector3::zeros(), Vector3::zeros(), 2f64.ln()));
        assert!((g.scale - 2.0).abs() < 1e-15);
        assert_eq!(g.translation, Vector3::zeros());
    }

    #[test]
    fn log_trivial_cases() {
        let v = sim3_log(&Sim3Transform::identity()).unwrap();
        assert_eq!(v.to_vector(), Vector7::zeros());
        let v = sim3_log(&Sim3Transform::new(
            Matrix3::identity(),
            std::f64::consts::E,
            Vector3::zeros(),
        ))
        .unwrap();
        assert!((v.mu - 1.0).abs() < 1e-15);
        assert!(v.omega.norm() == 0.0 && v.sigma.norm() == 0.0);
    }

    #[test]
    fn log_at_pi_is_degenerate() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        let g = Sim3Transform::new(r, 1.0, Vector3::zeros());
        assert!(matches!(
            sim3_log(&g),
            Err(LieError::DegenerateLogarithm { .. })
        ));
    }

    #[test]
    fn exp_log_round_trip_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let v = random_tangent(&mut rng, 3.0);
            let back = sim3_log(&sim3_exp(&v)).unwrap();
            let err = (back.to_vector() - v.to_vector()).norm();
            assert!(err < 1e-9, "round trip error {err} for {v:?}");
        }
    }

    #[test]
    fn round_trip_small_and_mixed_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for exp10 in [-12, -9, -7, -5, -3, -1] {
            for _ in 0..50 {
                let scale = 10f64.powi(exp10);
                let mut v = random_tangent(&mut rng, 3.0);
                v.omega *= scale;
                v.mu *= if rng.random_bool(0.5) { scale } else { 1.0 };
                let back = sim3_log(&sim3_exp(&v)).unwrap();
                assert!((back.to_vector() - v.to_vector()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn w_matrix_matches_quadrature() {
        // Independent check of the V-matrix: Simpson integration of
        // e^{μτ} exp(τ ω×) over [0, 1].
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let v = random_tangent(&mut rng, 3.0);
            let n = 2000;
            let mut w = Matrix3::zeros();
            for i in 0..=n {
                let tau = i as f64 / n as f64;
                let weight = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w += so3_exp(&(v.omega * tau)) * (v.mu * tau).exp() * weight;
            }
            w /= 3.0 * n as f64;
            assert!((w - sim3_w(&v.omega, v.mu)).abs().max() < 1e-10);
        }
        // Large-scale branch.
        let w = sim3_w(&Vector3::new(0.0, 0.0, 1e-7), 3.0);
        let a = 3f64.exp_m1() / 3.0;
        assert!((w[(0, 0)] - a).abs() < 1e-12);
    }

    #[test]
    fn compose_and_inverse_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = sim3_exp(&random_tangent(&mut rng, 3.0));
            assert!(max_diff(&Sim3Transform::identity().compose(&g), &g) < 1e-15);
            assert!(max_diff(&g.compose(&g.inverse()), &Sim3Transform::identity()) < 1e-9);
            assert!(max_diff(&g.inverse().inverse(), &g) < 1e-9);
        }
        assert_eq!(Sim3Transform::identity().inverse(), Sim3Transform::identity());
        let g = Sim3Transform::new(Matrix3::identity(), 2.0, Vector3::new(1.0, 0.0, 0.0));
        let inv = g.inverse();
        assert_eq!(inv.scale, 0.5);
        assert_eq!(inv.translation, Vector3::new(-0.5, 0.0, 0.0));
    }

    #[test]
    fn associativity_and_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let a = sim3_exp(&random_tangent(&mut rng, 3.0));
            let b = sim3_exp(&random_tangent(&mut rng, 3.0));
            let c = sim3_exp(&random_tangent(&mut rng, 3.0));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            let scale = 1.0 + left.translation.norm();
            assert!(max_diff(&left, &right) < 1e-10 * scale);
            let x = random_point(&mut rng);
            let direct = b.apply(&a.apply(&x));
            let composed = a.compose(&b).apply(&x);
            assert!((direct - composed).norm() < 1e-10 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn apply_matches_homogeneous_matrix() {
        assert_eq!(
            Sim3Transform::identity().apply(&Vector3::new(4.0, 5.0, 6.0)),
            Vector3::new(4.0, 5.0, 6.0)
        );
        let g = Sim3Transform::new(Matrix3::identity(), 2.0, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(g.apply(&Vector3::new(1.0, 1.0, 1.0)), Vector3::new(3.0, 2.0, 2.0));

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let g = sim3_exp(&random_tangent(&mut rng, 3.0));
            let x = random_point(&mut rng);
            let h = g.to_matrix() * x.push(1.0);
            assert!((h.xyz() - g.apply(&x)).norm() < 1e-12 * (1.0 + h.norm()));
        }
    }

    #[test]
    fn manifold_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let state = Sim3State::from_tangent(random_tangent(&mut rng, 2.0));
        let same = sim3_manifold_update(&state, &Sim3Tangent::zero()).unwrap();
        assert!(max_diff(&same.group, &state.group) < 1e-15);
        assert!((same.tangent.to_vector() - state.tangent.to_vector()).norm() < 1e-9);

        let v = random_tangent(&mut rng, 2.0);
        let moved = sim3_manifold_update(&Sim3State::identity(), &v).unwrap();
        assert!(max_diff(&moved.group, &sim3_exp(&v)) < 1e-15);

        let mut state = Sim3State::identity();
        let mut product = Sim3Transform::identity();
        for _ in 0..100 {
            let mut v = random_tangent(&mut rng, 0.1);
            v.sigma *= 0.05;
            v.mu *= 0.05;
            state = sim3_manifold_update(&state, &v).unwrap();
            product = product.compose(&sim3_exp(&v));
        }
        assert!(max_diff(&state.group, &product) < 1e-8);
        assert!(max_diff(&sim3_exp(&state.tangent), &state.group) < 1e-8);
    }

    fn finite_difference_jacobian(
        g: &Sim3Transform,
        x: &Vector3<f64>,
        target: &Vector3<f64>,
    ) -> (Matrix3x7, Matrix3<f64>) {
        let h = 1e-6;
        let state = Sim3State {
            group: *g,
            tangent: Sim3Tangent::zero(),
        };
        let mut jp = Matrix3x7::zeros();
        for k in 0..7 {
            let mut e = Vector7::zeros();
            e[k] = h;
            let plus = sim3_manifold_update(&state, &Sim3Tangent::from_vector(&e)).unwrap();
            let minus = sim3_manifold_update(&state, &Sim3Tangent::from_vector(&-e)).unwrap();
            let rp = plus.group.apply(x) - target;
            let rm = minus.group.apply(x) - target;
            jp.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        let mut jl = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let rp = g.apply(x) - (target + e);
            let rm = g.apply(x) - (target - e);
            jl.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        (jp, jl)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let zero = alignment_residual_and_jacobians(
            &Sim3Transform::identity(),
            &Vector3::new(1.0, 2.0, 3.0),
            &Vector3::new(1.0, 2.0, 3.0),
        );
        assert_eq!(zero.residual, Vector3::zeros());
        for _ in 0..100 {
            let g = sim3_exp(&random_tangent(&mut rng, 3.0));
            let x = random_point(&mut rng);
            let target = random_point(&mut rng);
            let j = alignment_residual_and_jacobians(&g, &x, &target);
            assert_eq!(
                j.pose.fixed_view::<3, 3>(0, 3).into_owned(),
                Matrix3::identity()
            );
            let (jp, jl) = finite_difference_jacobian(&g, &x, &target);
            let rel = (j.pose - jp).norm() / j.pose.norm();
            assert!(rel < 1e-5, "pose jacobian rel error {rel}");
            let rel = (j.landmark - jl).norm() / j.landmark.norm();
            assert!(rel < 1e-5, "landmark jacobian rel error {rel}");
        }
    }

    #[test]
    fn skew_properties() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            skew(&Vector3::new(0.0, 0.0, 1.0)) * Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let v = random_point(&mut rng);
            let w = random_point(&mut rng);
            assert_eq!(skew(&v).transpose(), -skew(&v));
            assert!((skew(&v) * w - v.cross(&w)).norm() < 1e-12);
        }
    }

    #[test]
    fn se3_promotion_to_global_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pose = Se3Pose::from_center(
                so3_exp(&random_tangent(&mut rng, 2.0).omega),
                random_point(&mut rng),
            );
            let g = sim3_exp(&random_tangent(&mut rng, 2.0));
            let global = pose.transformed_by(&g);
            let x_local = random_point(&mut rng);
            let cam_local = pose.apply(&x_local);
            let cam_global = global.apply(&g.apply(&x_local));
            // Same viewing ray, depth scaled by s.
            assert!((cam_global - cam_local * g.scale).norm() < 1e-9 * (1.0 + cam_global.norm()));
            assert!((global.center() - g.apply(&pose.center())).norm() < 1e-9 * (1.0 + global.center().norm()));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tangent() -> impl Strategy<Value = Sim3Tangent> {
            (
                prop::array::uniform3(-1.7f64..1.7),
                prop::array::uniform3(-10.0f64..10.0),
                -2.0f64..2.0,
            )
                .prop_map(|(w, s, m)| {
                    Sim3Tangent::new(Vector3::from(w), Vector3::from(s), m)
                })
        }

        proptest! {
            #[test]
            fn log_inverts_exp(v in tangent()) {
                prop_assume!(v.omega.norm() < 3.0);
                let back = sim3_log(&sim3_exp(&v)).unwrap();
                prop_assert!((back.to_vector() - v.to_vector()).norm() < 1e-9);
            }

            #[test]
            fn rotation_stays_orthonormal(v in tangent()) {
                prop_assert!(sim3_exp(&v).is_valid());
            }
        }
    }
}

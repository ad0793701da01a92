//! Robust bundle adjustment: Levenberg-Marquardt on Huber-weighted
//! reprojection residuals, with point blocks eliminated by the Schur
//! complement and a dense solve of the reduced camera system.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{skew, Se3Pose};
use crate::multiview::CameraIntrinsics;

/// Residual returned for points behind the camera.
pub const BEHIND_CAMERA_RESIDUAL: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraBlock {
    pub pose: Se3Pose,
    pub focal: f64,
    pub fix_pose: bool,
    pub fix_focal: bool,
}

impl CameraBlock {
    pub fn new(pose: Se3Pose, focal: f64) -> Self {
        Self {
            pose,
            focal,
            fix_pose: false,
            fix_focal: true,
        }
    }

    pub fn fixed(pose: Se3Pose, focal: f64) -> Self {
        Self {
            fix_pose: true,
            ..Self::new(pose, focal)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointBlock {
    pub position: Vector3<f64>,
    pub fixed: bool,
}

impl PointBlock {
    pub fn new(position: Vector3<f64>) -> Self {
        Self { position, fixed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BAObservation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BAProblem {
    pub principal_point: Vector2<f64>,
    pub cameras: Vec<CameraBlock>,
    pub points: Vec<PointBlock>,
    pub observations: Vec<BAObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BAOptions {
    pub max_iterations: usize,
    pub function_tolerance: f64,
    pub huber_delta: f64,
    pub estimate_focal: bool,
}

impl Default for BAOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            function_tolerance: 1e-10,
            huber_delta: 2.0,
            estimate_focal: false,
        }
    }
}

impl BAOptions {
    pub fn is_valid(&self) -> bool {
        self.max_iterations >= 1 && self.function_tolerance > 0.0 && self.huber_delta > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BAIteration {
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAResult {
    pub problem: BAProblem,
    /// RMS pixel error over all observations at the returned iterate.
    pub rms: f64,
    pub initial_rms: f64,
    pub log: Vec<BAIteration>,
    pub converged: bool,
}

impl BAResult {
    pub fn accepted_steps(&self) -> usize {
        self.log.iter().filter(|it| it.accepted).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BAError {
    #[error("no camera block has a fixed pose")]
    NoGaugeAnchor,
    #[error("observation {0} references a missing block")]
    InvalidObservation(usize),
    #[error("normal equations are rank deficient")]
    RankDeficient,
}

impl BAProblem {
    pub fn new(principal_point: Vector2<f64>) -> Self {
        Self {
            principal_point,
            cameras: Vec::new(),
            points: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn intrinsics(&self, camera: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: self.cameras[camera].focal,
            principal_point: self.principal_point,
        }
    }

    pub fn validate(&self) -> Result<(), BAError> {
        for (i, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(BAError::InvalidObservation(i));
            }
        }
        if !self.cameras.iter().any(|c| c.fix_pose) {
            return Err(BAError::NoGaugeAnchor);
        }
        Ok(())
    }

    /// Pixel error of every observation, in observation order.
    pub fn observation_errors(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| {
                let (r, _) = reprojection_residual(
                    &self.cameras[o.camera],
                    &self.principal_point,
                    &self.points[o.point].position,
                    &o.pixel,
                );
                r.norm()
            })
            .collect()
    }

    pub fn rms(&self) -> f64 {
        if self.observations.is_empty() {
            return 0.0;
        }
        let e = self.observation_errors();
        (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
    }
}

/// `project(K, pose, X) − pixel`. The flag is set when the point is not in
/// front of the camera, in which case a large constant residual is returned.
pub fn reprojection_residual(
    camera: &CameraBlock,
    principal_point: &Vector2<f64>,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> (Vector2<f64>, bool) {
    let xc = camera.pose.apply(point);
    if xc.z <= 0.0 {
        return (Vector2::new(BEHIND_CAMERA_RESIDUAL, BEHIND_CAMERA_RESIDUAL), true);
    }
    let p = Vector2::new(xc.x / xc.z, xc.y / xc.z) * camera.focal + principal_point;
    (p - pixel, false)
}

/// Residual derivatives with respect to the left pose perturbation
/// `(δω, δv)`, the focal length and the point.
pub fn reprojection_jacobians(
    camera: &CameraBlock,
    point: &Vector3<f64>,
) -> Option<(Matrix2x6<f64>, Vector2<f64>, Matrix2x3<f64>)> {
    let xc = camera.pose.apply(point);
    if xc.z <= 0.0 {
        return None;
    }
    let iz = 1.0 / xc.z;
    let f = camera.focal;
    let jp = Matrix2x3::new(f * iz, 0.0, -f * xc.x * iz * iz, 0.0, f * iz, -f * xc.y * iz * iz);
    let mut jpose = Matrix2x6::zeros();
    jpose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&xc)));
    jpose.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
    let jf = Vector2::new(xc.x * iz, xc.y * iz);
    Some((jpose, jf, jp * camera.pose.rotation))
}

fn huber_cost(r2: f64, delta: f64) -> f64 {
    if r2 <= delta * delta {
        r2
    } else {
        2.0 * delta * r2.sqrt() - delta * delta
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

fn robust_cost(problem: &BAProblem, delta: f64) -> f64 {
    problem
        .observations
        .iter()
        .map(|o| {
            let (r, _) = reprojection_residual(
                &problem.cameras[o.camera],
                &problem.principal_point,
                &problem.points[o.point].position,
                &o.pixel,
            );
            huber_cost(r.norm_squared(), delta)
        })
        .sum()
}

struct Layout {
    /// Offset into the reduced system and block size (0, 1, 6 or 7).
    camera: Vec<(usize, usize, bool, bool)>,
    dim: usize,
}

fn layout(problem: &BAProblem, estimate_focal: bool) -> Layout {
    let mut dim = 0;
    let camera = problem
        .cameras
        .iter()
        .map(|c| {
            let pose = !c.fix_pose;
            let focal = estimate_focal && !c.fix_focal;
            let size = if pose { 6 } else { 0 } + if focal { 1 } else { 0 };
            let entry = (dim, size, pose, focal);
            dim += size;
            entry
        })
        .collect();
    Layout { camera, dim }
}

/// Camera-parameter Jacobian row block (2 × size) for one observation.
fn camera_jacobian(jpose: &Matrix2x6<f64>, jf: &Vector2<f64>, pose: bool, focal: bool) -> DMatrix<f64> {
    let size = if pose { 6 } else { 0 } + if focal { 1 } else { 0 };
    let mut j = DMatrix::zeros(2, size);
    if pose {
        j.view_mut((0, 0), (2, 6)).copy_from(jpose);
    }
    if focal {
        j.view_mut((0, size - 1), (2, 1)).copy_from(jf);
    }
    j
}

struct Linearization {
    u: DMatrix<f64>,
    gc: DVector<f64>,
    v: Vec<Matrix3<f64>>,
    gp: Vec<Vector3<f64>>,
    /// Per observation: camera Jacobian block weighted, transposed times the
    /// point Jacobian (size × 3).
    w: Vec<Option<DMatrix<f64>>>,
}

fn linearize(problem: &BAProblem, lay: &Layout, delta: f64) -> Linearization {
    let np = problem.points.len();
    let mut lin = Linearization {
        u: DMatrix::zeros(lay.dim, lay.dim),
        gc: DVector::zeros(lay.dim),
        v: vec![Matrix3::zeros(); np],
        gp: vec![Vector3::zeros(); np],
        w: vec![None; problem.observations.len()],
    };
    for (oi, o) in problem.observations.iter().enumerate() {
        let cam = &problem.cameras[o.camera];
        let pt = &problem.points[o.point];
        let (r, behind) = reprojection_residual(cam, &problem.principal_point, &pt.position, &o.pixel);
        if behind {
            continue;
        }
        let Some((jpose, jf, jx)) = reprojection_jacobians(cam, &pt.position) else {
            continue;
        };
        let wgt = huber_weight(r.norm(), delta);
        let (off, size, fpose, ffocal) = lay.camera[o.camera];
        let jc = camera_jacobian(&jpose, &jf, fpose, ffocal);
        if size > 0 {
            let jtw = jc.transpose() * wgt;
            let mut ublk = lin.u.view_mut((off, off), (size, size));
            ublk += &jtw * &jc;
            let mut gblk = lin.gc.rows_mut(off, size);
            gblk += &jtw * DVector::from_column_slice(r.as_slice());
        }
        if !pt.fixed {
            lin.v[o.point] += jx.transpose() * jx * wgt;
            lin.gp[o.point] += jx.transpose() * r * wgt;
            if size > 0 {
                let jx_dyn = DMatrix::from_column_slice(2, 3, jx.as_slice());
                lin.w[oi] = Some(jc.transpose() * wgt * jx_dyn);
            }
        }
    }
    lin
}

struct Step {
    cameras: DVector<f64>,
    points: Vec<Vector3<f64>>,
}

fn solve_damped(
    problem: &BAProblem,
    lay: &Layout,
    lin: &Linearization,
    obs_by_point: &[Vec<usize>],
    lambda: f64,
) -> Option<Step> {
    let np = problem.points.len();
    let mut s = lin.u.clone();
    for d in 0..lay.dim {
        s[(d, d)] += lambda * lin.u[(d, d)].max(1e-9);
    }
    let mut rhs = -lin.gc.clone();
    let mut v_inv = vec![Matrix3::zeros(); np];
    for j in 0..np {
        if problem.points[j].fixed {
            continue;
        }
        let mut vj = lin.v[j];
        for d in 0..3 {
            vj[(d, d)] += lambda * vj[(d, d)].max(1e-9);
        }
        v_inv[j] = vj.try_inverse()?;
        let obs = &obs_by_point[j];
        for &a in obs {
            let Some(wa) = &lin.w[a] else { continue };
            let (oa, sa, _, _) = lay.camera[problem.observations[a].camera];
            let wa_vinv = wa * DMatrix::from_column_slice(3, 3, v_inv[j].as_slice());
            let mut rblk = rhs.rows_mut(oa, sa);
            rblk += &wa_vinv * DVector::from_column_slice(lin.gp[j].as_slice());
            for &b in obs {
                let Some(wb) = &lin.w[b] else { continue };
                let (ob, sb, _, _) = lay.camera[problem.observations[b].camera];
                let mut blk = s.view_mut((oa, ob), (sa, sb));
                blk -= &wa_vinv * wb.transpose();
            }
        }
    }
    let dc = if lay.dim > 0 {
        s.cholesky()?.solve(&rhs)
    } else {
        DVector::zeros(0)
    };
    let mut points = vec![Vector3::zeros(); np];
    for j in 0..np {
        if problem.points[j].fixed {
            continue;
        }
        let mut acc = -lin.gp[j];
        for &a in &obs_by_point[j] {
            let Some(wa) = &lin.w[a] else { continue };
            let (oa, sa, _, _) = lay.camera[problem.observations[a].camera];
            let t = wa.transpose() * dc.rows(oa, sa);
            acc -= Vector3::new(t[0], t[1], t[2]);
        }
        points[j] = v_inv[j] * acc;
    }
    Some(Step { cameras: dc, points })
}

fn apply_step(problem: &BAProblem, lay: &Layout, step: &Step) -> BAProblem {
    let mut out = problem.clone();
    for (ci, cam) in out.cameras.iter_mut().enumerate() {
        let (off, size, pose, focal) = lay.camera[ci];
        if pose {
            let w = Vector3::new(step.cameras[off], step.cameras[off + 1], step.cameras[off + 2]);
            let v = Vector3::new(step.cameras[off + 3], step.cameras[off + 4], step.cameras[off + 5]);
            cam.pose = cam.pose.retract(&w, &v);
        }
        if focal {
            cam.focal += step.cameras[off + size - 1];
        }
    }
    for (p, d) in out.points.iter_mut().zip(&step.points) {
        if !p.fixed {
            p.position += d;
        }
    }
    out
}

pub fn solve_ba(problem: &BAProblem, opts: &BAOptions) -> Result<BAResult, BAError> {
    problem.validate()?;
    let delta = opts.huber_delta;
    let lay = layout(problem, opts.estimate_focal);
    let mut obs_by_point = vec![Vec::new(); problem.points.len()];
    for (i, o) in problem.observations.iter().enumerate() {
        obs_by_point[o.point].push(i);
    }
    let initial_rms = problem.rms();
    let mut current = problem.clone();
    let mut cost = robust_cost(&current, delta);
    let mut log = vec![BAIteration {
        cost,
        lambda: 0.0,
        accepted: true,
    }];
    let tiny = 1e-24 * problem.observations.len().max(1) as f64;
    let mut converged = cost <= tiny;
    let mut lambda = 1e-4;
    let mut any_solve = false;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let lin = linearize(&current, &lay, delta);
        let mut accepted = false;
        while lambda < 1e16 {
            let Some(step) = solve_damped(&current, &lay, &lin, &obs_by_point, lambda) else {
                lambda *= 10.0;
                continue;
            };
            any_solve = true;
            let candidate = apply_step(&current, &lay, &step);
            let new_cost = robust_cost(&candidate, delta);
            if new_cost < cost {
                let decrease = (cost - new_cost) / cost;
                current = candidate;
                cost = new_cost;
                lambda = (lambda / 5.0).max(1e-12);
                log.push(BAIteration {
                    cost,
                    lambda,
                    accepted: true,
                });
                accepted = true;
                if decrease < opts.function_tolerance || cost <= tiny {
                    converged = true;
                }
                break;
            }
            log.push(BAIteration {
                cost: new_cost,
                lambda,
                accepted: false,
            });
            lambda *= 10.0;
        }
        if !accepted {
            if !any_solve {
                return Err(BAError::RankDeficient);
            }
            // No descent direction left at any damping: a local minimum.
            converged = true;
        }
    }
    let rms = current.rms();
    Ok(BAResult {
        problem: current,
        rms,
        initial_rms,
        log,
        converged,
    })
}

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

use super::scenario::{ScenarioConfig, TrajectoryConfig, TrajectoryKind};
use crate::lie::Se3Pose;

/// Path parameter of every frame: the frame index advanced by
/// `cut_jump_frames` at each cut.
fn path_parameters(cfg: &ScenarioConfig) -> Vec<f64> {
    (0..cfg.frame_count)
        .map(|i| {
            let cuts = cfg.cuts.iter().filter(|&&c| c <= i).count();
            i as f64 + cuts as f64 * cfg.trajectory.cut_jump_frames
        })
        .collect()
}

fn raster_point(t: &TrajectoryConfig, dist: f64) -> Vector3<f64> {
    let r = t.radius;
    let h = t.line_spacing / 2.0;
    // An even line count ends the sweep on the starting side, where a return
    // leg closes the loop.
    let mut lines = ((2.0 * r / t.line_spacing).floor() as usize + 1).max(2);
    lines += lines % 2;
    let turn = PI * h;
    let seg = 2.0 * r + turn;
    let sweep = lines as f64 * seg - turn;
    let y_last = -r + (lines - 1) as f64 * t.line_spacing;
    let straight = y_last + r - 2.0 * h;
    let total = sweep + turn + straight;
    let d = dist.rem_euclid(total);
    let at = |x: f64, y: f64| Vector3::new(x, y, t.altitude);
    if d < sweep {
        let k = ((d / seg).floor() as usize).min(lines - 1);
        let local = d - k as f64 * seg;
        let y0 = -r + k as f64 * t.line_spacing;
        let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
        if local <= 2.0 * r {
            at(dir * (-r + local), y0)
        } else {
            let phi = (local - 2.0 * r) / h;
            at(dir * (r + h * phi.sin()), y0 + h - h * phi.cos())
        }
    } else {
        let local = d - sweep;
        let quarter = turn / 2.0;
        if local < quarter {
            let phi = local / h;
            at(-r - h * phi.sin(), y_last - h + h * phi.cos())
        } else if local < quarter + straight {
            at(-r - h, y_last - h - (local - quarter))
        } else {
            let phi = (local - quarter - straight) / h;
            at(-r - h * phi.cos(), -r + h - h * phi.sin())
        }
    }
}

fn position(cfg: &ScenarioConfig, s: f64, s_end: f64) -> Vector3<f64> {
    let t = &cfg.trajectory;
    let start = t.start_angle_deg.to_radians();
    match t.kind {
        TrajectoryKind::Orbit => {
            let th = start + TAU * s / t.frames_per_revolution;
            Vector3::new(t.radius * th.cos(), t.radius * th.sin(), t.altitude)
        }
        TrajectoryKind::RingLoop => {
            let th = start + TAU * t.revolutions as f64 * s / s_end;
            Vector3::new(t.radius * th.cos(), t.radius * th.sin(), t.altitude)
        }
        TrajectoryKind::FigureEight => {
            let th = start + TAU * s / t.frames_per_revolution;
            Vector3::new(t.radius * th.sin(), t.radius * th.sin() * th.cos(), t.altitude)
        }
        TrajectoryKind::Raster => {
            let speed = TAU * t.radius / t.frames_per_revolution;
            raster_point(t, s * speed)
        }
    }
}

/// Camera orientation looking down, tilted forward by `pitch` along the
/// horizontal direction of travel.
fn orientation(tangent: &Vector3<f64>, pitch: f64) -> Matrix3<f64> {
    let mut fwd = Vector3::new(tangent.x, tangent.y, 0.0);
    if fwd.norm() < 1e-12 {
        fwd = Vector3::x();
    }
    fwd.normalize_mut();
    let z = (-Vector3::z() * pitch.cos() + fwd * pitch.sin()).normalize();
    let x = (fwd - z * fwd.dot(&z)).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Camera-from-world pose of every frame.
pub fn generate_trajectory(cfg: &ScenarioConfig) -> Vec<Se3Pose> {
    let params = path_parameters(cfg);
    let s_end = *params.last().unwrap_or(&1.0);
    let s_end = if s_end > 0.0 { s_end } else { 1.0 };
    let pitch = cfg.trajectory.pitch_deg.to_radians();
    let eps = 1e-3;
    params
        .iter()
        .map(|&s| {
            let c = position(cfg, s, s_end);
            let tangent = position(cfg, s + eps, s_end) - position(cfg, s - eps, s_end);
            Se3Pose::from_center(orientation(&tangent, pitch), c)
        })
        .collect()
}

//! Synthetic submap rings with known Sim(3) placements for alignment tests.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::random_descriptor;
use crate::alignment::{LinkKind, SubmapLink};
use crate::builder::{FramePose, Landmark, Submap, SubmapStatus};
use crate::lie::{so3_exp, Se3Pose, Sim3Transform};
use crate::multiview::{umeyama_sim3, Correspondence3D3D};

#[derive(Debug, Clone, PartialEq)]
pub struct RingConfig {
    pub submaps: usize,
    pub landmarks_per_submap: usize,
    /// Fraction of each submap's landmarks also seen by the next one.
    pub overlap: f64,
    pub radius: f64,
    /// Gaussian noise on local landmark coordinates (world units).
    pub point_noise: f64,
    /// Relative error injected into every link transform: rotation in
    /// radians, log-scale, and translation as a fraction of the radius.
    pub link_drift: f64,
    /// Close the ring with a link from the last submap to the first.
    pub close_loop: bool,
    pub frames_per_submap: usize,
    pub seed: u64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            submaps: 12,
            landmarks_per_submap: 200,
            overlap: 0.25,
            radius: 300.0,
            point_noise: 0.0,
            link_drift: 0.01,
            close_loop: true,
            frames_per_submap: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubmapRing {
    pub submaps: Vec<Submap>,
    pub links: Vec<SubmapLink>,
    /// True local-to-world transform of every submap.
    pub truth: Vec<Sim3Transform>,
    pub world: Vec<Vector3<f64>>,
}

fn random_sim3(rng: &mut ChaCha8Rng, max_angle: f64, max_log_scale: f64, max_t: f64) -> Sim3Transform {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() > 1e-6 { axis.normalize() } else { Vector3::z() };
    let rotation = so3_exp(&(axis * rng.random_range(-max_angle..=max_angle)));
    let scale = rng.random_range(-max_log_scale..=max_log_scale).exp();
    let t = Vector3::new(rng.random_range(-max_t..=max_t), rng.random_range(-max_t..=max_t), rng.random_range(-max_t..=max_t));
    Sim3Transform::new(rotation, scale, t)
}

/// Submaps placed around a circle; each sees a contiguous arc of world
/// landmarks overlapping the next one, expressed in its own random frame.
pub fn submap_ring(cfg: &RingConfig) -> SubmapRing {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.submaps.max(1);
    let per = cfg.landmarks_per_submap.max(4);
    let shared = ((cfg.overlap * per as f64).round() as usize).clamp(1, per - 1);
    let stride = per - shared;
    let total = if cfg.close_loop { stride * n } else { stride * (n - 1) + per };
    let world: Vec<Vector3<f64>> = (0..total)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / total as f64;
            let r = cfg.radius + rng.random_range(-20.0..20.0);
            Vector3::new(r * th.cos(), r * th.sin(), rng.random_range(0.0..30.0))
        })
        .collect();
    let descriptors: Vec<_> = (0..total).map(|_| random_descriptor(&mut rng)).collect();
    let noise = Normal::new(0.0, cfg.point_noise.max(0.0)).unwrap();

    let mut truth = Vec::with_capacity(n);
    let mut submaps = Vec::with_capacity(n);
    let mut next_id = 0u64;
    let mut members: Vec<BTreeMap<usize, u64>> = Vec::with_capacity(n);
    for i in 0..n {
        let g = random_sim3(&mut rng, 0.5, 0.3, 50.0);
        let inv = g.inverse();
        let mut landmarks = BTreeMap::new();
        let mut ids = BTreeMap::new();
        for k in 0..per {
            let w = (i * stride + k) % total;
            let mut local = inv.apply(&world[w]);
            if cfg.point_noise > 0.0 {
                local += Vector3::from_fn(|_, _| noise.sample(&mut rng)) / g.scale;
            }
            let id = next_id;
            next_id += 1;
            ids.insert(w, id);
            landmarks.insert(
                id,
                Landmark {
                    id,
                    position: local,
                    descriptor: descriptors[w],
                    view_direction: Vector3::z(),
                    observations: vec![(0, Vector2::zeros())],
                    truth_id: w as u32,
                    carried_from: None,
                },
            );
        }
        let frame_poses = (0..cfg.frames_per_submap)
            .map(|f| {
                let w = world[(i * stride + f * per / cfg.frames_per_submap.max(1)) % total];
                let center = inv.apply(&(w + Vector3::new(0.0, 0.0, 100.0)));
                FramePose {
                    frame: (i * cfg.frames_per_submap + f) as u64,
                    pose: Se3Pose::from_center(inv.rotation * nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)), center),
                    relocalized: true,
                }
            })
            .collect();
        truth.push(g);
        members.push(ids);
        submaps.push(Submap {
            id: i as u32,
            status: SubmapStatus::Completed,
            failure: None,
            keyframes: Vec::new(),
            landmarks,
            frame_poses,
            unlocalized_frames: Vec::new(),
            frame_range: ((i * cfg.frames_per_submap) as u64, ((i + 1) * cfg.frames_per_submap - 1) as u64),
            ba_rms: 0.0,
            focal: 1.0,
            principal_point: Vector2::zeros(),
            build_seconds: 0.0,
        });
    }
    // Shared landmarks are continued by the next submap.
    for i in 1..n {
        let prev = members[i - 1].clone();
        for (w, id) in members[i].clone() {
            if let Some(&from) = prev.get(&w) {
                submaps[i].landmarks.get_mut(&id).unwrap().carried_from = Some(from);
            }
        }
    }

    let mut pairs: Vec<(usize, usize, LinkKind)> = (1..n).map(|i| (i - 1, i, LinkKind::TemporalOverlap)).collect();
    if cfg.close_loop && n > 2 {
        pairs.push((n - 1, 0, LinkKind::LoopClosure));
    }
    let links = pairs
        .into_iter()
        .map(|(a, b, kind)| {
            let correspondences: Vec<Correspondence3D3D> = members[a]
                .iter()
                .filter_map(|(w, ia)| {
                    members[b].get(w).map(|ib| Correspondence3D3D {
                        point_a: submaps[a].landmarks[ia].position,
                        point_b: submaps[b].landmarks[ib].position,
                        id_a: *ia,
                        id_b: *ib,
                    })
                })
                .collect();
            let exact = umeyama_sim3(&correspondences).unwrap_or_default();
            let d = cfg.link_drift;
            let drift = Sim3Transform::new(
                so3_exp(&Vector3::new(0.0, 0.0, d)),
                d.exp(),
                Vector3::new(d * cfg.radius, 0.0, 0.0) / truth[b].scale,
            );
            SubmapLink {
                a: a as u32,
                b: b as u32,
                correspondences,
                relative: exact.compose(&drift),
                kind,
            }
        })
        .collect();
    SubmapRing {
        submaps,
        links,
        truth,
        world,
    }
}

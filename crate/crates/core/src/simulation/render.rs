use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::ScenarioConfig;
use super::scene::{generate_scene, Scene};
use super::trajectory::generate_trajectory;
use super::SimulationError;
use crate::dataset::{
    DatasetError, FeatureObservation, FeatureTrackDataset, Frame, FrameSource, GroundTruth, TruthLandmark,
    OUTLIER_TRUTH,
};
use crate::descriptor::{normalize, Descriptor};
use crate::lie::Se3Pose;
use crate::multiview::{CameraIntrinsics, ImageSize};

/// Image cell side (pixels) used by the occlusion test.
const OCCLUSION_CELL: f64 = 16.0;
/// Depth margin (meters) behind the nearest point of a cell before a point
/// counts as hidden.
const OCCLUSION_MARGIN: f64 = 2.0;
const STREAM_SALT: u64 = 0x5eed_0f_0b5e_7ab1e;

/// Exact projection of a landmark, before noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleLandmark {
    pub id: u32,
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Lazily rendered scenario: frames are synthesized on demand and are
/// identical no matter the access order.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    cfg: ScenarioConfig,
    scene: Arc<Scene>,
    poses: Vec<Se3Pose>,
}

impl SimulatedSource {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimulationError> {
        cfg.validate()?;
        let scene = generate_scene(&cfg.scene, cfg.seed)?;
        let poses = generate_trajectory(cfg);
        Ok(Self::from_parts(cfg.clone(), Arc::new(scene), poses))
    }

    pub fn from_parts(cfg: ScenarioConfig, scene: Arc<Scene>, poses: Vec<Se3Pose>) -> Self {
        Self { cfg, scene, poses }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn poses(&self) -> &[Se3Pose] {
        &self.poses
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            intrinsics: self.cfg.intrinsics(),
            image_size: self.cfg.image_size(),
            poses: self.poses.iter().enumerate().map(|(i, p)| (i as u64, *p)).collect(),
            landmarks: self
                .scene
                .landmarks
                .iter()
                .map(|l| TruthLandmark {
                    id: l.id,
                    position: l.position,
                })
                .collect(),
        }
    }

    /// XY bounding box of the viewing frustum between the ground and the
    /// tallest structure, or `None` if a corner ray never reaches the ground.
    fn footprint(&self, pose: &Se3Pose) -> Option<((f64, f64), (f64, f64))> {
        let k = self.cfg.intrinsics();
        let size = self.cfg.image_size();
        let (w, h) = (size.width as f64, size.height as f64);
        let c = pose.center();
        let rwc = pose.rotation.transpose();
        let mut lo = (c.x, c.y);
        let mut hi = lo;
        for corner in [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]] {
            let d = rwc * k.ray(&Vector2::new(corner[0], corner[1]));
            if d.z >= -1e-9 {
                return None;
            }
            for z in [0.0, self.scene.max_height] {
                let t = (z - c.z) / d.z;
                let p = c + d * t.max(0.0);
                lo = (lo.0.min(p.x), lo.1.min(p.y));
                hi = (hi.0.max(p.x), hi.1.max(p.y));
            }
        }
        Some((lo, hi))
    }

    /// Landmarks whose exact projection is in front of the camera and inside
    /// the image, in ascending id order, after optional occlusion.
    pub fn visible(&self, index: usize) -> Vec<VisibleLandmark> {
        let pose = &self.poses[index];
        let k = self.cfg.intrinsics();
        let size = self.cfg.image_size();
        let candidates: Vec<u32> = match self.footprint(pose) {
            Some((lo, hi)) => self.scene.in_box(lo, hi),
            None => (0..self.scene.len() as u32).collect(),
        };
        let mut out: Vec<VisibleLandmark> = candidates
            .into_iter()
            .filter_map(|id| {
                let xc = pose.apply(&self.scene.landmarks[id as usize].position);
                let pixel = k.project_camera(&xc)?;
                size.contains(&pixel).then_some(VisibleLandmark { id, pixel, depth: xc.z })
            })
            .collect();
        if self.cfg.occlusion {
            let cell = |p: &Vector2<f64>| ((p.x / OCCLUSION_CELL) as i64, (p.y / OCCLUSION_CELL) as i64);
            let mut nearest: HashMap<(i64, i64), f64> = HashMap::new();
            for v in &out {
                let e = nearest.entry(cell(&v.pixel)).or_insert(f64::INFINITY);
                *e = e.min(v.depth);
            }
            out.retain(|v| v.depth <= nearest[&cell(&v.pixel)] + OCCLUSION_MARGIN);
        }
        out
    }

    fn noisy_descriptor(&self, base: &Descriptor, rng: &mut ChaCha8Rng) -> Descriptor {
        let sigma = self.cfg.noise.descriptor_sigma;
        let mut d = *base;
        if sigma > 0.0 {
            for x in d.iter_mut() {
                *x += (sigma * rng.sample::<f64, _>(StandardNormal)) as f32;
            }
            normalize(&mut d);
        }
        d
    }

    fn render(&self, index: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ STREAM_SALT);
        rng.set_stream(index as u64 + 1);
        let size = self.cfg.image_size();
        let sigma = self.cfg.noise.pixel_sigma;
        let visible = self.visible(index);
        let mut observations = Vec::with_capacity(visible.len());
        for v in &visible {
            let mut pixel = v.pixel;
            if sigma > 0.0 {
                pixel += Vector2::new(
                    sigma * rng.sample::<f64, _>(StandardNormal),
                    sigma * rng.sample::<f64, _>(StandardNormal),
                );
            }
            let descriptor = self.noisy_descriptor(&self.scene.landmarks[v.id as usize].descriptor, &mut rng);
            if size.contains(&pixel) {
                observations.push(FeatureObservation {
                    pixel,
                    descriptor,
                    truth_id: v.id,
                });
            }
        }
        let outliers = (self.cfg.noise.outlier_rate * visible.len() as f64).round() as usize;
        if outliers > 0 {
            for _ in 0..outliers {
                let pixel = Vector2::new(
                    rng.random_range(0.0..size.width as f64),
                    rng.random_range(0.0..size.height as f64),
                );
                let source = rng.random_range(0..self.scene.len());
                let descriptor = self.noisy_descriptor(&self.scene.landmarks[source].descriptor, &mut rng);
                observations.push(FeatureObservation {
                    pixel,
                    descriptor,
                    truth_id: OUTLIER_TRUTH,
                });
            }
            observations.shuffle(&mut rng);
        }
        Frame {
            id: index as u64,
            observations,
        }
    }
}

impl FrameSource for SimulatedSource {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.cfg.intrinsics()
    }

    fn image_size(&self) -> ImageSize {
        self.cfg.image_size()
    }

    fn len(&self) -> usize {
        self.poses.len()
    }

    fn frame(&self, index: usize) -> Result<Frame, DatasetError> {
        if index >= self.poses.len() {
            return Err(DatasetError::FrameOutOfRange {
                index,
                len: self.poses.len(),
            });
        }
        Ok(self.render(index))
    }
}

/// Fully rendered scenario.
#[derive(Debug, Clone)]
pub struct RenderedScenario {
    pub dataset: FeatureTrackDataset,
    pub ground_truth: GroundTruth,
    /// Ids of frames in which no landmark was visible; they are kept.
    pub empty_frames: Vec<u64>,
}

/// Render every frame of `cfg` into memory.
pub fn render_observations(cfg: &ScenarioConfig) -> Result<RenderedScenario, SimulationError> {
    let source = SimulatedSource::new(cfg)?;
    let dataset = FeatureTrackDataset::from_source(&source).map_err(SimulationError::Dataset)?;
    let empty_frames = dataset
        .frames
        .iter()
        .filter(|f| f.observations.iter().all(|o| o.truth().is_none()))
        .map(|f| f.id)
        .collect();
    Ok(RenderedScenario {
        ground_truth: source.ground_truth(),
        dataset,
        empty_frames,
    })
}

/// Brute-force visibility check over every landmark, without occlusion.
pub fn visible_brute_force(
    landmarks: &[Vector3<f64>],
    pose: &Se3Pose,
    k: &CameraIntrinsics,
    size: &ImageSize,
) -> Vec<usize> {
    landmarks
        .iter()
        .enumerate()
        .filter(|(_, x)| crate::multiview::project(k, pose, x).is_some_and(|p| size.contains(&p)))
        .map(|(i, _)| i)
        .collect()
}

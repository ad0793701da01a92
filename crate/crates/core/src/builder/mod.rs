//! Sequential submap construction: bootstrap, PnP tracking, keyframe pairs
//! with incremental bundle adjustment, outlier filtering, and completion
//! with overlap carryover into the next submap.

mod knn;
mod state;

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle_adjust::BAOptions;
use crate::dataset::{DatasetError, FrameSource};
use crate::descriptor::Descriptor;
use crate::lie::Se3Pose;
use crate::multiview::RansacConfig;

pub use knn::{knn_outliers, mean_knn_distances, KdTree};
pub use state::{should_add_keyframe, Carryover, FilterStage, InsertOutcome, SubmapState, TrackOutcome};

#[derive(Debug, Error)]
pub enum BuilderError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("builder config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
    /// Unit ray from the creating keyframe's center toward the landmark.
    pub view_direction: Vector3<f64>,
    /// Keyframe observations as `(frame id, pixel)`.
    pub observations: Vec<(u64, Vector2<f64>)>,
    pub truth_id: u32,
    /// Landmark of the previous submap this one continues through the
    /// overlap frames.
    pub carried_from: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyframeKind {
    BootstrapFirst,
    BootstrapSecond,
    Middle,
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame_id: u64,
    pub pose: Se3Pose,
    pub kind: KeyframeKind,
    pub focal: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubmapStatus {
    Building,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub frame: u64,
    pub pose: Se3Pose,
    pub relocalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: u32,
    pub status: SubmapStatus,
    pub failure: Option<String>,
    pub keyframes: Vec<Keyframe>,
    pub landmarks: BTreeMap<u64, Landmark>,
    /// Per-frame poses, filled at completion. Frames without any estimate are
    /// listed in `unlocalized_frames`.
    pub frame_poses: Vec<FramePose>,
    pub unlocalized_frames: Vec<u64>,
    pub frame_range: (u64, u64),
    /// RMS reprojection error of the keyframe observations (pixels).
    pub ba_rms: f64,
    pub focal: f64,
    pub principal_point: Vector2<f64>,
    pub build_seconds: f64,
}

impl Submap {
    pub fn is_completed(&self) -> bool {
        self.status == SubmapStatus::Completed
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_range.1 - self.frame_range.0 + 1
    }

    /// Mean reprojection error (pixels) over all keyframe observations.
    pub fn mean_reprojection_error(&self) -> f64 {
        let kf: HashMap<u64, &Keyframe> = self.keyframes.iter().map(|k| (k.frame_id, k)).collect();
        let (mut sum, mut n) = (0.0, 0usize);
        for l in self.landmarks.values() {
            for (f, px) in &l.observations {
                if let Some(k) = kf.get(f) {
                    let xc = k.pose.apply(&l.position);
                    let focal = k.focal.unwrap_or(self.focal);
                    let pp = self.principal_point;
                    let proj = Vector2::new(focal * xc.x / xc.z, focal * xc.y / xc.z) + pp;
                    sum += (proj - px).norm();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    /// Absolute keyframe trigger; when unset the trigger is a fraction of
    /// the landmarks visible at the last keyframe event, with a floor.
    pub tau_resection: Option<usize>,
    pub tau_resection_fraction: f64,
    pub tau_resection_floor: usize,
    pub tau_stereo: usize,
    /// Degrees.
    pub alpha_stereo: f64,
    pub keyframes_per_submap: usize,
    pub overlap_fraction: f64,
    /// Degrees.
    pub view_angle_limit: f64,
    /// Pixels.
    pub reprojection_threshold: f64,
    pub knn_k: usize,
    pub knn_sigma: f64,
    pub estimate_focal: bool,
    /// Starting focal length; the dataset intrinsics are used when unset.
    pub initial_focal: Option<f64>,
    pub match_max_distance: f32,
    pub match_ratio: f32,
    /// Duplicate threshold as a fraction of the median intra-frame
    /// nearest-neighbor descriptor distance.
    pub duplicate_factor: f32,
    /// Degrees.
    pub min_triangulation_angle: f64,
    /// Median landmark depth in the first keyframe after bootstrap; fixes
    /// the unit of every submap.
    pub normalized_depth: f64,
    /// Bundle-adjust all relocalized frames at completion.
    pub final_refinement: bool,
    pub pnp: RansacConfig,
    pub essential: RansacConfig,
    pub seed: u64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            tau_resection: None,
            tau_resection_fraction: 0.6,
            tau_resection_floor: 100,
            tau_stereo: 1000,
            alpha_stereo: 30.0,
            keyframes_per_submap: 20,
            overlap_fraction: 0.1,
            view_angle_limit: 45.0,
            reprojection_threshold: 4.0,
            knn_k: 30,
            knn_sigma: 2.0,
            estimate_focal: false,
            initial_focal: None,
            match_max_distance: 0.7,
            match_ratio: 0.8,
            duplicate_factor: 0.7,
            min_triangulation_angle: 2.0,
            normalized_depth: 100.0,
            final_refinement: true,
            pnp: RansacConfig::default().with_threshold(2.0).with_min_inliers(12),
            essential: RansacConfig::default().with_threshold(2.0).with_min_inliers(12),
            seed: 0,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), BuilderError> {
        let bad = |m: &str| Err(BuilderError::Config(m.to_string()));
        if self.tau_resection == Some(0) || self.tau_stereo == 0 || self.tau_resection_floor == 0 {
            return bad("tau_resection and tau_stereo must be positive");
        }
        if !(self.tau_resection_fraction > 0.0 && self.tau_resection_fraction <= 1.0) {
            return bad("tau_resection_fraction must be in (0, 1]");
        }
        if !(self.alpha_stereo > 0.0) || !(self.view_angle_limit > 0.0) || !(self.min_triangulation_angle > 0.0) {
            return bad("angles must be positive");
        }
        if self.keyframes_per_submap < 2 {
            return bad("keyframes_per_submap must be at least 2");
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 0.5) {
            return bad("overlap_fraction must be in (0, 0.5)");
        }
        if !(self.reprojection_threshold > 0.0) || self.knn_k == 0 || !(self.knn_sigma > 0.0) {
            return bad("filter thresholds must be positive");
        }
        if !(self.match_max_distance > 0.0) || !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return bad("match thresholds must be positive, ratio at most 1");
        }
        if !(self.duplicate_factor > 0.0) || !(self.normalized_depth > 0.0) {
            return bad("duplicate_factor and normalized_depth must be positive");
        }
        if self.initial_focal.is_some_and(|f| !(f > 0.0)) {
            return bad("initial_focal must be positive");
        }
        if !self.pnp.is_valid() || !self.essential.is_valid() {
            return bad("invalid RANSAC settings");
        }
        Ok(())
    }
}

/// Lazily builds submaps over the whole sequence in frame order.
pub struct SubmapStream<'a> {
    source: &'a dyn FrameSource,
    cfg: BuilderConfig,
    ba: BAOptions,
    next_index: usize,
    carry: Option<Carryover>,
    next_submap: u32,
    next_landmark: u64,
    done: bool,
}

pub fn build_submaps<'a>(
    source: &'a dyn FrameSource,
    cfg: &BuilderConfig,
    ba: &BAOptions,
) -> Result<SubmapStream<'a>, BuilderError> {
    cfg.validate()?;
    if !ba.is_valid() {
        return Err(BuilderError::Config("invalid bundle adjustment options".into()));
    }
    Ok(SubmapStream {
        source,
        cfg: cfg.clone(),
        ba: *ba,
        next_index: 0,
        carry: None,
        next_submap: 0,
        next_landmark: 0,
        done: source.is_empty(),
    })
}

impl SubmapStream<'_> {
    fn build_next(&mut self) -> Result<Submap, DatasetError> {
        let id = self.next_submap;
        self.next_submap += 1;
        let mut state = SubmapState::new(
            id,
            self.source.intrinsics(),
            self.source.image_size(),
            self.cfg.clone(),
            self.ba,
            self.next_landmark,
            self.carry.take(),
        );
        let len = self.source.len();
        let result = self.drive(&mut state, len);
        self.next_landmark = state.next_landmark_id();
        result
    }

    fn drive(&mut self, state: &mut SubmapState, len: usize) -> Result<Submap, DatasetError> {
        let Some(mut index) = state.bootstrap(self.source, self.next_index)? else {
            self.done = true;
            return Ok(state.fail("sequence ended before bootstrap"));
        };
        index += 1;
        while index < len {
            let frame = self.source.frame(index)?;
            match state.track_frame(index, frame) {
                TrackOutcome::Lost(reason) => {
                    self.next_index = index;
                    return Ok(state.fail(&format!("tracking lost at frame {index}: {reason}")));
                }
                TrackOutcome::Tracked { inliers, .. } => {
                    if should_add_keyframe(inliers, state.tau_resection()) {
                        state.insert_keyframe_pair();
                        if state.keyframe_count() >= self.cfg.keyframes_per_submap {
                            let (submap, carry) = state.complete();
                            self.next_index = carry.start_index;
                            self.carry = Some(carry);
                            return Ok(submap);
                        }
                    }
                }
            }
            index += 1;
        }
        self.done = true;
        Ok(state.fail("sequence ended before the keyframe limit"))
    }
}

impl Iterator for SubmapStream<'_> {
    type Item = Result<Submap, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.build_next();
        if out.is_err() {
            self.done = true;
        }
        Some(out)
    }
}

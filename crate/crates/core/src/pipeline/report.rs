use serde::{Deserialize, Serialize};

use crate::alignment::MapSnapshot;
use crate::builder::Submap;
use crate::simulation::Evaluation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmapReport {
    pub id: u32,
    pub completed: bool,
    pub failure: Option<String>,
    pub first_frame: u64,
    pub last_frame: u64,
    pub keyframes: usize,
    pub landmarks: usize,
    /// Pixels.
    pub ba_rms: f64,
    pub focal: f64,
    pub build_seconds: f64,
    /// Seconds since the run started.
    pub finished_at: f64,
}

impl SubmapReport {
    pub fn new(s: &Submap, finished_at: f64) -> Self {
        Self {
            id: s.id,
            completed: s.is_completed(),
            failure: s.failure.clone(),
            first_frame: s.frame_range.0,
            last_frame: s.frame_range.1,
            keyframes: s.keyframes.len(),
            landmarks: s.landmarks.len(),
            ba_rms: s.ba_rms,
            focal: s.focal,
            build_seconds: s.build_seconds,
            finished_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub version: u64,
    pub submaps: usize,
    pub links: usize,
    pub loop_links: usize,
    pub nodes: usize,
    pub edges: usize,
    pub merged_landmarks: usize,
    pub components: usize,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub latency_seconds: f64,
    pub finished_at: f64,
}

impl SnapshotReport {
    pub fn new(s: &MapSnapshot, finished_at: f64) -> Self {
        Self {
            version: s.version,
            submaps: s.submaps.len(),
            links: s.link_count,
            loop_links: s.loop_links,
            nodes: s.node_count,
            edges: s.edge_count,
            merged_landmarks: s.merged_landmarks,
            components: s.component_count,
            cost_trace: s.cost_trace.clone(),
            converged: s.converged,
            latency_seconds: s.latency_seconds,
            finished_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rmse: f64,
    pub matched_landmarks: usize,
    pub matched_fraction: f64,
    pub mean_rotation_error: f64,
    pub mean_position_error: f64,
    pub max_position_error: f64,
    pub scale: f64,
}

impl From<&Evaluation> for EvaluationReport {
    fn from(e: &Evaluation) -> Self {
        Self {
            rmse: e.rmse,
            matched_landmarks: e.matched_landmarks,
            matched_fraction: e.matched_fraction,
            mean_rotation_error: e.mean_rotation_error,
            mean_position_error: e.mean_position_error,
            max_position_error: e.max_position_error,
            scale: e.alignment.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: super::ExecutionMode,
    pub seed: u64,
    pub frames: usize,
    pub submaps: Vec<SubmapReport>,
    pub snapshots: Vec<SnapshotReport>,
    /// Landmarks in the written point cloud.
    pub map_landmarks: usize,
    /// Frames in the written trajectory.
    pub trajectory_frames: usize,
    pub evaluation: Option<EvaluationReport>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn completed_submaps(&self) -> usize {
        self.submaps.iter().filter(|s| s.completed).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

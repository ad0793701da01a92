use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::dataset::GroundTruth;
use crate::lie::Sim3Transform;
use crate::map::GlobalMap;
use crate::multiview::{umeyama_sim3, Correspondence3D3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub frame: u64,
    /// Radians.
    pub rotation: f64,
    /// Camera-center distance in truth units.
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rmse: f64,
    /// Estimated landmarks carrying a resolvable truth id.
    pub matched_landmarks: usize,
    /// Distinct truth landmarks reconstructed over all truth landmarks.
    pub matched_fraction: f64,
    /// Estimate-to-truth gauge transform.
    pub alignment: Sim3Transform,
    pub pose_errors: Vec<PoseError>,
    pub mean_rotation_error: f64,
    pub mean_position_error: f64,
    pub max_position_error: f64,
}

/// Gauge-align `map` to `truth` through the truth ids of its landmarks and
/// measure landmark and pose errors.
pub fn evaluate_map(map: &GlobalMap, truth: &GroundTruth) -> Result<Evaluation, SimulationError> {
    let lookup = truth.landmark_map();
    let corrs: Vec<Correspondence3D3D> = map
        .truth_labeled()
        .filter_map(|l| lookup.get(&l.truth_id).map(|t| Correspondence3D3D::new(l.position, *t)))
        .collect();
    if corrs.len() < 3 {
        return Err(SimulationError::TooFewMatches(corrs.len()));
    }
    let g = umeyama_sim3(&corrs).map_err(|e| SimulationError::Alignment(e.to_string()))?;
    let sq: f64 = corrs.iter().map(|c| (g.apply(&c.point_a) - c.point_b).norm_squared()).sum();
    let rmse = (sq / corrs.len() as f64).sqrt();
    let distinct: BTreeSet<u32> = map
        .truth_labeled()
        .filter(|l| lookup.contains_key(&l.truth_id))
        .map(|l| l.truth_id)
        .collect();
    let truth_poses: HashMap<u64, _> = truth.poses.iter().copied().collect();
    let pose_errors: Vec<PoseError> = map
        .trajectory
        .iter()
        .filter_map(|e| {
            let t = truth_poses.get(&e.frame)?;
            let (rotation, position) = e.pose.transformed_by(&g).distance(t);
            Some(PoseError {
                frame: e.frame,
                rotation,
                position,
            })
        })
        .collect();
    let n = pose_errors.len().max(1) as f64;
    Ok(Evaluation {
        rmse,
        matched_landmarks: corrs.len(),
        matched_fraction: distinct.len() as f64 / truth.landmarks.len().max(1) as f64,
        alignment: g,
        mean_rotation_error: pose_errors.iter().map(|p| p.rotation).sum::<f64>() / n,
        mean_position_error: pose_errors.iter().map(|p| p.position).sum::<f64>() / n,
        max_position_error: pose_errors.iter().map(|p| p.position).fold(0.0, f64::max),
        pose_errors,
    })
}

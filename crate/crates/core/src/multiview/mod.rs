//! Camera model and geometric estimators.
//!
//! Poses are camera-from-world throughout: `x_cam = R X + t`.

mod camera;
mod essential;
mod pnp;
mod poly;
mod ransac;
mod similarity;
mod triangulate;

pub use camera::{project, project_with_focal, CameraIntrinsics, ImageSize};
pub use essential::{
    decompose_essential, essential_from_pose, estimate_relative_pose, five_point,
    symmetric_epipolar_distance, PixelMatch, RelativePose,
};
pub use pnp::{p3p, pnp_ransac, pnp_ransac_with_prior, refine_pose, reprojection_error, Correspondence2D3D, PnpResult};
pub use poly::real_roots;
pub use ransac::{adaptive_iterations, RansacConfig};
pub use similarity::{rigid_from_points, sim3_ransac, umeyama_sim3, Correspondence3D3D, Sim3Fit};
pub use triangulate::{
    triangulate, triangulate_with_min_angle, triangulation_angle, DEFAULT_MIN_TRIANGULATION_ANGLE_DEG,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiviewError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate triangulation: {0}")]
    DegenerateTriangulation(&'static str),
    #[error("point coincides with a camera center")]
    CoincidentCenter,
    #[error("estimation failed: {inliers} inliers, {required} required")]
    EstimationFailed { inliers: usize, required: usize },
    #[error("degenerate point configuration (rank deficient)")]
    RankDeficient,
}

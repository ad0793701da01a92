//! Synthetic scenarios: procedural scenes, drone trajectories, rendered
//! feature tracks with ground truth, and map evaluation.

mod evaluate;
mod render;
mod ring;
mod scenario;
mod scene;
mod trajectory;

use thiserror::Error;

pub use evaluate::{evaluate_map, Evaluation, PoseError};
pub use render::{render_observations, visible_brute_force, RenderedScenario, SimulatedSource, VisibleLandmark};
pub use ring::{submap_ring, RingConfig, SubmapRing};
pub use scenario::{
    CameraConfig, NoiseConfig, ScenarioConfig, SceneConfig, SceneKind, TrajectoryConfig, TrajectoryKind,
};
pub use scene::{generate_scene, random_descriptor, surface_height, Scene, SceneLandmark};
pub use trajectory::generate_trajectory;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("evaluation needs at least 3 matched landmarks, got {0}")]
    TooFewMatches(usize),
    #[error("gauge alignment failed: {0}")]
    Alignment(String),
}

use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::multiview::{CameraIntrinsics, ImageSize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    GridCity,
    Heightfield,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Orbit,
    Raster,
    RingLoop,
    FigureEight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub kind: SceneKind,
    /// Side of the square scene, centered on the origin (meters).
    pub extent: f64,
    /// Landmarks per square meter.
    pub density: f64,
    pub max_height: f64,
    /// City blocks: building footprint side and street width.
    pub block_size: f64,
    pub street_width: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::GridCity,
            extent: 1000.0,
            density: 0.25,
            max_height: 40.0,
            block_size: 40.0,
            street_width: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub kind: TrajectoryKind,
    pub altitude: f64,
    /// Orbit radius, or half-width of the raster and figure-eight patterns.
    pub radius: f64,
    /// Frames per revolution (orbit, figure-eight) or per `2π·radius` of
    /// path length (raster).
    pub frames_per_revolution: f64,
    /// Revolutions of a ring loop; its last frame equals its first.
    pub revolutions: u32,
    pub start_angle_deg: f64,
    /// Forward tilt of the optical axis from nadir.
    pub pitch_deg: f64,
    /// Raster line spacing (meters).
    pub line_spacing: f64,
    /// Path advance, in frames, inserted at each cut.
    pub cut_jump_frames: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Orbit,
            altitude: 100.0,
            radius: 300.0,
            frames_per_revolution: 800.0,
            revolutions: 1,
            start_angle_deg: 0.0,
            pitch_deg: 0.0,
            line_spacing: 60.0,
            cut_jump_frames: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            focal: 1751.0,
            width: 1280,
            height: 960,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    /// Per-component Gaussian noise added to unit base descriptors.
    pub descriptor_sigma: f64,
    /// Injected outliers as a fraction of the visible observations.
    pub outlier_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.25,
            descriptor_sigma: 0.01,
            outlier_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub frame_count: usize,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    pub camera: CameraConfig,
    pub noise: NoiseConfig,
    /// Frames at which the trajectory jumps ahead.
    pub cuts: Vec<usize>,
    /// Drop points hidden behind closer points in the same image cell.
    pub occlusion: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            frame_count: 1100,
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
            camera: CameraConfig::default(),
            noise: NoiseConfig::default(),
            cuts: Vec::new(),
            occlusion: false,
        }
    }
}

impl ScenarioConfig {
    /// 1100-frame orbit over a 1 km grid city with 0.25 px noise.
    pub fn synth1() -> Self {
        Self::default()
    }

    /// Small fast scenario used by examples and tests.
    pub fn small() -> Self {
        Self {
            frame_count: 160,
            scene: SceneConfig {
                extent: 400.0,
                density: 0.1,
                ..SceneConfig::default()
            },
            trajectory: TrajectoryConfig {
                radius: 120.0,
                frames_per_revolution: 400.0,
                ..TrajectoryConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimulationError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimulationError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.camera.focal, self.image_size())
    }

    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.camera.width, self.camera.height)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Config(m.to_string()));
        if self.frame_count < 2 {
            return bad("frame_count must be at least 2");
        }
        let s = &self.scene;
        if !(s.extent > 0.0) || !(s.max_height >= 0.0) || !(s.block_size > 0.0) || !(s.street_width >= 0.0) {
            return bad("scene dimensions must be positive");
        }
        if !(s.density > 0.0) {
            return bad("scene.density must be positive");
        }
        let t = &self.trajectory;
        if !(t.altitude > s.max_height) {
            return bad("trajectory.altitude must exceed scene.max_height");
        }
        if !(t.radius > 0.0) || !(t.frames_per_revolution > 0.0) || !(t.line_spacing > 0.0) || t.revolutions == 0 {
            return bad("trajectory parameters must be positive");
        }
        if !(t.pitch_deg.abs() < 80.0) || !(t.cut_jump_frames >= 0.0) {
            return bad("trajectory.pitch_deg must be within ±80 and cut_jump_frames non-negative");
        }
        if !(self.camera.focal > 0.0) || self.camera.width == 0 || self.camera.height == 0 {
            return bad("camera focal and image size must be positive");
        }
        let n = &self.noise;
        if !(n.pixel_sigma >= 0.0) || !(n.descriptor_sigma >= 0.0) || !(0.0..1.0).contains(&n.outlier_rate) {
            return bad("noise sigmas must be non-negative and outlier_rate in [0, 1)");
        }
        if self.cuts.windows(2).any(|w| w[1] <= w[0]) || self.cuts.iter().any(|&c| c == 0 || c >= self.frame_count) {
            return bad("cuts must be increasing frame indices inside the sequence");
        }
        Ok(())
    }
}

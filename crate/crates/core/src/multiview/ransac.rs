use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shared RANSAC parameters. The threshold is in pixels for image-space
/// models and scene units for 3D models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
    /// Success probability used for the adaptive early exit.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold: 2.0,
            min_inliers: 12,
            seed: 0,
            confidence: 0.999,
        }
    }
}

impl RansacConfig {
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.inlier_threshold = threshold;
        self
    }

    pub fn with_min_inliers(mut self, min_inliers: usize) -> Self {
        self.min_inliers = min_inliers;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.max_iterations >= 1
            && self.inlier_threshold > 0.0
            && self.confidence > 0.0
            && self.confidence < 1.0
    }
}

/// Iterations needed to draw one all-inlier sample of `sample_size` with the
/// given confidence when a fraction `inlier_ratio` of the data are inliers.
pub fn adaptive_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64, cap: usize) -> usize {
    let w = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if w >= 1.0 - 1e-12 {
        return 1;
    }
    if w <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

pub(crate) fn draw(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    sample(rng, len, k).into_vec()
}

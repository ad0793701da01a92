use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::alignment::AlignmentOptions;
use crate::builder::BuilderConfig;
use crate::bundle_adjust::BAOptions;
use crate::simulation::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    /// Builder and aligner on separate threads joined by a bounded channel.
    TwoWorker,
    /// Build a submap, align it, repeat.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularyConfig {
    pub branching: usize,
    pub depth: usize,
    /// Trained vocabulary file; when unset a tree is trained on the input
    /// dataset before the run.
    pub path: Option<PathBuf>,
    /// Upper bound on training descriptors sampled from the dataset.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            branching: 10,
            depth: 3,
            path: None,
            max_samples: 40_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Propagated to the scenario, builder, alignment and vocabulary.
    pub seed: u64,
    pub mode: ExecutionMode,
    /// Completed submaps buffered between the two workers.
    pub channel_capacity: usize,
    pub output_dir: PathBuf,
    /// Scenario used by `simulate`.
    pub scenario: ScenarioConfig,
    pub builder: BuilderConfig,
    pub ba: BAOptions,
    pub alignment: AlignmentOptions,
    pub vocabulary: VocabularyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: ExecutionMode::TwoWorker,
            channel_capacity: 4,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            builder: BuilderConfig::default(),
            ba: BAOptions::default(),
            alignment: AlignmentOptions::default(),
            vocabulary: VocabularyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Every value, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenario.seed = seed;
        self.builder.seed = seed;
        self.alignment.seed = seed;
        self.vocabulary.seed = seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let config = |e: String| PipelineError::Config(e);
        self.scenario.validate().map_err(|e| config(e.to_string()))?;
        self.builder.validate().map_err(|e| config(e.to_string()))?;
        self.alignment.validate().map_err(|e| config(e.to_string()))?;
        if !self.ba.is_valid() {
            return Err(config("invalid bundle adjustment options".into()));
        }
        if self.channel_capacity == 0 {
            return Err(config("channel_capacity must be positive".into()));
        }
        let v = &self.vocabulary;
        if v.branching < 2 || v.depth == 0 || v.max_samples == 0 {
            return Err(config("vocabulary needs branching ≥ 2, depth ≥ 1 and max_samples ≥ 1".into()));
        }
        Ok(())
    }
}

//! End-to-end runs: configuration, the two-worker pipeline, output files,
//! run reports, plots and the command-line front end.

pub mod cli;
mod config;
mod plot;
mod report;
mod run;

use thiserror::Error;

pub use config::{ExecutionMode, PipelineConfig, VocabularyConfig};
pub use plot::{render_report_svgs, write_report_plots};
pub use report::{EvaluationReport, RunReport, SnapshotReport, SubmapReport};
pub use run::{
    read_submap_archive, run_pipeline, sample_descriptors, train_vocabulary, write_outputs, write_submap_archive, RunOutput,
    SubmapRecord, CONFIG_FILE, MAP_FILE, REPORT_FILE, SUBMAPS_FILE, TRAJECTORY_FILE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 dataset, 4 reconstruction, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Dataset(_) => 3,
            Self::Reconstruction(_) => 4,
            Self::Io(_) => 1,
        }
    }
}

impl From<crate::dataset::DatasetError> for PipelineError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        Self::Dataset(e.to_string())
    }
}

impl From<crate::map::MapIoError> for PipelineError {
    fn from(e: crate::map::MapIoError) -> Self {
        match e {
            crate::map::MapIoError::Io(e) => Self::Io(e),
            e => Self::Dataset(e.to_string()),
        }
    }
}

impl From<crate::place_recognition::PlaceError> for PipelineError {
    fn from(e: crate::place_recognition::PlaceError) -> Self {
        match e {
            crate::place_recognition::PlaceError::Io(e) => Self::Io(e),
            e => Self::Dataset(e.to_string()),
        }
    }
}

impl From<crate::alignment::AlignmentError> for PipelineError {
    fn from(e: crate::alignment::AlignmentError) -> Self {
        match e {
            crate::alignment::AlignmentError::Config(m) => Self::Config(m),
            e => Self::Reconstruction(e.to_string()),
        }
    }
}

impl From<crate::simulation::SimulationError> for PipelineError {
    fn from(e: crate::simulation::SimulationError) -> Self {
        use crate::simulation::SimulationError as S;
        match e {
            S::Config(m) => Self::Config(m),
            S::Dataset(e) => e.into(),
            e => Self::Reconstruction(e.to_string()),
        }
    }
}

//! Command-line front end. `main` returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use super::{
    run_pipeline, train_vocabulary, write_outputs, write_report_plots, EvaluationReport, ExecutionMode, PipelineConfig,
    PipelineError, RunReport,
};
use crate::dataset::{write_dataset, DatasetReader, FrameSource, GroundTruth};
use crate::map::{load_ply, load_trajectory, GlobalMap};
use crate::place_recognition::VocabularyTree;
use crate::simulation::{evaluate_map, SimulatedSource};

pub const DATASET_FILE: &str = "dataset.tracks";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const VOCABULARY_FILE: &str = "vocabulary.bin";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(name = "submap-slam", version, about = "Submap-based monocular mapping on feature-track datasets")]
pub struct Cli {
    /// Pipeline config (TOML); defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ExecutionMode>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the config's scenario into a dataset and ground-truth file.
    Simulate,
    /// Train a vocabulary tree on descriptors sampled from datasets.
    BuildVocab {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Branching factor k.
        #[arg(long)]
        branching: Option<usize>,
        /// Depth L.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Build submaps, align them and write the global map.
    Run {
        dataset: PathBuf,
        /// Ground truth for evaluation in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Vocabulary file; overrides the config.
        #[arg(long)]
        vocabulary: Option<PathBuf>,
    },
    /// Compare a map with ground truth and write metrics.
    Evaluate {
        map: PathBuf,
        truth: PathBuf,
        /// Trajectory file for pose errors.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Draw SVG charts from a run report.
    PlotReport { report: PathBuf },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_dataset(path: &Path) -> Result<DatasetReader, PipelineError> {
    DatasetReader::open(path).map_err(|e| PipelineError::Dataset(format!("{}: {e}", path.display())))
}

fn simulate(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let source = SimulatedSource::new(&cfg.scenario)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let dataset = cfg.output_dir.join(DATASET_FILE);
    write_dataset(&dataset, &source)?;
    let truth = source.ground_truth();
    truth.save(&cfg.output_dir.join(TRUTH_FILE))?;
    println!(
        "wrote {} frames, {} scene landmarks to {}",
        source.len(),
        truth.landmarks.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn build_vocab(cfg: &mut PipelineConfig, datasets: &[PathBuf], k: Option<usize>, l: Option<usize>) -> Result<(), PipelineError> {
    if let Some(k) = k {
        cfg.vocabulary.branching = k;
    }
    if let Some(l) = l {
        cfg.vocabulary.depth = l;
    }
    cfg.validate()?;
    let readers = datasets.iter().map(|p| open_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let sources: Vec<&dyn FrameSource> = readers.iter().map(|r| r as &dyn FrameSource).collect();
    let tree = train_vocabulary(&sources, cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(VOCABULARY_FILE);
    tree.save(&path)?;
    println!("wrote {} words (k={}, L={}) to {}", tree.word_count(), tree.branching(), tree.depth(), path.display());
    Ok(())
}

fn run(cfg: &PipelineConfig, dataset: &Path, truth: Option<&Path>, vocabulary: Option<&Path>) -> Result<(), PipelineError> {
    let source = open_dataset(dataset)?;
    let truth = truth.map(GroundTruth::load).transpose()?;
    let vocab_path = vocabulary.or(cfg.vocabulary.path.as_deref());
    let tree = vocab_path.map(VocabularyTree::load).transpose()?;
    let out = run_pipeline(&source, cfg, tree, truth.as_ref())?;
    write_outputs(&cfg.output_dir, &out, cfg)?;
    let r = &out.report;
    println!(
        "{} submaps ({} completed), {} landmarks, {} trajectory frames in {:.1}s",
        r.submaps.len(),
        r.completed_submaps(),
        r.map_landmarks,
        r.trajectory_frames,
        r.total_seconds
    );
    if let Some(e) = &r.evaluation {
        println!("landmark RMSE {:.4} m, mean position error {:.4} m", e.rmse, e.mean_position_error);
    }
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, map: &Path, truth: &Path, trajectory: Option<&Path>) -> Result<(), PipelineError> {
    let global = GlobalMap {
        landmarks: load_ply(map)?,
        trajectory: trajectory.map(load_trajectory).transpose()?.unwrap_or_default(),
    };
    let truth = GroundTruth::load(truth)?;
    let e = evaluate_map(&global, &truth)?;
    let report = EvaluationReport::from(&e);
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(METRICS_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("metrics serialize"))?;
    println!("RMSE {:.6} over {} landmarks; metrics in {}", e.rmse, e.matched_landmarks, path.display());
    Ok(())
}

fn plot_report(cfg: &PipelineConfig, report: &Path) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(report)?;
    let r = RunReport::from_json(&text).map_err(|e| PipelineError::Dataset(format!("{}: {e}", report.display())))?;
    for p in write_report_plots(&r, &cfg.output_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    info!("{:?} with seed {}", cli.command, cfg.seed);
    match &cli.command {
        Command::Simulate => simulate(&cfg),
        Command::BuildVocab {
            datasets,
            branching,
            depth,
        } => build_vocab(&mut cfg, datasets, *branching, *depth),
        Command::Run {
            dataset,
            truth,
            vocabulary,
        } => run(&cfg, dataset, truth.as_deref(), vocabulary.as_deref()),
        Command::Evaluate { map, truth, trajectory } => evaluate(&cfg, map, truth, trajectory.as_deref()),
        Command::PlotReport { report } => plot_report(&cfg, report),
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::report::{EvaluationReport, RunReport, SnapshotReport, SubmapReport};
use super::{ExecutionMode, PipelineConfig, PipelineError};
use crate::alignment::{alignment_worker, Aligner, MapSnapshot};
use crate::builder::{build_submaps, Submap};
use crate::dataset::{FrameSource, GroundTruth};
use crate::descriptor::Descriptor;
use crate::lie::Se3Pose;
use crate::map::{save_ply, save_trajectory, GlobalMap};
use crate::place_recognition::{build_vocabulary, SubmapDatabase, VocabularyTree};
use crate::simulation::evaluate_map;

pub struct RunOutput {
    pub map: GlobalMap,
    pub submaps: Vec<Submap>,
    pub snapshots: Vec<MapSnapshot>,
    pub report: RunReport,
}

/// Descriptors from evenly spaced frames, at most `max_samples`.
pub fn sample_descriptors(source: &dyn FrameSource, max_samples: usize) -> Result<Vec<Descriptor>, PipelineError> {
    let n = source.len();
    let probes: Vec<usize> = (0..n.min(5)).map(|i| i * n / n.min(5)).collect();
    let mut seen = 0;
    for &i in &probes {
        seen += source.frame(i)?.observations.len();
    }
    let per_frame = (seen / probes.len().max(1)).max(1);
    let stride = (n * per_frame).div_ceil(max_samples).max(1);
    let mut out = Vec::new();
    for i in (0..n).step_by(stride) {
        out.extend(source.frame(i)?.observations.iter().map(|o| o.descriptor));
    }
    out.truncate(max_samples);
    Ok(out)
}

pub fn train_vocabulary(sources: &[&dyn FrameSource], cfg: &PipelineConfig) -> Result<VocabularyTree, PipelineError> {
    let per = cfg.vocabulary.max_samples / sources.len().max(1);
    let mut sample = Vec::new();
    for s in sources {
        sample.extend(sample_descriptors(*s, per.max(1))?);
    }
    Ok(build_vocabulary(&sample, cfg.vocabulary.branching, cfg.vocabulary.depth, cfg.vocabulary.seed)?)
}

/// Build submaps and align them under the configured execution mode.
pub fn run_pipeline(
    source: &dyn FrameSource,
    cfg: &PipelineConfig,
    vocabulary: Option<VocabularyTree>,
    truth: Option<&GroundTruth>,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(PipelineError::Dataset("dataset has no frames".into()));
    }
    let started = Instant::now();
    let vocabulary = match vocabulary {
        Some(v) => v,
        None => {
            info!("training vocabulary on the input sequence");
            train_vocabulary(&[source], cfg)?
        }
    };
    let aligner = Aligner::new(cfg.alignment.clone(), Some(SubmapDatabase::new(Arc::new(vocabulary))))?;
    let stream = build_submaps(source, &cfg.builder, &cfg.ba).map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut submaps = Vec::new();
    let mut submap_reports = Vec::new();
    let mut snapshots = Vec::new();
    let mut snapshot_reports = Vec::new();
    let aligner = match cfg.mode {
        ExecutionMode::Single => {
            let mut aligner = aligner;
            for s in stream {
                let s = s.map_err(|e| PipelineError::Dataset(e.to_string()))?;
                submap_reports.push(SubmapReport::new(&s, started.elapsed().as_secs_f64()));
                submaps.push(s.clone());
                let id = s.id;
                match aligner.add_submap(s) {
                    Ok(Some(snap)) => {
                        snapshot_reports.push(SnapshotReport::new(&snap, started.elapsed().as_secs_f64()));
                        snapshots.push(snap);
                    }
                    Ok(None) => {}
                    Err(e) => warn!("alignment of submap {id} failed: {e}"),
                }
            }
            aligner
        }
        ExecutionMode::TwoWorker => {
            let (tx, rx) = sync_channel::<Submap>(cfg.channel_capacity);
            std::thread::scope(|scope| {
                let builder = scope.spawn(move || -> Result<(Vec<Submap>, Vec<SubmapReport>), PipelineError> {
                    let mut built = Vec::new();
                    let mut reports = Vec::new();
                    for s in stream {
                        let s = s.map_err(|e| PipelineError::Dataset(e.to_string()))?;
                        reports.push(SubmapReport::new(&s, started.elapsed().as_secs_f64()));
                        built.push(s.clone());
                        if tx.send(s).is_err() {
                            break;
                        }
                    }
                    Ok((built, reports))
                });
                let aligner = alignment_worker(rx, aligner, |snap| {
                    snapshot_reports.push(SnapshotReport::new(snap, started.elapsed().as_secs_f64()));
                    snapshots.push(snap.clone());
                });
                let (built, reports) = builder.join().expect("builder thread panicked")?;
                submaps = built;
                submap_reports = reports;
                Ok::<_, PipelineError>(aligner)
            })?
        }
    };

    if !submaps.iter().any(Submap::is_completed) {
        return Err(PipelineError::Reconstruction(format!(
            "no completed submaps among {}",
            submaps.len()
        )));
    }
    let map = aligner.global_map();
    let evaluation = match truth {
        Some(t) => Some(EvaluationReport::from(&evaluate_map(&map, t).map_err(|e| PipelineError::Reconstruction(e.to_string()))?)),
        None => None,
    };
    let report = RunReport {
        mode: cfg.mode,
        seed: cfg.seed,
        frames: source.len(),
        submaps: submap_reports,
        snapshots: snapshot_reports,
        map_landmarks: map.landmarks.len(),
        trajectory_frames: map.trajectory.len(),
        evaluation,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        map,
        submaps,
        snapshots,
        report,
    })
}

/// One line of the submap archive: local geometry without descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmapRecord {
    pub id: u32,
    pub completed: bool,
    pub failure: Option<String>,
    pub frame_range: (u64, u64),
    pub focal: f64,
    pub ba_rms: f64,
    /// `(frame, camera-from-local pose)` of every keyframe.
    pub keyframes: Vec<(u64, Se3Pose)>,
    /// `(landmark id, position, truth id, carried from)`.
    pub landmarks: Vec<(u64, [f64; 3], u32, Option<u64>)>,
    pub frame_poses: Vec<(u64, Se3Pose, bool)>,
    pub unlocalized_frames: Vec<u64>,
}

impl From<&Submap> for SubmapRecord {
    fn from(s: &Submap) -> Self {
        Self {
            id: s.id,
            completed: s.is_completed(),
            failure: s.failure.clone(),
            frame_range: s.frame_range,
            focal: s.focal,
            ba_rms: s.ba_rms,
            keyframes: s.keyframes.iter().map(|k| (k.frame_id, k.pose)).collect(),
            landmarks: s
                .landmarks
                .values()
                .map(|l| (l.id, [l.position.x, l.position.y, l.position.z], l.truth_id, l.carried_from))
                .collect(),
            frame_poses: s.frame_poses.iter().map(|f| (f.frame, f.pose, f.relocalized)).collect(),
            unlocalized_frames: s.unlocalized_frames.clone(),
        }
    }
}

pub fn write_submap_archive(path: &Path, submaps: &[Submap]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in submaps {
        serde_json::to_writer(&mut w, &SubmapRecord::from(s)).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_submap_archive(path: &Path) -> Result<Vec<SubmapRecord>, PipelineError> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Dataset(format!("{}: {e}", path.display()))))
        .collect()
}

pub const MAP_FILE: &str = "map.ply";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const SUBMAPS_FILE: &str = "submaps.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Point cloud, trajectory, submap archive, report and effective config.
pub fn write_outputs(dir: &Path, out: &RunOutput, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    save_ply(&dir.join(MAP_FILE), &out.map.landmarks)?;
    save_trajectory(&dir.join(TRAJECTORY_FILE), &out.map.trajectory)?;
    write_submap_archive(&dir.join(SUBMAPS_FILE), &out.submaps)?;
    std::fs::write(dir.join(REPORT_FILE), out.report.to_json())?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

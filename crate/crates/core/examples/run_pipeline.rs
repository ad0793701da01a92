//! Full pipeline on the small scenario in both execution modes.

use submap_slam::pipeline::{run_pipeline, ExecutionMode, PipelineConfig};
use submap_slam::simulation::SimulatedSource;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/small.toml");
    let mut cfg = PipelineConfig::from_toml(&std::fs::read_to_string(path)?)?;
    // long enough for several submaps to be aligned
    cfg.scenario.frame_count = 400;
    let source = SimulatedSource::new(&cfg.scenario)?;
    let truth = source.ground_truth();
    for mode in [ExecutionMode::Single, ExecutionMode::TwoWorker] {
        cfg.mode = mode;
        let out = run_pipeline(&source, &cfg, None, Some(&truth))?;
        let r = &out.report;
        println!(
            "{:?}: {} submaps ({} completed), {} snapshots, {} landmarks, rmse {:.4}, {:.1}s",
            mode,
            r.submaps.len(),
            r.completed_submaps(),
            r.snapshots.len(),
            r.map_landmarks,
            r.evaluation.as_ref().map_or(f64::NAN, |e| e.rmse),
            r.total_seconds
        );
    }
    Ok(())
}

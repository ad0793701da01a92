//! Render a scenario, write it as a feature-track dataset, and read it back.

use submap_slam::dataset::{write_dataset, DatasetReader, FrameSource};
use submap_slam::simulation::{ScenarioConfig, SimulatedSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::small();
    let source = SimulatedSource::new(&cfg)?;
    println!("scene: {} landmarks, {} frames", source.scene().len(), source.len());
    for i in (0..source.len()).step_by(40) {
        let frame = source.frame(i)?;
        println!("frame {:3}: {} observations", i, frame.observations.len());
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("small.tracks");
    write_dataset(&path, &source)?;
    source.ground_truth().save(&dir.path().join("ground_truth.json"))?;
    let reader = DatasetReader::open(&path)?;
    println!(
        "wrote {} bytes; reader sees {} frames, focal {}",
        std::fs::metadata(&path)?.len(),
        reader.len(),
        reader.intrinsics().focal
    );
    Ok(())
}

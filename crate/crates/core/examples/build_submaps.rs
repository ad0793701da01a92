//! Build submaps over a simulated orbit and print per-submap statistics.

use std::time::Instant;

use submap_slam::builder::{build_submaps, BuilderConfig};
use submap_slam::bundle_adjust::BAOptions;
use submap_slam::simulation::{ScenarioConfig, SimulatedSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = std::env::args().any(|a| a == "--full");
    let scenario = if full { ScenarioConfig::synth1() } else { ScenarioConfig::small() };
    let source = SimulatedSource::new(&scenario)?;
    // Track-count thresholds scale with landmark density.
    let (tau_stereo, tau_resection_floor) = if full { (450, 150) } else { (150, 60) };
    let cfg = BuilderConfig {
        tau_stereo,
        tau_resection_floor,
        ..BuilderConfig::default()
    };
    let t = Instant::now();
    for submap in build_submaps(&source, &cfg, &BAOptions::default())? {
        let s = submap?;
        println!(
            "submap {:2} {:?} frames {:4}..{:4} keyframes {:2} landmarks {:5} rms {:.3} px  {:.2}s {}",
            s.id,
            s.status,
            s.frame_range.0,
            s.frame_range.1,
            s.keyframes.len(),
            s.landmarks.len(),
            s.ba_rms,
            s.build_seconds,
            s.failure.as_deref().unwrap_or("")
        );
    }
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use submap_slam::dataset::{write_dataset, FeatureTrackDataset, FrameSource};
use submap_slam::map::{load_ply, load_trajectory};
use submap_slam::multiview::{CameraIntrinsics, ImageSize};
use submap_slam::pipeline::{read_submap_archive, PipelineConfig, RunReport};
use submap_slam::place_recognition::VocabularyTree;
use submap_slam::simulation::SimulatedSource;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submap-slam")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_frames_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nframe_count = 0\n");
    let out = bin(&["simulate", "--config", s(&cfg), "--output-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame_count"));
}

#[test]
fn unknown_key_reports_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n\n[builder]\ntau_sterio = 5\n");
    let out = bin(&["simulate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau_sterio") && err.contains("line 4"), "{err}");
}

#[test]
fn bad_mode_is_a_usage_error() {
    let out = bin(&["--mode", "three-worker", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth1_config_describes_1100_frames() {
    let cfg = PipelineConfig::load(&configs().join("synth1.toml")).unwrap();
    assert_eq!(cfg.scenario.frame_count, 1100);
    assert_eq!(SimulatedSource::new(&cfg.scenario).unwrap().len(), 1100);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[scenario]\nframe_count = 12\n[scenario.scene]\nextent = 400.0\ndensity = 0.05\n[scenario.trajectory]\nradius = 120.0\n",
    );
    for name in ["a", "b"] {
        let out = bin(&["simulate", "--config", s(&cfg), "--seed", "9", "--output-dir", s(&dir.path().join(name))]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["dataset.tracks", "ground_truth.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let out = bin(&["simulate", "--config", s(&cfg), "--seed", "10", "--output-dir", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        std::fs::read(dir.path().join("a/dataset.tracks")).unwrap(),
        std::fs::read(dir.path().join("c/dataset.tracks")).unwrap()
    );
}

#[test]
fn empty_dataset_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = FeatureTrackDataset {
        intrinsics: CameraIntrinsics::new(1751.0, 640.0, 480.0),
        image_size: ImageSize::new(1280, 960),
        frames: Vec::new(),
    };
    let path = dir.path().join("empty.tracks");
    write_dataset(&path, &empty).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&["run", s(&path), "--output-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());

    std::fs::write(&path, b"not a dataset\n").unwrap();
    assert_eq!(bin(&["run", s(&path), "--output-dir", s(&out_dir)]).status.code(), Some(3));
}

#[test]
fn too_short_sequence_is_a_reconstruction_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("small.toml");
    let data = dir.path().join("data");
    let cfg_short = write_config(
        dir.path(),
        &std::fs::read_to_string(&cfg).unwrap().replace("frame_count = 160", "frame_count = 30"),
    );
    assert_eq!(bin(&["simulate", "--config", s(&cfg_short), "--output-dir", s(&data)]).status.code(), Some(0));
    let out = bin(&["run", s(&data.join("dataset.tracks")), "--config", s(&cfg_short), "--output-dir", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn end_to_end_outputs_agree_with_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("small.toml");
    let data = dir.path().join("data");
    assert_eq!(bin(&["simulate", "--config", s(&cfg), "--output-dir", s(&data)]).status.code(), Some(0));
    let dataset = data.join("dataset.tracks");
    let truth = data.join("ground_truth.json");

    let out = bin(&["build-vocab", s(&dataset), "--branching", "6", "--depth", "2", "--seed", "4", "--output-dir", s(&dir.path().join("v1"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    bin(&["build-vocab", s(&dataset), "--branching", "6", "--depth", "2", "--seed", "4", "--output-dir", s(&dir.path().join("v2"))]);
    let v1 = dir.path().join("v1/vocabulary.bin");
    assert_eq!(std::fs::read(&v1).unwrap(), std::fs::read(dir.path().join("v2/vocabulary.bin")).unwrap());
    let tree = VocabularyTree::load(&v1).unwrap();
    assert!(tree.word_count() <= 36 && tree.branching() == 6 && tree.depth() == 2);

    let mut results = Vec::new();
    for mode in ["single", "two-worker"] {
        let run_dir = dir.path().join(mode);
        let out = bin(&[
            "run",
            s(&dataset),
            "--truth",
            s(&truth),
            "--vocabulary",
            s(&v1),
            "--config",
            s(&cfg),
            "--mode",
            mode,
            "--output-dir",
            s(&run_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let report = RunReport::from_json(&std::fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
        let cloud = load_ply(&run_dir.join("map.ply")).unwrap();
        let trajectory = load_trajectory(&run_dir.join("trajectory.txt")).unwrap();
        let archive = read_submap_archive(&run_dir.join("submaps.jsonl")).unwrap();
        assert_eq!(report.map_landmarks, cloud.len());
        assert_eq!(report.trajectory_frames, trajectory.len());
        assert_eq!(report.submaps.len(), archive.len());
        assert_eq!(report.frames, 160);
        for (r, a) in report.submaps.iter().zip(&archive) {
            assert_eq!((r.id, r.completed, r.landmarks), (a.id, a.completed, a.landmarks.len()));
        }
        let completed: usize = archive.iter().filter(|a| a.completed).map(|a| a.frame_poses.len()).sum();
        assert!(trajectory.len() <= completed);

        let out = bin(&["evaluate", s(&run_dir.join("map.ply")), s(&truth), "--trajectory", s(&run_dir.join("trajectory.txt")), "--output-dir", s(&run_dir)]);
        assert_eq!(out.status.code(), Some(0));
        let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap();
        let rmse = report.evaluation.as_ref().unwrap().rmse;
        assert!((metrics["rmse"].as_f64().unwrap() - rmse).abs() < 1e-12);
        assert!(rmse < 0.1, "{rmse}");

        let plots = dir.path().join(format!("plots-{mode}"));
        let out = bin(&["plot-report", s(&run_dir.join("report.json")), "--output-dir", s(&plots)]);
        assert_eq!(out.status.code(), Some(0));
        for f in ["submap_ba_rms.svg", "timing.svg", "graph_size.svg"] {
            assert!(std::fs::read_to_string(plots.join(f)).unwrap().starts_with("<svg"));
        }
        results.push((std::fs::read(run_dir.join("map.ply")).unwrap(), std::fs::read(run_dir.join("trajectory.txt")).unwrap()));
    }
    assert!(results[0] == results[1], "modes disagree");
}

//! Scene generation and the on-disk layout: ground-truth poses, per-frame
//! scans, and the observation table with semantic labels.

use galvo::backend::SemanticLabel;
use galvo::sim::{generate, read_scene, write_scene, SceneConfig, TrajectoryKind};

fn main() {
    let cfg = SceneConfig {
        trajectory: TrajectoryKind::UrbanLoop,
        frames: 48,
        landmark_count: 300,
        vegetation_fraction: 0.25,
        dynamic_fraction: 0.05,
        pixel_noise: 0.5,
        outlier_fraction: 0.08,
        seed: 9,
        ..SceneConfig::default()
    };
    let sequence = generate(&cfg).unwrap();

    let labels = |label: SemanticLabel| {
        sequence
            .landmarks
            .iter()
            .filter(|l| l.label == label)
            .count()
    };
    println!(
        "{} frames, {} landmarks (ground {}, vegetation {}, structure {}, dynamic {})",
        sequence.scene.frames.len(),
        sequence.landmarks.len(),
        labels(SemanticLabel::Ground),
        labels(SemanticLabel::Vegetation),
        labels(SemanticLabel::Structure),
        labels(SemanticLabel::Dynamic),
    );
    let observations: usize = sequence
        .scene
        .frames
        .iter()
        .map(|f| f.observations.len())
        .sum();
    let scan_points: usize = sequence
        .scene
        .frames
        .iter()
        .map(|f| f.scan.points.len())
        .sum();
    println!(
        "{observations} observations ({} designated outliers), {scan_points} lidar points",
        sequence.corrupted.len()
    );

    let dir = std::env::temp_dir().join("galvo-example-scene");
    let _ = std::fs::remove_dir_all(&dir);
    write_scene(&dir, &sequence).unwrap();
    println!("wrote {}", dir.display());
    for entry in std::fs::read_dir(&dir).unwrap() {
        println!("  {}", entry.unwrap().file_name().to_string_lossy());
    }

    let (scene, gt) = read_scene(&dir).unwrap();
    println!(
        "read back: {} frames, ground truth present: {}",
        scene.frames.len(),
        gt.is_some()
    );
    let _ = std::fs::remove_dir_all(&dir);
}

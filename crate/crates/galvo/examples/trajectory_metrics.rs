//! Trajectory error metrics: subsequence translation drift and APE RMSE,
//! plus the pose-file round trip.

use galvo::evaluation::{
    ape_rmse, default_lengths, kitti_translation_error, read_kitti_poses, write_kitti_poses,
    Trajectory,
};
use galvo::geometry::Pose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    // A kilometer of gently curving ground truth at 1 m per frame.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut heading: f64 = 0.0;
    let mut pos = nalgebra::Vector3::zeros();
    let mut poses = Vec::new();
    for _ in 0..1000 {
        poses.push(Pose::new(pos.x, 0.0, pos.z, 0.0, heading, 0.0));
        heading += 3e-4;
        pos += nalgebra::Vector3::new(heading.sin(), 0.0, heading.cos());
    }
    let gt = Trajectory::new(poses);

    // An estimate with slow drift and jitter.
    let mut drift = nalgebra::Vector3::zeros();
    let est = Trajectory::new(
        gt.poses
            .iter()
            .map(|p| {
                drift += nalgebra::Vector3::new(
                    rng.random_range(-0.004..0.006),
                    0.0,
                    rng.random_range(-0.003..0.005),
                );
                Pose {
                    x: p.x + drift.x,
                    z: p.z + drift.z,
                    ..*p
                }
            })
            .collect(),
    );

    let report = kitti_translation_error(&est, &gt, &default_lengths(), 10).unwrap();
    print!("{report}");
    println!("APE RMSE recomputed: {:.4} m", ape_rmse(&est, &gt).unwrap());

    // Pose files round-trip through the 12-value format.
    let text = write_kitti_poses(&gt);
    let back = read_kitti_poses(&text).unwrap();
    println!(
        "pose file: {} lines, {} flagged rotations, worst round-trip error {:.2e}",
        gt.len(),
        back.reorthonormalized_lines.len(),
        back.trajectory
            .poses
            .iter()
            .zip(&gt.poses)
            .map(|(a, b)| (a.matrix() - b.matrix()).abs().max())
            .fold(0.0f64, f64::max)
    );
}

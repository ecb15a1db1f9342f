//! Keyframe bundle adjustment: perturbed window poses pulled back to the
//! optimum, with quantile rejection of landmarks carrying corrupted depths.

use galvo::backend::{
    optimize_window, BaParams, DistanceBin, Keyframe, KeyframeKind, LandmarkRecord, SemanticLabel,
    WindowLosses,
};
use galvo::geometry::{backproject, project, CameraIntrinsics, Point3, Pose};
use galvo::odometry::SolverConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let k = CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Five keyframes moving forward; 150 landmarks with exact depth at
    // their first observation.
    let truth: Vec<Pose> = (0..5)
        .map(|i| Pose::from_translation(0.0, 0.0, -(i as f64)))
        .collect();
    let mut landmarks = Vec::new();
    let mut observations: Vec<Vec<(u64, galvo::geometry::Point2)>> = vec![Vec::new(); 5];
    while landmarks.len() < 150 {
        let position = Point3::new(
            rng.random_range(-8.0..8.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(8.0..40.0),
        );
        let mut seen = Vec::new();
        for (kf, pose) in truth.iter().enumerate() {
            let cam = pose.transform_point(&position);
            if cam.z > 1.0 {
                if let Ok(pixel) = project(&k, &cam) {
                    if k.contains(&pixel) {
                        seen.push((kf, pixel, cam.z));
                    }
                }
            }
        }
        if seen.len() < 2 {
            continue;
        }
        let id = landmarks.len() as u64;
        for &(kf, pixel, _) in &seen {
            observations[kf].push((id, pixel));
        }
        landmarks.push(LandmarkRecord {
            id,
            position,
            depth_estimate: Some(seen[0].2),
            label: SemanticLabel::Structure,
            bin: DistanceBin::Near,
        });
    }
    let keyframes: Vec<Keyframe> = truth
        .iter()
        .enumerate()
        .map(|(i, pose)| Keyframe {
            id: i as u64,
            timestamp: 0.3 * i as f64,
            pose: *pose,
            kind: KeyframeKind::Sparsified,
            observations: observations[i].clone(),
        })
        .collect();

    // Corrupt a tenth of the depths (and the positions derived from them).
    for idx in (0..landmarks.len()).step_by(10) {
        let id = landmarks[idx].id;
        let first = keyframes
            .iter()
            .find_map(|kf| {
                kf.observations
                    .iter()
                    .find(|&&(lid, _)| lid == id)
                    .map(|&(_, px)| (kf, px))
            })
            .unwrap();
        let bad = landmarks[idx].depth_estimate.unwrap() * 1.8;
        landmarks[idx].depth_estimate = Some(bad);
        landmarks[idx].position = first
            .0
            .pose
            .inverse()
            .transform_point(&backproject(&k, &first.1, bad));
    }

    // Perturb the non-gauge poses.
    let mut perturbed = keyframes.clone();
    for kf in perturbed.iter_mut().skip(1) {
        kf.pose.x += rng.random_range(-0.05..0.05);
        kf.pose.y += rng.random_range(-0.05..0.05);
        kf.pose.z += rng.random_range(-0.05..0.05);
        kf.pose.gamma += rng.random_range(-0.005..0.005);
    }

    let params = BaParams {
        delta: 0.9,
        ..BaParams::default()
    };
    let solution = optimize_window(
        &perturbed,
        &landmarks,
        &k,
        &params,
        &WindowLosses::default(),
        &SolverConfig::default(),
    )
    .unwrap();

    for (i, (est, truth)) in solution.poses.iter().zip(&truth).enumerate() {
        println!(
            "pose {i}: error {:.2e} m{}",
            (est.translation() - truth.translation()).norm(),
            if i == 0 { " (gauge, held fixed)" } else { "" }
        );
    }
    println!(
        "cost: {:.3e} -> {:.3e} over {} accepted steps",
        solution.cost_trace.first().unwrap(),
        solution.cost_trace.last().unwrap(),
        solution.cost_trace.len() - 1
    );
    println!(
        "rejected landmarks at the {:.2} quantile: {:?}",
        params.delta, solution.rejected_landmarks
    );
}

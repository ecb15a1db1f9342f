//! Robust frame-to-frame motion estimation: mixed reprojection and epipolar
//! residuals under Cauchy losses, with a fifth of the tracks corrupted.

use galvo::geometry::{project, CameraIntrinsics, Point3, Pose};
use galvo::odometry::{estimate_motion, CauchyLoss, Correspondence, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let k = CameraIntrinsics::new(718.856, 718.856, 607.19, 185.21, 1241, 376).unwrap();
    let truth = Pose::new(0.02, -0.01, 1.1, 0.002, 0.015, -0.003);
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    let mut correspondences = Vec::new();
    while correspondences.len() < 120 {
        let p_prev = Point3::new(
            rng.random_range(-15.0..15.0),
            rng.random_range(-4.0..3.0),
            rng.random_range(6.0..50.0),
        );
        let p_curr = truth.transform_point(&p_prev);
        let (Ok(prev_pixel), Ok(curr_pixel)) = (project(&k, &p_prev), project(&k, &p_curr)) else {
            continue;
        };
        if !k.contains(&prev_pixel) || !k.contains(&curr_pixel) {
            continue;
        }
        // Only a third of the tracks carry lidar depth, as on a real frame.
        let with_depth = correspondences.len() % 3 == 0;
        correspondences.push(Correspondence {
            curr_pixel,
            prev_pixel,
            point3d: with_depth.then_some(p_prev),
        });
    }
    // 20% gross outliers.
    for c in correspondences.iter_mut().take(24) {
        c.curr_pixel.x = rng.random_range(0.0..1241.0);
        c.curr_pixel.y = rng.random_range(0.0..376.0);
    }

    let estimate = estimate_motion(
        &correspondences,
        &k,
        &Pose::identity(),
        (CauchyLoss::new(1.0), CauchyLoss::new(1e-4)),
        &SolverConfig::default(),
    )
    .unwrap();

    println!("true motion:      t = {:?}", truth.translation());
    println!("estimated motion: t = {:?}", estimate.motion.translation());
    println!(
        "translation error with 20% outliers: {:.2e} m",
        (estimate.motion.translation() - truth.translation()).norm()
    );
    println!(
        "iterations: {}, converged: {}, final cost: {:.3e}",
        estimate.iterations, estimate.converged, estimate.final_cost
    );
}

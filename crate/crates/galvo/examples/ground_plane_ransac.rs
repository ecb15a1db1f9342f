//! RANSAC ground extraction from a cluttered cloud, with the least-squares
//! refinement on the consensus set.

use galvo::depth::{fit_ground_plane, LidarScan};
use galvo::geometry::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = Vec::new();
    // Gently tilted road, z up in the sensor frame.
    for _ in 0..800 {
        let x = rng.random_range(2.0..50.0);
        let y = rng.random_range(-12.0..12.0);
        let z = -1.7 + 0.01 * x + rng.random_range(-0.02..0.02);
        points.push(Point3::new(x, y, z));
    }
    // Clutter: walls, poles, a passing vehicle.
    for _ in 0..350 {
        points.push(Point3::new(
            rng.random_range(2.0..50.0),
            rng.random_range(-12.0..12.0),
            rng.random_range(-1.0..3.5),
        ));
    }
    let scan = LidarScan::new(points, 0.0);

    let plane = fit_ground_plane(&scan, 300, 0.08, &mut rng).unwrap();
    let inliers = scan
        .points
        .iter()
        .filter(|p| plane.distance(p) <= 0.08)
        .count();
    println!("normal: {:?}", plane.normal);
    println!("offset: {:.4} m", plane.offset);
    println!("inliers: {inliers} of {}", scan.points.len());
    println!(
        "height under the sensor (x = y = 0): {:.4} m",
        plane.offset / plane.normal.z
    );
}

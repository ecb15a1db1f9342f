//! The per-feature depth pipeline on a hand-built scan: ROI selection,
//! nearest-bin segmentation, max-area plane fit, ray intersection, gates.

use galvo::depth::{estimate_feature_depths, DepthParams, DepthQuery, LidarScan};
use galvo::geometry::{CameraIntrinsics, Point2, Point3, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let k = CameraIntrinsics::new(350.0, 350.0, 320.0, 240.0, 640, 480).unwrap();

    // Camera frame, y down: a road plane below the camera, a wall at 9 m,
    // and a second wall far behind it. The road dominates the cloud, as a
    // real sweep would.
    let mut points = Vec::new();
    let mut z = 2.0;
    while z <= 40.0 {
        let mut x = -8.0;
        while x <= 8.0 {
            points.push(Point3::new(x, 1.7, z));
            x += 0.08;
        }
        z += 0.08;
    }
    let mut x = -6.0;
    while x <= 6.0 {
        let mut y = -5.0;
        while y <= 1.5 {
            points.push(Point3::new(x, y, 9.0));
            y += 0.06;
        }
        x += 0.06;
    }
    let mut x = -12.0f64;
    while x <= 12.0 {
        let mut y = -10.0;
        while y <= 1.5 {
            points.push(Point3::new(x, y, 26.0));
            y += 0.12;
        }
        x += 0.12;
    }
    let scan = LidarScan::new(points, 0.0);
    println!("scan size: {} points", scan.points.len());

    let features = vec![
        DepthQuery {
            pixel: Point2::new(320.0, 240.0),
            ground: false,
        }, // wall, optical axis
        DepthQuery {
            pixel: Point2::new(200.0, 180.0),
            ground: false,
        }, // wall, off axis
        DepthQuery {
            pixel: Point2::new(320.0, 420.0),
            ground: true,
        }, // road ahead
        DepthQuery {
            pixel: Point2::new(2.0, 2.0),
            ground: false,
        }, // sky corner
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let estimates = estimate_feature_depths(
        &features,
        &scan,
        &Pose::identity(),
        &k,
        &DepthParams::default(),
        &mut rng,
    );
    for (feature, estimate) in features.iter().zip(&estimates) {
        match estimate.depth() {
            Some(depth) => println!(
                "feature ({:>5.1}, {:>5.1}) ground={}: depth {:.3} m",
                feature.pixel.x, feature.pixel.y, feature.ground, depth
            ),
            None => println!(
                "feature ({:>5.1}, {:>5.1}) ground={}: rejected ({:?})",
                feature.pixel.x,
                feature.pixel.y,
                feature.ground,
                estimate.reason().unwrap()
            ),
        }
    }
    // The ray through the road feature meets y = 1.7 at this depth.
    let dir = galvo::geometry::pixel_ray(&k, &features[2].pixel);
    println!(
        "analytic road depth at the ground feature: {:.3} m",
        1.7 / dir.y * dir.z
    );
}

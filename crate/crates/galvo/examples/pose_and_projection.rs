//! Rigid transforms, pinhole projection, and the epipolar constraint.

use galvo::geometry::{
    backproject, fundamental_from_motion, project, CameraIntrinsics, Point3, Pose,
};
use nalgebra::Vector3;

fn main() {
    let k = CameraIntrinsics::new(718.856, 718.856, 607.19, 185.21, 1241, 376).unwrap();

    // Compose a forward step with a gentle left turn.
    let step = Pose::new(0.0, 0.0, 1.2, 0.0, 0.01, 0.0);
    let mut pose = Pose::identity();
    for _ in 0..5 {
        pose = pose.compose(&step);
    }
    println!("pose after 5 steps: t = {:?}", pose.translation());
    println!(
        "round trip through inverse: {:?}",
        pose.compose(&pose.inverse()).translation()
    );

    // Project a point, then back-project the pixel at the same depth.
    let p_cam = Point3::new(2.0, -1.0, 12.0);
    let pixel = project(&k, &p_cam).unwrap();
    let back = backproject(&k, &pixel, p_cam.z);
    println!(
        "projected {p_cam:?} -> pixel ({:.2}, {:.2}) -> back {back:?}",
        pixel.x, pixel.y
    );

    // The fundamental matrix of a motion annihilates its correspondences.
    let motion = Pose::new(0.3, 0.0, 1.0, 0.0, 0.02, 0.0);
    let f = fundamental_from_motion(&k, &motion).unwrap();
    let p_prev = Point3::new(-3.0, 1.0, 15.0);
    let p_curr = motion.transform_point(&p_prev);
    let u_prev = project(&k, &p_prev).unwrap();
    let u_curr = project(&k, &p_curr).unwrap();
    let residual = Vector3::new(u_curr.x, u_curr.y, 1.0).transpose()
        * f
        * Vector3::new(u_prev.x, u_prev.y, 1.0);
    println!(
        "epipolar residual of a true correspondence: {:.3e}",
        residual[(0, 0)]
    );
}

//! Rigid-body transforms, pinhole projection, and epipolar primitives shared
//! by every other module.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3D point in meters. The owning frame (world, camera, or lidar) is stated
/// by each function's documentation.
pub type Point3 = Vector3<f64>;

/// 2D image point in pixels.
pub type Point2 = Vector2<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth (z = {0})")]
    NonPositiveDepth(f64),
    #[error("motion translation too small for epipolar geometry (|t| = {0:e})")]
    DegenerateMotion(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// 6-DoF rigid transform: translation (x, y, z) in meters and fixed-axis XYZ
/// Euler angles (alpha, beta, gamma) in radians, i.e. roll about x, pitch
/// about y, yaw about z with `R = Rz(gamma) * Ry(beta) * Rx(alpha)`.
///
/// This convention is used everywhere in the crate; degrees appear only at
/// CLI boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    pub fn new(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Pose {
            x,
            y,
            z,
            alpha,
            beta,
            gamma,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            x,
            y,
            z,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.alpha, self.beta, self.gamma)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_rotation_translation(r: &Rotation3<f64>, t: Vector3<f64>) -> Self {
        let (alpha, beta, gamma) = r.euler_angles();
        Pose {
            x: t.x,
            y: t.y,
            z: t.z,
            alpha,
            beta,
            gamma,
        }
    }

    /// Homogeneous 4x4 view of the transform.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation().matrix());
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.translation());
        m
    }

    /// Builds a pose from the upper 3x4 of a homogeneous matrix. The rotation
    /// block is assumed orthonormal; callers that read external data should
    /// re-orthonormalize first.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned());
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_rotation_translation(&r, t)
    }

    /// Group composition: `matrix(self) * matrix(other)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation() * other.rotation();
        let t = self.rotation() * other.translation() + self.translation();
        Self::from_rotation_translation(&r, t)
    }

    /// Two-sided group inverse.
    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation().inverse();
        let t_inv = -(r_inv * self.translation());
        Self::from_rotation_translation(&r_inv, t_inv)
    }

    /// Applies the transform to a point: `R * q + t`.
    pub fn transform_point(&self, q: &Point3) -> Point3 {
        self.rotation() * q + self.translation()
    }
}

/// Pinhole camera intrinsics; no distortion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {fx}, fy = {fy})"
            )));
        }
        if !(0.0 <= cx && cx < image_width as f64) || !(0.0 <= cy && cy < image_height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {image_width}x{image_height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            image_width,
            image_height,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains(&self, pixel: &Point2) -> bool {
        pixel.x >= 0.0
            && pixel.x < self.image_width as f64
            && pixel.y >= 0.0
            && pixel.y < self.image_height as f64
    }
}

/// Projects a camera-frame point to pixels: `(fx*x/z + cx, fy*y/z + cy)`.
pub fn project(k: &CameraIntrinsics, p_cam: &Point3) -> Result<Point2, GeometryError> {
    if p_cam.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p_cam.z));
    }
    Ok(Point2::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Camera-frame point on the ray through `pixel` at camera depth `depth`.
pub fn backproject(k: &CameraIntrinsics, pixel: &Point2, depth: f64) -> Point3 {
    Point3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    )
}

/// Unit direction of the viewing ray through `pixel`.
pub fn pixel_ray(k: &CameraIntrinsics, pixel: &Point2) -> Vector3<f64> {
    backproject(k, pixel, 1.0).normalize()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix of the frame pair related by `motion` (previous frame
/// to current frame): `F = K^-T [t/|t|]x R K^-1`, scaled to unit Frobenius
/// norm. Correspondences satisfy `p_curr^T F p_prev = 0` in homogeneous
/// pixel coordinates.
pub fn fundamental_from_motion(
    k: &CameraIntrinsics,
    motion: &Pose,
) -> Result<Matrix3<f64>, GeometryError> {
    let t = motion.translation();
    let norm = t.norm();
    if norm < 1e-12 {
        return Err(GeometryError::DegenerateMotion(norm));
    }
    let k_inv = k.inverse_matrix();
    let f = k_inv.transpose() * skew(&(t / norm)) * motion.rotation().matrix() * k_inv;
    Ok(f / f.norm())
}

/// Derivatives of the rotation matrix with respect to (alpha, beta, gamma).
pub(crate) fn rotation_partials(pose: &Pose) -> [Matrix3<f64>; 3] {
    let (sa, ca) = pose.alpha.sin_cos();
    let (sb, cb) = pose.beta.sin_cos();
    let (sg, cg) = pose.gamma.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
    let dry = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
    let drz = Matrix3::new(-sg, -cg, 0.0, cg, -sg, 0.0, 0.0, 0.0, 0.0);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn compose_identity_is_identity() {
        let id = Pose::identity();
        let c = id.compose(&id);
        assert!(max_abs_diff(&c.matrix(), &Matrix4::identity()) < 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(1.0, -2.0, 3.0, 0.3, -0.7, 1.1);
        let c = p.compose(&p.inverse());
        assert!(max_abs_diff(&c.matrix(), &Matrix4::identity()) < 1e-9);
    }

    #[test]
    fn compose_translations_adds() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        let c = a.compose(&b);
        // Matrix-product oracle.
        let expected = a.matrix() * b.matrix();
        assert!(max_abs_diff(&c.matrix(), &expected) < 1e-12);
        assert_relative_eq!(c.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.y, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_block_is_special_orthogonal() {
        let p = Pose::new(0.5, 0.5, 0.5, 0.4, 1.2, -2.3);
        let r = p.rotation().matrix().clone_owned();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn project_on_optical_axis() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 640, 480).unwrap();
        let p = project(&k, &Point3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(p, Point2::new(0.0, 0.0));
    }

    #[test]
    fn project_hand_value() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 640, 480).unwrap();
        let p = project(&k, &Point3::new(1.0, 1.0, 10.0)).unwrap();
        assert_relative_eq!(p.x, 60.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 60.0, epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_errors() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 640, 480).unwrap();
        assert_eq!(
            project(&k, &Point3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth(-1.0))
        );
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 5.0, 10, 10).is_ok());
    }

    #[test]
    fn transform_point_cases() {
        let id = Pose::identity();
        assert_eq!(
            id.transform_point(&Point3::new(1.0, 2.0, 3.0)),
            Point3::new(1.0, 2.0, 3.0)
        );

        let t = Pose::from_translation(0.0, 0.0, 5.0);
        assert_eq!(
            t.transform_point(&Point3::zeros()),
            Point3::new(0.0, 0.0, 5.0)
        );

        // quarter turn about z sends x to y
        let r = Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let q = r.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((q - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fundamental_pure_translation_is_skew() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        let motion = Pose::from_translation(1.0, 0.0, 0.0);
        let f = fundamental_from_motion(&k, &motion).unwrap();
        // Analytic oracle: with K = I and R = I, F is the unit-norm skew of t.
        let expected = skew(&Vector3::new(1.0, 0.0, 0.0));
        let expected = expected / expected.norm();
        assert!((f - expected).abs().max() < 1e-12 || (f + expected).abs().max() < 1e-12);
        assert!((f + f.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn fundamental_zero_translation_errors() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 640, 480).unwrap();
        let motion = Pose::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0);
        assert!(matches!(
            fundamental_from_motion(&k, &motion),
            Err(GeometryError::DegenerateMotion(_))
        ));
    }

    #[test]
    fn fundamental_has_rank_two() {
        let k = CameraIntrinsics::new(500.0, 510.0, 320.0, 240.0, 640, 480).unwrap();
        let motion = Pose::new(0.4, -0.1, 1.0, 0.02, -0.05, 0.03);
        let f = fundamental_from_motion(&k, &motion).unwrap();
        let sv = f.svd(false, false).singular_values;
        assert!(sv[2] / sv[0] < 1e-8);
    }

    #[test]
    fn epipolar_identity_on_synthetic_correspondences() {
        let k = CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let motion = Pose::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.2..1.5),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            let f = fundamental_from_motion(&k, &motion).unwrap();
            for _ in 0..100 {
                let p_prev_cam = Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(4.0..40.0),
                );
                let p_curr_cam = motion.transform_point(&p_prev_cam);
                if p_curr_cam.z <= 0.1 {
                    continue;
                }
                let u_prev = project(&k, &p_prev_cam).unwrap();
                let u_curr = project(&k, &p_curr_cam).unwrap();
                let hp = Vector3::new(u_prev.x, u_prev.y, 1.0);
                let hc = Vector3::new(u_curr.x, u_curr.y, 1.0);
                let residual = (hc.transpose() * f * hp)[(0, 0)];
                assert!(residual.abs() < 1e-8, "epipolar residual {residual}");
            }
        }
    }

    #[test]
    fn backprojection_inverts_projection() {
        let k = CameraIntrinsics::new(700.0, 650.0, 300.0, 200.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let pixel = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(0.1..80.0);
            let round = project(&k, &backproject(&k, &pixel, depth)).unwrap();
            assert!((round - pixel).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            ax in -3.0..3.0f64, ay in -3.0..3.0f64, az in -3.0..3.0f64,
            aa in -1.2..1.2f64, ab in -1.2..1.2f64, ag in -1.2..1.2f64,
            bx in -3.0..3.0f64, ba in -1.2..1.2f64, bb in -1.2..1.2f64,
            cg in -1.2..1.2f64, cz in -3.0..3.0f64,
        ) {
            let a = Pose::new(ax, ay, az, aa, ab, ag);
            let b = Pose::new(bx, 0.5, -0.25, ba, bb, 0.4);
            let c = Pose::new(0.1, -0.2, cz, 0.15, -0.3, cg);
            let left = a.compose(&b).compose(&c).matrix();
            let right = a.compose(&b.compose(&c)).matrix();
            prop_assert!(max_abs_diff(&left, &right) < 1e-10);
        }

        #[test]
        fn inverse_is_two_sided(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64,
            alpha in -1.2..1.2f64, beta in -1.2..1.2f64, gamma in -1.2..1.2f64,
        ) {
            let p = Pose::new(x, y, z, alpha, beta, gamma);
            let left = p.inverse().compose(&p).matrix();
            let right = p.compose(&p.inverse()).matrix();
            prop_assert!(max_abs_diff(&left, &Matrix4::identity()) < 1e-9);
            prop_assert!(max_abs_diff(&right, &Matrix4::identity()) < 1e-9);
        }
    }
}

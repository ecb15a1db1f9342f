//! Frame-to-frame 6-DoF motion estimation.
//!
//! The objective mixes reprojection residuals for correspondences with an
//! accepted lidar depth and epipolar residuals for everything else, each
//! wrapped in a Cauchy loss. Minimization is damped iterative least squares
//! with robust reweighting; accepted steps never increase the cost.

use crate::geometry::{
    fundamental_from_motion, project, rotation_partials, CameraIntrinsics, GeometryError, Point2,
    Point3, Pose,
};
use nalgebra::{Matrix2x3, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OdometryError {
    #[error(
        "need 3 correspondences with depth or 5 without, got {with_depth} with / {total} total"
    )]
    InsufficientCorrespondences { with_depth: usize, total: usize },
    #[error("solver produced a non-finite cost")]
    SolverDiverged,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Feature track between the previous and current frame. `point3d` is the
/// feature's 3D position in previous-frame camera coordinates, present when
/// the depth pipeline accepted an estimate for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub curr_pixel: Point2,
    pub prev_pixel: Point2,
    pub point3d: Option<Point3>,
}

/// Cauchy robust kernel `rho(x) = a^2 ln(1 + x / a^2)` applied to squared
/// residual norms; `a` is the outlier threshold scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyLoss {
    a: f64,
}

impl CauchyLoss {
    pub fn new(a: f64) -> Self {
        assert!(a > 0.0, "Cauchy scale must be positive");
        CauchyLoss { a }
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn rho(&self, x: f64) -> f64 {
        let a2 = self.a * self.a;
        a2 * (1.0 + x / a2).ln()
    }

    /// First derivative, the reweighting factor of iterative least squares.
    pub fn weight(&self, x: f64) -> f64 {
        let a2 = self.a * self.a;
        1.0 / (1.0 + x / a2)
    }
}

/// Cauchy scale used for squared pixel reprojection errors.
pub const DEFAULT_REPROJECTION_SCALE: f64 = 1.0;
/// Cauchy scale used for squared normalized epipolar residuals.
pub const DEFAULT_EPIPOLAR_SCALE: f64 = 1e-4;

/// Convergence and damping controls shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            cost_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            initial_lambda: 1e-4,
        }
    }
}

/// Solver output: the estimated motion and bookkeeping about the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEstimate {
    pub motion: Pose,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Reprojection residual `p_curr - project(motion * p_prev)` in pixels.
pub fn residual_3d2d(
    c: &Correspondence,
    motion: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vector2<f64>, OdometryError> {
    let p = c.point3d.expect("correspondence carries no 3D point");
    let q = motion.transform_point(&p);
    let projected = project(k, &q)?;
    Ok(c.curr_pixel - projected)
}

/// Normalized epipolar residual `p_curr^T F p_prev`, with F built from the
/// unit-translation motion and scaled to unit Frobenius norm.
pub fn residual_2d2d(
    c: &Correspondence,
    motion: &Pose,
    k: &CameraIntrinsics,
) -> Result<f64, OdometryError> {
    let f = fundamental_from_motion(k, motion)?;
    let prev = Vector3::new(c.prev_pixel.x, c.prev_pixel.y, 1.0);
    let curr = Vector3::new(c.curr_pixel.x, c.curr_pixel.y, 1.0);
    Ok((curr.transpose() * f * prev)[(0, 0)])
}

/// 2x3 derivative of the pinhole projection at camera point `q`.
pub(crate) fn projection_jacobian(k: &CameraIntrinsics, q: &Point3) -> Matrix2x3<f64> {
    let inv_z = 1.0 / q.z;
    Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * q.x * inv_z * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * q.y * inv_z * inv_z,
    )
}

/// Derivative of the reprojection residual with respect to the six pose
/// parameters (x, y, z, alpha, beta, gamma).
pub fn residual_3d2d_jacobian(
    point: &Point3,
    motion: &Pose,
    k: &CameraIntrinsics,
) -> Option<nalgebra::Matrix2x6<f64>> {
    let q = motion.transform_point(point);
    if q.z <= 0.0 {
        return None;
    }
    let dpi = projection_jacobian(k, &q);
    let dr = rotation_partials(motion);
    let mut jac = nalgebra::Matrix2x6::zeros();
    // translation columns: d q / d t = I
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dpi));
    for (col, dr_k) in dr.iter().enumerate() {
        let dq = dr_k * point;
        jac.fixed_view_mut::<2, 1>(0, 3 + col)
            .copy_from(&(-(dpi * dq)));
    }
    Some(jac)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Epipolar residual and its gradient with respect to the pose parameters.
/// Returns `None` for degenerate (near-zero) translations.
pub fn residual_2d2d_with_jacobian(
    c: &Correspondence,
    motion: &Pose,
    k: &CameraIntrinsics,
) -> Option<(f64, Vector6<f64>)> {
    let t = motion.translation();
    let norm = t.norm();
    if norm < 1e-9 {
        return None;
    }
    let t_hat = t / norm;
    let r = motion.rotation().matrix().clone_owned();
    let k_inv = k.inverse_matrix();
    let k_inv_t = k_inv.transpose();

    let f0 = k_inv_t * skew(&t_hat) * r * k_inv;
    let m = f0.norm();
    let prev = Vector3::new(c.prev_pixel.x, c.prev_pixel.y, 1.0);
    let curr = Vector3::new(c.curr_pixel.x, c.curr_pixel.y, 1.0);
    let n = (curr.transpose() * f0 * prev)[(0, 0)];
    let value = n / m;

    let dr = rotation_partials(motion);
    let mut grad = Vector6::zeros();
    for idx in 0..6 {
        let df0 = if idx < 3 {
            // d t_hat / d t_j = (e_j - t_hat t_hat_j) / |t|
            let mut e = Vector3::zeros();
            e[idx] = 1.0;
            let dt_hat = (e - t_hat * t_hat[idx]) / norm;
            k_inv_t * skew(&dt_hat) * r * k_inv
        } else {
            k_inv_t * skew(&t_hat) * dr[idx - 3] * k_inv
        };
        let dn = (curr.transpose() * df0 * prev)[(0, 0)];
        let dm = f0.dot(&df0) / m;
        grad[idx] = (dn * m - n * dm) / (m * m);
    }
    Some((value, grad))
}

struct Objective<'a> {
    correspondences: &'a [Correspondence],
    k: &'a CameraIntrinsics,
    loss_3d2d: CauchyLoss,
    loss_2d2d: CauchyLoss,
}

impl Objective<'_> {
    /// Total robust cost, or `None` if any transformed point with a depth
    /// residual falls behind the camera.
    fn cost(&self, motion: &Pose) -> Option<f64> {
        let mut total = 0.0;
        let use_epipolar = motion.translation().norm() >= 1e-9;
        let f = if use_epipolar {
            fundamental_from_motion(self.k, motion).ok()
        } else {
            None
        };
        for c in self.correspondences {
            if let Some(p) = c.point3d {
                let q = motion.transform_point(&p);
                if q.z <= 1e-9 {
                    return None;
                }
                let r = c.curr_pixel - project(self.k, &q).ok()?;
                total += self.loss_3d2d.rho(r.norm_squared());
            }
            if let Some(f) = &f {
                let prev = Vector3::new(c.prev_pixel.x, c.prev_pixel.y, 1.0);
                let curr = Vector3::new(c.curr_pixel.x, c.curr_pixel.y, 1.0);
                let r = (curr.transpose() * f * prev)[(0, 0)];
                total += self.loss_2d2d.rho(r * r);
            }
        }
        total.is_finite().then_some(total)
    }

    /// Gauss-Newton system of the robustified objective: for each residual
    /// block, `H += w J^T J` and `g += w J^T r` with `w = rho'(|r|^2)`.
    fn normal_equations(&self, motion: &Pose) -> (Matrix6<f64>, Vector6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in self.correspondences {
            if let Some(p) = c.point3d {
                if let Some(jac) = residual_3d2d_jacobian(&p, motion, self.k) {
                    if let Ok(r) = residual_3d2d(c, motion, self.k) {
                        let w = self.loss_3d2d.weight(r.norm_squared());
                        h += w * jac.transpose() * jac;
                        g += w * jac.transpose() * r;
                    }
                }
            }
            if let Some((r, grad)) = residual_2d2d_with_jacobian(c, motion, self.k) {
                let w = self.loss_2d2d.weight(r * r);
                h += w * grad * grad.transpose();
                g += w * grad * r;
            }
        }
        (h, g)
    }
}

/// Estimates the previous-to-current frame motion from mixed 3D-2D and
/// 2D-2D correspondences by damped robust least squares.
pub fn estimate_motion(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    losses: (CauchyLoss, CauchyLoss),
    cfg: &SolverConfig,
) -> Result<MotionEstimate, OdometryError> {
    let with_depth = correspondences
        .iter()
        .filter(|c| c.point3d.is_some())
        .count();
    if with_depth < 3 && correspondences.len() < 5 {
        return Err(OdometryError::InsufficientCorrespondences {
            with_depth,
            total: correspondences.len(),
        });
    }

    let objective = Objective {
        correspondences,
        k,
        loss_3d2d: losses.0,
        loss_2d2d: losses.1,
    };

    let mut motion = *init;
    // An epipolar-only problem has no usable gradient at zero translation;
    // nudge the start off the degenerate point.
    if with_depth == 0 && motion.translation().norm() < 1e-9 {
        motion.z = 1e-3;
    }

    let mut cost = objective
        .cost(&motion)
        .ok_or(OdometryError::SolverDiverged)?;
    let mut lambda = cfg.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let (h, g) = objective.normal_equations(&motion);
        if g.norm() < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        let mut stepped = false;
        for _ in 0..16 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * (1.0 + h[(d, d)]);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-g));
            let candidate = Pose::new(
                motion.x + delta[0],
                motion.y + delta[1],
                motion.z + delta[2],
                motion.alpha + delta[3],
                motion.beta + delta[4],
                motion.gamma + delta[5],
            );
            match objective.cost(&candidate) {
                Some(new_cost) if new_cost <= cost => {
                    let rel_decrease = (cost - new_cost) / cost.max(1e-300);
                    motion = candidate;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    stepped = true;
                    if rel_decrease < cfg.cost_tolerance {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if converged || !stepped {
            if !stepped {
                // Damping exhausted: the current point is a numerical minimum.
                converged = g.norm() < 1e-3;
            }
            break;
        }
    }

    if !cost.is_finite() {
        return Err(OdometryError::SolverDiverged);
    }
    Ok(MotionEstimate {
        motion,
        final_cost: cost,
        iterations,
        converged,
    })
}

//! Trajectory I/O and error metrics.
//!
//! Trajectories are sequences of camera-to-world poses, read and written in
//! the KITTI odometry pose format (12 row-major values of the upper 3x4
//! homogeneous matrix per line). The drift metric averages relative-pose
//! translation error over fixed-arc-length subsequences; APE is the RMSE of
//! per-frame translational deviation.

use crate::geometry::Pose;
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("trajectory lengths differ: {est} vs {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("trajectory is empty")]
    Empty,
}

/// Timestamped sequence of camera-to-world poses, index-aligned with frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Trajectory {
            poses,
            timestamps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Camera position of frame `i` in the world frame.
    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.poses[i].translation()
    }
}

/// Parse result: the trajectory plus the 1-based lines whose rotation block
/// drifted beyond 1e-6 from orthonormal and was re-orthonormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub trajectory: Trajectory,
    pub reorthonormalized_lines: Vec<usize>,
}

/// Reads KITTI-format poses: one pose per nonempty line, 12 whitespace
/// separated reals (row-major upper 3x4).
pub fn read_kitti_poses(text: &str) -> Result<TrajectoryFile, EvaluationError> {
    let mut poses = Vec::new();
    let mut reorthonormalized = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(EvaluationError::Parse {
                line,
                message: format!("expected 12 values, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 12];
        for (i, field) in fields.iter().enumerate() {
            values[i] = field.parse::<f64>().map_err(|e| EvaluationError::Parse {
                line,
                message: e.to_string(),
            })?;
            if !values[i].is_finite() {
                return Err(EvaluationError::NonFinite { line });
            }
        }
        let r = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let t = Vector3::new(values[3], values[7], values[11]);
        let drift = (r.transpose() * r - Matrix3::identity()).abs().max();
        let rotation = if drift > 1e-6 {
            reorthonormalized.push(line);
            // project onto SO(3) via SVD
            let svd = r.svd(true, true);
            let u = svd.u.unwrap();
            let v_t = svd.v_t.unwrap();
            let mut s = Matrix3::identity();
            if (u * v_t).determinant() < 0.0 {
                s[(2, 2)] = -1.0;
            }
            Rotation3::from_matrix_unchecked(u * s * v_t)
        } else {
            Rotation3::from_matrix_unchecked(r)
        };
        poses.push(Pose::from_rotation_translation(&rotation, t));
    }
    Ok(TrajectoryFile {
        trajectory: Trajectory::new(poses),
        reorthonormalized_lines: reorthonormalized,
    })
}

/// Writes poses in the KITTI format with round-trip-exact float formatting.
pub fn write_kitti_poses(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for pose in &trajectory.poses {
        let m: Matrix4<f64> = pose.matrix();
        let mut fields = Vec::with_capacity(12);
        for row in 0..3 {
            for col in 0..4 {
                fields.push(format!("{}", m[(row, col)]));
            }
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

/// Error of one subsequence length: mean translation drift (percent) and
/// mean rotation drift (degrees per meter) over all evaluated starts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthError {
    pub length_m: f64,
    pub translation_percent: f64,
    pub rotation_deg_per_m: f64,
    pub segment_count: usize,
}

/// Drift and absolute-error summary of an estimated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    /// Mean of the per-length translation errors, in percent.
    pub translation_error_percent: f64,
    /// RMSE of per-frame translational deviation, meters.
    pub ape_rmse: f64,
    /// Mean rotation drift across lengths, degrees per meter.
    pub rotation_error_deg_per_m: f64,
    pub per_length: Vec<LengthError>,
    pub pose_count: usize,
    /// True when no subsequence length was reachable along the trajectory.
    pub insufficient_length: bool,
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "poses: {}", self.pose_count)?;
        writeln!(
            f,
            "translation error: {:.4} %",
            self.translation_error_percent
        )?;
        writeln!(
            f,
            "rotation error: {:.6} deg/m",
            self.rotation_error_deg_per_m
        )?;
        writeln!(f, "APE RMSE: {:.6} m", self.ape_rmse)?;
        if self.insufficient_length {
            writeln!(
                f,
                "warning: trajectory shorter than every evaluation length"
            )?;
        }
        writeln!(
            f,
            "{:>10} {:>12} {:>14} {:>10}",
            "length[m]", "trans[%]", "rot[deg/m]", "count"
        )?;
        for e in &self.per_length {
            writeln!(
                f,
                "{:>10.1} {:>12.4} {:>14.6} {:>10}",
                e.length_m, e.translation_percent, e.rotation_deg_per_m, e.segment_count
            )?;
        }
        Ok(())
    }
}

/// Default subsequence lengths of the drift metric, meters.
pub fn default_lengths() -> Vec<f64> {
    (1..=8).map(|i| 100.0 * i as f64).collect()
}

/// Default start-frame step of the drift metric.
pub const DEFAULT_EVAL_STEP: usize = 10;

fn cumulative_distances(t: &Trajectory) -> Vec<f64> {
    let mut dist = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    dist.push(0.0);
    for i in 1..t.len() {
        acc += (t.position(i) - t.position(i - 1)).norm();
        dist.push(acc);
    }
    dist
}

fn first_frame_past(dist: &[f64], start: usize, length: f64) -> Option<usize> {
    // Small slack keeps endpoint choice stable when cumulative distances sit
    // exactly on a length boundary.
    let target = dist[start] + length - 1e-9;
    (start + 1..dist.len()).find(|&i| dist[i] >= target)
}

fn rotation_angle(p: &Pose) -> f64 {
    let r = p.rotation();
    let trace = r.matrix().trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Average relative translation drift over subsequences of the given arc
/// lengths, evaluated from every `step`-th frame, as a percentage of the
/// subsequence length. Rotation drift is carried alongside in deg/m.
pub fn kitti_translation_error(
    est: &Trajectory,
    gt: &Trajectory,
    lengths: &[f64],
    step: usize,
) -> Result<ErrorReport, EvaluationError> {
    if est.len() != gt.len() {
        return Err(EvaluationError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(EvaluationError::Empty);
    }
    let dist = cumulative_distances(gt);
    let step = step.max(1);

    let mut per_length = Vec::new();
    for &length in lengths {
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        let mut count = 0usize;
        let mut start = 0;
        while start < gt.len() {
            if let Some(end) = first_frame_past(&dist, start, length) {
                let delta_gt = gt.poses[start].inverse().compose(&gt.poses[end]);
                let delta_est = est.poses[start].inverse().compose(&est.poses[end]);
                let pose_error = delta_est.inverse().compose(&delta_gt);
                t_sum += pose_error.translation().norm() / length;
                r_sum += rotation_angle(&pose_error) / length;
                count += 1;
            }
            start += step;
        }
        if count > 0 {
            per_length.push(LengthError {
                length_m: length,
                translation_percent: 100.0 * t_sum / count as f64,
                rotation_deg_per_m: (r_sum / count as f64).to_degrees(),
                segment_count: count,
            });
        }
    }

    let insufficient = per_length.is_empty();
    let translation_error_percent = if insufficient {
        0.0
    } else {
        per_length
            .iter()
            .map(|e| e.translation_percent)
            .sum::<f64>()
            / per_length.len() as f64
    };
    let rotation_error_deg_per_m = if insufficient {
        0.0
    } else {
        per_length.iter().map(|e| e.rotation_deg_per_m).sum::<f64>() / per_length.len() as f64
    };
    Ok(ErrorReport {
        translation_error_percent,
        ape_rmse: ape_rmse(est, gt)?,
        rotation_error_deg_per_m,
        per_length,
        pose_count: est.len(),
        insufficient_length: insufficient,
    })
}

/// Root-mean-square of the translational part of `gt_i^-1 * est_i`.
pub fn ape_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvaluationError> {
    if est.len() != gt.len() {
        return Err(EvaluationError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let sum: f64 = est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| g.inverse().compose(e).translation().norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// APE after a closed-form rigid alignment of the estimated positions onto
/// the ground truth, for trajectories that do not share a world frame.
pub fn ape_rmse_aligned(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvaluationError> {
    if est.len() != gt.len() {
        return Err(EvaluationError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let n = est.len() as f64;
    let mean_est: Vector3<f64> = (0..est.len())
        .map(|i| est.position(i))
        .sum::<Vector3<f64>>()
        / n;
    let mean_gt: Vector3<f64> = (0..gt.len()).map(|i| gt.position(i)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for i in 0..est.len() {
        cov += (gt.position(i) - mean_gt) * (est.position(i) - mean_est).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let t = mean_gt - r * mean_est;
    let sum: f64 = (0..est.len())
        .map(|i| (r * est.position(i) + t - gt.position(i)).norm_squared())
        .sum();
    Ok((sum / n).sqrt())
}

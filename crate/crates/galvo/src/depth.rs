//! Lidar depth for tracked image features.
//!
//! For every feature the same steps run: select projected lidar points in a
//! rectangle around the feature, keep the nearest depth-histogram bin, fit a
//! local plane through the maximum-area point triple, intersect the viewing
//! ray with that plane, and gate the result on range and incidence angle.
//! Features flagged as ground bypass the histogram and use points near a
//! RANSAC-fitted ground plane instead, accepting only local planes that stay
//! close to it.

use crate::geometry::{pixel_ray, project, CameraIntrinsics, Point2, Point3, Pose};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("input point set is empty")]
    EmptyInput,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("largest point triangle below minimum area")]
    DegenerateTriangle,
    #[error("no consensus set found by RANSAC")]
    NoConsensus,
    #[error("viewing ray is parallel to the plane")]
    ParallelRay,
}

/// Unordered lidar sweep in the lidar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub points: Vec<Point3>,
    pub timestamp: f64,
}

impl LidarScan {
    pub fn new(points: Vec<Point3>, timestamp: f64) -> Self {
        LidarScan { points, timestamp }
    }
}

/// Lidar point projected into the image: pixel position, camera-frame depth,
/// and the index of the originating scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedLidarPoint {
    pub pixel: Point2,
    pub depth: f64,
    pub source_index: usize,
}

/// Plane `{q : normal . q = offset}` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn from_points(a: &Point3, b: &Point3, c: &Point3) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-15 {
            return None;
        }
        let normal = n / norm;
        Some(Plane {
            normal,
            offset: normal.dot(a),
        })
    }

    pub fn distance(&self, q: &Point3) -> f64 {
        (self.normal.dot(q) - self.offset).abs()
    }
}

/// Why a depth estimate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    TooFar,
    EmptyRoi,
    DegenerateTriangle,
    GrazingAngle,
    NoForeground,
}

/// Outcome of the per-feature depth pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthEstimate {
    Accepted { depth: f64 },
    Rejected { reason: RejectReason },
}

impl DepthEstimate {
    pub fn is_accepted(&self) -> bool {
        matches!(self, DepthEstimate::Accepted { .. })
    }

    pub fn depth(&self) -> Option<f64> {
        match self {
            DepthEstimate::Accepted { depth } => Some(*depth),
            DepthEstimate::Rejected { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            DepthEstimate::Accepted { .. } => None,
            DepthEstimate::Rejected { reason } => Some(*reason),
        }
    }
}

/// Feature pixel with its semantic ground flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthQuery {
    pub pixel: Point2,
    pub ground: bool,
}

/// Tunables of the depth pipeline. Values the source material does not fix
/// are configuration with the defaults below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthParams {
    /// Closed ROI rectangle half extents in pixels.
    pub roi_half_width: f64,
    pub roi_half_height: f64,
    /// Depth histogram bin width in meters.
    pub histogram_bin: f64,
    /// Minimum area of the plane-fit triangle in square meters.
    pub min_area: f64,
    /// Estimates beyond this camera depth are rejected.
    pub max_depth: f64,
    /// Maximum angle between viewing ray and plane normal, radians.
    pub max_incidence: f64,
    /// Ground path: local plane accepted when |n_local . n_ground| exceeds
    /// this cosine and the offsets differ by less than `ground_offset_tol`.
    pub ground_normal_cos: f64,
    pub ground_offset_tol: f64,
    /// Ground-plane RANSAC controls.
    pub ransac_iterations: usize,
    pub ransac_inlier_tol: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        DepthParams {
            roi_half_width: 5.0,
            roi_half_height: 5.0,
            histogram_bin: 0.3,
            min_area: 0.01,
            max_depth: 30.0,
            max_incidence: 80f64.to_radians(),
            ground_normal_cos: 15f64.to_radians().cos(),
            ground_offset_tol: 0.3,
            ransac_iterations: 200,
            ransac_inlier_tol: 0.15,
        }
    }
}

/// Transforms a scan into the camera frame and keeps the points with
/// positive depth that project inside the image. Input order is preserved.
pub fn project_scan(
    scan: &LidarScan,
    lidar_to_camera: &Pose,
    k: &CameraIntrinsics,
) -> Vec<ProjectedLidarPoint> {
    let rotation = lidar_to_camera.rotation();
    let translation = lidar_to_camera.translation();
    scan.points
        .iter()
        .enumerate()
        .filter_map(|(source_index, p)| {
            let cam = rotation * p + translation;
            if cam.z <= 0.0 {
                return None;
            }
            let pixel = project(k, &cam).ok()?;
            k.contains(&pixel).then_some(ProjectedLidarPoint {
                pixel,
                depth: cam.z,
                source_index,
            })
        })
        .collect()
}

/// Points whose pixel lies in the closed rectangle around `f`.
pub fn select_roi(
    f: &Point2,
    projected: &[ProjectedLidarPoint],
    half_width: f64,
    half_height: f64,
) -> Vec<ProjectedLidarPoint> {
    projected
        .iter()
        .filter(|p| (p.pixel.x - f.x).abs() <= half_width && (p.pixel.y - f.y).abs() <= half_height)
        .copied()
        .collect()
}

/// Keeps the nearest nonempty depth-histogram bin, bins of width `h`
/// anchored at the minimum depth. A nearest bin with fewer than three points
/// is merged with the adjacent one so the plane fit has a chance downstream.
pub fn segment_foreground(
    points: &[ProjectedLidarPoint],
    h: f64,
) -> Result<Vec<ProjectedLidarPoint>, DepthError> {
    if points.is_empty() {
        return Err(DepthError::EmptyInput);
    }
    let min_depth = points.iter().map(|p| p.depth).fold(f64::INFINITY, f64::min);
    let bin_of = |depth: f64| ((depth - min_depth) / h).floor() as i64;
    let nearest: Vec<ProjectedLidarPoint> = points
        .iter()
        .filter(|p| bin_of(p.depth) == 0)
        .copied()
        .collect();
    if nearest.len() >= 3 {
        return Ok(nearest);
    }
    let mut merged = nearest;
    merged.extend(points.iter().filter(|p| bin_of(p.depth) == 1).copied());
    Ok(merged)
}

fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Plane through the maximum-area triple of `points` (camera frame). With
/// more than 25 points the search runs over the 25 nearest the viewing ray
/// `ray` to bound the cubic triple scan.
pub fn fit_local_plane(
    points: &[Point3],
    ray: &Vector3<f64>,
    min_area: f64,
) -> Result<Plane, DepthError> {
    if points.len() < 3 {
        return Err(DepthError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let mut candidates: Vec<Point3> = points.to_vec();
    if candidates.len() > 25 {
        let dir = ray.normalize();
        candidates.sort_by(|a, b| {
            let da = (a - dir * a.dot(&dir)).norm();
            let db = (b - dir * b.dot(&dir)).norm();
            da.partial_cmp(&db).unwrap()
        });
        candidates.truncate(25);
    }
    let mut best_area = -1.0;
    let mut best = (0, 0, 0);
    for i in 0..candidates.len() {
        for j in (i + 1)..candidates.len() {
            for l in (j + 1)..candidates.len() {
                let area = triangle_area(&candidates[i], &candidates[j], &candidates[l]);
                if area > best_area {
                    best_area = area;
                    best = (i, j, l);
                }
            }
        }
    }
    if best_area < min_area {
        return Err(DepthError::DegenerateTriangle);
    }
    Plane::from_points(
        &candidates[best.0],
        &candidates[best.1],
        &candidates[best.2],
    )
    .ok_or(DepthError::DegenerateTriangle)
}

/// Intersects the viewing ray through `f` with `plane` and applies the
/// range and incidence gates.
pub fn estimate_depth(
    f: &Point2,
    plane: &Plane,
    k: &CameraIntrinsics,
    max_depth: f64,
    max_incidence: f64,
) -> DepthEstimate {
    let dir = pixel_ray(k, f);
    let denom = dir.dot(&plane.normal);
    if denom.abs() < 1e-12 {
        return DepthEstimate::Rejected {
            reason: RejectReason::GrazingAngle,
        };
    }
    let t = plane.offset / denom;
    let depth = t * dir.z;
    if t <= 0.0 || depth <= 0.0 {
        return DepthEstimate::Rejected {
            reason: RejectReason::GrazingAngle,
        };
    }
    if depth > max_depth {
        return DepthEstimate::Rejected {
            reason: RejectReason::TooFar,
        };
    }
    // Angle between the viewing ray and the plane normal, orientation-free.
    let incidence = denom.abs().clamp(-1.0, 1.0).acos();
    if incidence > max_incidence {
        return DepthEstimate::Rejected {
            reason: RejectReason::GrazingAngle,
        };
    }
    DepthEstimate::Accepted { depth }
}

/// Least-squares plane through `points` (centroid plus smallest covariance
/// eigenvector).
fn fit_plane_least_squares(points: &[Point3]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let centroid: Vector3<f64> =
        points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    let norm = normal.norm();
    if norm < 1e-15 {
        return None;
    }
    let normal = normal / norm;
    Some(Plane {
        normal,
        offset: normal.dot(&centroid),
    })
}

/// RANSAC ground-plane extraction with a least-squares refit on the final
/// inlier set. Deterministic for a fixed generator state.
pub fn fit_ground_plane(
    scan: &LidarScan,
    iterations: usize,
    inlier_tol: f64,
    rng: &mut impl Rng,
) -> Result<Plane, DepthError> {
    let n = scan.points.len();
    if n < 3 {
        return Err(DepthError::TooFewPoints { needed: 3, got: n });
    }
    if n == 3 {
        return Plane::from_points(&scan.points[0], &scan.points[1], &scan.points[2])
            .ok_or(DepthError::NoConsensus);
    }
    let mut best_count = 0usize;
    let mut best_plane: Option<Plane> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let l = rng.random_range(0..n);
        if i == j || j == l || i == l {
            continue;
        }
        let Some(plane) = Plane::from_points(&scan.points[i], &scan.points[j], &scan.points[l])
        else {
            continue;
        };
        let count = scan
            .points
            .iter()
            .filter(|p| plane.distance(p) <= inlier_tol)
            .count();
        if count > best_count {
            best_count = count;
            best_plane = Some(plane);
        }
    }
    let plane = best_plane.ok_or(DepthError::NoConsensus)?;
    if best_count < 3 {
        return Err(DepthError::NoConsensus);
    }
    let inliers: Vec<Point3> = scan
        .points
        .iter()
        .filter(|p| plane.distance(p) <= inlier_tol)
        .copied()
        .collect();
    Ok(fit_plane_least_squares(&inliers).unwrap_or(plane))
}

/// Transforms a camera-frame plane from the lidar frame given the
/// lidar-to-camera transform.
fn plane_to_camera(plane: &Plane, lidar_to_camera: &Pose) -> Plane {
    // n . q_l = d with q_l = R^T (q_c - t)  =>  (R n) . q_c = d + n . (R^T t)
    let r = lidar_to_camera.rotation();
    let normal = r * plane.normal;
    let offset = plane.offset + normal.dot(&lidar_to_camera.translation());
    Plane { normal, offset }
}

/// Runs the full per-feature pipeline over `features`. Ground-flagged
/// features use the ground-plane path; everything else goes through the
/// histogram segmentation. One estimate per feature, rejections encoded in
/// the estimate.
pub fn estimate_feature_depths(
    features: &[DepthQuery],
    scan: &LidarScan,
    lidar_to_camera: &Pose,
    k: &CameraIntrinsics,
    params: &DepthParams,
    rng: &mut impl Rng,
) -> Vec<DepthEstimate> {
    let projected = project_scan(scan, lidar_to_camera, k);
    let cam_points: Vec<Point3> = projected
        .iter()
        .map(|p| lidar_to_camera.transform_point(&scan.points[p.source_index]))
        .collect();
    let need_ground = features.iter().any(|f| f.ground);
    let ground_plane = if need_ground {
        fit_ground_plane(
            scan,
            params.ransac_iterations,
            params.ransac_inlier_tol,
            rng,
        )
        .ok()
        .map(|p| plane_to_camera(&p, lidar_to_camera))
    } else {
        None
    };

    features
        .iter()
        .map(|feature| {
            let roi_indexed: Vec<usize> = projected
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    (p.pixel.x - feature.pixel.x).abs() <= params.roi_half_width
                        && (p.pixel.y - feature.pixel.y).abs() <= params.roi_half_height
                })
                .map(|(i, _)| i)
                .collect();
            if roi_indexed.is_empty() {
                return DepthEstimate::Rejected {
                    reason: RejectReason::EmptyRoi,
                };
            }
            let ray = pixel_ray(k, &feature.pixel);
            if feature.ground {
                estimate_ground_feature(
                    feature,
                    &roi_indexed,
                    &cam_points,
                    &ground_plane,
                    k,
                    params,
                    &ray,
                )
            } else {
                estimate_generic_feature(
                    feature,
                    &roi_indexed,
                    &cam_points,
                    &projected,
                    k,
                    params,
                    &ray,
                )
            }
        })
        .collect()
}

fn estimate_generic_feature(
    feature: &DepthQuery,
    roi: &[usize],
    cam_points: &[Point3],
    projected: &[ProjectedLidarPoint],
    k: &CameraIntrinsics,
    params: &DepthParams,
    ray: &Vector3<f64>,
) -> DepthEstimate {
    let roi_points: Vec<ProjectedLidarPoint> = roi.iter().map(|&i| projected[i]).collect();
    let foreground = match segment_foreground(&roi_points, params.histogram_bin) {
        Ok(points) => points,
        Err(_) => {
            return DepthEstimate::Rejected {
                reason: RejectReason::NoForeground,
            }
        }
    };
    // Map foreground members back to their camera-frame points.
    let fg_cam: Vec<Point3> = foreground
        .iter()
        .map(|p| {
            let idx = roi
                .iter()
                .position(|&i| projected[i].source_index == p.source_index);
            cam_points[roi[idx.expect("foreground point came from the ROI")]]
        })
        .collect();
    match fit_local_plane(&fg_cam, ray, params.min_area) {
        Ok(plane) => estimate_depth(
            &feature.pixel,
            &plane,
            k,
            params.max_depth,
            params.max_incidence,
        ),
        Err(_) => DepthEstimate::Rejected {
            reason: RejectReason::DegenerateTriangle,
        },
    }
}

fn estimate_ground_feature(
    feature: &DepthQuery,
    roi: &[usize],
    cam_points: &[Point3],
    ground_plane: &Option<Plane>,
    k: &CameraIntrinsics,
    params: &DepthParams,
    ray: &Vector3<f64>,
) -> DepthEstimate {
    let Some(ground) = ground_plane else {
        return DepthEstimate::Rejected {
            reason: RejectReason::NoForeground,
        };
    };
    let ground_points: Vec<Point3> = roi
        .iter()
        .map(|&i| cam_points[i])
        .filter(|p| ground.distance(p) <= params.ransac_inlier_tol)
        .collect();
    if ground_points.len() >= 3 {
        match fit_local_plane(&ground_points, ray, params.min_area) {
            Ok(local) => {
                // Only local planes close to the ground plane are allowed.
                let mut offset = local.offset;
                let mut cos = local.normal.dot(&ground.normal);
                if cos < 0.0 {
                    cos = -cos;
                    offset = -offset;
                }
                if cos < params.ground_normal_cos
                    || (offset - ground.offset).abs() > params.ground_offset_tol
                {
                    return DepthEstimate::Rejected {
                        reason: RejectReason::NoForeground,
                    };
                }
                estimate_depth(
                    &feature.pixel,
                    &local,
                    k,
                    params.max_depth,
                    params.max_incidence,
                )
            }
            Err(_) => estimate_depth(
                &feature.pixel,
                ground,
                k,
                params.max_depth,
                params.max_incidence,
            ),
        }
    } else {
        // Sparse vertical lidar resolution: fall back to the global plane.
        estimate_depth(
            &feature.pixel,
            ground,
            k,
            params.max_depth,
            params.max_incidence,
        )
    }
}

/// Reads a plain-text point cloud, one whitespace-separated `x y z` triple
/// per line; blank lines and `#` comments are skipped.
pub fn read_xyz(text: &str, timestamp: f64) -> Result<LidarScan, String> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(format!(
                "line {}: expected 3 values, got {}",
                lineno + 1,
                fields.len()
            ));
        }
        let mut coords = [0.0f64; 3];
        for (i, raw) in fields.iter().enumerate() {
            coords[i] = raw
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            if !coords[i].is_finite() {
                return Err(format!("line {}: non-finite value", lineno + 1));
            }
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(LidarScan::new(points, timestamp))
}

/// Writes a scan in the `read_xyz` format.
pub fn write_xyz(scan: &LidarScan) -> String {
    let mut out = String::new();
    for p in &scan.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

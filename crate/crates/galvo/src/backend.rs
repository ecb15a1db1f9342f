//! Keyframe bundle adjustment.
//!
//! Frames are filtered to keyframes (standstill rejection, 0.3 s
//! sparsification, window truncation), landmarks are binned by depth into
//! near/middle/far with per-bin caps and semantic weights, and the window is
//! refined by robust iterative least squares over a joint objective:
//! a translation-length regularizer, Cauchy-robustified reprojection terms,
//! and Cauchy-robustified lidar-depth terms. After an initial solve, the
//! worst landmarks beyond the configured residual quantile are rejected and
//! the window is re-solved without them.

use crate::geometry::{project, rotation_partials, CameraIntrinsics, Point2, Point3, Pose};
use crate::odometry::{projection_jacobian, residual_3d2d_jacobian, CauchyLoss, SolverConfig};
use nalgebra::{DMatrix, DVector, Matrix2x3, Vector3};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error(
        "window needs at least 2 keyframes and 1 observed landmark, got {keyframes} / {landmarks}"
    )]
    InsufficientData { keyframes: usize, landmarks: usize },
    #[error("window solver produced a non-finite cost")]
    SolverDiverged,
}

/// Semantic class of a landmark, supplied as data by the scene source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SemanticLabel {
    Ground,
    Vegetation,
    Structure,
    Dynamic,
}

impl SemanticLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SemanticLabel::Ground => "ground",
            SemanticLabel::Vegetation => "vegetation",
            SemanticLabel::Structure => "structure",
            SemanticLabel::Dynamic => "dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ground" => Some(SemanticLabel::Ground),
            "vegetation" => Some(SemanticLabel::Vegetation),
            "structure" => Some(SemanticLabel::Structure),
            "dynamic" => Some(SemanticLabel::Dynamic),
            _ => None,
        }
    }
}

/// Depth category of a selected landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceBin {
    Near,
    Middle,
    Far,
    Unassigned,
}

/// Why a frame was kept in the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeKind {
    Required,
    Sparsified,
}

/// Input frame for keyframe selection. `pose` maps world to camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInfo {
    pub id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub required: bool,
    pub observations: Vec<(u64, Point2)>,
}

/// Selected frame retained for the optimization window.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub kind: KeyframeKind,
    pub observations: Vec<(u64, Point2)>,
}

/// Landmark state entering the window: world position, the lidar depth
/// estimate measured at the oldest keyframe observing it (if any), semantic
/// label, and the bin assigned on selection.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub id: u64,
    pub position: Point3,
    pub depth_estimate: Option<f64>,
    pub label: SemanticLabel,
    pub bin: DistanceBin,
}

/// The five tuned robustness parameters plus the fixed objective weights and
/// bin boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaParams {
    /// Outlier rejection quantile; 1 rejects nothing.
    pub delta: f64,
    /// Per-bin landmark caps.
    pub eps_near: u32,
    pub eps_middle: u32,
    pub eps_far: u32,
    /// Weight multiplier for vegetation-labeled landmarks.
    pub mu: f64,
    /// Objective weights for regularizer, reprojection, and depth terms.
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    /// Bin boundaries in meters of camera depth.
    pub near_max: f64,
    pub middle_max: f64,
}

impl Default for BaParams {
    fn default() -> Self {
        BaParams {
            delta: 0.95,
            eps_near: 400,
            eps_middle: 400,
            eps_far: 400,
            mu: 0.9,
            w0: 10.0,
            w1: 1.0,
            w2: 1.0,
            near_max: 15.0,
            middle_max: 30.0,
        }
    }
}

impl BaParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(format!("delta {} outside [0, 1]", self.delta));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(format!("mu {} outside [0, 1]", self.mu));
        }
        for (name, eps) in [
            ("near", self.eps_near),
            ("middle", self.eps_middle),
            ("far", self.eps_far),
        ] {
            if eps > 999 {
                return Err(format!("eps_{name} {eps} outside [0, 999]"));
            }
        }
        if !(self.w0 > 0.0 && self.w1 > 0.0 && self.w2 > 0.0) {
            return Err("objective weights must be positive".into());
        }
        Ok(())
    }
}

/// Keyframe selection controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Sparsification spacing in seconds.
    pub keyframe_interval: f64,
    /// Frames moving less than this (meters) since the last kept frame are
    /// standstill-rejected.
    pub standstill_threshold: f64,
    /// Number of newest keyframes retained.
    pub window_length: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            keyframe_interval: 0.3,
            standstill_threshold: 0.03,
            window_length: 10,
        }
    }
}

/// Standstill rejection, time sparsification, and window truncation.
/// Required frames always survive. Output stays in time order.
pub fn select_keyframes(frames: &[FrameInfo], cfg: &WindowConfig) -> Vec<Keyframe> {
    let mut selected: Vec<Keyframe> = Vec::new();
    let mut last_kept_pose: Option<Pose> = None;
    let mut last_kept_time = f64::NEG_INFINITY;
    for frame in frames {
        let keep = if frame.required {
            true
        } else {
            let moved = match &last_kept_pose {
                None => true,
                Some(prev) => {
                    let relative = frame.pose.compose(&prev.inverse());
                    relative.translation().norm() >= cfg.standstill_threshold
                }
            };
            let spaced = frame.timestamp - last_kept_time >= cfg.keyframe_interval - 1e-9;
            moved && spaced
        };
        if keep {
            selected.push(Keyframe {
                id: frame.id,
                timestamp: frame.timestamp,
                pose: frame.pose,
                kind: if frame.required {
                    KeyframeKind::Required
                } else {
                    KeyframeKind::Sparsified
                },
                observations: frame.observations.clone(),
            });
            last_kept_pose = Some(frame.pose);
            last_kept_time = frame.timestamp;
        }
    }
    if selected.len() > cfg.window_length {
        let drop = selected.len() - cfg.window_length;
        selected.drain(0..drop);
    }
    selected
}

/// Assigns near/middle/far bins by camera depth under `current_pose` (world
/// to camera) and keeps at most the configured count per bin, evenly spaced
/// by image position with a seeded stride offset. Dynamic landmarks and
/// landmarks behind the camera are never selected. Returns the selected ids
/// in ascending order.
pub fn bin_and_select_landmarks(
    landmarks: &mut [LandmarkRecord],
    current_pose: &Pose,
    params: &BaParams,
    seed: u64,
) -> Vec<u64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    for lm in landmarks.iter_mut() {
        lm.bin = DistanceBin::Unassigned;
    }
    // (bin, image x, image y, id, index)
    let mut candidates: Vec<(DistanceBin, f64, f64, u64, usize)> = Vec::new();
    for (idx, lm) in landmarks.iter().enumerate() {
        if lm.label == SemanticLabel::Dynamic {
            continue;
        }
        let cam = current_pose.transform_point(&lm.position);
        if cam.z <= 0.0 {
            continue;
        }
        let bin = if cam.z <= params.near_max {
            DistanceBin::Near
        } else if cam.z <= params.middle_max {
            DistanceBin::Middle
        } else {
            DistanceBin::Far
        };
        candidates.push((bin, cam.x / cam.z, cam.y / cam.z, lm.id, idx));
    }

    let mut selected = Vec::new();
    for (bin, cap) in [
        (DistanceBin::Near, params.eps_near),
        (DistanceBin::Middle, params.eps_middle),
        (DistanceBin::Far, params.eps_far),
    ] {
        let mut members: Vec<&(DistanceBin, f64, f64, u64, usize)> =
            candidates.iter().filter(|c| c.0 == bin).collect();
        members.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap()
                .then(a.2.partial_cmp(&b.2).unwrap())
                .then(a.3.cmp(&b.3))
        });
        let cap = cap as usize;
        let chosen: Vec<usize> = if members.len() <= cap {
            (0..members.len()).collect()
        } else if cap == 0 {
            Vec::new()
        } else {
            let stride = members.len() as f64 / cap as f64;
            let start = rng.random_range(0.0..stride);
            (0..cap)
                .map(|i| (start + i as f64 * stride).floor() as usize)
                .collect()
        };
        for rank in chosen {
            let (_, _, _, id, idx) = *members[rank];
            landmarks[idx].bin = bin;
            selected.push(id);
        }
    }
    selected.sort_unstable();
    selected
}

/// Semantic weight of a selected landmark: `mu` for vegetation, 1 otherwise.
pub fn landmark_weight(l: &LandmarkRecord, params: &BaParams) -> f64 {
    match l.label {
        SemanticLabel::Vegetation => params.mu,
        _ => 1.0,
    }
}

/// Lidar depth residual at pose `p`: zero without an estimate, otherwise
/// the estimate minus the landmark's camera-frame depth.
pub fn depth_residual(l: &LandmarkRecord, p: &Pose) -> f64 {
    match l.depth_estimate {
        None => 0.0,
        Some(d_hat) => d_hat - p.transform_point(&l.position).z,
    }
}

/// Deviation of the current relative translation length from its value `s`
/// captured before optimization: `|translation(p0^-1 p1)| - s`.
pub fn translation_regularizer(p1: &Pose, p0: &Pose, s: f64) -> f64 {
    relative_translation_length(p1, p0, false) - s
}

fn relative_translation_length(p1: &Pose, p0: &Pose, squared: bool) -> f64 {
    let t = p0.inverse().compose(p1).translation();
    if squared {
        t.norm_squared()
    } else {
        t.norm()
    }
}

/// Nearest-rank quantile rejection: everything above the `delta`-quantile of
/// the residual distribution is rejected. `delta = 1` rejects nothing,
/// `delta = 0` keeps only the minimum-residual landmarks.
pub fn reject_outliers(residuals: &BTreeMap<u64, f64>, delta: f64) -> BTreeSet<u64> {
    if residuals.is_empty() {
        return BTreeSet::new();
    }
    let mut sorted: Vec<f64> = residuals.values().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((delta * n as f64).ceil() as usize).clamp(1, n);
    let threshold = sorted[rank - 1];
    residuals
        .iter()
        .filter(|(_, &r)| r > threshold)
        .map(|(&id, _)| id)
        .collect()
}

/// Robust-loss configuration of the window objective; scales follow the
/// reprojection (pixels) and depth (meters) residual magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLosses {
    pub reprojection: CauchyLoss,
    pub depth: CauchyLoss,
    /// Use the squared relative-translation length in the regularizer.
    pub squared_scale_regularizer: bool,
}

impl Default for WindowLosses {
    fn default() -> Self {
        WindowLosses {
            reprojection: CauchyLoss::new(1.0),
            depth: CauchyLoss::new(0.25),
            squared_scale_regularizer: false,
        }
    }
}

/// Result of a window optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub poses: Vec<Pose>,
    pub landmarks: Vec<(u64, Point3)>,
    pub cost_trace: Vec<f64>,
    pub rejected_landmarks: BTreeSet<u64>,
}

#[derive(Clone)]
struct WindowState {
    poses: Vec<Pose>,
    landmarks: Vec<Point3>,
}

struct WindowProblem<'a> {
    k: &'a CameraIntrinsics,
    /// (keyframe index, landmark index, observed pixel)
    observations: Vec<(usize, usize, Point2)>,
    /// (keyframe index, landmark index, depth estimate)
    depth_terms: Vec<(usize, usize, f64)>,
    semantic_weights: Vec<f64>,
    params: &'a BaParams,
    losses: &'a WindowLosses,
    scale_constant: f64,
    n_poses: usize,
    n_landmarks: usize,
}

impl WindowProblem<'_> {
    fn dof(&self) -> usize {
        (self.n_poses - 1) * 6 + self.n_landmarks * 3
    }

    /// Column of keyframe `kf`'s pose block; the first pose is the gauge and
    /// has no columns.
    fn pose_col(&self, kf: usize) -> Option<usize> {
        (kf > 0).then(|| (kf - 1) * 6)
    }

    fn landmark_col(&self, lm: usize) -> usize {
        (self.n_poses - 1) * 6 + lm * 3
    }

    fn regularizer(&self, state: &WindowState) -> f64 {
        let p1 = &state.poses[self.n_poses - 1];
        let p0 = &state.poses[self.n_poses - 2];
        relative_translation_length(p1, p0, self.losses.squared_scale_regularizer)
            - self.scale_constant
    }

    fn cost(&self, state: &WindowState) -> f64 {
        let nu = self.regularizer(state);
        let mut total = self.params.w0 * nu * nu;
        for &(kf, lm, pixel) in &self.observations {
            let q = state.poses[kf].transform_point(&state.landmarks[lm]);
            if q.z <= 1e-6 {
                return f64::INFINITY;
            }
            let Ok(projected) = project(self.k, &q) else {
                return f64::INFINITY;
            };
            let r = pixel - projected;
            total += self.params.w1
                * self.semantic_weights[lm]
                * self.losses.reprojection.rho(r.norm_squared());
        }
        for &(kf, lm, d_hat) in &self.depth_terms {
            let xi = d_hat - state.poses[kf].transform_point(&state.landmarks[lm]).z;
            total += self.params.w2 * self.semantic_weights[lm] * self.losses.depth.rho(xi * xi);
        }
        total
    }

    /// Gauss-Newton normal equations of the robustified objective. Residual
    /// blocks touch one pose block and one landmark block, so contributions
    /// are scattered block-wise into the dense system.
    fn normal_equations(&self, state: &WindowState) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dof();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);

        // blocks: list of (column in H, width, local jacobian rows x width)
        let scatter = |h: &mut DMatrix<f64>,
                       g: &mut DVector<f64>,
                       blocks: &[(usize, DMatrix<f64>)],
                       residual: &DVector<f64>,
                       w: f64| {
            for (col_a, jac_a) in blocks {
                for (col_b, jac_b) in blocks {
                    let contrib = jac_a.transpose() * jac_b * w;
                    for r_i in 0..contrib.nrows() {
                        for c_i in 0..contrib.ncols() {
                            h[(col_a + r_i, col_b + c_i)] += contrib[(r_i, c_i)];
                        }
                    }
                }
                let gv = jac_a.transpose() * residual * w;
                for r_i in 0..gv.nrows() {
                    g[col_a + r_i] += gv[r_i];
                }
            }
        };

        for &(kf, lm, pixel) in &self.observations {
            let pose = &state.poses[kf];
            let point = &state.landmarks[lm];
            let q = pose.transform_point(point);
            if q.z <= 1e-6 {
                continue;
            }
            let Ok(projected) = project(self.k, &q) else {
                continue;
            };
            let r_vec = pixel - projected;
            let weight = self.params.w1
                * self.semantic_weights[lm]
                * self.losses.reprojection.weight(r_vec.norm_squared());

            let dpi = projection_jacobian(self.k, &q);
            let d_landmark: Matrix2x3<f64> = -dpi * pose.rotation().matrix();

            let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(2);
            if let Some(col) = self.pose_col(kf) {
                let jp = residual_3d2d_jacobian(point, pose, self.k)
                    .expect("positive-depth point has a projection Jacobian");
                let mut dense = DMatrix::zeros(2, 6);
                dense.copy_from(&jp);
                blocks.push((col, dense));
            }
            let mut dense = DMatrix::zeros(2, 3);
            dense.copy_from(&d_landmark);
            blocks.push((self.landmark_col(lm), dense));

            let r = DVector::from_column_slice(&[r_vec.x, r_vec.y]);
            scatter(&mut h, &mut g, &blocks, &r, weight);
        }

        for &(kf, lm, d_hat) in &self.depth_terms {
            let pose = &state.poses[kf];
            let point = &state.landmarks[lm];
            let xi = d_hat - pose.transform_point(point).z;
            let weight =
                self.params.w2 * self.semantic_weights[lm] * self.losses.depth.weight(xi * xi);

            let rot = pose.rotation().matrix().clone_owned();
            let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(2);
            if let Some(col) = self.pose_col(kf) {
                // d xi / d t = -e3, d xi / d angle = -(dR l)_z
                let mut dense = DMatrix::zeros(1, 6);
                dense[(0, 2)] = -1.0;
                for (a, dr) in rotation_partials(pose).iter().enumerate() {
                    dense[(0, 3 + a)] = -(dr * point).z;
                }
                blocks.push((col, dense));
            }
            let mut dense = DMatrix::zeros(1, 3);
            for c in 0..3 {
                dense[(0, c)] = -rot[(2, c)];
            }
            blocks.push((self.landmark_col(lm), dense));

            let r = DVector::from_element(1, xi);
            scatter(&mut h, &mut g, &blocks, &r, weight);
        }

        // Translation-length regularizer over the last two poses. The length
        // depends on the two translations only.
        let nu = self.regularizer(state);
        let p1 = &state.poses[self.n_poses - 1];
        let p0 = &state.poses[self.n_poses - 2];
        let d = p1.translation() - p0.translation();
        let norm = d.norm();
        if norm > 1e-12 {
            let base: Vector3<f64> = if self.losses.squared_scale_regularizer {
                2.0 * d
            } else {
                d / norm
            };
            let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
            if let Some(col) = self.pose_col(self.n_poses - 1) {
                let mut dense = DMatrix::zeros(1, 6);
                for c in 0..3 {
                    dense[(0, c)] = base[c];
                }
                blocks.push((col, dense));
            }
            if let Some(col) = self.pose_col(self.n_poses - 2) {
                let mut dense = DMatrix::zeros(1, 6);
                for c in 0..3 {
                    dense[(0, c)] = -base[c];
                }
                blocks.push((col, dense));
            }
            if !blocks.is_empty() {
                let r = DVector::from_element(1, nu);
                scatter(&mut h, &mut g, &blocks, &r, self.params.w0);
            }
        }

        (h, g)
    }

    fn apply_step(&self, state: &WindowState, delta: &DVector<f64>) -> WindowState {
        let mut next = state.clone();
        for kf in 1..self.n_poses {
            let col = self.pose_col(kf).unwrap();
            let p = &mut next.poses[kf];
            p.x += delta[col];
            p.y += delta[col + 1];
            p.z += delta[col + 2];
            p.alpha += delta[col + 3];
            p.beta += delta[col + 4];
            p.gamma += delta[col + 5];
        }
        for lm in 0..self.n_landmarks {
            let col = self.landmark_col(lm);
            next.landmarks[lm] += Vector3::new(delta[col], delta[col + 1], delta[col + 2]);
        }
        next
    }

    /// Damped least squares until convergence; appends accepted-step costs
    /// to `trace`.
    fn solve(
        &self,
        mut state: WindowState,
        cfg: &SolverConfig,
        trace: &mut Vec<f64>,
    ) -> Result<WindowState, BackendError> {
        let mut cost = self.cost(&state);
        if !cost.is_finite() {
            return Err(BackendError::SolverDiverged);
        }
        trace.push(cost);
        let mut lambda = cfg.initial_lambda;
        for _ in 0..cfg.max_iterations {
            let (h, g) = self.normal_equations(&state);
            if g.norm() < cfg.gradient_tolerance {
                break;
            }
            let mut stepped = false;
            for _ in 0..16 {
                let mut damped = h.clone();
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * (1.0 + h[(i, i)]);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let delta = chol.solve(&(-&g));
                let candidate = self.apply_step(&state, &delta);
                let new_cost = self.cost(&candidate);
                if new_cost.is_finite() && new_cost <= cost {
                    let rel = (cost - new_cost) / cost.max(1e-300);
                    state = candidate;
                    cost = new_cost;
                    trace.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    stepped = true;
                    if rel < cfg.cost_tolerance {
                        return Ok(state);
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !stepped {
                break;
            }
        }
        Ok(state)
    }
}

/// Jointly refines window poses (first pose held fixed as gauge) and
/// landmark positions, then rejects landmarks whose mean robust reprojection
/// cost exceeds the `delta` quantile and re-solves without them. The depth
/// term of each landmark applies at the oldest keyframe observing it.
pub fn optimize_window(
    keyframes: &[Keyframe],
    landmarks: &[LandmarkRecord],
    k: &CameraIntrinsics,
    params: &BaParams,
    losses: &WindowLosses,
    cfg: &SolverConfig,
) -> Result<WindowSolution, BackendError> {
    let landmark_ids: Vec<u64> = landmarks.iter().map(|l| l.id).collect();
    let id_to_idx: BTreeMap<u64, usize> = landmark_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    let mut observations: Vec<(usize, usize, Point2)> = Vec::new();
    for (kf_idx, kf) in keyframes.iter().enumerate() {
        for &(lm_id, pixel) in &kf.observations {
            if let Some(&lm_idx) = id_to_idx.get(&lm_id) {
                observations.push((kf_idx, lm_idx, pixel));
            }
        }
    }
    let observed: BTreeSet<usize> = observations.iter().map(|&(_, lm, _)| lm).collect();
    if keyframes.len() < 2 || observed.is_empty() {
        return Err(BackendError::InsufficientData {
            keyframes: keyframes.len(),
            landmarks: observed.len(),
        });
    }

    // Depth term at the oldest observing keyframe of each landmark, where
    // the measurement was taken when the track started.
    let mut oldest_kf: BTreeMap<usize, usize> = BTreeMap::new();
    for &(kf, lm, _) in &observations {
        let entry = oldest_kf.entry(lm).or_insert(kf);
        if kf < *entry {
            *entry = kf;
        }
    }
    let depth_terms: Vec<(usize, usize, f64)> = landmarks
        .iter()
        .enumerate()
        .filter_map(|(lm_idx, lm)| {
            let d = lm.depth_estimate?;
            let kf = *oldest_kf.get(&lm_idx)?;
            Some((kf, lm_idx, d))
        })
        .collect();

    let semantic_weights: Vec<f64> = landmarks
        .iter()
        .map(|l| landmark_weight(l, params))
        .collect();

    let initial = WindowState {
        poses: keyframes.iter().map(|kf| kf.pose).collect(),
        landmarks: landmarks.iter().map(|l| l.position).collect(),
    };
    let scale_constant = relative_translation_length(
        &initial.poses[keyframes.len() - 1],
        &initial.poses[keyframes.len() - 2],
        losses.squared_scale_regularizer,
    );

    let problem = WindowProblem {
        k,
        observations: observations.clone(),
        depth_terms: depth_terms.clone(),
        semantic_weights: semantic_weights.clone(),
        params,
        losses,
        scale_constant,
        n_poses: keyframes.len(),
        n_landmarks: landmarks.len(),
    };

    let mut trace = Vec::new();
    let phase1 = problem.solve(initial, cfg, &mut trace)?;

    // Quantile rejection on per-landmark mean robust reprojection cost.
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &(kf, lm, pixel) in &observations {
        let q = phase1.poses[kf].transform_point(&phase1.landmarks[lm]);
        let cost = match project(k, &q) {
            Ok(projected) if q.z > 0.0 => {
                losses.reprojection.rho((pixel - projected).norm_squared())
            }
            _ => f64::MAX / 1e6,
        };
        let entry = sums.entry(landmark_ids[lm]).or_insert((0.0, 0));
        entry.0 += cost;
        entry.1 += 1;
    }
    let mean_residuals: BTreeMap<u64, f64> = sums
        .iter()
        .map(|(&id, &(sum, n))| (id, sum / n as f64))
        .collect();
    let rejected = reject_outliers(&mean_residuals, params.delta);

    let final_state = if rejected.is_empty() {
        phase1
    } else {
        let keep: Vec<bool> = landmark_ids
            .iter()
            .map(|id| !rejected.contains(id))
            .collect();
        let problem2 = WindowProblem {
            k,
            observations: observations
                .iter()
                .filter(|&&(_, lm, _)| keep[lm])
                .copied()
                .collect(),
            depth_terms: depth_terms
                .iter()
                .filter(|&&(_, lm, _)| keep[lm])
                .copied()
                .collect(),
            semantic_weights,
            params,
            losses,
            scale_constant,
            n_poses: keyframes.len(),
            n_landmarks: landmarks.len(),
        };
        problem2.solve(phase1, cfg, &mut trace)?
    };

    Ok(WindowSolution {
        poses: final_state.poses,
        landmarks: landmark_ids
            .into_iter()
            .zip(final_state.landmarks)
            .collect(),
        cost_trace: trace,
        rejected_landmarks: rejected,
    })
}

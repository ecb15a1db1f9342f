//! Deterministic synthetic scenes: ground-truth trajectories, semantically
//! labeled landmarks, per-frame lidar scans, and noisy feature tracks.
//!
//! Frames use the vision convention (x right, y down, z forward); the world
//! frame coincides with the first camera frame. Lidar scans are produced in
//! a sensor frame with x forward, y left, z up sharing the camera origin, so
//! the ground plane sits at a constant lidar-frame height along the whole
//! (planar, yaw-only) trajectory. Scans sample the ground on an ideal
//! azimuth/elevation ray grid and each visible landmark as a small
//! ray-sampled billboard patch facing the sensor.

use crate::backend::SemanticLabel;
use crate::depth::LidarScan;
use crate::evaluation::Trajectory;
use crate::geometry::{project, CameraIntrinsics, Point2, Point3, Pose};
use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene i/o: {0}")]
    Io(String),
}

/// Ground-truth path shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Straight,
    Arc,
    UrbanLoop,
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::Straight => "straight",
            TrajectoryKind::Arc => "arc",
            TrajectoryKind::UrbanLoop => "urban-loop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "straight" => Some(TrajectoryKind::Straight),
            "arc" => Some(TrajectoryKind::Arc),
            "urban-loop" => Some(TrajectoryKind::UrbanLoop),
            _ => None,
        }
    }
}

/// Ideal spinning-lidar model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    /// Horizontal field of view (radians) centered on the camera axis.
    pub azimuth_fov: f64,
    /// Horizontal angular resolution in radians.
    pub azimuth_step: f64,
    /// Elevation ring count and limits (radians).
    pub rings: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    /// Per-ray dropout probability.
    pub dropout: f64,
    pub max_range: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel {
            azimuth_fov: 100f64.to_radians(),
            azimuth_step: 0.2f64.to_radians(),
            rings: 64,
            elevation_min: (-24.8f64).to_radians(),
            elevation_max: 3f64.to_radians(),
            dropout: 0.0,
            max_range: 80.0,
        }
    }
}

/// Everything the generator needs; deterministic given the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub trajectory: TrajectoryKind,
    pub frames: usize,
    pub frame_rate: f64,
    /// Forward speed in m/s.
    pub speed: f64,
    /// Arc turning radius (arc and urban-loop corners), meters.
    pub arc_radius: f64,
    pub landmark_count: usize,
    pub vegetation_fraction: f64,
    pub dynamic_fraction: f64,
    /// Feature pixel noise sigma.
    pub pixel_noise: f64,
    /// Extra pixel noise sigma on vegetation observations.
    pub vegetation_jitter: f64,
    /// Along-ray lidar noise sigma, meters.
    pub depth_noise: f64,
    /// Fraction of observations replaced by uniform in-image pixels.
    pub outlier_fraction: f64,
    /// Ground plane height in the lidar frame (z up), meters.
    pub ground_height: f64,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub lidar: LidarModel,
    /// Landmark camera-depth range at placement time.
    pub depth_range: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            trajectory: TrajectoryKind::Straight,
            frames: 30,
            frame_rate: 10.0,
            speed: 10.0,
            arc_radius: 60.0,
            landmark_count: 400,
            vegetation_fraction: 0.2,
            dynamic_fraction: 0.0,
            pixel_noise: 0.0,
            vegetation_jitter: 0.0,
            depth_noise: 0.0,
            outlier_fraction: 0.0,
            ground_height: -1.7,
            seed: 0,
            intrinsics: CameraIntrinsics::new(350.0, 350.0, 320.0, 240.0, 640, 480)
                .expect("default intrinsics are valid"),
            lidar: LidarModel::default(),
            depth_range: (4.0, 60.0),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::InvalidConfig(
                "frame count must be positive".into(),
            ));
        }
        if self.frame_rate <= 0.0 || self.speed < 0.0 {
            return Err(SimError::InvalidConfig(
                "frame rate and speed must be positive".into(),
            ));
        }
        for (name, f) in [
            ("vegetation_fraction", self.vegetation_fraction),
            ("dynamic_fraction", self.dynamic_fraction),
            ("outlier_fraction", self.outlier_fraction),
            ("lidar dropout", self.lidar.dropout),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} {f} outside [0, 1]"
                )));
            }
        }
        if self.landmark_count == 0 {
            return Err(SimError::InvalidConfig(
                "landmark count must be positive".into(),
            ));
        }
        if self.depth_range.0 <= 0.0 || self.depth_range.1 <= self.depth_range.0 {
            return Err(SimError::InvalidConfig("bad landmark depth range".into()));
        }
        Ok(())
    }
}

/// One tracked feature observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub landmark_id: u64,
    pub pixel: Point2,
    pub outlier: bool,
}

/// One simulated frame: tracked features and the lidar sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub timestamp: f64,
    pub observations: Vec<Observation>,
    pub scan: LidarScan,
}

/// Landmark table entry. Dynamic landmarks move with a constant velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLandmark {
    pub id: u64,
    pub position: Point3,
    pub velocity: Option<Vector3<f64>>,
    pub label: SemanticLabel,
}

/// The pipeline-facing part of a scene: sensor geometry plus per-frame data.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub intrinsics: CameraIntrinsics,
    pub lidar_to_camera: Pose,
    pub frame_rate: f64,
    pub frames: Vec<FrameData>,
    pub labels: BTreeMap<u64, SemanticLabel>,
}

/// Full generator output: scene data plus ground truth and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub scene: SceneData,
    pub ground_truth: Trajectory,
    pub landmarks: Vec<SimLandmark>,
    /// (frame index, observation index) of designated outliers.
    pub corrupted: Vec<(usize, usize)>,
}

/// Fixed lidar-to-camera mounting: lidar x (forward) to camera z, lidar y
/// (left) to camera -x, lidar z (up) to camera -y; shared origin.
pub fn lidar_to_camera() -> Pose {
    let r = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(
        0.0, -1.0, 0.0, //
        0.0, 0.0, -1.0, //
        1.0, 0.0, 0.0,
    ));
    Pose::from_rotation_translation(&r, Vector3::zeros())
}

/// Gaussian sample truncated to 3 sigma (resampled until inside).
fn truncated_gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    loop {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 3.0 {
            return z * sigma;
        }
    }
}

/// Camera-to-world poses of the configured path (planar, yaw about the
/// camera's down axis).
fn ground_truth_poses(cfg: &SceneConfig) -> Vec<Pose> {
    let step = cfg.speed / cfg.frame_rate;
    let mut poses = Vec::with_capacity(cfg.frames);
    match cfg.trajectory {
        TrajectoryKind::Straight => {
            for i in 0..cfg.frames {
                poses.push(Pose::from_translation(0.0, 0.0, step * i as f64));
            }
        }
        TrajectoryKind::Arc => {
            let radius = cfg.arc_radius;
            for i in 0..cfg.frames {
                let psi = step * i as f64 / radius;
                poses.push(Pose::new(
                    radius * (1.0 - psi.cos()),
                    0.0,
                    radius * psi.sin(),
                    0.0,
                    psi,
                    0.0,
                ));
            }
        }
        TrajectoryKind::UrbanLoop => {
            // Rectangle with quarter-circle corners: straight sides of this
            // many frames, then corners at the configured radius.
            let side_frames = (cfg.frames / 6).max(2);
            let corner_arc = std::f64::consts::FRAC_PI_2;
            let mut pos = Vector3::zeros();
            let mut heading: f64 = 0.0;
            let mut in_side = 0usize;
            let mut turning = false;
            let mut turned = 0.0;
            for _ in 0..cfg.frames {
                poses.push(Pose::new(pos.x, 0.0, pos.z, 0.0, heading, 0.0));
                if turning {
                    let dpsi = step / cfg.arc_radius;
                    heading += dpsi;
                    turned += dpsi;
                    if turned >= corner_arc {
                        heading = (heading / corner_arc).round() * corner_arc;
                        turning = false;
                        turned = 0.0;
                        in_side = 0;
                    }
                } else {
                    in_side += 1;
                    if in_side >= side_frames {
                        turning = true;
                    }
                }
                let forward = Vector3::new(heading.sin(), 0.0, heading.cos());
                pos += forward * step;
            }
        }
    }
    poses
}

/// Deterministic scene generation from the config.
pub fn generate(cfg: &SceneConfig) -> Result<SyntheticSequence, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    use rand::SeedableRng;

    let poses = ground_truth_poses(cfg);
    let k = &cfg.intrinsics;
    let extrinsic = lidar_to_camera();
    let camera_ground_y = -cfg.ground_height; // y-down camera: ground below

    // Landmarks: sample a frame, a pixel, and a depth; points landing near
    // the ground are snapped onto it (staying on the pixel ray) and labeled.
    let mut landmarks: Vec<SimLandmark> = Vec::with_capacity(cfg.landmark_count);
    let margin = 40.0;
    while landmarks.len() < cfg.landmark_count {
        let frame = rng.random_range(0..cfg.frames);
        let pixel = Point2::new(
            rng.random_range(margin..k.image_width as f64 - margin),
            rng.random_range(margin..k.image_height as f64 - margin),
        );
        let depth = rng.random_range(cfg.depth_range.0..cfg.depth_range.1);
        let mut cam = crate::geometry::backproject(k, &pixel, depth);
        let mut label = SemanticLabel::Structure;
        if cam.y >= camera_ground_y - 0.15 {
            // Snap onto the road surface along the viewing ray.
            let scale = camera_ground_y / cam.y;
            cam *= scale;
            if cam.z < cfg.depth_range.0 || cam.z > cfg.depth_range.1 {
                continue;
            }
            label = SemanticLabel::Ground;
        }
        let position = poses[frame].transform_point(&cam);
        landmarks.push(SimLandmark {
            id: landmarks.len() as u64,
            position,
            velocity: None,
            label,
        });
    }

    // Exact vegetation/dynamic counts over the whole table, assigned among
    // non-ground landmarks by a seeded shuffle.
    let n_dynamic = (cfg.dynamic_fraction * cfg.landmark_count as f64).round() as usize;
    let n_vegetation = (cfg.vegetation_fraction * cfg.landmark_count as f64).round() as usize;
    let mut assignable: Vec<usize> = landmarks
        .iter()
        .enumerate()
        .filter(|(_, l)| l.label == SemanticLabel::Structure)
        .map(|(i, _)| i)
        .collect();
    use rand::seq::SliceRandom;
    assignable.shuffle(&mut rng);
    for &idx in assignable.iter().take(n_dynamic) {
        landmarks[idx].label = SemanticLabel::Dynamic;
        let speed = rng.random_range(0.5..2.0);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        landmarks[idx].velocity = Some(Vector3::new(
            speed * heading.cos(),
            0.0,
            speed * heading.sin(),
        ));
    }
    for &idx in assignable.iter().skip(n_dynamic).take(n_vegetation) {
        landmarks[idx].label = SemanticLabel::Vegetation;
    }

    // Per-frame observations and scans.
    let mut frames = Vec::with_capacity(cfg.frames);
    for (i, pose) in poses.iter().enumerate() {
        let timestamp = i as f64 / cfg.frame_rate;
        let world_to_cam = pose.inverse();

        let mut observations = Vec::new();
        for lm in &landmarks {
            let position = match lm.velocity {
                Some(v) => lm.position + v * timestamp,
                None => lm.position,
            };
            let cam = world_to_cam.transform_point(&position);
            if cam.z < 1.0 {
                continue;
            }
            let Ok(clean) = project(k, &cam) else {
                continue;
            };
            if !k.contains(&clean) {
                continue;
            }
            let sigma = if lm.label == SemanticLabel::Vegetation {
                cfg.pixel_noise + cfg.vegetation_jitter
            } else {
                cfg.pixel_noise
            };
            let pixel = Point2::new(
                clean.x + truncated_gaussian(&mut rng, sigma),
                clean.y + truncated_gaussian(&mut rng, sigma),
            );
            observations.push(Observation {
                landmark_id: lm.id,
                pixel,
                outlier: false,
            });
        }

        let scan = simulate_scan(cfg, &world_to_cam, &landmarks, timestamp, &mut rng);
        frames.push(FrameData {
            timestamp,
            observations,
            scan,
        });
    }

    let labels: BTreeMap<u64, SemanticLabel> = landmarks.iter().map(|l| (l.id, l.label)).collect();
    let mut sequence = SyntheticSequence {
        scene: SceneData {
            intrinsics: *k,
            lidar_to_camera: extrinsic,
            frame_rate: cfg.frame_rate,
            frames,
            labels,
        },
        ground_truth: Trajectory {
            poses,
            timestamps: Some((0..cfg.frames).map(|i| i as f64 / cfg.frame_rate).collect()),
        },
        landmarks,
        corrupted: Vec::new(),
    };

    if cfg.outlier_fraction > 0.0 {
        sequence = corrupt(&sequence, cfg.outlier_fraction, &mut rng);
    }
    Ok(sequence)
}

/// Lidar sweep of the ground grid plus billboard patches for visible
/// landmarks, in the lidar frame of the current pose.
fn simulate_scan(
    cfg: &SceneConfig,
    world_to_cam: &Pose,
    landmarks: &[SimLandmark],
    timestamp: f64,
    rng: &mut ChaCha8Rng,
) -> LidarScan {
    let lm_model = &cfg.lidar;
    let cam_to_lidar = lidar_to_camera().inverse();
    let ring_step = if lm_model.rings > 1 {
        (lm_model.elevation_max - lm_model.elevation_min) / (lm_model.rings - 1) as f64
    } else {
        0.0
    };
    let mut points = Vec::new();
    let mut emit = |p: Point3, rng: &mut ChaCha8Rng| {
        if lm_model.dropout > 0.0 && rng.random::<f64>() < lm_model.dropout {
            return;
        }
        if cfg.depth_noise > 0.0 {
            let r = p.norm();
            if r > 1e-9 {
                let noisy = p * (1.0 + truncated_gaussian(rng, cfg.depth_noise) / r);
                points.push(noisy);
                return;
            }
        }
        points.push(p);
    };

    // Ground grid: rays from azimuth/elevation lattice hitting z = height.
    let n_az = (lm_model.azimuth_fov / lm_model.azimuth_step).floor() as i64;
    for az_i in -n_az / 2..=n_az / 2 {
        let az = az_i as f64 * lm_model.azimuth_step;
        for ring in 0..lm_model.rings {
            let el = lm_model.elevation_min + ring_step * ring as f64;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if dir.z >= -1e-9 {
                continue;
            }
            let t = cfg.ground_height / dir.z;
            if t < 2.0 || t > lm_model.max_range {
                continue;
            }
            emit(dir * t, rng);
        }
    }

    // Landmark billboards: a 5x5 ray patch around the landmark direction
    // intersecting a plane that faces the sensor.
    for lm in landmarks {
        if lm.label == SemanticLabel::Ground {
            continue; // the ground grid already covers road surfaces
        }
        let position = match lm.velocity {
            Some(v) => lm.position + v * timestamp,
            None => lm.position,
        };
        let cam = world_to_cam.transform_point(&position);
        if cam.z < 1.5 || cam.z > lm_model.max_range {
            continue;
        }
        let p_lidar = cam_to_lidar.transform_point(&cam);
        let range = p_lidar.norm();
        let dir0 = p_lidar / range;
        let az0 = p_lidar.y.atan2(p_lidar.x);
        let el0 = (p_lidar.z / range).asin();
        for daz in -2i32..=2 {
            for del in -2i32..=2 {
                let az = az0 + daz as f64 * lm_model.azimuth_step;
                let el = el0 + del as f64 * ring_step;
                let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                let denom = dir.dot(&dir0);
                if denom < 0.5 {
                    continue;
                }
                emit(dir * (range / denom), rng);
            }
        }
    }

    LidarScan::new(points, timestamp)
}

/// Replaces a fraction of all observations (rounded count, seeded choice)
/// with uniform in-image pixels and records the corrupted slots.
pub fn corrupt(
    seq: &SyntheticSequence,
    outlier_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> SyntheticSequence {
    let mut out = seq.clone();
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (fi, frame) in out.scene.frames.iter().enumerate() {
        for oi in 0..frame.observations.len() {
            slots.push((fi, oi));
        }
    }
    let count = (outlier_fraction * slots.len() as f64).round() as usize;
    use rand::seq::SliceRandom;
    slots.shuffle(rng);
    slots.truncate(count);
    slots.sort_unstable();
    let k = out.scene.intrinsics;
    for &(fi, oi) in &slots {
        let obs = &mut out.scene.frames[fi].observations[oi];
        obs.pixel = Point2::new(
            rng.random_range(0.0..k.image_width as f64),
            rng.random_range(0.0..k.image_height as f64),
        );
        obs.outlier = true;
    }
    out.corrupted = slots;
    out
}

// --- directory export / import ---

use std::fs;
use std::path::Path;

fn io_err<E: std::fmt::Display>(e: E) -> SimError {
    SimError::Io(e.to_string())
}

/// Writes a scene directory: `meta.txt`, `poses.txt` (ground truth, KITTI
/// format), `observations.csv` (frame, landmark id, u, v, label), and
/// `scans/NNNNNN.txt` point lists.
pub fn write_scene(dir: &Path, seq: &SyntheticSequence) -> Result<(), SimError> {
    fs::create_dir_all(dir.join("scans")).map_err(io_err)?;
    let k = &seq.scene.intrinsics;
    let mut meta = String::new();
    meta.push_str(&format!("camera.fx = {}\n", k.fx));
    meta.push_str(&format!("camera.fy = {}\n", k.fy));
    meta.push_str(&format!("camera.cx = {}\n", k.cx));
    meta.push_str(&format!("camera.cy = {}\n", k.cy));
    meta.push_str(&format!("camera.width = {}\n", k.image_width));
    meta.push_str(&format!("camera.height = {}\n", k.image_height));
    meta.push_str(&format!("scene.frame_rate = {}\n", seq.scene.frame_rate));
    meta.push_str(&format!("scene.frames = {}\n", seq.scene.frames.len()));
    let e = seq.scene.lidar_to_camera;
    meta.push_str(&format!(
        "lidar.extrinsic = {} {} {} {} {} {}\n",
        e.x, e.y, e.z, e.alpha, e.beta, e.gamma
    ));
    fs::write(dir.join("meta.txt"), meta).map_err(io_err)?;

    fs::write(
        dir.join("poses.txt"),
        crate::evaluation::write_kitti_poses(&seq.ground_truth),
    )
    .map_err(io_err)?;

    let mut csv = String::from("frame,landmark_id,u,v,label\n");
    for (fi, frame) in seq.scene.frames.iter().enumerate() {
        for obs in &frame.observations {
            let label = seq
                .scene
                .labels
                .get(&obs.landmark_id)
                .copied()
                .unwrap_or(SemanticLabel::Structure);
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fi,
                obs.landmark_id,
                obs.pixel.x,
                obs.pixel.y,
                label.as_str()
            ));
        }
    }
    fs::write(dir.join("observations.csv"), csv).map_err(io_err)?;

    for (fi, frame) in seq.scene.frames.iter().enumerate() {
        fs::write(
            dir.join("scans").join(format!("{fi:06}.txt")),
            crate::depth::write_xyz(&frame.scan),
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Reads a scene directory written by [`write_scene`]. Returns the
/// pipeline-facing data and the ground truth when `poses.txt` is present.
pub fn read_scene(dir: &Path) -> Result<(SceneData, Option<Trajectory>), SimError> {
    let meta_text = fs::read_to_string(dir.join("meta.txt")).map_err(io_err)?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            meta.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<f64, SimError> {
        meta.get(key)
            .ok_or_else(|| SimError::Io(format!("meta.txt missing {key}")))?
            .parse::<f64>()
            .map_err(io_err)
    };
    let intrinsics = CameraIntrinsics::new(
        get("camera.fx")?,
        get("camera.fy")?,
        get("camera.cx")?,
        get("camera.cy")?,
        get("camera.width")? as u32,
        get("camera.height")? as u32,
    )
    .map_err(io_err)?;
    let frame_rate = get("scene.frame_rate")?;
    let frame_count = get("scene.frames")? as usize;
    let extrinsic = {
        let raw = meta
            .get("lidar.extrinsic")
            .ok_or_else(|| SimError::Io("meta.txt missing lidar.extrinsic".into()))?;
        let v: Vec<f64> = raw
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(io_err))
            .collect::<Result<_, _>>()?;
        if v.len() != 6 {
            return Err(SimError::Io("lidar.extrinsic needs 6 values".into()));
        }
        Pose::new(v[0], v[1], v[2], v[3], v[4], v[5])
    };

    let csv = fs::read_to_string(dir.join("observations.csv")).map_err(io_err)?;
    let mut observations: Vec<Vec<Observation>> = vec![Vec::new(); frame_count];
    let mut labels = BTreeMap::new();
    for (lineno, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(SimError::Io(format!(
                "observations.csv line {}: expected 5 fields",
                lineno + 1
            )));
        }
        let frame: usize = fields[0].parse().map_err(io_err)?;
        let id: u64 = fields[1].parse().map_err(io_err)?;
        let u: f64 = fields[2].parse().map_err(io_err)?;
        let v: f64 = fields[3].parse().map_err(io_err)?;
        let label = SemanticLabel::parse(fields[4])
            .ok_or_else(|| SimError::Io(format!("unknown label {}", fields[4])))?;
        if frame >= frame_count {
            return Err(SimError::Io(format!("frame index {frame} out of range")));
        }
        observations[frame].push(Observation {
            landmark_id: id,
            pixel: Point2::new(u, v),
            outlier: false,
        });
        labels.insert(id, label);
    }

    let mut frames = Vec::with_capacity(frame_count);
    for (fi, obs) in observations.into_iter().enumerate() {
        let timestamp = fi as f64 / frame_rate;
        let scan_text =
            fs::read_to_string(dir.join("scans").join(format!("{fi:06}.txt"))).map_err(io_err)?;
        let scan = crate::depth::read_xyz(&scan_text, timestamp).map_err(SimError::Io)?;
        frames.push(FrameData {
            timestamp,
            observations: obs,
            scan,
        });
    }

    let ground_truth = match fs::read_to_string(dir.join("poses.txt")) {
        Ok(text) => Some(
            crate::evaluation::read_kitti_poses(&text)
                .map_err(io_err)?
                .trajectory,
        ),
        Err(_) => None,
    };

    Ok((
        SceneData {
            intrinsics,
            lidar_to_camera: extrinsic,
            frame_rate,
            frames,
            labels,
        },
        ground_truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::fit_ground_plane;
    use crate::odometry::{estimate_motion, CauchyLoss, Correspondence, SolverConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small_config() -> SceneConfig {
        SceneConfig {
            frames: 8,
            landmark_count: 120,
            seed: 11,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn noiseless_observations_reproject_exactly() {
        let seq = generate(&small_config()).unwrap();
        let k = &seq.scene.intrinsics;
        for (fi, frame) in seq.scene.frames.iter().enumerate() {
            let world_to_cam = seq.ground_truth.poses[fi].inverse();
            for obs in &frame.observations {
                let lm = &seq.landmarks[obs.landmark_id as usize];
                let cam = world_to_cam.transform_point(&lm.position);
                let clean = project(k, &cam).unwrap();
                assert!((clean - obs.pixel).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vegetation_count_is_exact() {
        let cfg = SceneConfig {
            landmark_count: 1000,
            vegetation_fraction: 0.3,
            frames: 2,
            ..SceneConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let veg = seq
            .landmarks
            .iter()
            .filter(|l| l.label == SemanticLabel::Vegetation)
            .count();
        assert_eq!(veg, 300);
    }

    #[test]
    fn corrupt_counts() {
        let cfg = SceneConfig {
            pixel_noise: 0.2,
            ..small_config()
        };
        let seq = generate(&cfg).unwrap();
        let total: usize = seq.scene.frames.iter().map(|f| f.observations.len()).sum();

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let unchanged = corrupt(&seq, 0.0, &mut rng);
        assert_eq!(unchanged.scene, seq.scene);
        assert!(unchanged.corrupted.is_empty());

        let all = corrupt(&seq, 1.0, &mut rng);
        assert_eq!(all.corrupted.len(), total);
        assert!(all
            .scene
            .frames
            .iter()
            .all(|f| f.observations.iter().all(|o| o.outlier)));

        let fifth = corrupt(&seq, 0.2, &mut rng);
        assert_eq!(fifth.corrupted.len(), (0.2 * total as f64).round() as usize);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config();
        cfg.frames = 0;
        assert!(matches!(generate(&cfg), Err(SimError::InvalidConfig(_))));
        let mut cfg = small_config();
        cfg.vegetation_fraction = 1.5;
        assert!(matches!(generate(&cfg), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn ground_plane_recovered_from_scans() {
        let seq = generate(&small_config()).unwrap();
        for frame in seq.scene.frames.iter().step_by(3) {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let plane = fit_ground_plane(&frame.scan, 200, 0.1, &mut rng).unwrap();
            // Points with lidar z near the ground height dominate the scan.
            let height = plane.offset / plane.normal.z;
            assert_relative_eq!(height, -1.7, epsilon = 1e-6);
        }
    }

    #[test]
    fn frame_odometry_recovers_ground_truth_motion() {
        let seq = generate(&small_config()).unwrap();
        let k = &seq.scene.intrinsics;
        for fi in 1..seq.scene.frames.len() {
            let prev_pose = &seq.ground_truth.poses[fi - 1];
            let curr_pose = &seq.ground_truth.poses[fi];
            // motion maps previous-frame camera points to current-frame
            let truth = curr_pose.inverse().compose(prev_pose);

            let prev_cam = prev_pose.inverse();
            let prev_frame = &seq.scene.frames[fi - 1];
            let curr_frame = &seq.scene.frames[fi];
            let prev_pixels: BTreeMap<u64, Point2> = prev_frame
                .observations
                .iter()
                .map(|o| (o.landmark_id, o.pixel))
                .collect();
            let mut correspondences = Vec::new();
            for obs in &curr_frame.observations {
                let Some(&prev_pixel) = prev_pixels.get(&obs.landmark_id) else {
                    continue;
                };
                let lm = &seq.landmarks[obs.landmark_id as usize];
                let point3d = prev_cam.transform_point(&lm.position);
                correspondences.push(Correspondence {
                    curr_pixel: obs.pixel,
                    prev_pixel,
                    point3d: Some(point3d),
                });
            }
            assert!(correspondences.len() > 20);
            let est = estimate_motion(
                &correspondences,
                k,
                &Pose::identity(),
                (CauchyLoss::new(1.0), CauchyLoss::new(1e-4)),
                &SolverConfig::default(),
            )
            .unwrap();
            assert!(
                (est.motion.translation() - truth.translation()).norm() < 1e-6,
                "frame {fi}: translation error {}",
                (est.motion.translation() - truth.translation()).norm()
            );
            for (a, b) in [
                (est.motion.alpha, truth.alpha),
                (est.motion.beta, truth.beta),
                (est.motion.gamma, truth.gamma),
            ] {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn scene_round_trips_through_directory() {
        let dir = std::env::temp_dir().join(format!("galvo-sim-test-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let seq = generate(&small_config()).unwrap();
        write_scene(&dir, &seq).unwrap();
        let (scene, gt) = read_scene(&dir).unwrap();
        assert_eq!(scene.frames.len(), seq.scene.frames.len());
        assert_eq!(scene.labels, seq.scene.labels);
        assert_eq!(scene.intrinsics, seq.scene.intrinsics);
        let gt = gt.unwrap();
        for (a, b) in gt.poses.iter().zip(&seq.ground_truth.poses) {
            assert!((a.matrix() - b.matrix()).abs().max() < 1e-12);
        }
        // pixels round-trip exactly (shortest-round-trip float formatting)
        for (fa, fb) in scene.frames.iter().zip(&seq.scene.frames) {
            assert_eq!(fa.observations.len(), fb.observations.len());
            for (oa, ob) in fa.observations.iter().zip(&fb.observations) {
                assert_eq!(oa.pixel, ob.pixel);
                assert_eq!(oa.landmark_id, ob.landmark_id);
            }
            assert_eq!(fa.scan.points, fb.scan.points);
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn arc_and_loop_paths_have_constant_step() {
        for kind in [TrajectoryKind::Arc, TrajectoryKind::UrbanLoop] {
            let cfg = SceneConfig {
                trajectory: kind,
                frames: 40,
                ..small_config()
            };
            let poses = ground_truth_poses(&cfg);
            let step = cfg.speed / cfg.frame_rate;
            for pair in poses.windows(2) {
                let d = (pair[1].translation() - pair[0].translation()).norm();
                assert!((d - step).abs() < 0.02 * step, "step {d} vs {step}");
            }
        }
    }
}

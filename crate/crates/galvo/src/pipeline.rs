//! End-to-end odometry: lidar depth fusion, frame-to-frame motion, pose
//! chaining, and sliding-window refinement.
//!
//! The per-frame work that does not depend on the five tuned parameters
//! (depth estimates and relative motions) is computed once in a
//! [`PreparedScene`]; a run then chains poses and refines keyframe windows
//! under a given parameter set. Fitness evaluation reuses one prepared scene
//! across all parameter sets, which is what makes desk-scale tuning loops
//! affordable.

use crate::backend::{
    bin_and_select_landmarks, optimize_window, select_keyframes, BaParams, DistanceBin, FrameInfo,
    LandmarkRecord, SemanticLabel, WindowConfig, WindowLosses,
};
use crate::depth::{estimate_feature_depths, DepthParams, DepthQuery};
use crate::evaluation::{kitti_translation_error, Trajectory, DEFAULT_EVAL_STEP};
use crate::ga::{FitnessFn, ParameterSet};
use crate::geometry::{backproject, Point2, Pose};
use crate::odometry::{estimate_motion, CauchyLoss, Correspondence, SolverConfig};
use crate::sim::SceneData;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("scene has no frames")]
    EmptyScene,
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

/// Everything a run needs besides the scene itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// The five tuned parameters.
    pub params: ParameterSet,
    /// Objective weights and bin boundaries the tuned fields merge into.
    pub base: BaParams,
    pub depth: DepthParams,
    pub window: WindowConfig,
    pub solver: SolverConfig,
    pub window_losses: WindowLosses,
    /// Cauchy scales of the frame-to-frame objective.
    pub reprojection_scale: f64,
    pub epipolar_scale: f64,
    /// Drift-metric subsequence lengths (meters) and start step (frames).
    pub eval_lengths: Vec<f64>,
    pub eval_step: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            params: ParameterSet::stock(),
            base: BaParams::default(),
            depth: DepthParams::default(),
            window: WindowConfig::default(),
            solver: SolverConfig {
                max_iterations: 30,
                ..SolverConfig::default()
            },
            window_losses: WindowLosses::default(),
            reprojection_scale: crate::odometry::DEFAULT_REPROJECTION_SCALE,
            epipolar_scale: crate::odometry::DEFAULT_EPIPOLAR_SCALE,
            eval_lengths: crate::evaluation::default_lengths(),
            eval_step: DEFAULT_EVAL_STEP,
            seed: 0,
        }
    }
}

/// Parameter-independent per-scene precomputation.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    /// Accepted lidar depth per (frame, landmark id).
    depth_by_frame: Vec<BTreeMap<u64, f64>>,
    /// Relative motion mapping previous-frame points into the current frame,
    /// one per frame starting at index 1.
    motions: Vec<Pose>,
    /// First failure encountered while preparing, if any.
    failure: Option<String>,
}

/// Result of an odometry run. `failure` carries the first pipeline error;
/// the trajectory is still index-complete (failed frames fall back to the
/// constant-velocity prediction).
#[derive(Debug, Clone)]
pub struct OdometryRun {
    pub trajectory: Trajectory,
    pub keyframe_ids: Vec<u64>,
    pub failure: Option<String>,
}

/// Runs depth estimation and frame-to-frame motion for every frame pair.
pub fn prepare_scene(
    scene: &SceneData,
    cfg: &PipelineConfig,
) -> Result<PreparedScene, PipelineError> {
    if scene.frames.is_empty() {
        return Err(PipelineError::EmptyScene);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut failure = None;

    let mut depth_by_frame = Vec::with_capacity(scene.frames.len());
    for frame in &scene.frames {
        let tracked: Vec<&crate::sim::Observation> = frame
            .observations
            .iter()
            .filter(|o| scene.labels.get(&o.landmark_id) != Some(&SemanticLabel::Dynamic))
            .collect();
        let queries: Vec<DepthQuery> = tracked
            .iter()
            .map(|o| DepthQuery {
                pixel: o.pixel,
                ground: scene.labels.get(&o.landmark_id) == Some(&SemanticLabel::Ground),
            })
            .collect();
        let estimates = estimate_feature_depths(
            &queries,
            &frame.scan,
            &scene.lidar_to_camera,
            &scene.intrinsics,
            &cfg.depth,
            &mut rng,
        );
        let map: BTreeMap<u64, f64> = tracked
            .iter()
            .zip(&estimates)
            .filter_map(|(o, e)| e.depth().map(|d| (o.landmark_id, d)))
            .collect();
        depth_by_frame.push(map);
    }

    let losses = (
        CauchyLoss::new(cfg.reprojection_scale),
        CauchyLoss::new(cfg.epipolar_scale),
    );
    let mut motions = Vec::with_capacity(scene.frames.len().saturating_sub(1));
    let mut last_motion = Pose::identity();
    for fi in 1..scene.frames.len() {
        let prev = &scene.frames[fi - 1];
        let curr = &scene.frames[fi];
        let prev_pixels: BTreeMap<u64, Point2> = prev
            .observations
            .iter()
            .map(|o| (o.landmark_id, o.pixel))
            .collect();
        let mut correspondences = Vec::new();
        for obs in &curr.observations {
            if scene.labels.get(&obs.landmark_id) == Some(&SemanticLabel::Dynamic) {
                continue;
            }
            let Some(&prev_pixel) = prev_pixels.get(&obs.landmark_id) else {
                continue;
            };
            let point3d = depth_by_frame[fi - 1]
                .get(&obs.landmark_id)
                .map(|&d| backproject(&scene.intrinsics, &prev_pixel, d));
            correspondences.push(Correspondence {
                curr_pixel: obs.pixel,
                prev_pixel,
                point3d,
            });
        }
        let motion = match estimate_motion(
            &correspondences,
            &scene.intrinsics,
            &last_motion,
            losses,
            &cfg.solver,
        ) {
            Ok(estimate) => estimate.motion,
            Err(e) => {
                if failure.is_none() {
                    failure = Some(format!("frame {fi}: {e}"));
                }
                last_motion // constant-velocity fallback
            }
        };
        motions.push(motion);
        last_motion = motion;
    }

    Ok(PreparedScene {
        depth_by_frame,
        motions,
        failure,
    })
}

/// Chains poses and refines keyframe windows under the configured parameter
/// set. Deterministic given the prepared scene, the parameters, and the
/// config seed.
pub fn run_prepared(
    prepared: &PreparedScene,
    scene: &SceneData,
    cfg: &PipelineConfig,
) -> OdometryRun {
    let n = scene.frames.len();
    let params = cfg.params.apply_to(&cfg.base);
    // camera-to-world chain
    let mut world: Vec<Pose> = Vec::with_capacity(n);
    let mut frame_infos: Vec<FrameInfo> = Vec::with_capacity(n);
    let mut keyframe_ids: Vec<u64> = Vec::new();

    for fi in 0..n {
        let pose = if fi == 0 {
            Pose::identity()
        } else {
            world[fi - 1].compose(&prepared.motions[fi - 1].inverse())
        };
        world.push(pose);
        frame_infos.push(FrameInfo {
            id: fi as u64,
            timestamp: scene.frames[fi].timestamp,
            pose: pose.inverse(),
            required: false,
            observations: scene.frames[fi]
                .observations
                .iter()
                .filter(|o| scene.labels.get(&o.landmark_id) != Some(&SemanticLabel::Dynamic))
                .map(|o| (o.landmark_id, o.pixel))
                .collect(),
        });

        let keyframes = select_keyframes(&frame_infos, &cfg.window);
        let newest_is_keyframe = keyframes
            .last()
            .map(|kf| kf.id == fi as u64)
            .unwrap_or(false);
        if keyframes.len() < 2 || !newest_is_keyframe {
            continue;
        }
        if !keyframe_ids.contains(&(fi as u64)) {
            keyframe_ids.push(fi as u64);
        }

        // Landmarks observed in the window, positioned from the depth
        // measured at their oldest observing window keyframe.
        let mut records: Vec<LandmarkRecord> = Vec::new();
        let mut seen: BTreeMap<u64, usize> = BTreeMap::new(); // id -> oldest kf index
        for (kf_idx, kf) in keyframes.iter().enumerate() {
            for &(id, _) in &kf.observations {
                seen.entry(id).or_insert(kf_idx);
            }
        }
        for (&id, &kf_idx) in &seen {
            let kf = &keyframes[kf_idx];
            let frame_idx = kf.id as usize;
            let Some(&depth) = prepared.depth_by_frame[frame_idx].get(&id) else {
                continue;
            };
            let Some(&(_, pixel)) = kf.observations.iter().find(|&&(lid, _)| lid == id) else {
                continue;
            };
            let cam = backproject(&scene.intrinsics, &pixel, depth);
            let position = world[frame_idx].transform_point(&cam);
            records.push(LandmarkRecord {
                id,
                position,
                depth_estimate: Some(depth),
                label: scene
                    .labels
                    .get(&id)
                    .copied()
                    .unwrap_or(SemanticLabel::Structure),
                bin: DistanceBin::Unassigned,
            });
        }
        if records.is_empty() {
            continue;
        }

        let newest_pose = keyframes.last().expect("window nonempty").pose;
        let select_seed = crate::ga::derive_eval_seed(cfg.seed, 0xB1B, fi);
        let selected = bin_and_select_landmarks(&mut records, &newest_pose, &params, select_seed);
        if selected.is_empty() {
            continue;
        }
        let selected_records: Vec<LandmarkRecord> = records
            .into_iter()
            .filter(|r| r.bin != DistanceBin::Unassigned)
            .collect();

        match optimize_window(
            &keyframes,
            &selected_records,
            &scene.intrinsics,
            &params,
            &cfg.window_losses,
            &cfg.solver,
        ) {
            Ok(solution) => {
                for (kf, refined) in keyframes.iter().zip(&solution.poses) {
                    let frame_idx = kf.id as usize;
                    let cam_to_world = refined.inverse();
                    world[frame_idx] = cam_to_world;
                    frame_infos[frame_idx].pose = *refined;
                }
            }
            Err(_) => {
                // Unrefinable window (for example every landmark rejected);
                // the chained poses stand.
            }
        }
    }

    OdometryRun {
        trajectory: Trajectory {
            poses: world,
            timestamps: Some(scene.frames.iter().map(|f| f.timestamp).collect()),
        },
        keyframe_ids,
        failure: prepared.failure.clone(),
    }
}

/// Prepare-and-run in one call.
pub fn run_odometry(scene: &SceneData, cfg: &PipelineConfig) -> Result<OdometryRun, PipelineError> {
    let prepared = prepare_scene(scene, cfg)?;
    Ok(run_prepared(&prepared, scene, cfg))
}

/// One tuning task: a scene with its ground truth.
#[derive(Debug, Clone)]
pub struct GaTask {
    pub id: String,
    pub scene: SceneData,
    pub ground_truth: Trajectory,
}

struct PreparedTask {
    id: String,
    scene: SceneData,
    ground_truth: Trajectory,
    prepared: PreparedScene,
}

/// Fitness backend for the genetic search: each task's scene is prepared
/// once, and every parameter set re-runs only the parameter-dependent
/// refinement. Evaluation is deterministic per parameter set under the
/// pipeline seed; the engine-derived per-evaluation seed is ignored here so
/// a tuned parameter set scores exactly like a plain odometry run.
pub struct SceneTaskEvaluator {
    tasks: Vec<PreparedTask>,
    cfg: PipelineConfig,
}

impl SceneTaskEvaluator {
    pub fn new(tasks: Vec<GaTask>, cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let tasks = tasks
            .into_iter()
            .map(|t| {
                let prepared = prepare_scene(&t.scene, &cfg)?;
                Ok(PreparedTask {
                    id: t.id,
                    scene: t.scene,
                    ground_truth: t.ground_truth,
                    prepared,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(SceneTaskEvaluator { tasks, cfg })
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    /// Translation error (percent) of one parameter set on every task.
    pub fn sigmas(&self, params: &ParameterSet) -> Vec<(String, f64)> {
        self.tasks
            .iter()
            .map(|task| {
                let mut cfg = self.cfg.clone();
                cfg.params = *params;
                let run = run_prepared(&task.prepared, &task.scene, &cfg);
                let sigma = kitti_translation_error(
                    &run.trajectory,
                    &task.ground_truth,
                    &cfg.eval_lengths,
                    cfg.eval_step,
                )
                .map(|report| {
                    if report.insufficient_length {
                        f64::NAN
                    } else {
                        report.translation_error_percent
                    }
                })
                .unwrap_or(f64::NAN);
                (task.id.clone(), sigma)
            })
            .collect()
    }
}

impl FitnessFn for SceneTaskEvaluator {
    fn evaluate(&self, params: &ParameterSet, _eval_seed: u64) -> Vec<(String, f64)> {
        self.sigmas(params)
    }
}

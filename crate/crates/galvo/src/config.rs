//! Flat key-value run configuration.
//!
//! Config files hold `section.key = value` lines (`#` comments allowed).
//! Every CLI flag mirrors a config key and flags win, so a run manifest is a
//! plain diff-able text block. Angles are degrees here and radians
//! internally.

use crate::backend::{BaParams, WindowConfig, WindowLosses};
use crate::depth::DepthParams;
use crate::ga::{GaConfig, MutationMode, ParameterSet};
use crate::odometry::{CauchyLoss, SolverConfig};
use crate::pipeline::PipelineConfig;
use crate::sim::{LidarModel, SceneConfig, TrajectoryKind};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.workers",
    "scene.kind",
    "scene.frames",
    "scene.frame_rate",
    "scene.speed",
    "scene.arc_radius",
    "scene.landmarks",
    "scene.vegetation_fraction",
    "scene.dynamic_fraction",
    "scene.pixel_noise",
    "scene.vegetation_jitter",
    "scene.depth_noise",
    "scene.outlier_fraction",
    "scene.ground_height",
    "scene.depth_min",
    "scene.depth_max",
    "scene.seed",
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
    "camera.width",
    "camera.height",
    "lidar.azimuth_fov_deg",
    "lidar.azimuth_step_deg",
    "lidar.rings",
    "lidar.elevation_min_deg",
    "lidar.elevation_max_deg",
    "lidar.dropout",
    "lidar.max_range",
    "params.outlier_rejection_quantile",
    "params.max_number_landmarks_near_bin",
    "params.max_number_landmarks_middle_bin",
    "params.max_number_landmarks_far_bin",
    "params.shrubbery_weight",
    "ba.w0",
    "ba.w1",
    "ba.w2",
    "ba.near_max",
    "ba.middle_max",
    "depth.roi_half_width",
    "depth.roi_half_height",
    "depth.histogram_bin",
    "depth.min_area",
    "depth.max_depth",
    "depth.max_incidence_deg",
    "depth.ground_normal_tol_deg",
    "depth.ground_offset_tol",
    "depth.ransac_iterations",
    "depth.ransac_inlier_tol",
    "window.keyframe_interval",
    "window.standstill_threshold",
    "window.length",
    "solver.max_iterations",
    "solver.cost_tolerance",
    "solver.gradient_tolerance",
    "solver.initial_lambda",
    "losses.reprojection_scale",
    "losses.epipolar_scale",
    "losses.depth_scale",
    "losses.squared_scale_regularizer",
    "eval.lengths",
    "eval.step",
    "eval.align",
    "ga.population_size",
    "ga.generations",
    "ga.mutation_rate",
    "ga.crossover_rate",
    "ga.elitism",
    "ga.seed",
    "ga.mutation_mode",
    "ga.fitness_ceiling",
    "ga.tasks",
];

/// Parsed configuration: a sorted key-value map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine { line: idx + 1 });
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(ConfigMap { map })
    }

    /// Sets a key, overriding any file value (CLI flags win).
    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                message: e.to_string(),
            }),
        }
    }

    /// Canonical serialization: sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.map {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// FNV-1a hash of the canonical serialization.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for byte in self.canonical().as_bytes() {
            h ^= *byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn run_seed(&self) -> Result<u64, ConfigError> {
        self.parsed("run.seed", 0)
    }

    pub fn workers(&self) -> Result<usize, ConfigError> {
        self.parsed("run.workers", 0)
    }

    pub fn scene_config(&self) -> Result<SceneConfig, ConfigError> {
        let default = SceneConfig::default();
        let kind_raw = self.get("scene.kind").unwrap_or("straight").to_string();
        let trajectory = TrajectoryKind::parse(&kind_raw).ok_or_else(|| ConfigError::BadValue {
            key: "scene.kind".into(),
            message: format!("unknown kind `{kind_raw}` (straight | arc | urban-loop)"),
        })?;
        let intrinsics = crate::geometry::CameraIntrinsics::new(
            self.parsed("camera.fx", default.intrinsics.fx)?,
            self.parsed("camera.fy", default.intrinsics.fy)?,
            self.parsed("camera.cx", default.intrinsics.cx)?,
            self.parsed("camera.cy", default.intrinsics.cy)?,
            self.parsed("camera.width", default.intrinsics.image_width)?,
            self.parsed("camera.height", default.intrinsics.image_height)?,
        )
        .map_err(|e| ConfigError::BadValue {
            key: "camera.*".into(),
            message: e.to_string(),
        })?;
        let lidar_default = LidarModel::default();
        let lidar = LidarModel {
            azimuth_fov: self
                .parsed(
                    "lidar.azimuth_fov_deg",
                    lidar_default.azimuth_fov.to_degrees(),
                )?
                .to_radians(),
            azimuth_step: self
                .parsed(
                    "lidar.azimuth_step_deg",
                    lidar_default.azimuth_step.to_degrees(),
                )?
                .to_radians(),
            rings: self.parsed("lidar.rings", lidar_default.rings)?,
            elevation_min: self
                .parsed(
                    "lidar.elevation_min_deg",
                    lidar_default.elevation_min.to_degrees(),
                )?
                .to_radians(),
            elevation_max: self
                .parsed(
                    "lidar.elevation_max_deg",
                    lidar_default.elevation_max.to_degrees(),
                )?
                .to_radians(),
            dropout: self.parsed("lidar.dropout", lidar_default.dropout)?,
            max_range: self.parsed("lidar.max_range", lidar_default.max_range)?,
        };
        Ok(SceneConfig {
            trajectory,
            frames: self.parsed("scene.frames", default.frames)?,
            frame_rate: self.parsed("scene.frame_rate", default.frame_rate)?,
            speed: self.parsed("scene.speed", default.speed)?,
            arc_radius: self.parsed("scene.arc_radius", default.arc_radius)?,
            landmark_count: self.parsed("scene.landmarks", default.landmark_count)?,
            vegetation_fraction: self
                .parsed("scene.vegetation_fraction", default.vegetation_fraction)?,
            dynamic_fraction: self.parsed("scene.dynamic_fraction", default.dynamic_fraction)?,
            pixel_noise: self.parsed("scene.pixel_noise", default.pixel_noise)?,
            vegetation_jitter: self.parsed("scene.vegetation_jitter", default.vegetation_jitter)?,
            depth_noise: self.parsed("scene.depth_noise", default.depth_noise)?,
            outlier_fraction: self.parsed("scene.outlier_fraction", default.outlier_fraction)?,
            ground_height: self.parsed("scene.ground_height", default.ground_height)?,
            seed: self.parsed("scene.seed", default.seed)?,
            intrinsics,
            lidar,
            depth_range: (
                self.parsed("scene.depth_min", default.depth_range.0)?,
                self.parsed("scene.depth_max", default.depth_range.1)?,
            ),
        })
    }

    /// The five tuned parameters, keyed by their conventional names.
    pub fn parameter_set(&self) -> Result<ParameterSet, ConfigError> {
        let stock = ParameterSet::stock();
        Ok(ParameterSet {
            delta: self.parsed("params.outlier_rejection_quantile", stock.delta)?,
            eps_near: self.parsed("params.max_number_landmarks_near_bin", stock.eps_near)?,
            eps_middle: self.parsed("params.max_number_landmarks_middle_bin", stock.eps_middle)?,
            eps_far: self.parsed("params.max_number_landmarks_far_bin", stock.eps_far)?,
            mu: self.parsed("params.shrubbery_weight", stock.mu)?,
        })
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let default = PipelineConfig::default();
        let params = self.parameter_set()?;
        let base = BaParams {
            w0: self.parsed("ba.w0", default.base.w0)?,
            w1: self.parsed("ba.w1", default.base.w1)?,
            w2: self.parsed("ba.w2", default.base.w2)?,
            near_max: self.parsed("ba.near_max", default.base.near_max)?,
            middle_max: self.parsed("ba.middle_max", default.base.middle_max)?,
            ..BaParams::default()
        };
        let depth_default = DepthParams::default();
        let depth = DepthParams {
            roi_half_width: self.parsed("depth.roi_half_width", depth_default.roi_half_width)?,
            roi_half_height: self.parsed("depth.roi_half_height", depth_default.roi_half_height)?,
            histogram_bin: self.parsed("depth.histogram_bin", depth_default.histogram_bin)?,
            min_area: self.parsed("depth.min_area", depth_default.min_area)?,
            max_depth: self.parsed("depth.max_depth", depth_default.max_depth)?,
            max_incidence: self
                .parsed(
                    "depth.max_incidence_deg",
                    depth_default.max_incidence.to_degrees(),
                )?
                .to_radians(),
            ground_normal_cos: self
                .parsed(
                    "depth.ground_normal_tol_deg",
                    depth_default.ground_normal_cos.acos().to_degrees(),
                )?
                .to_radians()
                .cos(),
            ground_offset_tol: self
                .parsed("depth.ground_offset_tol", depth_default.ground_offset_tol)?,
            ransac_iterations: self
                .parsed("depth.ransac_iterations", depth_default.ransac_iterations)?,
            ransac_inlier_tol: self
                .parsed("depth.ransac_inlier_tol", depth_default.ransac_inlier_tol)?,
        };
        let window = WindowConfig {
            keyframe_interval: self
                .parsed("window.keyframe_interval", default.window.keyframe_interval)?,
            standstill_threshold: self.parsed(
                "window.standstill_threshold",
                default.window.standstill_threshold,
            )?,
            window_length: self.parsed("window.length", default.window.window_length)?,
        };
        let solver = SolverConfig {
            max_iterations: self.parsed("solver.max_iterations", default.solver.max_iterations)?,
            cost_tolerance: self.parsed("solver.cost_tolerance", default.solver.cost_tolerance)?,
            gradient_tolerance: self.parsed(
                "solver.gradient_tolerance",
                default.solver.gradient_tolerance,
            )?,
            initial_lambda: self.parsed("solver.initial_lambda", default.solver.initial_lambda)?,
        };
        let window_losses = WindowLosses {
            reprojection: CauchyLoss::new(self.parsed(
                "losses.reprojection_scale",
                default.window_losses.reprojection.scale(),
            )?),
            depth: CauchyLoss::new(
                self.parsed("losses.depth_scale", default.window_losses.depth.scale())?,
            ),
            squared_scale_regularizer: self.parsed(
                "losses.squared_scale_regularizer",
                default.window_losses.squared_scale_regularizer,
            )?,
        };
        let eval_lengths = match self.get("eval.lengths") {
            None => default.eval_lengths,
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| ConfigError::BadValue {
                        key: "eval.lengths".into(),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?,
        };
        Ok(PipelineConfig {
            params,
            base,
            depth,
            window,
            solver,
            window_losses,
            reprojection_scale: self
                .parsed("losses.reprojection_scale", default.reprojection_scale)?,
            epipolar_scale: self.parsed("losses.epipolar_scale", default.epipolar_scale)?,
            eval_lengths,
            eval_step: self.parsed("eval.step", default.eval_step)?,
            seed: self.run_seed()?,
        })
    }

    pub fn ga_config(&self) -> Result<GaConfig, ConfigError> {
        let default = GaConfig::default();
        let mode_raw = self
            .get("ga.mutation_mode")
            .unwrap_or("per-bit")
            .to_string();
        let mutation_mode = match mode_raw.as_str() {
            "per-bit" => MutationMode::PerBit,
            "per-chromosome" => MutationMode::PerChromosome,
            other => {
                return Err(ConfigError::BadValue {
                    key: "ga.mutation_mode".into(),
                    message: format!("unknown mode `{other}` (per-bit | per-chromosome)"),
                })
            }
        };
        Ok(GaConfig {
            population_size: self.parsed("ga.population_size", default.population_size)?,
            generations: self.parsed("ga.generations", default.generations)?,
            mutation_rate: self.parsed("ga.mutation_rate", default.mutation_rate)?,
            crossover_rate: self.parsed("ga.crossover_rate", default.crossover_rate)?,
            elitism_count: self.parsed("ga.elitism", default.elitism_count)?,
            seed: self.parsed("ga.seed", self.run_seed()?)?,
            mutation_mode,
            fitness_ceiling: self.parsed("ga.fitness_ceiling", default.fitness_ceiling)?,
        })
    }

    /// Scene directories of the tuning tasks.
    pub fn ga_tasks(&self) -> Vec<String> {
        match self.get("ga.tasks") {
            None => Vec::new(),
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn eval_align(&self) -> Result<bool, ConfigError> {
        self.parsed("eval.align", false)
    }
}

//! Generate -> run odometry -> evaluate, all in memory, comparing the stock
//! parameters against a tuned set on a scene with outliers and vegetation
//! jitter.

use galvo::backend::WindowConfig;
use galvo::evaluation::kitti_translation_error;
use galvo::ga::{run_ga, GaConfig, ParameterSet};
use galvo::pipeline::{run_odometry, GaTask, PipelineConfig, SceneTaskEvaluator};
use galvo::sim::{generate, SceneConfig, TrajectoryKind};

fn main() {
    let scene_cfg = SceneConfig {
        trajectory: TrajectoryKind::Arc,
        frames: 24,
        landmark_count: 150,
        pixel_noise: 0.4,
        outlier_fraction: 0.12,
        vegetation_fraction: 0.35,
        vegetation_jitter: 2.5,
        seed: 42,
        ..SceneConfig::default()
    };
    let sequence = generate(&scene_cfg).unwrap();

    let pipeline_cfg = PipelineConfig {
        window: WindowConfig {
            window_length: 5,
            ..WindowConfig::default()
        },
        eval_lengths: vec![5.0, 10.0, 15.0],
        eval_step: 2,
        ..PipelineConfig::default()
    };

    // Stock run.
    let run = run_odometry(&sequence.scene, &pipeline_cfg).unwrap();
    let report = kitti_translation_error(
        &run.trajectory,
        &sequence.ground_truth,
        &pipeline_cfg.eval_lengths,
        pipeline_cfg.eval_step,
    )
    .unwrap();
    println!(
        "stock parameters: {:.4}% drift, {:.4} m APE, {} keyframes",
        report.translation_error_percent,
        report.ape_rmse,
        run.keyframe_ids.len()
    );

    // A short tuning run on this scene.
    let evaluator = SceneTaskEvaluator::new(
        vec![GaTask {
            id: "arc".into(),
            scene: sequence.scene.clone(),
            ground_truth: sequence.ground_truth.clone(),
        }],
        pipeline_cfg.clone(),
    )
    .unwrap();
    let ga_cfg = GaConfig {
        population_size: 16,
        generations: 12,
        seed: 1,
        ..GaConfig::default()
    };
    let result = run_ga(ga_cfg, &evaluator).unwrap();
    println!(
        "tuned parameters: {:.4}% drift with {:?}",
        result.best.sigma_avg, result.best.params
    );

    // Re-run the pipeline under the tuned parameters to confirm.
    let tuned_cfg = PipelineConfig {
        params: result.best.params,
        ..pipeline_cfg
    };
    let tuned_run = run_odometry(&sequence.scene, &tuned_cfg).unwrap();
    let tuned_report = kitti_translation_error(
        &tuned_run.trajectory,
        &sequence.ground_truth,
        &tuned_cfg.eval_lengths,
        tuned_cfg.eval_step,
    )
    .unwrap();
    println!(
        "tuned re-run: {:.4}% drift, {:.4} m APE (stock {:.4}%)",
        tuned_report.translation_error_percent,
        tuned_report.ape_rmse,
        report.translation_error_percent
    );
    let stock = ParameterSet::stock();
    println!(
        "stock point was (delta {}, eps {}/{}/{}, mu {})",
        stock.delta, stock.eps_near, stock.eps_middle, stock.eps_far, stock.mu
    );
}

//! Command-line entry point: scene generation, odometry runs, trajectory
//! evaluation, and parameter tuning, all file-based and reproducible from a
//! config plus a seed.

use clap::{Parser, Subcommand};
use galvo::config::ConfigMap;
use galvo::evaluation::{
    ape_rmse_aligned, kitti_translation_error, read_kitti_poses, write_kitti_poses,
};
use galvo::ga::{decode, progress_csv, Checkpoint, GaEngine, ParameterSet};
use galvo::pipeline::{run_odometry, GaTask, SceneTaskEvaluator};
use galvo::sim::{generate, read_scene, write_scene};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "galvo",
    version,
    about = "Lidar-monocular odometry with tuned robustness parameters"
)]
struct Cli {
    /// Flat key-value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for tuning evaluations (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Generate,
    /// Run the odometry pipeline on a scene directory.
    Odometry { scene: PathBuf },
    /// Compare an estimated trajectory against ground truth.
    Evaluate {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Rigidly align the estimate before the absolute-error metric.
        #[arg(long)]
        align: bool,
    },
    /// Tune the five robustness parameters on the configured task scenes.
    Ga {
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn main() {
    match run(Cli::parse()) {
        Ok(()) => {}
        Err(message) => {
            eprintln!("error: {message}");
            std::process::exit(1);
        }
    }
}

fn load_config(cli: &Cli) -> Result<ConfigMap, String> {
    let mut map = match &cli.config {
        None => ConfigMap::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            ConfigMap::parse(&text).map_err(|e| e.to_string())?
        }
    };
    if let Some(seed) = cli.seed {
        map.set("run.seed", seed.to_string());
    }
    if let Some(workers) = cli.workers {
        map.set("run.workers", workers.to_string());
    }
    Ok(map)
}

fn write_manifest(
    out: &Path,
    command: &str,
    map: &ConfigMap,
    status: &str,
    extra: &[(String, String)],
) -> Result<(), String> {
    let mut text = String::new();
    text.push_str(&format!("command = {command}\n"));
    text.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("config_hash = {:016x}\n", map.hash()));
    text.push_str(&format!("status = {status}\n"));
    for (key, value) in extra {
        text.push_str(&format!("{key} = {value}\n"));
    }
    text.push_str("--- resolved config ---\n");
    text.push_str(&map.canonical());
    fs::write(out.join("manifest.txt"), text).map_err(|e| format!("cannot write manifest: {e}"))
}

fn ensure_out(out: &Path) -> Result<(), String> {
    fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))
}

fn format_params(p: &ParameterSet) -> String {
    format!(
        "outlier_rejection_quantile = {}\n\
         max_number_landmarks_near_bin = {}\n\
         max_number_landmarks_middle_bin = {}\n\
         max_number_landmarks_far_bin = {}\n\
         shrubbery_weight = {}\n",
        p.delta, p.eps_near, p.eps_middle, p.eps_far, p.mu
    )
}

fn run(cli: Cli) -> Result<(), String> {
    let map = load_config(&cli)?;
    match &cli.command {
        Command::Generate => cmd_generate(&cli, &map),
        Command::Odometry { scene } => cmd_odometry(&cli, &map, scene),
        Command::Evaluate {
            estimate,
            ground_truth,
            align,
        } => cmd_evaluate(&cli, &map, estimate, ground_truth, *align),
        Command::Ga { resume } => cmd_ga(&cli, &map, resume.as_deref()),
    }
}

fn cmd_generate(cli: &Cli, map: &ConfigMap) -> Result<(), String> {
    let mut cfg = map.scene_config().map_err(|e| e.to_string())?;
    if map.get("scene.seed").is_none() {
        cfg.seed = map.run_seed().map_err(|e| e.to_string())?;
    }
    let sequence = generate(&cfg).map_err(|e| e.to_string())?;
    ensure_out(&cli.out)?;
    write_scene(&cli.out, &sequence).map_err(|e| e.to_string())?;
    let observation_count: usize = sequence
        .scene
        .frames
        .iter()
        .map(|f| f.observations.len())
        .sum();
    write_manifest(
        &cli.out,
        "generate",
        map,
        "ok",
        &[
            ("scene.seed".into(), cfg.seed.to_string()),
            ("frames".into(), sequence.scene.frames.len().to_string()),
            ("landmarks".into(), sequence.landmarks.len().to_string()),
            ("observations".into(), observation_count.to_string()),
            ("outliers".into(), sequence.corrupted.len().to_string()),
        ],
    )?;
    println!(
        "scene written to {}: {} frames, {} landmarks, {} observations ({} outliers)",
        cli.out.display(),
        sequence.scene.frames.len(),
        sequence.landmarks.len(),
        observation_count,
        sequence.corrupted.len()
    );
    Ok(())
}

fn cmd_odometry(cli: &Cli, map: &ConfigMap, scene_dir: &Path) -> Result<(), String> {
    let (scene, _gt) = read_scene(scene_dir).map_err(|e| e.to_string())?;
    let cfg = map.pipeline_config().map_err(|e| e.to_string())?;
    let run = run_odometry(&scene, &cfg).map_err(|e| e.to_string())?;
    ensure_out(&cli.out)?;
    fs::write(
        cli.out.join("trajectory.txt"),
        write_kitti_poses(&run.trajectory),
    )
    .map_err(|e| format!("cannot write trajectory: {e}"))?;
    let status = match &run.failure {
        None => "ok".to_string(),
        Some(message) => format!("failed: {message}"),
    };
    write_manifest(
        &cli.out,
        "odometry",
        map,
        &status,
        &[
            ("scene".into(), scene_dir.display().to_string()),
            ("poses".into(), run.trajectory.len().to_string()),
            ("keyframes".into(), run.keyframe_ids.len().to_string()),
        ],
    )?;
    println!(
        "trajectory with {} poses ({} keyframes) written to {}",
        run.trajectory.len(),
        run.keyframe_ids.len(),
        cli.out.join("trajectory.txt").display()
    );
    match run.failure {
        None => Ok(()),
        Some(message) => Err(format!(
            "pipeline failure (partial trajectory written): {message}"
        )),
    }
}

fn cmd_evaluate(
    cli: &Cli,
    map: &ConfigMap,
    estimate: &Path,
    ground_truth: &Path,
    align_flag: bool,
) -> Result<(), String> {
    let est_text = fs::read_to_string(estimate)
        .map_err(|e| format!("cannot read {}: {e}", estimate.display()))?;
    let gt_text = fs::read_to_string(ground_truth)
        .map_err(|e| format!("cannot read {}: {e}", ground_truth.display()))?;
    let est = read_kitti_poses(&est_text).map_err(|e| e.to_string())?;
    let gt = read_kitti_poses(&gt_text).map_err(|e| e.to_string())?;
    for (name, parsed) in [("estimate", &est), ("ground truth", &gt)] {
        if !parsed.reorthonormalized_lines.is_empty() {
            eprintln!(
                "warning: {name}: re-orthonormalized rotations on lines {:?}",
                parsed.reorthonormalized_lines
            );
        }
    }
    let cfg = map.pipeline_config().map_err(|e| e.to_string())?;
    let align = align_flag || map.eval_align().map_err(|e| e.to_string())?;
    let mut report = kitti_translation_error(
        &est.trajectory,
        &gt.trajectory,
        &cfg.eval_lengths,
        cfg.eval_step,
    )
    .map_err(|e| e.to_string())?;
    if align {
        report.ape_rmse =
            ape_rmse_aligned(&est.trajectory, &gt.trajectory).map_err(|e| e.to_string())?;
    }
    ensure_out(&cli.out)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| format!("cannot serialize report: {e}"))?;
    fs::write(cli.out.join("report.json"), format!("{json}\n"))
        .map_err(|e| format!("cannot write report.json: {e}"))?;
    fs::write(cli.out.join("report.txt"), format!("{report}"))
        .map_err(|e| format!("cannot write report.txt: {e}"))?;
    write_manifest(&cli.out, "evaluate", map, "ok", &[])?;
    print!("{report}");
    Ok(())
}

fn cmd_ga(cli: &Cli, map: &ConfigMap, resume: Option<&Path>) -> Result<(), String> {
    let task_dirs = map.ga_tasks();
    if task_dirs.is_empty() {
        return Err("no tuning tasks configured (set `ga.tasks = dir1, dir2`)".into());
    }
    let pipeline_cfg = map.pipeline_config().map_err(|e| e.to_string())?;
    let mut tasks = Vec::new();
    for dir in &task_dirs {
        let path = Path::new(dir);
        let (scene, gt) = read_scene(path).map_err(|e| format!("{dir}: {e}"))?;
        let ground_truth =
            gt.ok_or_else(|| format!("{dir}: scene has no ground-truth poses.txt"))?;
        let id = path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.clone());
        tasks.push(GaTask {
            id,
            scene,
            ground_truth,
        });
    }
    let evaluator =
        SceneTaskEvaluator::new(tasks, pipeline_cfg.clone()).map_err(|e| e.to_string())?;

    let mut engine = match resume {
        None => {
            let ga_cfg = map.ga_config().map_err(|e| e.to_string())?;
            GaEngine::new(ga_cfg).map_err(|e| e.to_string())?
        }
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read checkpoint {}: {e}", path.display()))?;
            let checkpoint: Checkpoint =
                serde_json::from_str(&text).map_err(|e| format!("bad checkpoint: {e}"))?;
            let mut engine = GaEngine::from_checkpoint(checkpoint).map_err(|e| e.to_string())?;
            // The checkpoint carries the engine state; the live config sets
            // how far to run.
            let target = map.ga_config().map_err(|e| e.to_string())?.generations;
            engine.extend_generations(target);
            engine
        }
    };

    ensure_out(&cli.out)?;
    let workers = map.workers().map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| format!("cannot build worker pool: {e}"))?;

    let generations = engine.config().generations;
    while engine.generation() < generations {
        let stats = pool.install(|| engine.step(&evaluator));
        let checkpoint = engine.checkpoint();
        let json = serde_json::to_string(&checkpoint)
            .map_err(|e| format!("cannot serialize checkpoint: {e}"))?;
        fs::write(cli.out.join("checkpoint.json"), json)
            .map_err(|e| format!("cannot write checkpoint: {e}"))?;
        fs::write(cli.out.join("history.csv"), progress_csv(engine.records()))
            .map_err(|e| format!("cannot write history: {e}"))?;
        println!(
            "generation {:>3}: best {:.6} mean {:.6} worst {:.6}",
            stats.generation, stats.best, stats.mean, stats.worst
        );
    }

    let (best_chromosome, best) = engine.best().cloned().expect("generations > 0");
    let stock = ParameterSet::stock();
    let stock_sigmas = evaluator.sigmas(&stock);
    let stock_avg =
        stock_sigmas.iter().map(|(_, s)| s).sum::<f64>() / stock_sigmas.len().max(1) as f64;

    let mut best_txt = String::new();
    best_txt.push_str(&format!("chromosome = {}\n", best_chromosome.to_hex()));
    best_txt.push_str(&format!("fitness = {}\n", best.fitness));
    best_txt.push_str(&format!("sigma_avg = {}\n", best.sigma_avg));
    for (task, sigma) in &best.sigma_per_sequence {
        best_txt.push_str(&format!("sigma.{task} = {sigma}\n"));
    }
    best_txt.push_str("--- tuned parameters ---\n");
    best_txt.push_str(&format_params(&decode(&best_chromosome)));
    best_txt.push_str("--- stock parameters ---\n");
    best_txt.push_str(&format_params(&stock));
    best_txt.push_str(&format!("stock sigma_avg = {stock_avg}\n"));
    for (task, sigma) in &stock_sigmas {
        best_txt.push_str(&format!("stock sigma.{task} = {sigma}\n"));
    }
    fs::write(cli.out.join("best.txt"), &best_txt)
        .map_err(|e| format!("cannot write best.txt: {e}"))?;
    write_manifest(
        &cli.out,
        "ga",
        map,
        "ok",
        &[
            ("generations".into(), generations.to_string()),
            ("best_fitness".into(), best.fitness.to_string()),
            ("best_sigma_avg".into(), best.sigma_avg.to_string()),
            ("stock_sigma_avg".into(), stock_avg.to_string()),
        ],
    )?;
    println!(
        "best sigma_avg {:.4}% (stock {:.4}%), parameters written to {}",
        best.sigma_avg,
        stock_avg,
        cli.out.join("best.txt").display()
    );
    Ok(())
}

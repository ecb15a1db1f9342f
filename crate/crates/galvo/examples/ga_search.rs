//! The genetic engine on a cheap synthetic objective: chromosome codec,
//! ranked parents, uniform crossover, flip mutation, checkpointed resume.

use galvo::ga::{decode, encode, run_ga, Chromosome, GaConfig, GaEngine, ParameterSet};

fn main() {
    // Error grows quadratically (in quantization steps) around a target.
    let target = ParameterSet {
        delta: 0.75,
        eps_near: 500,
        eps_middle: 250,
        eps_far: 800,
        mu: 0.4,
    };
    let evaluator = move |p: &ParameterSet, _seed: u64| {
        let d = [
            (p.delta - target.delta) * 1000.0,
            p.eps_near as f64 - target.eps_near as f64,
            p.eps_middle as f64 - target.eps_middle as f64,
            p.eps_far as f64 - target.eps_far as f64,
            (p.mu - target.mu) * 1000.0,
        ];
        vec![(
            "toy".to_string(),
            1.0 + d.iter().map(|x| x * x).sum::<f64>(),
        )]
    };

    let chromosome = encode(&target).unwrap();
    println!(
        "target encodes to {} and decodes back to {:?}",
        chromosome.to_hex(),
        decode(&chromosome)
    );

    let cfg = GaConfig {
        population_size: 50,
        generations: 40,
        seed: 5,
        ..GaConfig::default()
    };
    let result = run_ga(cfg.clone(), &evaluator).unwrap();
    for stats in result.history.iter().step_by(8) {
        println!(
            "generation {:>2}: best {:.6} mean {:.6}",
            stats.generation, stats.best, stats.mean
        );
    }
    println!(
        "best found: {:?} (fitness {:.6})",
        result.best.params, result.best.fitness
    );

    // Stop after 10 generations, serialize, resume: same final records.
    let mut engine = GaEngine::new(cfg).unwrap();
    for _ in 0..10 {
        engine.step(&evaluator);
    }
    let json = serde_json::to_string(&engine.checkpoint()).unwrap();
    let mut resumed = GaEngine::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
    let resumed_result = resumed.run(&evaluator);
    println!(
        "resume from generation 10 reproduces the run: {}",
        resumed_result.records == result.records
    );
    let _ = Chromosome::from_hex(&result.best_chromosome.to_hex()).unwrap();
}

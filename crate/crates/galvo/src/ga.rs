//! Genetic search over the five robustness parameters.
//!
//! Parameters are packed into a 55-bit binary chromosome (11 bits per field,
//! most significant bit first, in the order delta, eps_near, eps_middle,
//! eps_far, mu). Parents are drawn by linear ranking, children by uniform
//! crossover and per-bit flip mutation, and fitness is the inverse of the
//! average translation error over the configured evaluation tasks.

use crate::backend::BaParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GaError {
    #[error("invalid GA config: {0}")]
    InvalidConfig(String),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

const FIELD_BITS: u32 = 11;
const FIELD_COUNT: u32 = 5;
pub const CHROMOSOME_BITS: u32 = FIELD_BITS * FIELD_COUNT;
const MASK_55: u64 = (1u64 << CHROMOSOME_BITS) - 1;
const FIELD_MASK: u64 = (1u64 << FIELD_BITS) - 1;

/// 55-bit binary chromosome. Bit 0 is the first (most significant) bit of
/// the delta field; fields follow in the order delta, eps_near, eps_middle,
/// eps_far, mu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chromosome {
    bits: u64,
}

impl Chromosome {
    pub fn from_bits(bits: u64) -> Self {
        Chromosome {
            bits: bits & MASK_55,
        }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Chromosome {
            bits: rng.random::<u64>() & MASK_55,
        }
    }

    pub fn bit(&self, index: u32) -> bool {
        debug_assert!(index < CHROMOSOME_BITS);
        (self.bits >> (CHROMOSOME_BITS - 1 - index)) & 1 == 1
    }

    fn field(&self, field: u32) -> u64 {
        (self.bits >> (CHROMOSOME_BITS - FIELD_BITS * (field + 1))) & FIELD_MASK
    }

    fn with_field(bits: u64, field: u32, value: u64) -> u64 {
        let shift = CHROMOSOME_BITS - FIELD_BITS * (field + 1);
        (bits & !(FIELD_MASK << shift)) | ((value & FIELD_MASK) << shift)
    }

    /// 14 hex digits, zero padded.
    pub fn to_hex(self) -> String {
        format!("{:014x}", self.bits)
    }

    pub fn from_hex(s: &str) -> Result<Self, GaError> {
        let bits = u64::from_str_radix(s, 16)
            .map_err(|e| GaError::Checkpoint(format!("bad chromosome hex {s}: {e}")))?;
        if bits > MASK_55 {
            return Err(GaError::Checkpoint(format!(
                "chromosome {s} exceeds 55 bits"
            )));
        }
        Ok(Chromosome { bits })
    }
}

/// Decoded search point: the five tuned parameters. `delta` and `mu` live on
/// a 0.001 grid in [0, 0.999]; the bin caps are integers in [0, 999].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub delta: f64,
    pub eps_near: u32,
    pub eps_middle: u32,
    pub eps_far: u32,
    pub mu: f64,
}

impl ParameterSet {
    /// Stock operating point used when no tuning has run.
    pub fn stock() -> Self {
        ParameterSet {
            delta: 0.95,
            eps_near: 400,
            eps_middle: 400,
            eps_far: 400,
            mu: 0.9,
        }
    }

    /// Merges the tuned fields into a full backend parameter block.
    pub fn apply_to(&self, base: &BaParams) -> BaParams {
        BaParams {
            delta: self.delta,
            eps_near: self.eps_near,
            eps_middle: self.eps_middle,
            eps_far: self.eps_far,
            mu: self.mu,
            ..*base
        }
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::stock()
    }
}

fn decode_field(raw: u64) -> u64 {
    // 11 bits (0..=2047) onto 1000 target codes, total over all inputs.
    raw * 1000 >> FIELD_BITS
}

fn encode_field(code: u64) -> u64 {
    // Smallest raw value that decodes back to `code`.
    (code * 2048).div_ceil(1000)
}

/// Total decoding: every 55-bit string maps to an in-range parameter set.
pub fn decode(c: &Chromosome) -> ParameterSet {
    ParameterSet {
        delta: decode_field(c.field(0)) as f64 / 1000.0,
        eps_near: decode_field(c.field(1)) as u32,
        eps_middle: decode_field(c.field(2)) as u32,
        eps_far: decode_field(c.field(3)) as u32,
        mu: decode_field(c.field(4)) as f64 / 1000.0,
    }
}

fn unit_code(name: &str, value: f64) -> Result<u64, GaError> {
    let scaled = value * 1000.0;
    let code = scaled.round();
    if (scaled - code).abs() > 1e-6 {
        return Err(GaError::OutOfRange(format!(
            "{name} {value} is not on the 0.001 grid"
        )));
    }
    if !(0.0..=999.0).contains(&code) {
        return Err(GaError::OutOfRange(format!(
            "{name} {value} outside [0, 0.999]"
        )));
    }
    Ok(code as u64)
}

/// Inverse of [`decode`] on representable parameter sets.
pub fn encode(p: &ParameterSet) -> Result<Chromosome, GaError> {
    let mut bits = 0u64;
    bits = Chromosome::with_field(bits, 0, encode_field(unit_code("delta", p.delta)?));
    for (field, (name, eps)) in [
        ("eps_near", p.eps_near),
        ("eps_middle", p.eps_middle),
        ("eps_far", p.eps_far),
    ]
    .into_iter()
    .enumerate()
    {
        if eps > 999 {
            return Err(GaError::OutOfRange(format!(
                "{name} {eps} outside [0, 999]"
            )));
        }
        bits = Chromosome::with_field(bits, field as u32 + 1, encode_field(eps as u64));
    }
    bits = Chromosome::with_field(bits, 4, encode_field(unit_code("mu", p.mu)?));
    Ok(Chromosome { bits })
}

/// Linear-ranking parent selection with replacement: the worst individual
/// carries weight 1, the best weight N, ties share their average rank, so the
/// distribution depends on fitness only through the ordering.
pub fn rank_select(fitnesses: &[f64], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(
        !fitnesses.is_empty(),
        "rank selection over an empty population"
    );
    let n = fitnesses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        fitnesses[a]
            .partial_cmp(&fitnesses[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    // tie-averaged ranks, 1-based ascending
    let mut weights = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && fitnesses[order[j + 1]] == fitnesses[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            weights[idx] = avg_rank;
        }
        i = j + 1;
    }
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.random_range(0.0..total);
            cumulative.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect()
}

/// Uniform crossover: each bit position swaps between the children with
/// probability one half, so per position the children's bits are exactly the
/// parents' bits.
pub fn uniform_crossover(
    a: &Chromosome,
    b: &Chromosome,
    rng: &mut impl Rng,
) -> (Chromosome, Chromosome) {
    let mut swap_mask = 0u64;
    for _ in 0..CHROMOSOME_BITS {
        swap_mask = (swap_mask << 1) | rng.random_bool(0.5) as u64;
    }
    let keep = !swap_mask & MASK_55;
    let child1 = (a.bits & keep) | (b.bits & swap_mask);
    let child2 = (b.bits & keep) | (a.bits & swap_mask);
    (Chromosome { bits: child1 }, Chromosome { bits: child2 })
}

/// How "mutation rate" is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationMode {
    /// Each bit flips independently with the configured probability.
    PerBit,
    /// With the configured probability, one uniformly chosen bit flips.
    PerChromosome,
}

/// Independent per-bit flips at probability `rate`.
pub fn flip_mutation(c: &Chromosome, rate: f64, rng: &mut impl Rng) -> Chromosome {
    let mut bits = c.bits;
    for i in 0..CHROMOSOME_BITS {
        if rng.random::<f64>() < rate {
            bits ^= 1u64 << (CHROMOSOME_BITS - 1 - i);
        }
    }
    Chromosome { bits }
}

fn mutate(c: &Chromosome, cfg: &GaConfig, rng: &mut impl Rng) -> Chromosome {
    match cfg.mutation_mode {
        MutationMode::PerBit => flip_mutation(c, cfg.mutation_rate, rng),
        MutationMode::PerChromosome => {
            let mut bits = c.bits;
            if rng.random::<f64>() < cfg.mutation_rate {
                let i = rng.random_range(0..CHROMOSOME_BITS);
                bits ^= 1u64 << (CHROMOSOME_BITS - 1 - i);
            }
            Chromosome { bits }
        }
    }
}

/// Engine controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elitism_count: usize,
    pub seed: u64,
    pub mutation_mode: MutationMode,
    /// Fitness assigned when a task returns a degenerate (zero or
    /// non-finite) translation error.
    pub fitness_ceiling: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 50,
            generations: 50,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            elitism_count: 1,
            seed: 0,
            mutation_mode: MutationMode::PerBit,
            fitness_ceiling: 1e6,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population_size < 2 {
            return Err(GaError::InvalidConfig(
                "population size must be at least 2".into(),
            ));
        }
        if self.generations == 0 {
            return Err(GaError::InvalidConfig(
                "generation count must be positive".into(),
            ));
        }
        for (name, r) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(GaError::InvalidConfig(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.elitism_count > self.population_size {
            return Err(GaError::InvalidConfig(
                "elitism count exceeds population".into(),
            ));
        }
        if !(self.fitness_ceiling > 0.0) {
            return Err(GaError::InvalidConfig(
                "fitness ceiling must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fitness result of one evaluated parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub params: ParameterSet,
    /// Translation error (percent) per evaluation task.
    pub sigma_per_sequence: BTreeMap<String, f64>,
    /// Arithmetic mean of the per-task errors.
    pub sigma_avg: f64,
    /// `1 / sigma_avg`, or the configured ceiling when clamped.
    pub fitness: f64,
    /// Set when a degenerate error forced the ceiling.
    pub clamped: bool,
}

/// An evaluation backend: maps a parameter set (plus a derived seed) to one
/// translation error per task. Implementations must be thread safe; the
/// engine may evaluate a generation on a worker pool.
pub trait FitnessFn: Sync {
    fn evaluate(&self, params: &ParameterSet, eval_seed: u64) -> Vec<(String, f64)>;
}

impl<F> FitnessFn for F
where
    F: Fn(&ParameterSet, u64) -> Vec<(String, f64)> + Sync,
{
    fn evaluate(&self, params: &ParameterSet, eval_seed: u64) -> Vec<(String, f64)> {
        self(params, eval_seed)
    }
}

/// Runs the evaluator and forms the inverse-average-error fitness, clamping
/// degenerate errors to the ceiling instead of propagating infinities.
pub fn evaluate_fitness<E: FitnessFn + ?Sized>(
    params: &ParameterSet,
    evaluator: &E,
    eval_seed: u64,
    fitness_ceiling: f64,
) -> FitnessRecord {
    let sigmas = evaluator.evaluate(params, eval_seed);
    let sigma_per_sequence: BTreeMap<String, f64> = sigmas.into_iter().collect();
    let n = sigma_per_sequence.len().max(1) as f64;
    let sigma_avg = sigma_per_sequence.values().sum::<f64>() / n;
    let degenerate = sigma_per_sequence.is_empty()
        || sigma_per_sequence
            .values()
            .any(|s| !s.is_finite() || *s <= 0.0);
    let (fitness, clamped) = if degenerate {
        (fitness_ceiling, true)
    } else {
        (
            (1.0 / sigma_avg).min(fitness_ceiling),
            1.0 / sigma_avg > fitness_ceiling,
        )
    };
    FitnessRecord {
        params: *params,
        sigma_per_sequence,
        sigma_avg,
        fitness,
        clamped,
    }
}

/// One evaluated individual in the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub generation: usize,
    pub index: usize,
    pub chromosome: Chromosome,
    pub fitness: FitnessRecord,
}

/// Per-generation fitness summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub best_index: usize,
}

/// Final result: best individual ever seen plus the full evaluation history.
#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub best_chromosome: Chromosome,
    pub best: FitnessRecord,
    pub history: Vec<GenerationStats>,
    pub records: Vec<IndividualRecord>,
}

/// Serializable engine state; resuming from it reproduces the uninterrupted
/// run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: GaConfig,
    pub generation: usize,
    pub population: Vec<String>,
    pub rng_word_pos: u128,
    pub best: Option<(String, FitnessRecord)>,
    pub history: Vec<GenerationStats>,
    pub records: Vec<IndividualRecord>,
}

/// Seed for the pipeline evaluation of one individual, derived from the run
/// seed, generation, and population index (splitmix-style mixing).
pub fn derive_eval_seed(run_seed: u64, generation: usize, index: usize) -> u64 {
    let mut x = run_seed
        ^ (generation as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (index as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Generational GA engine with elitism. Operator randomness comes from one
/// sequential stream; evaluations only see seeds derived from (run seed,
/// generation, index), so parallel and serial execution produce identical
/// histories.
pub struct GaEngine {
    cfg: GaConfig,
    rng: ChaCha8Rng,
    population: Vec<Chromosome>,
    generation: usize,
    history: Vec<GenerationStats>,
    records: Vec<IndividualRecord>,
    best: Option<(Chromosome, FitnessRecord)>,
}

impl GaEngine {
    pub fn new(cfg: GaConfig) -> Result<Self, GaError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let population = (0..cfg.population_size)
            .map(|_| Chromosome::random(&mut rng))
            .collect();
        Ok(GaEngine {
            cfg,
            rng,
            population,
            generation: 0,
            history: Vec::new(),
            records: Vec::new(),
            best: None,
        })
    }

    pub fn config(&self) -> &GaConfig {
        &self.cfg
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn history(&self) -> &[GenerationStats] {
        &self.history
    }

    pub fn records(&self) -> &[IndividualRecord] {
        &self.records
    }

    pub fn best(&self) -> Option<&(Chromosome, FitnessRecord)> {
        self.best.as_ref()
    }

    /// Raises the target generation count, for resuming a checkpoint taken
    /// before the run finished.
    pub fn extend_generations(&mut self, generations: usize) {
        if generations > self.cfg.generations {
            self.cfg.generations = generations;
        }
    }

    /// Evaluates the current population, logs it, and breeds the next one.
    pub fn step<E: FitnessFn + ?Sized>(&mut self, evaluator: &E) -> GenerationStats {
        let generation = self.generation;
        let cfg = &self.cfg;
        let results: Vec<FitnessRecord> = self
            .population
            .par_iter()
            .enumerate()
            .map(|(index, chromosome)| {
                let params = decode(chromosome);
                let seed = derive_eval_seed(cfg.seed, generation, index);
                evaluate_fitness(&params, evaluator, seed, cfg.fitness_ceiling)
            })
            .collect();

        let fitnesses: Vec<f64> = results.iter().map(|r| r.fitness).collect();
        let mut best_index = 0;
        for (i, &f) in fitnesses.iter().enumerate() {
            if f > fitnesses[best_index] {
                best_index = i;
            }
        }
        let stats = GenerationStats {
            generation,
            best: fitnesses[best_index],
            mean: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
            worst: fitnesses.iter().cloned().fold(f64::INFINITY, f64::min),
            best_index,
        };
        self.history.push(stats.clone());
        for (index, fitness) in results.iter().enumerate() {
            self.records.push(IndividualRecord {
                generation,
                index,
                chromosome: self.population[index],
                fitness: fitness.clone(),
            });
        }
        let improved = match &self.best {
            None => true,
            Some((_, incumbent)) => fitnesses[best_index] > incumbent.fitness,
        };
        if improved {
            self.best = Some((self.population[best_index], results[best_index].clone()));
        }

        // Breed the next generation: elites carry over unchanged, the rest
        // come from ranked parents via crossover and mutation.
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&a, &b| {
            fitnesses[b]
                .partial_cmp(&fitnesses[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut next: Vec<Chromosome> = order
            .iter()
            .take(self.cfg.elitism_count)
            .map(|&i| self.population[i])
            .collect();
        while next.len() < self.cfg.population_size {
            let parents = rank_select(&fitnesses, 2, &mut self.rng);
            let (pa, pb) = (self.population[parents[0]], self.population[parents[1]]);
            let (c1, c2) = if self.rng.random::<f64>() < self.cfg.crossover_rate {
                uniform_crossover(&pa, &pb, &mut self.rng)
            } else {
                (pa, pb)
            };
            next.push(mutate(&c1, &self.cfg, &mut self.rng));
            if next.len() < self.cfg.population_size {
                next.push(mutate(&c2, &self.cfg, &mut self.rng));
            }
        }
        self.population = next;
        self.generation += 1;
        stats
    }

    /// Runs the remaining generations and returns the best-ever individual
    /// with the full history.
    pub fn run<E: FitnessFn + ?Sized>(&mut self, evaluator: &E) -> GaResult {
        while self.generation < self.cfg.generations {
            self.step(evaluator);
        }
        let (chromosome, record) = self
            .best
            .clone()
            .expect("at least one generation was evaluated");
        GaResult {
            best_chromosome: chromosome,
            best: record,
            history: self.history.clone(),
            records: self.records.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            config: self.cfg.clone(),
            generation: self.generation,
            population: self.population.iter().map(|c| c.to_hex()).collect(),
            rng_word_pos: self.rng.get_word_pos(),
            best: self.best.as_ref().map(|(c, r)| (c.to_hex(), r.clone())),
            history: self.history.clone(),
            records: self.records.clone(),
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self, GaError> {
        if cp.version != 1 {
            return Err(GaError::Checkpoint(format!(
                "unsupported version {}",
                cp.version
            )));
        }
        cp.config.validate()?;
        if cp.population.len() != cp.config.population_size {
            return Err(GaError::Checkpoint("population size mismatch".into()));
        }
        let population = cp
            .population
            .iter()
            .map(|s| Chromosome::from_hex(s))
            .collect::<Result<Vec<_>, _>>()?;
        let best = match cp.best {
            None => None,
            Some((hex, record)) => Some((Chromosome::from_hex(&hex)?, record)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cp.config.seed);
        rng.set_word_pos(cp.rng_word_pos);
        Ok(GaEngine {
            cfg: cp.config,
            rng,
            population,
            generation: cp.generation,
            history: cp.history,
            records: cp.records,
            best,
        })
    }
}

/// Convenience wrapper: fresh engine, full run.
pub fn run_ga<E: FitnessFn + ?Sized>(cfg: GaConfig, evaluator: &E) -> Result<GaResult, GaError> {
    let mut engine = GaEngine::new(cfg)?;
    Ok(engine.run(evaluator))
}

/// CSV progress log: one row per evaluated individual with the decoded
/// parameters and per-task errors. Task columns are the sorted union of all
/// task ids seen.
pub fn progress_csv(records: &[IndividualRecord]) -> String {
    let mut tasks: Vec<String> = records
        .iter()
        .flat_map(|r| r.fitness.sigma_per_sequence.keys().cloned())
        .collect();
    tasks.sort();
    tasks.dedup();
    let mut out = String::from("generation,index,chromosome,delta,eps_near,eps_middle,eps_far,mu");
    for t in &tasks {
        out.push_str(&format!(",sigma_{t}"));
    }
    out.push_str(",sigma_avg,fitness,clamped\n");
    for r in records {
        let p = &r.fitness.params;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.generation,
            r.index,
            r.chromosome.to_hex(),
            p.delta,
            p.eps_near,
            p.eps_middle,
            p.eps_far,
            p.mu
        ));
        for t in &tasks {
            match r.fitness.sigma_per_sequence.get(t) {
                Some(s) => out.push_str(&format!(",{s}")),
                None => out.push(','),
            }
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            r.fitness.sigma_avg, r.fitness.fitness, r.fitness.clamped
        ));
    }
    out
}

//! Multi-task training: task sampling, fitness evaluation with context
//! resets, the NSGA-II generation loop and multi-seed batches.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, GenomeCheckpoint, PopulationCheckpoint};
use crate::config::ExperimentConfig;
use crate::emo::{
    assign_rank_and_crowding, fast_non_dominated_sort, polynomial_mutation, sbx_crossover, select_survivors,
    select_survivors_tournament, tournament_dcd, FitnessPair, Individual, SurvivalMode,
};
use crate::env::{run_episode, PhysicsBase, PhysicsParam, TaskParams, WorldConfig};
use crate::error::{Error, Result};
use crate::genome::{GeneBounds, Genome};
use crate::nets::{decode, genome_length, ArchitectureKind, ArchitectureSpec, LstmState, Phenotype};
use crate::rngstate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub arch: ArchitectureKind,
    pub seed: u64,
    /// Which parameter each training task perturbs, in task order.
    pub tasks: Vec<PhysicsParam>,
    pub n_episodes: usize,
    /// Relative half-width of the uniform perturbation around the base value.
    pub perturb: f64,
    pub base: PhysicsBase,
    pub mu: usize,
    pub lambda: usize,
    pub n_gen: usize,
    pub pipes_max: f64,
    pub hits_max: f64,
    /// Evaluation threads; 0 picks the number of available cores.
    pub workers: usize,
    /// Re-evaluate survivors on every generation's fresh task set.
    pub reevaluate_parents: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            arch: ArchitectureKind::CS,
            seed: 1,
            tasks: PhysicsParam::ALL.to_vec(),
            n_episodes: 5,
            perturb: 0.2,
            base: PhysicsBase::default(),
            mu: 96,
            lambda: 96,
            n_gen: 2500,
            pipes_max: 22.0,
            hits_max: 0.01,
            workers: 0,
            reevaluate_parents: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("at least one training task is required"));
        }
        if self.n_episodes == 0 {
            return Err(Error::config("n_episodes must be positive"));
        }
        if !(0.0..1.0).contains(&self.perturb) {
            return Err(Error::config(format!("perturb must lie in [0, 1), got {}", self.perturb)));
        }
        if self.mu < 2 || self.mu % 2 != 0 {
            return Err(Error::config(format!("mu must be even and at least 2, got {}", self.mu)));
        }
        if self.lambda != self.mu {
            return Err(Error::config(format!(
                "lambda ({}) must equal mu ({})",
                self.lambda, self.mu
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed must fit in a signed 64-bit integer"));
        }
        self.base.task(0).validate()
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::new(self.arch)
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub eta_c: f64,
    pub eta_m: f64,
    pub p_crossover: f64,
    /// Per-gene mutation probability; `1 / genome_length` when unset.
    pub p_gene: Option<f64>,
    pub gene_lo: f64,
    pub gene_hi: f64,
    pub init_lo: f64,
    pub init_hi: f64,
    pub survival: SurvivalMode,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            eta_c: 20.0,
            eta_m: 20.0,
            p_crossover: 0.9,
            p_gene: None,
            gene_lo: -10.0,
            gene_hi: 10.0,
            init_lo: -1.0,
            init_hi: 1.0,
            survival: SurvivalMode::Truncation,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bounds = self.bounds()?;
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return Err(Error::config("distribution indices must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.p_crossover) {
            return Err(Error::config("p_crossover must lie in [0, 1]"));
        }
        if let Some(p) = self.p_gene {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("p_gene must lie in [0, 1]"));
            }
        }
        if !(self.init_lo <= self.init_hi && bounds.contains(self.init_lo) && bounds.contains(self.init_hi)) {
            return Err(Error::config("initialisation range must lie inside the gene bounds"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<GeneBounds> {
        GeneBounds::new(self.gene_lo, self.gene_hi)
    }

    pub fn p_gene_for(&self, genome_len: usize) -> f64 {
        self.p_gene.unwrap_or(1.0 / genome_len as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a population checkpoint every this many generations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/run"), checkpoint_every: 50 }
    }
}

/// The episodes of one task: only `kind` deviates from the base physics.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBlock {
    pub kind: PhysicsParam,
    pub episodes: Vec<TaskParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskParamSet {
    pub blocks: Vec<TaskBlock>,
}

impl TaskParamSet {
    pub fn episode_count(&self) -> usize {
        self.blocks.iter().map(|b| b.episodes.len()).sum()
    }
}

fn uniform_draws<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

fn perturbed_range(base: f64, perturb: f64) -> (f64, f64) {
    let (a, b) = (base * (1.0 - perturb), base * (1.0 + perturb));
    (a.min(b), a.max(b))
}

/// Draws episode seeds and one perturbed value per parameter and episode,
/// then assembles one block per configured task.
///
/// The draws are made in a fixed order (seeds, flap, gravity, forward, drag)
/// whatever the task list, and episode `e` of every task shares seed `e`.
pub fn prepare_task_params<R: Rng + ?Sized>(cfg: &TrainingConfig, rng: &mut R) -> TaskParamSet {
    let n = cfg.n_episodes;
    let seeds: Vec<u32> = (0..n).map(|_| rng.random()).collect();
    let mut draws = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for p in PhysicsParam::ALL {
        let (lo, hi) = perturbed_range(cfg.base.get(p), cfg.perturb);
        draws[p.index()] = uniform_draws(rng, lo, hi, n);
    }
    let blocks = cfg
        .tasks
        .iter()
        .map(|&kind| TaskBlock {
            kind,
            episodes: (0..n)
                .map(|e| {
                    let mut tp = cfg.base.task(seeds[e]);
                    tp.set(kind, draws[kind.index()][e]);
                    tp
                })
                .collect(),
        })
        .collect();
    TaskParamSet { blocks }
}

/// Per-episode detail of one fitness evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub task: usize,
    pub episode: usize,
    pub pipes: u32,
    pub hits: u32,
    /// Context memory right before the episode started (C and CS only).
    pub context_at_start: Option<LstmState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn fitness(&self) -> FitnessPair {
        let n = self.episodes.len().max(1) as f64;
        let pipes: f64 = self.episodes.iter().map(|e| f64::from(e.pipes)).sum();
        let hits: f64 = self.episodes.iter().map(|e| f64::from(e.hits)).sum();
        FitnessPair::new(pipes / n, hits / n)
    }
}

/// Runs every episode of `tps`: the context is zeroed at the start of each
/// task and carried from episode to episode inside it.
pub fn evaluate_phenotype(
    net: &mut Phenotype,
    tps: &TaskParamSet,
    wc: &WorldConfig,
    instrument: bool,
) -> Result<EvalReport> {
    let mut episodes = Vec::with_capacity(tps.episode_count());
    for (task, block) in tps.blocks.iter().enumerate() {
        net.reset_context();
        for (episode, tp) in block.episodes.iter().enumerate() {
            let context_at_start = if instrument { net.context_state().cloned() } else { None };
            let out = run_episode(net, tp, wc, false)?;
            episodes.push(EpisodeRecord { task, episode, pipes: out.pipes, hits: out.hits, context_at_start });
        }
    }
    Ok(EvalReport { episodes })
}

/// Mean pipes and mean hits over all episodes of `tps`.
pub fn eval_fitness(
    genome: &Genome,
    spec: &ArchitectureSpec,
    tps: &TaskParamSet,
    wc: &WorldConfig,
) -> Result<FitnessPair> {
    let mut net = decode(genome, spec)?;
    Ok(evaluate_phenotype(&mut net, tps, wc, false)?.fitness())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluations: usize,
    pub best_pipes: f64,
    pub median_pipes: f64,
    pub best_hits: f64,
    pub median_hits: f64,
    pub front0_size: usize,
    /// Offspring of this generation meeting both stop thresholds.
    pub qualified: usize,
}

pub const GENERATIONS_HEADER: &str =
    "generation,evaluations,best_pipes,median_pipes,best_hits,median_hits,front0_size,qualified";

impl GenerationStats {
    fn compute(generation: usize, evaluations: usize, pop: &[Individual], qualified: usize) -> Self {
        let fitness: Vec<FitnessPair> = pop.iter().map(Individual::fitness).collect();
        let mut pipes: Vec<f64> = fitness.iter().map(|f| f.pipes).collect();
        let mut hits: Vec<f64> = fitness.iter().map(|f| f.hits).collect();
        pipes.sort_by(f64::total_cmp);
        hits.sort_by(f64::total_cmp);
        GenerationStats {
            generation,
            evaluations,
            best_pipes: *pipes.last().expect("empty population"),
            median_pipes: median(&pipes),
            best_hits: hits[0],
            median_hits: median(&hits),
            front0_size: fast_non_dominated_sort(&fitness)[0].len(),
            qualified,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.generation,
            self.evaluations,
            self.best_pipes,
            self.median_pipes,
            self.best_hits,
            self.median_hits,
            self.front0_size,
            self.qualified
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::corrupt(format!("malformed generation row {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(GenerationStats {
            generation: int(f[0])?,
            evaluations: int(f[1])?,
            best_pipes: real(f[2])?,
            median_pipes: real(f[3])?,
            best_hits: real(f[4])?,
            median_hits: real(f[5])?,
            front0_size: int(f[6])?,
            qualified: int(f[7])?,
        })
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Renders generation statistics as the `generations.csv` text.
pub fn generations_csv(stats: &[GenerationStats]) -> String {
    let mut out = String::from(GENERATIONS_HEADER);
    out.push('\n');
    for s in stats {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct ParetoArchive {
    pub seed: u64,
    pub arch: ArchitectureKind,
    /// Final parent population, with rank and crowding from the last survival step.
    pub population: Vec<Individual>,
    pub generations: Vec<GenerationStats>,
    pub stopped_early: bool,
    /// Best qualifying offspring of the stopping generation, if any.
    pub champion: Option<Individual>,
}

impl ParetoArchive {
    pub fn front0(&self) -> Vec<&Individual> {
        let fitness: Vec<FitnessPair> = self.population.iter().map(Individual::fitness).collect();
        fast_non_dominated_sort(&fitness)[0].iter().map(|&i| &self.population[i]).collect()
    }

    /// The champion when one exists, otherwise the front-0 member with the
    /// largest `pipes - hits` (ties to more pipes).
    pub fn select_best(&self) -> &Individual {
        if let Some(c) = &self.champion {
            return c;
        }
        self.front0()
            .into_iter()
            .max_by(|a, b| {
                let (fa, fb) = (a.fitness(), b.fitness());
                (fa.pipes - fa.hits)
                    .total_cmp(&(fb.pipes - fb.hits))
                    .then(fa.pipes.total_cmp(&fb.pipes))
            })
            .expect("non-empty population")
    }
}

/// Files a training run leaves under its output directory.
pub mod layout {
    pub const CONFIG: &str = "config.toml";
    pub const GENERATIONS: &str = "generations.csv";
    pub const TIMING: &str = "timing.csv";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const FINAL_POPULATION: &str = "final.pop";
    pub const BEST: &str = "best.ckpt";
}

#[derive(Debug, Default)]
pub struct EvolveOptions {
    /// Write artifacts here; nothing is written when unset.
    pub run_dir: Option<PathBuf>,
    /// Continue from a population checkpoint instead of initialising.
    pub resume: Option<PopulationCheckpoint>,
}

struct RunFiles {
    dir: PathBuf,
    generations: BufWriter<File>,
    timing: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &ExperimentConfig, prior: &[GenerationStats]) -> Result<Self> {
        fs::create_dir_all(dir.join(layout::CHECKPOINTS))?;
        cfg.save(&dir.join(layout::CONFIG))?;
        let mut generations = BufWriter::new(File::create(dir.join(layout::GENERATIONS))?);
        generations.write_all(generations_csv(prior).as_bytes())?;
        let timing_path = dir.join(layout::TIMING);
        let timing_exists = timing_path.exists() && !prior.is_empty();
        let mut timing = BufWriter::new(
            fs::OpenOptions::new()
                .create(true)
                .append(timing_exists)
                .write(true)
                .truncate(!timing_exists)
                .open(timing_path)?,
        );
        if !timing_exists {
            writeln!(timing, "generation,wall_seconds")?;
        }
        Ok(RunFiles { dir: dir.to_path_buf(), generations, timing })
    }

    fn record(&mut self, stats: &GenerationStats, wall: f64) -> Result<()> {
        writeln!(self.generations, "{}", stats.csv_row())?;
        self.generations.flush()?;
        writeln!(self.timing, "{},{wall:.6}", stats.generation)?;
        self.timing.flush()?;
        Ok(())
    }

    fn checkpoint_path(&self, generation: usize, prefix: &str) -> PathBuf {
        self.dir
            .join(layout::CHECKPOINTS)
            .join(format!("{prefix}gen_{generation:06}.pop"))
    }
}

/// Reads back the rows of a `generations.csv` up to and including `generation`.
pub fn read_generations(path: &Path, up_to: usize) -> Result<Vec<GenerationStats>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(GENERATIONS_HEADER) {
        return Err(Error::corrupt(format!("{} has an unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = GenerationStats::parse_csv_row(line)?;
        if row.generation <= up_to {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Newest `*.pop` file in a run's checkpoint directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(layout::CHECKPOINTS);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pop") {
            continue;
        }
        let ckpt = PopulationCheckpoint::read(&path)?;
        if best.as_ref().is_none_or(|(g, _)| ckpt.generation > *g) {
            best = Some((ckpt.generation, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

struct Evaluator<'a> {
    spec: ArchitectureSpec,
    world: &'a WorldConfig,
    pool: rayon::ThreadPool,
}

impl Evaluator<'_> {
    fn evaluate(&self, genomes: &[&Genome], tps: &TaskParamSet) -> Result<Vec<FitnessPair>> {
        self.pool.install(|| {
            genomes
                .par_iter()
                .map(|g| eval_fitness(g, &self.spec, tps, self.world))
                .collect()
        })
    }
}

struct LoopState {
    generation: usize,
    evaluations: usize,
    parents: Vec<Individual>,
    ops_rng: ChaCha8Rng,
    task_rng: ChaCha8Rng,
}

impl LoopState {
    fn to_checkpoint(&self, spec: ArchitectureSpec, bounds: GeneBounds, stopped: bool) -> PopulationCheckpoint {
        PopulationCheckpoint {
            spec,
            bounds,
            generation: self.generation,
            evaluations: self.evaluations,
            stopped_early: stopped,
            ops_rng: rngstate::snapshot(&self.ops_rng),
            task_rng: rngstate::snapshot(&self.task_rng),
            population: self.parents.clone(),
        }
    }
}

/// Runs NSGA-II on the configured architecture until `n_gen` generations
/// have run or an offspring meets both stop thresholds.
pub fn evolve(cfg: &ExperimentConfig, opts: EvolveOptions) -> Result<ParetoArchive> {
    cfg.validate()?;
    let tc = &cfg.training;
    let oc = &cfg.operators;
    let spec = tc.spec();
    let bounds = oc.bounds()?;
    let len = genome_length(&spec);
    let p_gene = oc.p_gene_for(len);
    let evaluator = Evaluator {
        spec,
        world: &cfg.world,
        pool: rayon::ThreadPoolBuilder::new()
            .num_threads(tc.worker_count())
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?,
    };

    let (mut state, mut generations, mut files) = match opts.resume {
        Some(ckpt) => {
            if ckpt.spec != spec || ckpt.bounds != bounds {
                return Err(Error::config("checkpoint architecture or bounds differ from the configuration"));
            }
            if ckpt.population.len() != tc.mu {
                return Err(Error::config("checkpoint population size differs from mu"));
            }
            let prior = match &opts.run_dir {
                Some(dir) if dir.join(layout::GENERATIONS).exists() => {
                    read_generations(&dir.join(layout::GENERATIONS), ckpt.generation)?
                }
                _ => Vec::new(),
            };
            let state = LoopState {
                generation: ckpt.generation,
                evaluations: ckpt.evaluations,
                parents: ckpt.population,
                ops_rng: rngstate::restore(&ckpt.ops_rng)?,
                task_rng: rngstate::restore(&ckpt.task_rng)?,
            };
            info!("resuming {} run (seed {}) after generation {}", tc.arch, tc.seed, state.generation);
            let files = match &opts.run_dir {
                Some(dir) => Some(RunFiles::create(dir, cfg, &prior)?),
                None => None,
            };
            (state, prior, files)
        }
        None => {
            let mut ops_rng = rngstate::stream(tc.seed, rngstate::OPERATORS_STREAM);
            let mut task_rng = rngstate::stream(tc.seed, rngstate::TASKS_STREAM);
            let genomes: Vec<Genome> = (0..tc.mu)
                .map(|_| Genome::random(len, oc.init_lo, oc.init_hi, bounds, &mut ops_rng))
                .collect();
            let tps = prepare_task_params(tc, &mut task_rng);
            let started = Instant::now();
            let fitness = evaluator.evaluate(&genomes.iter().collect::<Vec<_>>(), &tps)?;
            let mut parents: Vec<Individual> = genomes
                .into_iter()
                .zip(fitness)
                .map(|(g, f)| Individual::with_fitness(g, f))
                .collect();
            assign_rank_and_crowding(&mut parents);
            let stats = GenerationStats::compute(0, tc.mu, &parents, 0);
            let state = LoopState { generation: 0, evaluations: tc.mu, parents, ops_rng, task_rng };
            let mut files = match &opts.run_dir {
                Some(dir) => Some(RunFiles::create(dir, cfg, &[])?),
                None => None,
            };
            if let Some(f) = files.as_mut() {
                f.record(&stats, started.elapsed().as_secs_f64())?;
            }
            (state, vec![stats], files)
        }
    };

    let mut champion = None;
    let mut stopped_early = false;
    while state.generation < tc.n_gen {
        let started = Instant::now();
        let generation = state.generation + 1;
        let at_start = (state.ops_rng.clone(), state.task_rng.clone());

        let picks = tournament_dcd(&state.parents, tc.lambda, &mut state.ops_rng);
        let mut offspring: Vec<Genome> = picks.iter().map(|&i| state.parents[i].genome.clone()).collect();
        for pair in offspring.chunks_exact_mut(2) {
            let (a, b) = sbx_crossover(&pair[0], &pair[1], oc.eta_c, oc.p_crossover, &mut state.ops_rng);
            pair[0] = polynomial_mutation(&a, oc.eta_m, p_gene, &mut state.ops_rng);
            pair[1] = polynomial_mutation(&b, oc.eta_m, p_gene, &mut state.ops_rng);
        }
        let tps = prepare_task_params(tc, &mut state.task_rng);

        let mut batch: Vec<&Genome> = offspring.iter().collect();
        if tc.reevaluate_parents {
            batch.extend(state.parents.iter().map(|p| &p.genome));
        }
        let fitness = match evaluator.evaluate(&batch, &tps) {
            Ok(f) => f,
            Err(e) => {
                // Roll the generators back so the checkpoint replays this generation.
                state.ops_rng = at_start.0;
                state.task_rng = at_start.1;
                if let Some(files) = &files {
                    let path = files.checkpoint_path(state.generation, "abort_");
                    state.to_checkpoint(spec, bounds, false).write(&path)?;
                    warn!("evaluation failed; resumable checkpoint at {}", path.display());
                }
                return Err(Error::Evaluation { generation, message: e.to_string() });
            }
        };
        state.evaluations += fitness.len();
        let (child_fit, parent_fit) = fitness.split_at(offspring.len());
        for (p, f) in state.parents.iter_mut().zip(parent_fit) {
            p.fitness = Some(*f);
        }
        let children: Vec<Individual> = offspring
            .into_iter()
            .zip(child_fit)
            .map(|(g, f)| Individual::with_fitness(g, *f))
            .collect();

        let qualifies = |f: &FitnessPair| f.pipes >= tc.pipes_max && f.hits <= tc.hits_max;
        let qualified: Vec<&Individual> = children.iter().filter(|c| qualifies(&c.fitness())).collect();
        let n_qualified = qualified.len();
        if n_qualified > 0 {
            champion = qualified
                .into_iter()
                .max_by(|a, b| {
                    let (fa, fb) = (a.fitness(), b.fitness());
                    fa.pipes.total_cmp(&fb.pipes).then(fb.hits.total_cmp(&fa.hits))
                })
                .cloned();
        }

        let mut pool = std::mem::take(&mut state.parents);
        pool.extend(children);
        state.parents = match oc.survival {
            SurvivalMode::Truncation => select_survivors(pool, tc.mu),
            SurvivalMode::Tournament => select_survivors_tournament(pool, tc.mu, &mut state.ops_rng),
        };
        state.generation = generation;

        let stats = GenerationStats::compute(generation, state.evaluations, &state.parents, n_qualified);
        info!(
            "[{} seed {}] gen {:>4}: best pipes {:.2}, best hits {:.2}, front0 {}",
            tc.arch, tc.seed, generation, stats.best_pipes, stats.best_hits, stats.front0_size
        );
        stopped_early = n_qualified > 0;
        if let Some(f) = files.as_mut() {
            f.record(&stats, started.elapsed().as_secs_f64())?;
            let due = cfg.output.checkpoint_every > 0 && generation % cfg.output.checkpoint_every == 0;
            if due || stopped_early || generation == tc.n_gen {
                let path = f.checkpoint_path(generation, "");
                state.to_checkpoint(spec, bounds, stopped_early).write(&path)?;
            }
        }
        generations.push(stats);
        if stopped_early {
            info!("stop criterion met at generation {generation}");
            break;
        }
    }

    let archive = ParetoArchive {
        seed: tc.seed,
        arch: tc.arch,
        population: state.parents,
        generations,
        stopped_early,
        champion,
    };
    if let Some(f) = files.as_mut() {
        let best = archive.select_best();
        GenomeCheckpoint { spec, genome: best.genome.clone(), fitness: best.fitness }.write(&f.dir.join(layout::BEST))?;
        PopulationCheckpoint {
            spec,
            bounds,
            generation: archive.generations.last().map_or(0, |g| g.generation),
            evaluations: archive.generations.last().map_or(0, |g| g.evaluations),
            stopped_early,
            ops_rng: rngstate::snapshot(&state.ops_rng),
            task_rng: rngstate::snapshot(&state.task_rng),
            population: archive.population.clone(),
        }
        .write(&f.dir.join(layout::FINAL_POPULATION))?;
    }
    Ok(archive)
}

/// Continues the run in `run_dir` from its newest checkpoint.
pub fn resume(cfg: &ExperimentConfig, run_dir: &Path) -> Result<ParetoArchive> {
    let path = latest_checkpoint(run_dir)?
        .ok_or_else(|| Error::corrupt(format!("no checkpoint under {}", run_dir.display())))?;
    let ckpt = checkpoint::PopulationCheckpoint::read(&path)?;
    evolve(cfg, EvolveOptions { run_dir: Some(run_dir.to_path_buf()), resume: Some(ckpt) })
}

/// Seed of run `index` in a batch started from `base_seed`.
pub fn batch_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

#[derive(Debug)]
pub struct BatchRun {
    pub index: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub result: Result<ParetoArchive>,
}

/// `n_runs` independent runs with seeds `seed, seed + 1, …`, each under
/// `<root>/run_<index>`. A failing run does not stop the others.
pub fn run_batch(cfg: &ExperimentConfig, n_runs: usize, root: Option<&Path>) -> Result<Vec<BatchRun>> {
    if n_runs == 0 {
        return Err(Error::config("a batch needs at least one run"));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for index in 0..n_runs {
        let mut run_cfg = cfg.clone();
        run_cfg.training.seed = batch_seed(cfg.training.seed, index);
        let dir = root.map(|r| r.join(format!("run_{index:02}")));
        if let Some(d) = &dir {
            run_cfg.output.dir = d.clone();
        }
        info!("batch run {index} with seed {}", run_cfg.training.seed);
        let result = evolve(&run_cfg, EvolveOptions { run_dir: dir.clone(), resume: None });
        if let Err(e) = &result {
            warn!("batch run {index} failed: {e}");
        }
        runs.push(BatchRun { index, seed: run_cfg.training.seed, dir: dir.unwrap_or_default(), result });
    }
    if let Some(root) = root {
        let mut summary = BufWriter::new(File::create(root.join("batch.csv"))?);
        writeln!(summary, "run,seed,generations,stopped_early,best_pipes,best_hits,status")?;
        for run in &runs {
            match &run.result {
                Ok(a) => {
                    let last = a.generations.last().expect("at least generation 0");
                    writeln!(
                        summary,
                        "{},{},{},{},{},{},ok",
                        run.index, run.seed, last.generation, a.stopped_early, last.best_pipes, last.best_hits
                    )?;
                }
                Err(e) => {
                    let msg = e.to_string().replace([',', '\n'], " ");
                    writeln!(summary, "{},{},,,,,error: {msg}", run.index, run.seed)?;
                }
            }
        }
        summary.flush()?;
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstate::stream;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.training.arch = ArchitectureKind::S;
        cfg.training.mu = 8;
        cfg.training.lambda = 8;
        cfg.training.n_gen = 3;
        cfg.training.n_episodes = 2;
        cfg.training.tasks = vec![PhysicsParam::Flap];
        cfg.training.workers = 2;
        cfg.world.episode_steps = 120;
        cfg
    }

    #[test]
    fn task1_flap_range() {
        let cfg = TrainingConfig::default();
        let tps = prepare_task_params(&cfg, &mut stream(3, 1));
        assert_eq!(tps.blocks.len(), 4);
        assert_eq!(tps.episode_count(), 20);
        let flap = &tps.blocks[0];
        assert_eq!(flap.kind, PhysicsParam::Flap);
        for tp in &flap.episodes {
            assert!((-14.4..=-9.6).contains(&tp.flap), "{}", tp.flap);
            assert_eq!((tp.gravity, tp.forward, tp.drag), (1.0, 5.0, 1.0));
        }
        for block in &tps.blocks[1..] {
            for tp in &block.episodes {
                for p in PhysicsParam::ALL {
                    if p != block.kind {
                        assert_eq!(tp.get(p), cfg.base.get(p));
                    }
                }
            }
        }
    }

    #[test]
    fn other_task_ranges() {
        let cfg = TrainingConfig::default();
        let tps = prepare_task_params(&cfg, &mut stream(4, 1));
        let ranges = [(0.8, 1.2), (4.0, 6.0), (0.8, 1.2)];
        for (block, (lo, hi)) in tps.blocks[1..].iter().zip(ranges) {
            for tp in &block.episodes {
                let v = tp.get(block.kind);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{:?} {v}", block.kind);
            }
        }
    }

    #[test]
    fn zero_perturb_gives_base_and_shared_seeds() {
        let cfg = TrainingConfig { perturb: 0.0, ..TrainingConfig::default() };
        let tps = prepare_task_params(&cfg, &mut stream(5, 1));
        for block in &tps.blocks {
            for (e, tp) in block.episodes.iter().enumerate() {
                assert_eq!(*tp, cfg.base.task(tps.blocks[0].episodes[e].seed));
            }
        }
        let seeds: Vec<u32> = tps.blocks[0].episodes.iter().map(|t| t.seed).collect();
        assert!(seeds.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn task_sampling_is_reproducible() {
        let cfg = TrainingConfig::default();
        assert_eq!(prepare_task_params(&cfg, &mut stream(9, 1)), prepare_task_params(&cfg, &mut stream(9, 1)));
    }

    #[test]
    fn zero_genome_passes_nothing() {
        let cfg = TrainingConfig::default();
        let spec = ArchitectureSpec::new(ArchitectureKind::CS);
        let tps = prepare_task_params(&cfg, &mut stream(1, 1));
        let g = Genome::zeros(genome_length(&spec), GeneBounds::default());
        let f = eval_fitness(&g, &spec, &tps, &WorldConfig::default()).unwrap();
        assert_eq!(f.pipes, 0.0);
        assert!(f.hits > 0.0);
    }

    #[test]
    fn evolve_stops_when_threshold_met() {
        let mut cfg = small_cfg();
        cfg.training.pipes_max = 0.0;
        cfg.training.hits_max = f64::MAX;
        cfg.training.n_gen = 10;
        let archive = evolve(&cfg, EvolveOptions::default()).unwrap();
        assert!(archive.stopped_early);
        assert_eq!(archive.generations.last().unwrap().generation, 1);
        assert!(archive.champion.is_some());
    }

    #[test]
    fn identity_operators_only_copy_parents() {
        let mut cfg = small_cfg();
        cfg.training.n_gen = 1;
        cfg.operators.p_crossover = 0.0;
        cfg.operators.p_gene = Some(0.0);
        let initial = {
            let mut c = cfg.clone();
            c.training.n_gen = 0;
            evolve(&c, EvolveOptions::default()).unwrap()
        };
        let after = evolve(&cfg, EvolveOptions::default()).unwrap();
        for ind in &after.population {
            assert!(initial.population.iter().any(|p| p.genome == ind.genome));
        }
    }

    #[test]
    fn rejects_odd_mu() {
        let mut cfg = small_cfg();
        cfg.training.mu = 7;
        cfg.training.lambda = 7;
        assert!(matches!(evolve(&cfg, EvolveOptions::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn batch_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..6).map(|i| batch_seed(10, i)).collect();
        let mut dedup = seeds.clone();
        dedup.dedup();
        assert_eq!(seeds.len(), dedup.len());
    }

    #[test]
    fn generation_rows_round_trip() {
        let cfg = small_cfg();
        let archive = evolve(&cfg, EvolveOptions::default()).unwrap();
        for g in &archive.generations {
            assert_eq!(GenerationStats::parse_csv_row(&g.csv_row()).unwrap(), *g);
        }
    }
}

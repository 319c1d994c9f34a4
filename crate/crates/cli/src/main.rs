//! `ctxskill`: train, test and inspect Context+Skill controllers.
//!
//! Progress goes to stderr, data goes to files. Failures print one line
//! `error kind=<kind> message="<text>"` on stderr and exit with a code
//! specific to the kind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ctxskill::checkpoint::{peek_kind, GenomeCheckpoint, PopulationCheckpoint};
use ctxskill::config::ExperimentConfig;
use ctxskill::driver::{self, layout, EvolveOptions};
use ctxskill::emo::SurvivalMode;
use ctxskill::env::PhysicsParam;
use ctxskill::genharness::{self, GridOutput};
use ctxskill::nets::{genome_length, ArchitectureKind};
use ctxskill::Error;

#[derive(Parser, Debug)]
#[command(name = "ctxskill", version, about = "Context+Skill neuroevolution on Flappy Ball")]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only report warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network with NSGA-II.
    Evolve(EvolveArgs),
    /// Independent training runs with consecutive seeds.
    Batch(BatchArgs),
    /// Evaluate a checkpoint on a generalization grid.
    Grid(GridArgs),
    /// Per-point differences between grid results.
    Diff(DiffArgs),
    /// 2-D slices of a grid result.
    Contour(ContourArgs),
    /// Trace one episode of a checkpoint.
    Replay(ReplayArgs),
    /// Describe a checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default)]
struct TrainingFlags {
    /// Network architecture: S, C or CS.
    #[arg(long)]
    arch: Option<ArchitectureKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated training tasks, e.g. `flap,gravity`.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<PhysicsParam>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    perturb: Option<f64>,
    /// Population size (mu = lambda).
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    n_gen: Option<usize>,
    #[arg(long)]
    pipes_max: Option<f64>,
    #[arg(long)]
    hits_max: Option<f64>,
    /// Evaluation threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    reevaluate_parents: bool,
    #[arg(long)]
    eta_c: Option<f64>,
    #[arg(long)]
    eta_m: Option<f64>,
    #[arg(long)]
    p_crossover: Option<f64>,
    #[arg(long)]
    p_gene: Option<f64>,
    /// `truncation` or `tournament`.
    #[arg(long)]
    survival: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl TrainingFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        let t = &mut cfg.training;
        if let Some(v) = self.arch {
            t.arch = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = &self.tasks {
            t.tasks = v.clone();
        }
        if let Some(v) = self.episodes {
            t.n_episodes = v;
        }
        if let Some(v) = self.perturb {
            t.perturb = v;
        }
        if let Some(v) = self.mu {
            t.mu = v;
            t.lambda = v;
        }
        if let Some(v) = self.n_gen {
            t.n_gen = v;
        }
        if let Some(v) = self.pipes_max {
            t.pipes_max = v;
        }
        if let Some(v) = self.hits_max {
            t.hits_max = v;
        }
        if let Some(v) = self.workers {
            t.workers = v;
        }
        if self.reevaluate_parents {
            t.reevaluate_parents = true;
        }
        let o = &mut cfg.operators;
        if let Some(v) = self.eta_c {
            o.eta_c = v;
        }
        if let Some(v) = self.eta_m {
            o.eta_m = v;
        }
        if let Some(v) = self.p_crossover {
            o.p_crossover = v;
        }
        if let Some(v) = self.p_gene {
            o.p_gene = Some(v);
        }
        if let Some(v) = &self.survival {
            o.survival = match v.to_ascii_lowercase().as_str() {
                "truncation" => SurvivalMode::Truncation,
                "tournament" => SurvivalMode::Tournament,
                other => return Err(CliError::new(Kind::Config, format!("unknown survival mode {other:?}"))),
            };
        }
        if let Some(v) = self.checkpoint_every {
            cfg.output.checkpoint_every = v;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct EvolveArgs {
    #[command(flatten)]
    training: TrainingFlags,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run in `--out` from its newest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[command(flatten)]
    training: TrainingFlags,
    /// Parent directory of the per-run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    runs: usize,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated active axes.
    #[arg(long, value_delimiter = ',')]
    axes: Option<Vec<PhysicsParam>>,
    #[arg(long)]
    lo_frac: Option<f64>,
    #[arg(long)]
    hi_frac: Option<f64>,
    #[arg(long)]
    grid_seed: Option<u64>,
    #[arg(long)]
    reset_per_sample: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Result CSV.
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiffArgs {
    /// Grid results of the first architecture; repeat for pooled runs.
    #[arg(long, required = true)]
    a: Vec<PathBuf>,
    /// Grid results of the second architecture, paired with `--a` by position.
    #[arg(long, required = true)]
    b: Vec<PathBuf>,
    /// Output directory for `diff.csv` and `diff_summary.csv`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ContourArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Two comma-separated axes; all six pairs when omitted.
    #[arg(long, value_delimiter = ',')]
    pair: Option<Vec<PhysicsParam>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    flap: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gravity: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    forward: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    drag: Option<f64>,
    /// Pipe-layout seed.
    #[arg(long)]
    seed: Option<u32>,
    /// Output directory for `trace.csv` and `summary.txt`.
    #[arg(long, default_value = "replay")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    checkpoint: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Usage,
    Config,
    Checkpoint,
    Io,
    Data,
    Run,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Checkpoint => "checkpoint",
            Kind::Io => "io",
            Kind::Data => "data",
            Kind::Run => "run",
        }
    }

    fn exit_code(self) -> u8 {
        match self {
            Kind::Run => 1,
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::Checkpoint => 4,
            Kind::Io => 5,
            Kind::Data => 6,
        }
    }
}

#[derive(Debug)]
struct CliError {
    kind: Kind,
    message: String,
}

impl CliError {
    fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidConfig(_) => Kind::Config,
            Error::GenomeLength { .. } | Error::CorruptCheckpoint(_) => Kind::Checkpoint,
            Error::GridMismatch(_) | Error::MissingCoverage(_) => Kind::Data,
            Error::Io(_) => Kind::Io,
            Error::EpisodeFinished(_) | Error::Evaluation { .. } => Kind::Run,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Kind::Io, e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn announce(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    eprintln!("# resolved configuration\n{}", cfg.to_toml());
    Ok(())
}

/// Checkpoint read failures of any cause are reported as checkpoint errors.
fn read_genome(path: &Path) -> Result<GenomeCheckpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::Checkpoint, format!("cannot read {}: {e}", path.display())))?;
    GenomeCheckpoint::parse(&text).map_err(|e| CliError::new(Kind::Checkpoint, format!("{}: {e}", path.display())))
}

fn evolve(cli: &Cli, args: &EvolveArgs) -> Result<(), CliError> {
    let mut cfg = match (&cli.config, args.resume, &args.out) {
        (None, true, Some(dir)) => ExperimentConfig::load(&dir.join(layout::CONFIG))?,
        (path, _, _) => load_config(path.as_deref())?,
    };
    args.training.apply(&mut cfg)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    announce(&cfg)?;
    let dir = cfg.output.dir.clone();
    let archive = if args.resume {
        driver::resume(&cfg, &dir)?
    } else {
        driver::evolve(&cfg, EvolveOptions { run_dir: Some(dir.clone()), resume: None })?
    };
    let last = archive.generations.last().expect("generation 0 is always logged");
    info!(
        "finished after generation {} (stopped early: {}); best pipes {}, best hits {}; artifacts in {}",
        last.generation,
        archive.stopped_early,
        last.best_pipes,
        last.best_hits,
        dir.display()
    );
    Ok(())
}

fn batch(cli: &Cli, args: &BatchArgs) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    args.training.apply(&mut cfg)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    announce(&cfg)?;
    let root = cfg.output.dir.clone();
    fs::create_dir_all(&root)?;
    let runs = driver::run_batch(&cfg, args.runs, Some(&root))?;
    let failed: Vec<String> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().err().map(|e| format!("run {} (seed {}): {e}", r.index, r.seed)))
        .collect();
    info!("batch summary in {}", root.join("batch.csv").display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(Kind::Run, format!("{} of {} runs failed; {}", failed.len(), runs.len(), failed.join("; "))))
    }
}

fn grid(cli: &Cli, args: &GridArgs) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let g = &mut cfg.grid;
    if let Some(v) = args.steps {
        g.steps = v;
    }
    if let Some(v) = args.samples {
        g.samples = v;
    }
    if let Some(v) = &args.axes {
        g.axes = v.clone();
    }
    if let Some(v) = args.lo_frac {
        g.lo_frac = v;
    }
    if let Some(v) = args.hi_frac {
        g.hi_frac = v;
    }
    if let Some(v) = args.grid_seed {
        g.seed = v;
    }
    if args.reset_per_sample {
        g.reset_per_sample = true;
    }
    if let Some(v) = args.workers {
        cfg.training.workers = v;
    }
    announce(&cfg)?;
    let ckpt = read_genome(&args.checkpoint)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    cfg.save(&args.out.with_extension("config.toml"))?;
    info!(
        "grid of {} points x {} samples for a {} network",
        cfg.grid.n_points(),
        cfg.grid.samples,
        ckpt.spec.kind
    );
    let out = GridOutput::new(&args.out);
    let r = genharness::run_grid(&ckpt, &cfg.grid, &cfg.training.base, &cfg.world, cfg.training.workers, Some(&out))?;
    info!("wrote {} rows to {}", r.rows.len(), args.out.display());
    Ok(())
}

fn diff(args: &DiffArgs) -> Result<(), CliError> {
    if args.a.len() != args.b.len() {
        return Err(CliError::new(Kind::Usage, "--a and --b must be given the same number of times"));
    }
    let pairs = args
        .a
        .iter()
        .zip(&args.b)
        .map(|(a, b)| Ok((genharness::read_grid_csv(a)?, genharness::read_grid_csv(b)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let table = genharness::pooled_diff(&pairs)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("diff.csv"), table.to_csv())?;
    fs::write(args.out.join("diff_summary.csv"), table.summary_csv())?;
    eprint!("{}", table.summary_csv());
    Ok(())
}

fn contour(cli: &Cli, args: &ContourArgs) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    let r = genharness::read_grid_csv(&args.grid)?;
    let pairs = match &args.pair {
        Some(p) if p.len() == 2 => vec![(p[0], p[1])],
        Some(_) => return Err(CliError::new(Kind::Usage, "--pair takes exactly two axes")),
        None => genharness::axis_pairs(),
    };
    fs::create_dir_all(&args.out)?;
    for pair in pairs {
        let table = genharness::contour_slice(&r, pair, &cfg.training.base)?;
        for path in table.write(&args.out)? {
            info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn replay(cli: &Cli, args: &ReplayArgs) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let t = &mut cfg.task;
    if let Some(v) = args.flap {
        t.flap = v;
    }
    if let Some(v) = args.gravity {
        t.gravity = v;
    }
    if let Some(v) = args.forward {
        t.forward = v;
    }
    if let Some(v) = args.drag {
        t.drag = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    announce(&cfg)?;
    let ckpt = read_genome(&args.checkpoint)?;
    let report = genharness::replay(&ckpt, &cfg.task, &cfg.world)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("trace.csv"), report.trace_csv())?;
    fs::write(args.out.join("summary.txt"), report.summary())?;
    eprint!("{}", report.summary());
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<(), CliError> {
    let path = &args.checkpoint;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::Checkpoint, format!("cannot read {}: {e}", path.display())))?;
    let as_ckpt = |e: Error| CliError::new(Kind::Checkpoint, format!("{}: {e}", path.display()));
    match peek_kind(&text).map_err(as_ckpt)?.as_str() {
        "genome" => {
            let c = GenomeCheckpoint::parse(&text).map_err(as_ckpt)?;
            println!("file: {}", path.display());
            println!("format_version: {}", ctxskill::checkpoint::FORMAT_VERSION);
            println!("kind: genome");
            println!("architecture: {}", c.spec.kind);
            println!("genome_length: {}", genome_length(&c.spec));
            match c.fitness {
                Some(f) => println!("fitness: pipes {} hits {}", f.pipes, f.hits),
                None => println!("fitness: none"),
            }
            println!("gene_bounds: [{}, {}]", c.genome.bounds.lo, c.genome.bounds.hi);
        }
        "population" => {
            let c = PopulationCheckpoint::parse(&text).map_err(as_ckpt)?;
            println!("file: {}", path.display());
            println!("format_version: {}", ctxskill::checkpoint::FORMAT_VERSION);
            println!("kind: population");
            println!("architecture: {}", c.spec.kind);
            println!("genome_length: {}", genome_length(&c.spec));
            println!("generation: {}", c.generation);
            println!("evaluations: {}", c.evaluations);
            println!("population: {}", c.population.len());
            println!("stopped_early: {}", c.stopped_early);
            let front0: Vec<String> = c
                .population
                .iter()
                .filter(|i| i.rank == 0)
                .filter_map(|i| i.fitness.map(|f| format!("({}, {})", f.pipes, f.hits)))
                .collect();
            println!("front0 (pipes, hits): {}", front0.join(" "));
        }
        other => return Err(CliError::new(Kind::Checkpoint, format!("unknown checkpoint kind {other:?}"))),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Evolve(a) => evolve(cli, a),
        Command::Batch(a) => batch(cli, a),
        Command::Grid(a) => grid(cli, a),
        Command::Diff(a) => diff(a),
        Command::Contour(a) => contour(cli, a),
        Command::Replay(a) => replay(cli, a),
        Command::Inspect(a) => inspect(a),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let message = e.message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error kind={} message=\"{}\"", e.kind.name(), message);
    ExitCode::from(e.kind.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return fail(&CliError::new(Kind::Usage, first));
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.kind == Kind::Run {
                warn!("see the run directory for partial results and checkpoints");
            }
            fail(&e)
        }
    }
}

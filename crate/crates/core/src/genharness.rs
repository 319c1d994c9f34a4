//! Generalization grids, paired architecture comparisons, 2-D contour slices
//! and single-scenario replays of trained networks.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::GenomeCheckpoint;
use crate::env::{run_episode, write_trace, ActionUsage, EpisodeOutcome, PhysicsBase, PhysicsParam, TaskParams, WorldConfig};
use crate::error::{Error, Result};
use crate::nets::decode;
use crate::rngstate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Smallest multiplier of each base value.
    pub lo_frac: f64,
    /// Largest multiplier of each base value.
    pub hi_frac: f64,
    /// Evenly spaced multipliers per axis, both endpoints included.
    pub steps: usize,
    /// Episodes per grid point.
    pub samples: usize,
    /// Axes that vary; the others stay at their base value.
    pub axes: Vec<PhysicsParam>,
    /// Seed of the episode seeds, shared by every network tested on the grid.
    pub seed: u64,
    /// Zero the context before every sample instead of once per point.
    pub reset_per_sample: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo_frac: 0.25,
            hi_frac: 1.75,
            steps: 10,
            samples: 3,
            axes: PhysicsParam::ALL.to_vec(),
            seed: 0,
            reset_per_sample: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo_frac > 0.0 && self.lo_frac < self.hi_frac && self.hi_frac.is_finite()) {
            return Err(Error::config(format!(
                "grid fractions must satisfy 0 < lo_frac < hi_frac, got {} and {}",
                self.lo_frac, self.hi_frac
            )));
        }
        if self.steps < 2 {
            return Err(Error::config("a grid axis needs at least 2 steps"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples per grid point must be positive"));
        }
        if self.axes.is_empty() {
            return Err(Error::config("a grid needs at least one active axis"));
        }
        let distinct: BTreeSet<_> = self.axes.iter().collect();
        if distinct.len() != self.axes.len() {
            return Err(Error::config("grid axes must be distinct"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("grid seed must fit in a signed 64-bit integer"));
        }
        Ok(())
    }

    pub fn multipliers(&self) -> Vec<f64> {
        let last = self.steps - 1;
        (0..self.steps)
            .map(|i| {
                if i == last {
                    self.hi_frac
                } else {
                    self.lo_frac + (self.hi_frac - self.lo_frac) * i as f64 / last as f64
                }
            })
            .collect()
    }

    pub fn n_points(&self) -> usize {
        self.steps.pow(self.axes.len() as u32)
    }

    pub fn n_rows(&self) -> usize {
        self.n_points() * self.samples
    }
}

/// One task of the grid: physics values in canonical order plus the episode
/// seeds of its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// flap, gravity, forward, drag
    pub params: [f64; 4],
    pub seeds: Vec<u32>,
}

impl GridPoint {
    pub fn task(&self, sample: usize) -> TaskParams {
        TaskParams {
            seed: self.seeds[sample],
            flap: self.params[0],
            gravity: self.params[1],
            forward: self.params[2],
            drag: self.params[3],
        }
    }

    pub fn tasks(&self) -> Vec<TaskParams> {
        (0..self.seeds.len()).map(|s| self.task(s)).collect()
    }
}

/// Cartesian product of the active axes in canonical order, flap varying
/// slowest; seeds are drawn point by point in that order.
pub fn build_grid(spec: &GridSpec, base: &PhysicsBase) -> Result<Vec<GridPoint>> {
    spec.validate()?;
    let mults = spec.multipliers();
    let axis_values: Vec<Vec<f64>> = PhysicsParam::ALL
        .iter()
        .map(|&p| {
            if spec.axes.contains(&p) {
                mults.iter().map(|m| base.get(p) * m).collect()
            } else {
                vec![base.get(p)]
            }
        })
        .collect();
    let mut rng = rngstate::stream(spec.seed, rngstate::GRID_STREAM);
    let mut points = Vec::with_capacity(spec.n_points());
    for &flap in &axis_values[0] {
        for &gravity in &axis_values[1] {
            for &forward in &axis_values[2] {
                for &drag in &axis_values[3] {
                    let seeds = (0..spec.samples).map(|_| rng.random()).collect();
                    points.push(GridPoint { params: [flap, gravity, forward, drag], seeds });
                }
            }
        }
    }
    Ok(points)
}

/// One episode of a grid run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub params: [f64; 4],
    pub sample: usize,
    pub seed: u32,
    pub f0: u32,
    pub f1: u32,
    pub usage: ActionUsage,
}

pub const GRID_HEADER: &str = "flap,gravity,forward,drag,sample,seed,f0,f1,steps_flap,steps_fwd,steps_both,steps_none";

impl GridRow {
    pub fn csv_row(&self) -> String {
        let p = &self.params;
        let u = &self.usage;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p[0], p[1], p[2], p[3], self.sample, self.seed, self.f0, self.f1, u.flap_only, u.forward_only, u.both, u.none
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::GridMismatch(format!("malformed grid row {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(bad());
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let int = |s: &str| s.parse::<u32>().map_err(|_| bad());
        Ok(GridRow {
            params: [real(f[0])?, real(f[1])?, real(f[2])?, real(f[3])?],
            sample: f[4].parse().map_err(|_| bad())?,
            seed: int(f[5])?,
            f0: int(f[6])?,
            f1: int(f[7])?,
            usage: ActionUsage {
                flap_only: int(f[8])?,
                forward_only: int(f[9])?,
                both: int(f[10])?,
                none: int(f[11])?,
            },
        })
    }
}

/// Per-point aggregate of a grid run.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub params: [f64; 4],
    pub mean_f0: f64,
    pub mean_f1: f64,
    /// Raw (f0, f1) per sample.
    pub samples: Vec<(u32, u32)>,
    pub usage: ActionUsage,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResult {
    /// Rows in grid order, samples of a point adjacent.
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// Groups consecutive rows sharing the same parameters.
    pub fn points(&self) -> Vec<PointSummary> {
        let mut out: Vec<PointSummary> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some(p) if p.params == row.params && row.sample == p.samples.len() => {
                    p.samples.push((row.f0, row.f1));
                    p.usage.add(&row.usage);
                }
                _ => out.push(PointSummary {
                    params: row.params,
                    mean_f0: 0.0,
                    mean_f1: 0.0,
                    samples: vec![(row.f0, row.f1)],
                    usage: row.usage,
                }),
            }
        }
        for p in &mut out {
            let n = p.samples.len() as f64;
            p.mean_f0 = p.samples.iter().map(|s| f64::from(s.0)).sum::<f64>() / n;
            p.mean_f1 = p.samples.iter().map(|s| f64::from(s.1)).sum::<f64>() / n;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(GRID_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

pub fn read_grid_csv(path: &Path) -> Result<GridResult> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == GRID_HEADER => {}
        _ => return Err(Error::GridMismatch(format!("{} is not a grid result file", path.display()))),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(GridRow::parse(&line)?);
        }
    }
    Ok(GridResult { rows })
}

fn evaluate_point(
    net: &mut crate::nets::Phenotype,
    point: &GridPoint,
    wc: &WorldConfig,
    reset_per_sample: bool,
) -> Result<Vec<GridRow>> {
    net.reset_context();
    let mut rows = Vec::with_capacity(point.seeds.len());
    for sample in 0..point.seeds.len() {
        if reset_per_sample {
            net.reset_context();
        }
        let tp = point.task(sample);
        let out = run_episode(net, &tp, wc, false)?;
        rows.push(GridRow {
            params: point.params,
            sample,
            seed: tp.seed,
            f0: out.pipes,
            f1: out.hits,
            usage: out.usage,
        });
    }
    Ok(rows)
}

/// Where and how a grid run is written.
#[derive(Debug, Clone)]
pub struct GridOutput {
    pub path: PathBuf,
    /// Points evaluated between flushes.
    pub chunk_points: usize,
}

impl GridOutput {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        GridOutput { path: path.into(), chunk_points: 500 }
    }

    pub fn progress_path(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".progress");
        self.path.with_file_name(name)
    }
}

fn read_progress(path: &Path, total: usize) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    let mut done = None;
    let mut recorded_total = None;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::GridMismatch(format!("malformed progress marker {}", path.display())))?;
            match k.trim() {
                "points_done" => done = Some(v),
                "points_total" => recorded_total = Some(v),
                _ => {}
            }
        }
    }
    match (done, recorded_total) {
        (Some(d), Some(t)) if t == total && d <= total => Ok(d),
        _ => Err(Error::GridMismatch(format!(
            "progress marker {} does not belong to this grid",
            path.display()
        ))),
    }
}

/// Evaluates a fixed network on every grid point. With `output` set, rows
/// are appended to the CSV chunk by chunk next to a `.progress` marker, and
/// an interrupted run picks up after the last completed chunk.
pub fn run_grid(
    ckpt: &GenomeCheckpoint,
    spec: &GridSpec,
    base: &PhysicsBase,
    wc: &WorldConfig,
    workers: usize,
    output: Option<&GridOutput>,
) -> Result<GridResult> {
    wc.validate()?;
    let points = build_grid(spec, base)?;
    let template = decode(&ckpt.genome, &ckpt.spec)?;
    let threads = if workers > 0 { workers } else { std::thread::available_parallelism().map_or(1, |n| n.get()) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;

    let mut rows: Vec<GridRow> = Vec::with_capacity(spec.n_rows());
    let mut start = 0;
    let mut sink = None;
    if let Some(out) = output {
        let progress = out.progress_path();
        if progress.exists() && out.path.exists() {
            start = read_progress(&progress, points.len())?;
            let previous = read_grid_csv(&out.path)?;
            if previous.rows.len() < start * spec.samples {
                return Err(Error::GridMismatch("grid file is shorter than its progress marker".into()));
            }
            rows.extend(previous.rows.into_iter().take(start * spec.samples));
            for (row, point) in rows.iter().zip(points.iter().flat_map(|p| std::iter::repeat_n(p, spec.samples))) {
                if row.params != point.params || !point.seeds.contains(&row.seed) {
                    return Err(Error::GridMismatch("existing rows do not match the grid".into()));
                }
            }
            info!("resuming grid at point {start} of {}", points.len());
        }
        // Rewrite what is kept so a partially flushed chunk is dropped.
        let mut w = BufWriter::new(File::create(&out.path)?);
        w.write_all(GridResult { rows: rows.clone() }.to_csv().as_bytes())?;
        w.flush()?;
        sink = Some(BufWriter::new(OpenOptions::new().append(true).open(&out.path)?));
    }

    let chunk = output.map_or(points.len().max(1), |o| o.chunk_points.max(1));
    let mut done = start;
    while done < points.len() {
        let end = (done + chunk).min(points.len());
        let batch: Vec<Vec<GridRow>> = pool.install(|| {
            points[done..end]
                .par_iter()
                .map_init(|| template.clone(), |net, p| evaluate_point(net, p, wc, spec.reset_per_sample))
                .collect::<Result<_>>()
        })?;
        let new_rows: Vec<GridRow> = batch.into_iter().flatten().collect();
        if let (Some(w), Some(out)) = (sink.as_mut(), output) {
            for r in &new_rows {
                writeln!(w, "{}", r.csv_row())?;
            }
            w.flush()?;
            fs::write(
                out.progress_path(),
                format!("points_done = {end}\npoints_total = {}\n", points.len()),
            )?;
            info!("grid: {end}/{} points", points.len());
        }
        rows.extend(new_rows);
        done = end;
    }
    if let Some(out) = output {
        let progress = out.progress_path();
        if progress.exists() {
            fs::remove_file(progress)?;
        }
    }
    Ok(GridResult { rows })
}

/// Per-point difference of two grid runs: `a - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    /// Index of the run pair the row comes from (0 for a single comparison).
    pub run: usize,
    pub params: [f64; 4],
    pub d_f0: f64,
    pub d_f1: f64,
}

pub const DIFF_HEADER: &str = "run,flap,gravity,forward,drag,d_f0,d_f1";
pub const SUMMARY_HEADER: &str = "metric,n,min,q1,median,q3,max,mean";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffTable {
    pub rows: Vec<DiffRow>,
}

/// Five-number summary and mean of one difference column.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data (`(n - 1) p` rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            n: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

impl DiffTable {
    pub fn d_f0(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.d_f0).collect()
    }

    pub fn d_f1(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.d_f1).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(DIFF_HEADER);
        out.push('\n');
        for r in &self.rows {
            let p = &r.params;
            out.push_str(&format!("{},{},{},{},{},{},{}\n", r.run, p[0], p[1], p[2], p[3], r.d_f0, r.d_f1));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for (name, values) in [("d_f0", self.d_f0()), ("d_f1", self.d_f1())] {
            if let Some(q) = Quantiles::of(&values) {
                out.push_str(&format!(
                    "{name},{},{},{},{},{},{},{}\n",
                    q.n, q.min, q.q1, q.median, q.q3, q.max, q.mean
                ));
            }
        }
        out
    }
}

/// Point-wise `a - b` of the per-point means. Both runs must cover the same
/// points with the same episode seeds.
pub fn pairwise_diff(a: &GridResult, b: &GridResult) -> Result<DiffTable> {
    diff_run(0, a, b)
}

fn diff_run(run: usize, a: &GridResult, b: &GridResult) -> Result<DiffTable> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::GridMismatch(format!(
            "row counts differ: {} vs {}",
            a.rows.len(),
            b.rows.len()
        )));
    }
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        if ra.params != rb.params || ra.sample != rb.sample || ra.seed != rb.seed {
            return Err(Error::GridMismatch(format!("row {i} differs in parameters or seed")));
        }
    }
    let rows = a
        .points()
        .into_iter()
        .zip(b.points())
        .map(|(pa, pb)| DiffRow {
            run,
            params: pa.params,
            d_f0: pa.mean_f0 - pb.mean_f0,
            d_f1: pa.mean_f1 - pb.mean_f1,
        })
        .collect();
    Ok(DiffTable { rows })
}

/// Differences of several run pairs stacked into one table, pairs matched by
/// position (run `i` of one architecture against run `i` of the other).
pub fn pooled_diff(pairs: &[(GridResult, GridResult)]) -> Result<DiffTable> {
    let mut rows = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        rows.extend(diff_run(i, a, b)?.rows);
    }
    Ok(DiffTable { rows })
}

/// Mean f0 and f1 over a plane of two axes with the other two at base.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourTable {
    pub row_axis: PhysicsParam,
    pub col_axis: PhysicsParam,
    pub row_mults: Vec<f64>,
    pub col_mults: Vec<f64>,
    /// `[row][col]`
    pub f0: Vec<Vec<f64>>,
    pub f1: Vec<Vec<f64>>,
}

/// The six unordered axis pairs in canonical order.
pub fn axis_pairs() -> Vec<(PhysicsParam, PhysicsParam)> {
    let all = PhysicsParam::ALL;
    let mut out = Vec::with_capacity(6);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            out.push((all[i], all[j]));
        }
    }
    out
}

pub fn contour_slice(
    r: &GridResult,
    pair: (PhysicsParam, PhysicsParam),
    base: &PhysicsBase,
) -> Result<ContourTable> {
    let (ra, ca) = pair;
    if ra == ca {
        return Err(Error::config("a contour needs two different axes"));
    }
    let others: Vec<PhysicsParam> = PhysicsParam::ALL.into_iter().filter(|p| *p != ra && *p != ca).collect();
    let points: Vec<PointSummary> = r
        .points()
        .into_iter()
        .filter(|p| others.iter().all(|o| p.params[o.index()] == base.get(*o)))
        .collect();
    if points.is_empty() {
        return Err(Error::MissingCoverage(format!(
            "no grid points with {} and {} at base",
            others[0], others[1]
        )));
    }
    let distinct = |axis: PhysicsParam| -> Vec<f64> {
        let mut v: Vec<f64> = points.iter().map(|p| p.params[axis.index()]).collect();
        let b = base.get(axis);
        v.sort_by(|x, y| (x / b).total_cmp(&(y / b)));
        v.dedup();
        v
    };
    let (row_vals, col_vals) = (distinct(ra), distinct(ca));
    for (axis, vals) in [(ra, &row_vals), (ca, &col_vals)] {
        if vals.len() < 2 {
            return Err(Error::MissingCoverage(format!("axis {axis} was not swept in this grid")));
        }
    }
    let cell: HashMap<(u64, u64), &PointSummary> = points
        .iter()
        .map(|p| ((p.params[ra.index()].to_bits(), p.params[ca.index()].to_bits()), p))
        .collect();
    let mut f0 = vec![vec![0.0; col_vals.len()]; row_vals.len()];
    let mut f1 = f0.clone();
    for (i, rv) in row_vals.iter().enumerate() {
        for (j, cv) in col_vals.iter().enumerate() {
            let p = cell.get(&(rv.to_bits(), cv.to_bits())).ok_or_else(|| {
                Error::MissingCoverage(format!("no grid point at {ra}={rv}, {ca}={cv}"))
            })?;
            f0[i][j] = p.mean_f0;
            f1[i][j] = p.mean_f1;
        }
    }
    let mults = |axis: PhysicsParam, vals: &[f64]| vals.iter().map(|v| v / base.get(axis)).collect();
    Ok(ContourTable {
        row_axis: ra,
        col_axis: ca,
        row_mults: mults(ra, &row_vals),
        col_mults: mults(ca, &col_vals),
        f0,
        f1,
    })
}

impl ContourTable {
    /// Matrix CSV: the header holds the column multipliers, each line starts
    /// with its row multiplier.
    pub fn matrix_csv(&self, metric: &str) -> Result<String> {
        let m = match metric {
            "f0" => &self.f0,
            "f1" => &self.f1,
            other => return Err(Error::config(format!("unknown contour metric {other:?}"))),
        };
        let mut out = format!("{}/{}", self.row_axis, self.col_axis);
        for c in &self.col_mults {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (rm, row) in self.row_mults.iter().zip(m) {
            out.push_str(&rm.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `contour_<row>_<col>_f0.csv` and `..._f1.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for metric in ["f0", "f1"] {
            let path = dir.join(format!("contour_{}_{}_{metric}.csv", self.row_axis, self.col_axis));
            fs::write(&path, self.matrix_csv(metric)?)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub task: TaskParams,
    pub outcome: EpisodeOutcome,
}

impl ReplayReport {
    pub fn summary(&self) -> String {
        let o = &self.outcome;
        let t = &self.task;
        format!(
            "seed = {}\nflap = {}\ngravity = {}\nforward = {}\ndrag = {}\npipes = {}\nhits = {}\n\
             pipe_contact_steps = {}\nboundary_contact_steps = {}\nsteps_flap = {}\nsteps_fwd = {}\n\
             steps_both = {}\nsteps_none = {}\n",
            t.seed,
            t.flap,
            t.gravity,
            t.forward,
            t.drag,
            o.pipes,
            o.hits,
            o.pipe_contact_steps,
            o.boundary_contact_steps,
            o.usage.flap_only,
            o.usage.forward_only,
            o.usage.both,
            o.usage.none
        )
    }

    pub fn trace_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace(&mut buf, self.outcome.trace.as_deref().unwrap_or(&[])).expect("writing to memory");
        buf
    }
}

/// One traced episode of a fixed network from a zeroed context.
pub fn replay(ckpt: &GenomeCheckpoint, tp: &TaskParams, wc: &WorldConfig) -> Result<ReplayReport> {
    let mut net = decode(&ckpt.genome, &ckpt.spec)?;
    let outcome = run_episode(&mut net, tp, wc, true)?;
    Ok(ReplayReport { task: *tp, outcome })
}

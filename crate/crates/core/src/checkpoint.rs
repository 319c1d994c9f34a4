//! Plain-text checkpoints.
//!
//! A `.ckpt` file holds one genome with its architecture and recorded
//! fitness; a `.pop` file holds a whole parent population plus the generator
//! states needed to resume training. Both start with `key = value` header
//! lines, carry their payload in bracketed sections and end with `[end]`, so a
//! truncated file is always detected.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::emo::{FitnessPair, Individual};
use crate::error::{Error, Result};
use crate::genome::{GeneBounds, Genome};
use crate::nets::{genome_length, ArchitectureKind, ArchitectureSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GenomeCheckpoint {
    pub spec: ArchitectureSpec,
    pub genome: Genome,
    pub fitness: Option<FitnessPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCheckpoint {
    pub spec: ArchitectureSpec,
    pub bounds: GeneBounds,
    /// Last completed generation.
    pub generation: usize,
    pub evaluations: usize,
    pub stopped_early: bool,
    pub ops_rng: String,
    pub task_rng: String,
    pub population: Vec<Individual>,
}

fn write_spec_header(out: &mut String, kind: &str, spec: &ArchitectureSpec, bounds: &GeneBounds) {
    out.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
    out.push_str(&format!("kind = {kind}\n"));
    out.push_str(&format!("arch = {}\n", spec.kind));
    out.push_str(&format!("n_inputs = {}\n", spec.n_inputs));
    out.push_str(&format!("skill_hidden = {}\n", spec.skill_hidden));
    out.push_str(&format!("skill_out = {}\n", spec.skill_out));
    out.push_str(&format!("lstm_size = {}\n", spec.lstm_size));
    out.push_str(&format!("controller_hidden = {}\n", spec.controller_hidden));
    out.push_str(&format!("n_actions = {}\n", spec.n_actions));
    out.push_str(&format!("gene_lo = {}\n", bounds.lo));
    out.push_str(&format!("gene_hi = {}\n", bounds.hi));
    out.push_str(&format!("genome_length = {}\n", genome_length(spec)));
}

struct Header {
    fields: HashMap<String, String>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::corrupt(format!("missing header field {key:?}")))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::corrupt(format!("bad value {raw:?} for {key:?}")))
    }

    fn check(&self, kind: &str) -> Result<(ArchitectureSpec, GeneBounds)> {
        let version: u32 = self.parse("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(format!("unsupported format_version {version}")));
        }
        let found = self.get("kind")?;
        if found != kind {
            return Err(Error::corrupt(format!("expected a {kind} checkpoint, found {found}")));
        }
        let spec = ArchitectureSpec {
            kind: self.parse::<ArchitectureKind>("arch")?,
            n_inputs: self.parse("n_inputs")?,
            skill_hidden: self.parse("skill_hidden")?,
            skill_out: self.parse("skill_out")?,
            lstm_size: self.parse("lstm_size")?,
            controller_hidden: self.parse("controller_hidden")?,
            n_actions: self.parse("n_actions")?,
        };
        spec.validate().map_err(|e| Error::corrupt(e.to_string()))?;
        let declared: usize = self.parse("genome_length")?;
        if declared != genome_length(&spec) {
            return Err(Error::corrupt(format!(
                "genome_length {declared} does not match the {} layout ({})",
                spec.kind,
                genome_length(&spec)
            )));
        }
        let bounds = GeneBounds::new(self.parse("gene_lo")?, self.parse("gene_hi")?)
            .map_err(|e| Error::corrupt(e.to_string()))?;
        Ok((spec, bounds))
    }
}

/// Line cursor over a checkpoint body, skipping blank lines.
struct Lines<'a> {
    inner: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().peekable() }
    }

    fn next(&mut self) -> Option<&'a str> {
        loop {
            let line = self.inner.next()?.trim();
            if !line.is_empty() {
                return Some(line);
            }
        }
    }

    fn expect(&mut self, what: &str) -> Result<&'a str> {
        self.next()
            .ok_or_else(|| Error::corrupt(format!("file ends before {what}")))
    }

    fn header(&mut self) -> Result<(Header, &'a str)> {
        let mut fields = HashMap::new();
        loop {
            let line = self.expect("the first section")?;
            if line.starts_with('[') {
                return Ok((Header { fields }, line));
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::corrupt(format!("malformed header line {line:?}")))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::corrupt(format!("duplicate header field {:?}", k.trim())));
            }
        }
    }
}

fn parse_gene(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::corrupt(format!("bad gene value {s:?}")))
}

fn parse_fitness(pipes: &str, hits: &str) -> Result<Option<FitnessPair>> {
    match (pipes, hits) {
        ("none", "none") => Ok(None),
        (p, h) => {
            let p: f64 = p.parse().map_err(|_| Error::corrupt(format!("bad pipes {p:?}")))?;
            let h: f64 = h.parse().map_err(|_| Error::corrupt(format!("bad hits {h:?}")))?;
            Ok(Some(FitnessPair::new(p, h)))
        }
    }
}

fn fitness_fields(f: Option<FitnessPair>) -> (String, String) {
    match f {
        Some(f) => (f.pipes.to_string(), f.hits.to_string()),
        None => ("none".into(), "none".into()),
    }
}

fn build_genome(genes: Vec<f64>, spec: &ArchitectureSpec, bounds: GeneBounds) -> Result<Genome> {
    let expected = genome_length(spec);
    if genes.len() != expected {
        return Err(Error::corrupt(format!("expected {expected} genes, found {}", genes.len())));
    }
    Genome::new(genes, bounds).map_err(|e| Error::corrupt(e.to_string()))
}

impl GenomeCheckpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_spec_header(&mut out, "genome", &self.spec, &self.genome.bounds);
        let (p, h) = fitness_fields(self.fitness);
        out.push_str(&format!("fitness_pipes = {p}\nfitness_hits = {h}\n[genes]\n"));
        for g in &self.genome.genes {
            out.push_str(&format!("{g}\n"));
        }
        out.push_str("[end]\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (header, section) = lines.header()?;
        let (spec, bounds) = header.check("genome")?;
        let fitness = parse_fitness(header.get("fitness_pipes")?, header.get("fitness_hits")?)?;
        if section != "[genes]" {
            return Err(Error::corrupt(format!("expected [genes], found {section:?}")));
        }
        let mut genes = Vec::with_capacity(genome_length(&spec));
        loop {
            let line = lines.expect("[end]")?;
            if line == "[end]" {
                break;
            }
            genes.push(parse_gene(line)?);
        }
        Ok(GenomeCheckpoint { spec, genome: build_genome(genes, &spec, bounds)?, fitness })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

impl PopulationCheckpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_spec_header(&mut out, "population", &self.spec, &self.bounds);
        out.push_str(&format!("generation = {}\n", self.generation));
        out.push_str(&format!("evaluations = {}\n", self.evaluations));
        out.push_str(&format!("stopped_early = {}\n", self.stopped_early));
        out.push_str(&format!("ops_rng = {}\n", self.ops_rng));
        out.push_str(&format!("task_rng = {}\n", self.task_rng));
        out.push_str(&format!("population = {}\n", self.population.len()));
        for (i, ind) in self.population.iter().enumerate() {
            let (p, h) = fitness_fields(ind.fitness);
            out.push_str(&format!("[individual {i}]\n"));
            out.push_str(&format!("pipes = {p}\nhits = {h}\n"));
            out.push_str(&format!("rank = {}\ncrowding = {}\n", ind.rank, ind.crowding));
            let genes: Vec<String> = ind.genome.genes.iter().map(f64::to_string).collect();
            out.push_str(&format!("genes = {}\n", genes.join(" ")));
        }
        out.push_str("[end]\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (header, mut section) = lines.header()?;
        let (spec, bounds) = header.check("population")?;
        let count: usize = header.parse("population")?;
        let mut population = Vec::with_capacity(count);
        for i in 0..count {
            if section != format!("[individual {i}]") {
                return Err(Error::corrupt(format!("expected [individual {i}], found {section:?}")));
            }
            let mut fields = HashMap::new();
            loop {
                let line = lines.expect("[end]")?;
                if line.starts_with('[') {
                    section = line;
                    break;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::corrupt(format!("malformed line {line:?}")))?;
                if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                    return Err(Error::corrupt(format!("duplicate field {:?} in {section}", k.trim())));
                }
            }
            let body = Header { fields };
            let genes = body
                .get("genes")?
                .split_whitespace()
                .map(parse_gene)
                .collect::<Result<Vec<_>>>()?;
            let mut ind = Individual::new(build_genome(genes, &spec, bounds)?);
            ind.fitness = parse_fitness(body.get("pipes")?, body.get("hits")?)?;
            ind.rank = body.parse("rank")?;
            ind.crowding = body.parse("crowding")?;
            population.push(ind);
        }
        if section != "[end]" {
            return Err(Error::corrupt(format!("expected [end], found {section:?}")));
        }
        Ok(PopulationCheckpoint {
            spec,
            bounds,
            generation: header.parse("generation")?,
            evaluations: header.parse("evaluations")?,
            stopped_early: header.parse("stopped_early")?,
            ops_rng: header.get("ops_rng")?.to_string(),
            task_rng: header.get("task_rng")?.to_string(),
            population,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Reads the `kind` header field, for tools that accept either format.
pub fn peek_kind(text: &str) -> Result<String> {
    let (header, _) = Lines::new(text).header()?;
    Ok(header.get("kind")?.to_string())
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

//! Fixed-topology controllers: Skill-only (S), Context-only (C) and
//! Context+Skill (CS).
//!
//! * the Skill module is a feed-forward `inputs → skill_hidden → skill_out`
//!   stack with `tanh` on both layers;
//! * the Context module is a single vanilla LSTM cell of `lstm_size` units
//!   whose hidden output `h_t` is the context vector;
//! * the Controller is a feed-forward `controller_in → controller_hidden →
//!   n_actions` stack with a `tanh` hidden layer and a raw affine output.
//!   Each output above zero fires its action.
//!
//! The controller input is the skill output (S), the context `h_t` (C) or
//! their concatenation, skill first (CS).
//!
//! # Genome layout
//!
//! Parameters are packed in this order, each matrix row-major with one row
//! per output unit, followed by its bias:
//!
//! 1. skill hidden layer `W (skill_hidden × inputs)`, `b`; skill output layer
//!    `W (skill_out × skill_hidden)`, `b` (S and CS only);
//! 2. LSTM gates in the order input, forget, cell, output; per gate the
//!    input-side matrix `W (lstm × inputs)`, the recurrent matrix
//!    `U (lstm × lstm)`, the input-side bias and the recurrent bias
//!    (C and CS only);
//! 3. controller hidden layer then controller output layer.
//!
//! Each gate carries two bias vectors; this is what makes the default C and
//! CS genomes 982 and 1207 genes long (with one bias they would be 942 and
//! 1167).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{ActionPair, Observation, Policy};
use crate::error::{Error, Result};
use crate::genome::Genome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureKind {
    S,
    C,
    CS,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [ArchitectureKind::S, ArchitectureKind::C, ArchitectureKind::CS];

    pub fn has_skill(self) -> bool {
        matches!(self, ArchitectureKind::S | ArchitectureKind::CS)
    }

    pub fn has_context(self) -> bool {
        matches!(self, ArchitectureKind::C | ArchitectureKind::CS)
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchitectureKind::S => "S",
            ArchitectureKind::C => "C",
            ArchitectureKind::CS => "CS",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S" => Ok(ArchitectureKind::S),
            "C" => Ok(ArchitectureKind::C),
            "CS" => Ok(ArchitectureKind::CS),
            other => Err(Error::config(format!("unknown architecture {other:?} (expected S, C or CS)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    pub n_inputs: usize,
    pub skill_hidden: usize,
    pub skill_out: usize,
    pub lstm_size: usize,
    pub controller_hidden: usize,
    pub n_actions: usize,
}

impl ArchitectureSpec {
    pub fn new(kind: ArchitectureKind) -> Self {
        ArchitectureSpec {
            kind,
            n_inputs: 6,
            skill_hidden: 10,
            skill_out: 5,
            lstm_size: 10,
            controller_hidden: 20,
            n_actions: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs != 6 {
            return Err(Error::config(format!("the simulator emits 6 inputs, architecture has {}", self.n_inputs)));
        }
        if self.n_actions != 2 {
            return Err(Error::config(format!("the simulator takes 2 actions, architecture has {}", self.n_actions)));
        }
        let mut sizes = vec![("controller_hidden", self.controller_hidden)];
        if self.kind.has_skill() {
            sizes.push(("skill_hidden", self.skill_hidden));
            sizes.push(("skill_out", self.skill_out));
        }
        if self.kind.has_context() {
            sizes.push(("lstm_size", self.lstm_size));
        }
        if let Some((name, _)) = sizes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        Ok(())
    }

    pub fn controller_inputs(&self) -> usize {
        let skill = if self.kind.has_skill() { self.skill_out } else { 0 };
        let context = if self.kind.has_context() { self.lstm_size } else { 0 };
        skill + context
    }
}

fn dense_len(inputs: usize, outputs: usize) -> usize {
    inputs * outputs + outputs
}

fn lstm_len(inputs: usize, hidden: usize) -> usize {
    4 * ((inputs + hidden) * hidden + 2 * hidden)
}

pub fn genome_length(spec: &ArchitectureSpec) -> usize {
    let mut n = 0;
    if spec.kind.has_skill() {
        n += dense_len(spec.n_inputs, spec.skill_hidden) + dense_len(spec.skill_hidden, spec.skill_out);
    }
    if spec.kind.has_context() {
        n += lstm_len(spec.n_inputs, spec.lstm_size);
    }
    n + dense_len(spec.controller_inputs(), spec.controller_hidden)
        + dense_len(spec.controller_hidden, spec.n_actions)
}

/// Reads consecutive slices off a flat parameter vector.
struct Unpacker<'a> {
    genes: &'a [f64],
    at: usize,
}

impl<'a> Unpacker<'a> {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.genes[self.at..self.at + n].to_vec();
        self.at += n;
        out
    }
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn unpack(src: &mut Unpacker<'_>, inputs: usize, outputs: usize) -> Self {
        let weights = src.take(inputs * outputs);
        let bias = src.take(outputs);
        Dense { inputs, outputs, weights, bias }
    }

    fn pack(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    /// `out = W·x + b`
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
        }
    }

    fn tanh(&self, x: &[f64], out: &mut [f64]) {
        self.affine(x, out);
        out.iter_mut().for_each(|v| *v = v.tanh());
    }
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `hidden × inputs`, row-major.
    pub w: Vec<f64>,
    /// `hidden × hidden`, row-major.
    pub u: Vec<f64>,
    pub b_in: Vec<f64>,
    pub b_rec: Vec<f64>,
}

/// A vanilla LSTM cell; gates indexed by the `GATE_*` constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub inputs: usize,
    pub hidden: usize,
    pub gates: [GateParams; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| *v == 0.0)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmCell {
    fn unpack(src: &mut Unpacker<'_>, inputs: usize, hidden: usize) -> Self {
        let mut gate = || GateParams {
            w: src.take(hidden * inputs),
            u: src.take(hidden * hidden),
            b_in: src.take(hidden),
            b_rec: src.take(hidden),
        };
        let gates = [gate(), gate(), gate(), gate()];
        LstmCell { inputs, hidden, gates }
    }

    fn pack(&self, out: &mut Vec<f64>) {
        for g in &self.gates {
            out.extend_from_slice(&g.w);
            out.extend_from_slice(&g.u);
            out.extend_from_slice(&g.b_in);
            out.extend_from_slice(&g.b_rec);
        }
    }

    fn preactivation(&self, gate: usize, unit: usize, x: &[f64], h_prev: &[f64]) -> f64 {
        let g = &self.gates[gate];
        let wx: f64 = g.w[unit * self.inputs..(unit + 1) * self.inputs]
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum();
        let uh: f64 = g.u[unit * self.hidden..(unit + 1) * self.hidden]
            .iter()
            .zip(h_prev)
            .map(|(u, v)| u * v)
            .sum();
        wx + uh + g.b_in[unit] + g.b_rec[unit]
    }

    /// Advances `state` in place by one input.
    pub fn advance(&self, x: &[f64], state: &mut LstmState) {
        let h_prev = std::mem::take(&mut state.h);
        let mut h = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let i = logistic(self.preactivation(GATE_INPUT, j, x, &h_prev));
            let f = logistic(self.preactivation(GATE_FORGET, j, x, &h_prev));
            let g = self.preactivation(GATE_CELL, j, x, &h_prev).tanh();
            let o = logistic(self.preactivation(GATE_OUTPUT, j, x, &h_prev));
            let c = f * state.c[j] + i * g;
            state.c[j] = c;
            h.push(o * c.tanh());
        }
        state.h = h;
    }
}

/// One LSTM step: returns the new `(h, c)`.
pub fn lstm_step(cell: &LstmCell, x: &[f64], prev: &LstmState) -> LstmState {
    let mut next = prev.clone();
    cell.advance(x, &mut next);
    next
}

#[derive(Debug, Clone, PartialEq)]
struct Skill {
    hidden: Dense,
    output: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct Context {
    cell: LstmCell,
    state: LstmState,
}

/// A decoded, runnable network.
#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    spec: ArchitectureSpec,
    skill: Option<Skill>,
    context: Option<Context>,
    ctrl_hidden: Dense,
    ctrl_output: Dense,
    // scratch
    skill_h: Vec<f64>,
    ctrl_in: Vec<f64>,
    ctrl_h: Vec<f64>,
    ctrl_out: Vec<f64>,
}

/// Unpacks a genome into a runnable network with zeroed context memory.
pub fn decode(genome: &Genome, spec: &ArchitectureSpec) -> Result<Phenotype> {
    spec.validate()?;
    let expected = genome_length(spec);
    if genome.len() != expected {
        return Err(Error::GenomeLength { expected, actual: genome.len() });
    }
    let mut src = Unpacker { genes: &genome.genes, at: 0 };
    let skill = spec.kind.has_skill().then(|| Skill {
        hidden: Dense::unpack(&mut src, spec.n_inputs, spec.skill_hidden),
        output: Dense::unpack(&mut src, spec.skill_hidden, spec.skill_out),
    });
    let context = spec.kind.has_context().then(|| Context {
        cell: LstmCell::unpack(&mut src, spec.n_inputs, spec.lstm_size),
        state: LstmState::zeros(spec.lstm_size),
    });
    let ctrl_hidden = Dense::unpack(&mut src, spec.controller_inputs(), spec.controller_hidden);
    let ctrl_output = Dense::unpack(&mut src, spec.controller_hidden, spec.n_actions);
    debug_assert_eq!(src.at, expected);
    Ok(Phenotype {
        spec: *spec,
        skill,
        context,
        ctrl_hidden,
        ctrl_output,
        skill_h: vec![0.0; spec.skill_hidden],
        ctrl_in: vec![0.0; spec.controller_inputs()],
        ctrl_h: vec![0.0; spec.controller_hidden],
        ctrl_out: vec![0.0; spec.n_actions],
    })
}

impl Phenotype {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    /// Packs the parameters back into genome order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(genome_length(&self.spec));
        if let Some(s) = &self.skill {
            s.hidden.pack(&mut out);
            s.output.pack(&mut out);
        }
        if let Some(c) = &self.context {
            c.cell.pack(&mut out);
        }
        self.ctrl_hidden.pack(&mut out);
        self.ctrl_output.pack(&mut out);
        out
    }

    /// Zeroes `h` and `c`; a no-op for S.
    pub fn reset_context(&mut self) {
        if let Some(c) = &mut self.context {
            c.state = LstmState::zeros(c.cell.hidden);
        }
    }

    /// Current context memory, `None` for S.
    pub fn context_state(&self) -> Option<&LstmState> {
        self.context.as_ref().map(|c| &c.state)
    }

    pub fn lstm(&self) -> Option<&LstmCell> {
        self.context.as_ref().map(|c| &c.cell)
    }

    /// Raw controller outputs for one observation; advances the context.
    pub fn controller_outputs(&mut self, obs: &Observation) -> &[f64] {
        let x = obs.to_array();
        let mut at = 0;
        if let Some(s) = &self.skill {
            s.hidden.tanh(&x, &mut self.skill_h);
            let n = s.output.outputs;
            s.output.tanh(&self.skill_h, &mut self.ctrl_in[..n]);
            at = n;
        }
        if let Some(c) = &mut self.context {
            c.cell.advance(&x, &mut c.state);
            self.ctrl_in[at..].copy_from_slice(&c.state.h);
        }
        self.ctrl_hidden.tanh(&self.ctrl_in, &mut self.ctrl_h);
        self.ctrl_output.affine(&self.ctrl_h, &mut self.ctrl_out);
        &self.ctrl_out
    }

    pub fn policy_step(&mut self, obs: &Observation) -> ActionPair {
        let out = self.controller_outputs(obs);
        ActionPair::new(out[0] > 0.0, out[1] > 0.0)
    }
}

impl Policy for Phenotype {
    fn act(&mut self, obs: &Observation) -> ActionPair {
        self.policy_step(obs)
    }
}

//! Reference implementations written independently of the library code,
//! used as oracles by the integration tests and the acceptance suite.
#![allow(dead_code)]

use ctxskill::emo::FitnessPair;
use ctxskill::nets::{LstmCell, LstmState};
use rand::Rng;

fn dominates(a: &FitnessPair, b: &FitnessPair) -> bool {
    let no_worse = a.pipes >= b.pipes && a.hits <= b.hits;
    no_worse && (a.pipes, a.hits) != (b.pipes, b.hits)
}

/// Front peeling: repeatedly remove every point no remaining point dominates.
pub fn peel_fronts(fitness: &[FitnessPair]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..fitness.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dominates(&fitness[j], &fitness[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Crowding distance with ties in an objective kept in front order.
pub fn crowding(fitness: &[FitnessPair], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut d = vec![0.0; n];
    for obj in 0..2 {
        let value = |k: usize| {
            let f = fitness[front[k]];
            if obj == 0 { f.pipes } else { f.hits }
        };
        let mut pos: Vec<usize> = (0..n).collect();
        // insertion sort keeps equal values in their original order
        for i in 1..n {
            let mut j = i;
            while j > 0 && value(pos[j - 1]) > value(pos[j]) {
                pos.swap(j - 1, j);
                j -= 1;
            }
        }
        d[pos[0]] = f64::INFINITY;
        d[pos[n - 1]] = f64::INFINITY;
        let span = value(pos[n - 1]) - value(pos[0]);
        if span > 0.0 {
            for k in 1..n - 1 {
                d[pos[k]] += (value(pos[k + 1]) - value(pos[k - 1])) / span;
            }
        }
    }
    d
}

/// Indices kept by sorting on (rank, −crowding), ties by index, and taking
/// the first `mu`. Returned sorted.
pub fn survivors(fitness: &[FitnessPair], mu: usize) -> Vec<usize> {
    let fronts = peel_fronts(fitness);
    let mut keyed = Vec::new();
    for (rank, front) in fronts.iter().enumerate() {
        for (&i, c) in front.iter().zip(crowding(fitness, front)) {
            keyed.push((rank, c, i));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut kept: Vec<usize> = keyed.into_iter().take(mu).map(|k| k.2).collect();
    kept.sort_unstable();
    kept
}

/// Random fitness values on a coarse lattice so duplicates and ties are common.
pub fn random_fitness<R: Rng>(rng: &mut R, n: usize) -> Vec<FitnessPair> {
    (0..n)
        .map(|_| FitnessPair::new(f64::from(rng.random_range(0..8u8)) * 0.5, f64::from(rng.random_range(0..8u8))))
        .collect()
}

/// LSTM step from the stacked form `z = [W | U] · [x; h] + b_in + b_rec`,
/// gates in the order input, forget, cell, output.
pub fn lstm_reference(cell: &LstmCell, x: &[f64], prev: &LstmState) -> LstmState {
    let (n_in, n_h) = (cell.inputs, cell.hidden);
    let xh: Vec<f64> = x.iter().chain(&prev.h).copied().collect();
    let mut z = vec![0.0; 4 * n_h];
    for (g, gate) in cell.gates.iter().enumerate() {
        for r in 0..n_h {
            let mut acc = gate.b_in[r] + gate.b_rec[r];
            for (k, v) in xh.iter().enumerate() {
                let w = if k < n_in { gate.w[r * n_in + k] } else { gate.u[r * n_h + (k - n_in)] };
                acc += w * v;
            }
            z[g * n_h + r] = acc;
        }
    }
    let sig = |v: f64| 0.5 * (1.0 + (0.5 * v).tanh());
    let mut next = LstmState { h: vec![0.0; n_h], c: vec![0.0; n_h] };
    for r in 0..n_h {
        let i = sig(z[r]);
        let f = sig(z[n_h + r]);
        let g = z[2 * n_h + r].tanh();
        let o = sig(z[3 * n_h + r]);
        next.c[r] = f * prev.c[r] + i * g;
        next.h[r] = o * next.c[r].tanh();
    }
    next
}

pub fn random_cell<R: Rng>(rng: &mut R, inputs: usize, hidden: usize, scale: f64) -> LstmCell {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    let mut gate = || ctxskill::nets::GateParams {
        w: v(hidden * inputs),
        u: v(hidden * hidden),
        b_in: v(hidden),
        b_rec: v(hidden),
    };
    let gates = [gate(), gate(), gate(), gate()];
    LstmCell { inputs, hidden, gates }
}

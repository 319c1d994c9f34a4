//! NSGA-II building blocks for two objectives: pipes (maximised) and hits
//! (minimised).
//!
//! Nothing here knows about the simulator; operators take an explicit RNG so
//! identical seeds give identical results.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genome::Genome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessPair {
    /// Mean pipes passed, maximised.
    pub pipes: f64,
    /// Mean penalty units, minimised.
    pub hits: f64,
}

impl FitnessPair {
    pub fn new(pipes: f64, hits: f64) -> Self {
        FitnessPair { pipes, hits }
    }
}

/// `a` is no worse than `b` in both objectives and strictly better in one.
pub fn dominates(a: &FitnessPair, b: &FitnessPair) -> bool {
    a.pipes >= b.pipes && a.hits <= b.hits && (a.pipes > b.pipes || a.hits < b.hits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<FitnessPair>,
    /// Front index; only meaningful after sorting the containing population.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Individual { genome, fitness: None, rank: usize::MAX, crowding: 0.0 }
    }

    pub fn with_fitness(genome: Genome, fitness: FitnessPair) -> Self {
        Individual { fitness: Some(fitness), ..Individual::new(genome) }
    }

    pub fn fitness(&self) -> FitnessPair {
        self.fitness.expect("individual has not been evaluated")
    }
}

/// Fast non-dominated sort. Returns fronts of indices into `fitness`, front 0
/// being the non-dominated set; each front is in ascending index order.
pub fn fast_non_dominated_sort(fitness: &[FitnessPair]) -> Vec<Vec<usize>> {
    let n = fitness.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&fitness[p], &fitness[q]) {
                dominated_by[p].push(q);
                domination_count[q] += 1;
            } else if dominates(&fitness[q], &fitness[p]) {
                dominated_by[q].push(p);
                domination_count[p] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
pub fn crowding_distance(fitness: &[FitnessPair], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n <= 2 {
        distance.iter_mut().for_each(|d| *d = f64::INFINITY);
        return distance;
    }
    let objectives: [fn(&FitnessPair) -> f64; 2] = [|f| f.pipes, |f| f.hits];
    for objective in objectives {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| objective(&fitness[front[a]]).total_cmp(&objective(&fitness[front[b]])));
        let lo = objective(&fitness[front[order[0]]]);
        let hi = objective(&fitness[front[order[n - 1]]]);
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let gap = objective(&fitness[front[order[k + 1]]]) - objective(&fitness[front[order[k - 1]]]);
            distance[order[k]] += gap / range;
        }
    }
    distance
}

/// Sorts `pop` into fronts and stores rank and crowding on every member.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fitness: Vec<FitnessPair> = pop.iter().map(Individual::fitness).collect();
    let fronts = fast_non_dominated_sort(&fitness);
    for (rank, front) in fronts.iter().enumerate() {
        let crowding = crowding_distance(&fitness, front);
        for (&i, d) in front.iter().zip(crowding) {
            pop[i].rank = rank;
            pop[i].crowding = d;
        }
    }
    fronts
}

/// Simulated binary crossover with distribution index `eta_c`.
///
/// With probability `p_crossover` every gene pair is recombined (children
/// randomly swapped per gene, then clipped); otherwise the children are
/// copies of the parents.
pub fn sbx_crossover<R: Rng + ?Sized>(
    p1: &Genome,
    p2: &Genome,
    eta_c: f64,
    p_crossover: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    assert_eq!(p1.len(), p2.len(), "SBX parents differ in length");
    assert_eq!(p1.bounds, p2.bounds, "SBX parents differ in bounds");
    let mut c1 = p1.clone();
    let mut c2 = p2.clone();
    if rng.random::<f64>() >= p_crossover {
        return (c1, c2);
    }
    let bounds = p1.bounds;
    let exponent = 1.0 / (eta_c + 1.0);
    for ((a, b), (x1, x2)) in c1
        .genes
        .iter_mut()
        .zip(c2.genes.iter_mut())
        .zip(p1.genes.iter().zip(&p2.genes))
    {
        if (x1 - x2).abs() <= 1e-14 {
            continue;
        }
        let u: f64 = rng.random();
        let beta = if u <= 0.5 {
            (2.0 * u).powf(exponent)
        } else {
            (1.0 / (2.0 * (1.0 - u))).powf(exponent)
        };
        let mid = 0.5 * (x1 + x2);
        let half_spread = 0.5 * beta * (x2 - x1).abs();
        let (mut lo, mut hi) = (mid - half_spread, mid + half_spread);
        if rng.random_bool(0.5) {
            std::mem::swap(&mut lo, &mut hi);
        }
        *a = bounds.clip(lo);
        *b = bounds.clip(hi);
    }
    (c1, c2)
}

/// Bounded polynomial mutation with distribution index `eta_m`; each gene
/// mutates independently with probability `p_gene`.
pub fn polynomial_mutation<R: Rng + ?Sized>(g: &Genome, eta_m: f64, p_gene: f64, rng: &mut R) -> Genome {
    let mut out = g.clone();
    let bounds = g.bounds;
    let width = bounds.width();
    let exponent = 1.0 / (eta_m + 1.0);
    for x in out.genes.iter_mut() {
        if p_gene <= 0.0 || rng.random::<f64>() >= p_gene {
            continue;
        }
        let delta_lo = (*x - bounds.lo) / width;
        let delta_hi = (bounds.hi - *x) / width;
        let u: f64 = rng.random();
        let delta_q = if u < 0.5 {
            let xy = 1.0 - delta_lo;
            let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta_m + 1.0);
            val.powf(exponent) - 1.0
        } else {
            let xy = 1.0 - delta_hi;
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta_m + 1.0);
            1.0 - val.powf(exponent)
        };
        *x = bounds.clip(*x + delta_q * width);
    }
    out
}

/// Crowded comparison: lower rank wins, then larger crowding distance.
pub fn crowded_cmp(a: &Individual, b: &Individual) -> Ordering {
    a.rank
        .cmp(&b.rank)
        .then_with(|| b.crowding.total_cmp(&a.crowding))
}

/// `n` binary tournaments on crowded comparison; full ties are settled by a
/// coin flip. Returns indices into `pop`.
pub fn tournament_dcd<R: Rng + ?Sized>(pop: &[Individual], n: usize, rng: &mut R) -> Vec<usize> {
    assert!(!pop.is_empty(), "tournament on an empty population");
    let len = pop.len();
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..len);
            let b = if len > 1 {
                let b = rng.random_range(0..len - 1);
                if b >= a { b + 1 } else { b }
            } else {
                a
            };
            match crowded_cmp(&pop[a], &pop[b]) {
                Ordering::Less => a,
                Ordering::Greater => b,
                Ordering::Equal => {
                    if rng.random_bool(0.5) {
                        a
                    } else {
                        b
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurvivalMode {
    /// Whole fronts in rank order, last front truncated by crowding.
    #[default]
    Truncation,
    /// Binary crowded tournaments over the merged pool.
    Tournament,
}

/// (μ + λ) survival: admit whole fronts in rank order and cut the last
/// admitted front by descending crowding distance (stable on input order).
/// Survivors keep the rank and crowding computed on the pool.
pub fn select_survivors(mut pool: Vec<Individual>, mu: usize) -> Vec<Individual> {
    assert!(mu <= pool.len(), "cannot keep {mu} of {} individuals", pool.len());
    let fronts = assign_rank_and_crowding(&mut pool);
    let mut keep = Vec::with_capacity(mu);
    for front in fronts {
        if keep.len() + front.len() <= mu {
            keep.extend(front);
        } else {
            let mut last = front;
            last.sort_by(|&a, &b| pool[b].crowding.total_cmp(&pool[a].crowding));
            keep.extend(last.into_iter().take(mu - keep.len()));
        }
        if keep.len() == mu {
            break;
        }
    }
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("index admitted twice"))
        .collect()
}

/// Survival by crowded tournaments over the pool; may admit duplicates and
/// is not elitist.
pub fn select_survivors_tournament<R: Rng + ?Sized>(
    mut pool: Vec<Individual>,
    mu: usize,
    rng: &mut R,
) -> Vec<Individual> {
    assign_rank_and_crowding(&mut pool);
    tournament_dcd(&pool, mu, rng)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::GeneBounds;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fp(p: f64, h: f64) -> FitnessPair {
        FitnessPair::new(p, h)
    }

    fn ind(p: f64, h: f64) -> Individual {
        Individual::with_fitness(Genome::zeros(1, GeneBounds::default()), fp(p, h))
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&fp(5.0, 0.0), &fp(3.0, 2.0)));
        assert!(!dominates(&fp(5.0, 0.0), &fp(5.0, 0.0)));
        assert!(!dominates(&fp(5.0, 1.0), &fp(4.0, 0.0)));
        assert!(!dominates(&fp(4.0, 0.0), &fp(5.0, 1.0)));
    }

    #[test]
    fn identical_fitness_single_front() {
        let f = vec![fp(1.0, 1.0); 7];
        assert_eq!(fast_non_dominated_sort(&f), vec![(0..7).collect::<Vec<_>>()]);
    }

    #[test]
    fn chain_gives_singletons() {
        let f: Vec<_> = (0..6).map(|k| fp(k as f64, -(k as f64))).collect();
        let fronts = fast_non_dominated_sort(&f);
        assert_eq!(fronts, (0..6).rev().map(|k| vec![k]).collect::<Vec<_>>());
    }

    #[test]
    fn small_fronts_are_boundary() {
        let f = vec![fp(1.0, 2.0), fp(2.0, 3.0)];
        assert!(crowding_distance(&f, &[0, 1]).iter().all(|d| d.is_infinite()));
        assert!(crowding_distance(&f, &[1]).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn equally_spaced_middle_is_two() {
        let f = vec![fp(0.0, 0.0), fp(1.0, 1.0), fp(2.0, 2.0)];
        let d = crowding_distance(&f, &[0, 1, 2]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_stay_finite() {
        let f = vec![fp(1.0, 1.0); 5];
        let d = crowding_distance(&f, &[0, 1, 2, 3, 4]);
        assert!(d[1..4].iter().all(|x| x.is_finite()));
        assert!(d.iter().all(|x| !x.is_nan()));
    }

    #[test]
    fn identical_parents_sbx_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Genome::random(50, -5.0, 5.0, GeneBounds::default(), &mut rng);
        let (a, b) = sbx_crossover(&p, &p, 20.0, 1.0, &mut rng);
        assert_eq!(a, p);
        assert_eq!(b, p);
    }

    #[test]
    fn zero_probability_mutation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Genome::random(50, -5.0, 5.0, GeneBounds::default(), &mut rng);
        assert_eq!(polynomial_mutation(&p, 20.0, 0.0, &mut rng), p);
    }

    #[test]
    fn dominator_wins_tournament() {
        let mut pop = vec![ind(5.0, 0.0), ind(3.0, 2.0)];
        assign_rank_and_crowding(&mut pop);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(tournament_dcd(&pop, 200, &mut rng).iter().all(|&i| i == 0));
    }

    #[test]
    fn larger_crowding_wins_within_rank() {
        let mut pop = vec![ind(1.0, 1.0), ind(2.0, 2.0)];
        pop[0].rank = 0;
        pop[1].rank = 0;
        pop[0].crowding = 0.5;
        pop[1].crowding = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(tournament_dcd(&pop, 200, &mut rng).iter().all(|&i| i == 1));
    }

    #[test]
    fn survivors_of_exact_pool_are_the_pool() {
        let pool: Vec<_> = (0..8).map(|k| ind(k as f64 % 3.0, (k * 7 % 5) as f64)).collect();
        let out = select_survivors(pool.clone(), 8);
        let mut a: Vec<_> = pool.iter().map(|i| (i.fitness().pipes, i.fitness().hits)).collect();
        let mut b: Vec<_> = out.iter().map(|i| (i.fitness().pipes, i.fitness().hits)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn front_zero_survives() {
        let mut pool: Vec<_> = (0..4).map(|k| ind(10.0 + k as f64, k as f64)).collect();
        pool.extend((0..10).map(|k| ind(k as f64 * 0.5, 20.0 + k as f64)));
        let out = select_survivors(pool, 6);
        for k in 0..4 {
            assert!(out.iter().any(|i| i.fitness() == fp(10.0 + k as f64, k as f64)));
        }
    }

    #[test]
    fn tournament_survival_returns_mu() {
        let pool: Vec<_> = (0..10).map(|k| ind(k as f64, (10 - k) as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(select_survivors_tournament(pool, 6, &mut rng).len(), 6);
    }
}

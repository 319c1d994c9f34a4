use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval every gene must stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for GeneBounds {
    fn default() -> Self {
        GeneBounds { lo: -10.0, hi: 10.0 }
    }
}

impl GeneBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!("gene bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        Ok(GeneBounds { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clip(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Flat real-valued parameter vector of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub genes: Vec<f64>,
    pub bounds: GeneBounds,
}

impl Genome {
    pub fn new(genes: Vec<f64>, bounds: GeneBounds) -> Result<Self> {
        if let Some((i, g)) = genes.iter().enumerate().find(|(_, g)| !bounds.contains(**g)) {
            return Err(Error::config(format!(
                "gene {i} = {g} lies outside [{}, {}]",
                bounds.lo, bounds.hi
            )));
        }
        Ok(Genome { genes, bounds })
    }

    pub fn zeros(len: usize, bounds: GeneBounds) -> Self {
        Genome { genes: vec![0.0; len], bounds }
    }

    /// Uniform initialisation in `[init_lo, init_hi]`, clipped to the bounds.
    pub fn random<R: Rng + ?Sized>(
        len: usize,
        init_lo: f64,
        init_hi: f64,
        bounds: GeneBounds,
        rng: &mut R,
    ) -> Self {
        let genes = (0..len)
            .map(|_| bounds.clip(rng.random_range(init_lo..=init_hi)))
            .collect();
        Genome { genes, bounds }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn within_bounds(&self) -> bool {
        self.genes.iter().all(|g| self.bounds.contains(*g))
    }
}

//! Seeding and text snapshots of the ChaCha generators used everywhere.
//!
//! A run seed `s` drives two independent streams of `ChaCha8Rng::seed_from_u64(s)`:
//! stream [`OPERATORS_STREAM`] for initialisation, mating selection and
//! variation, and stream [`TASKS_STREAM`] for task-parameter sampling.
//! Episode layouts are seeded from the 32-bit seeds drawn into each task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const OPERATORS_STREAM: u64 = 0;
pub const TASKS_STREAM: u64 = 1;
pub const GRID_STREAM: u64 = 2;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `<seed as 64 hex digits> <stream> <word position>`
pub fn snapshot(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed} {} {}", rng.get_stream(), rng.get_word_pos())
}

pub fn restore(text: &str) -> Result<ChaCha8Rng> {
    let bad = || Error::corrupt(format!("malformed generator state {text:?}"));
    let mut parts = text.split_whitespace();
    let hex = parts.next().ok_or_else(bad)?;
    let stream: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let word_pos: u128 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if parts.next().is_some() || hex.len() != 64 || !hex.is_ascii() {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

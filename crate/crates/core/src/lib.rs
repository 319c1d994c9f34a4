//! Context+Skill neuroevolution on Flappy Ball.
//!
//! * [`env`]: the deterministic simulator with tunable flap, gravity, forward
//!   and drag effects;
//! * [`nets`]: the S, C and CS fixed-topology networks and their genome layout;
//! * [`emo`]: NSGA-II sorting, crowding, variation and selection;
//! * [`driver`]: multi-task fitness evaluation and the training loop;
//! * [`genharness`]: generalization grids, pairwise differences, contour
//!   slices and replays;
//! * [`checkpoint`] and [`config`]: the on-disk formats.

pub mod checkpoint;
pub mod config;
pub mod driver;
pub mod emo;
pub mod env;
pub mod error;
pub mod genharness;
pub mod genome;
pub mod nets;
pub mod rngstate;

pub use error::{Error, Result};

//! Simulation of 4D radio maps over space, time and frequency, masked
//! autoencoder pre-training on them, and zero-shot reconstruction against
//! kriging and mean baselines.

pub mod autoencoder;
pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod gafe;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod masking;
pub mod nn;
pub mod shape;
pub mod simulator;
pub mod tape;
pub mod training;

pub use error::{Error, PartitionError, Result};

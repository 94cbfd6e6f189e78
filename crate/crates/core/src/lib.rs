//! Random-propagation graph neural networks: sparse graphs, dense matrices,
//! a small reverse-mode tape, propagation trunks with random diagonal
//! weights, training loops, and rank analysis. Works without `std`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
pub mod datasets;
pub mod dropout;
pub mod error;
pub mod graph;
pub mod math;
pub mod matrix;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod params;
pub mod propagation;
pub mod protocol;
pub mod rng;
pub mod svd;
pub mod tape;
pub mod train;

pub use error::{Error, Result};

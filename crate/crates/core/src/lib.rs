//! Simulation toolkit for random walks trapped in a two-dimensional
//! discrete Gaussian free field landscape.

pub mod cli;
pub mod dgff;
pub mod error;
pub mod grid;
pub mod green;
pub mod harness;
pub mod io;
pub mod kprocess;
pub mod linalg;
pub mod parallel;
pub mod path;
pub mod rng;
pub mod scales;
pub mod spectral;
pub mod stats;
pub mod traps;
pub mod walk;

pub use error::{Error, Result};

pub mod bellman;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod model;
pub mod quadrature;
pub mod sampling;
pub mod sieve;
pub mod smoothing;
pub mod solver;

pub use error::{Error, Result};

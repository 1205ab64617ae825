//! Trilevel differentiable architecture search for small super-resolution networks.

pub mod error;
pub mod ndgraph;
pub mod projections;
pub mod searchspace;
pub mod derive;
pub mod dataio;
pub mod engine;
pub mod cli;

pub use error::{Error, Result};

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod labelspace;
pub mod losses;
pub mod model;
pub mod regimes;
pub mod regularizers;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

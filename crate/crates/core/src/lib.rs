pub mod container;
pub mod eval;
pub mod experiment;
pub mod error;
pub mod model;
pub mod rng;

pub use error::{Result, SpireError};
pub mod losses;
pub mod synthgen;
pub mod trainer;

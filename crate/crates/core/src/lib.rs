pub mod cli;
pub mod error;
pub mod io;
pub mod keyframe;
pub mod mask;
pub mod merging;
pub mod metrics;
pub mod qubo;
pub mod synthgen;
pub mod uplift;

pub use error::{Error, Result};

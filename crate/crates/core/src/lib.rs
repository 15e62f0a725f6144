pub mod attributor;
pub mod datahub;
pub mod diagnostics;
pub mod diffcore;
pub mod distiller;
pub mod error;
pub mod nets;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

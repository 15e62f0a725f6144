//! Models, flat parameter vectors and checkpoint files.

pub mod checkpoint;
pub mod model;
pub mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use model::{argmax, Activation, Architecture, InitScheme, Model, ModelSpec};
pub use params::{ParamVector, Segment};

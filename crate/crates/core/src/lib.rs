pub mod entropy;
pub mod error;
pub mod eval;
pub mod graph;
pub mod math;
pub mod model;
pub mod qmap;
pub mod stream;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

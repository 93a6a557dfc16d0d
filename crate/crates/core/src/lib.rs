pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

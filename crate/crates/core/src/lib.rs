pub mod data;
pub mod error;
pub mod harness;
pub mod net;
pub mod optim;
pub mod probe;
pub mod stats;
pub mod surgery;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradPair, Real, Tensor, Tensor64};

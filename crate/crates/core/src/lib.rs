pub mod autograd;
pub mod container;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod sampling;
pub mod seed;
pub mod syndata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

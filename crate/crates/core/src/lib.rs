//! Iterative magnitude pruning with budget-aware retraining schedules.

pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pruning;
pub mod report;
pub mod schedules;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

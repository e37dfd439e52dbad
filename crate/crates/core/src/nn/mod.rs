//! Minimal deterministic training core: layers, backprop, loss and masked SGD.

pub mod checkpoint;
pub mod gradcheck;
mod layer;
pub mod loss;
mod network;
pub mod rng;
mod sgd;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{Layer, LayerKind, MaskMode, Parameter};
pub use loss::softmax_cross_entropy;
pub use network::{mlp_kinds, Network, ParamId};
pub use sgd::{sgd_step, SgdConfig};

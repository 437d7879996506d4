//! Heterogeneously compressed ensembles: pair a quantized copy and a pruned
//! copy of one pretrained convnet, train the pruned member to fix what the
//! quantized one gets wrong, and average their outputs.

pub mod checkpoint;
pub mod cost;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod prune;
pub mod quant;
pub mod region;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

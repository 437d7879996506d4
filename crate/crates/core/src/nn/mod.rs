//! Residual convnets: architecture, parameters, forward/backward, training and evaluation.

pub mod data;
pub mod network;
pub mod spec;
pub mod store;
pub mod train;

pub use data::{Batch, Dataset, SyntheticConfig};
pub use network::{backward, forward, forward_train, forward_with_hook, ActivationHook};
pub use spec::{Family, LayerKind, LayerShape, NetworkSpec};
pub use store::{build_model, Gradients, ParameterStore};
pub use train::{evaluate, train_baseline, Classifier, EvalResult, TrainConfig, TrainingLog};

//! Topology, inference with activation capture, training and weight files.

mod forward;
mod spec;
mod train;
mod weights;

pub use forward::{forward, forward_traced, run_forward, ActivationTrace, ForwardOutput, ReluRecord, Tap};
pub use spec::{Layer, LayerSpec, NetworkSpec};
pub use train::{accuracy, loss_and_gradients, train, train_with, EpochStats, LrSchedule, Sample, TrainConfig, TrainOutcome};
pub use weights::{fan_in, init_weight_std, LayerParams, NetworkWeights, WEIGHT_MAGIC, WEIGHT_VERSION};

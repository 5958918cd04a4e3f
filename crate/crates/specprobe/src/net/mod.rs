//! Convolutional network for `channels x time` inputs: architecture spec,
//! forward pass with analysis-layer taps, receptive-field arithmetic,
//! training and checkpoints.

mod network;
mod rf;
mod spec;
mod train;

pub mod checkpoint;

pub use network::{build_network, elu, ActivationMap, ForwardOutput, NetError, Network};
pub use rf::{receptive_field, ReceptiveField};
pub use spec::{LayerDesc, NetworkSpec, Shape, SpecError, StandardParams};
pub use train::{train, EpochMetrics, TrainConfig, TrainOutput};

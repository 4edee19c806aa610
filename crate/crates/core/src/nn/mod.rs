//! Feedforward network engine: inference, SGD training, and the input-space
//! derivatives the attacks consume.

mod arch;
mod checkpoint;
mod layer;
mod network;
mod train;

pub use arch::Architecture;
pub use checkpoint::{checkpoint_load, checkpoint_save, decode_checkpoint, encode_checkpoint};
pub use layer::{Layer, LayerSpec};
pub use network::{
    cross_entropy, softmax, Forward, ForwardTrace, Mode, Network, OutputSpace, PROB_FLOOR,
};
pub use train::{evaluate_accuracy, train_sgd, EpochStats, TrainConfig};

//! Per-variable U-Net: two input channels, one sigmoid output channel.
//!
//! Encoder stages apply `convs_per_stage` 3x3 convolutions (ReLU) and a 2x2
//! max pool, halving the image and doubling channels. Decoder stages apply a
//! 2x2 stride-2 transposed convolution (ReLU) that halves channels,
//! concatenate the matching encoder output, and run the stage convolutions
//! back to the halved channel count. A 1x1 projection with sigmoid produces
//! the output.

mod adam;
mod checkpoint;
mod network;
mod ops;
mod scalar;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use network::{
    backward, batch_gradients, forward, forward_cached, init_network, mse_loss, tensor_layout, Example,
    ForwardCache, Gradients, NetworkConfig, NetworkWeights, Tensor,
};
pub use scalar::Scalar;

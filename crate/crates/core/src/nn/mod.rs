//! Dense convolutional encoder–decoder with hand-written reverse-mode gradients.

mod checkpoint;
pub mod ops;
mod network;
mod params;
mod spec;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use network::{Gradients, Network, Tape};
pub use params::{Block, Layout, ParameterSet, Unit};
pub use spec::{conv_output_dim, dense_layer_inputs, ConvSpec, LayerSpec, NetworkSpec, Schema, StemMode};
pub use tensor::Tensor;

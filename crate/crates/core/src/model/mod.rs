//! The network: shared token embedding, decoder layers built around the
//! multi-modal cross-attention block, output head and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod params;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Dtype, CHECKPOINT_FORMAT};
pub use config::ModelConfig;
pub use forward::{
    bind, decoder_layer_forward, forward_on_tape, mcm_forward, model_forward, validate_batch, AttentionTrace,
    ForwardOutput, LayerTrace, Positions, Streams,
};
pub use params::{
    count_parameters, Decay, DecoderLayer, FeedForward, Init, Linear, ModelParams, ModelWeights, Norm, TensorSpec,
    Tensors, INIT_STD,
};

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch rejected: {0}")]
    Batch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

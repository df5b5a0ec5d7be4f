//! Transformer encoder, task heads, feature-extraction baselines and
//! checkpoint persistence.

mod baseline;
mod checkpoint;
mod config;
mod encoder;
mod heads;
mod params;

pub use baseline::{
    train_static_embeddings, FrozenSentenceBaseline, LinearProbe, PoolingBaseline, ProbeConfig,
    StaticEmbeddings,
};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Stage, StageWarning,
    FORMAT_VERSION, MAGIC,
};
pub use config::{Activation, EncoderConfig};
pub use encoder::{
    encode_batch, extract_sentence_embedding, forward_encoder, init_params, Batch, EncoderOutput,
    EncoderParams, Mode,
};
pub use heads::{forward_classify, forward_mlm, BoundModel, HeadKind, Model, TaskHead};
pub use params::{truncated_normal, ParamBlock, ParamSet};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("head mismatch: {0}")]
    HeadMismatch(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

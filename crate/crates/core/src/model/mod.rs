//! Toy 64-bit encoder-decoder transformer with a compression-rate bin
//! embedding, plus its trainer, decoder, and checkpoint format.

mod checkpoint;
mod config;
mod decode;
mod gradcheck;
mod net;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Conditioning, ModelConfig};
pub use decode::{decode, DecodeMode};
pub use gradcheck::gradient_check;
pub use net::{
    batch_loss, embed_with_cr, forward, loss_and_grads, prepare_example, EmbedSide, ModelParams,
    PreparedExample,
};
pub use train::{
    build_vocabs, prepare_pairs, train, Hyperparams, MetricRow, TrainReport, TrainState,
};
pub use vocab::{Vocab, BOS, EOS, PAD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("index out of range: {0}")]
    IndexError(String),
    #[error("sequence length {len} exceeds max_len {max}")]
    LengthError { len: usize, max: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

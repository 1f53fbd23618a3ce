//! Corpus engineering and verification toolkit for compression-rate
//! conditioned cross-lingual summarization.
//!
//! The crate covers the full desk-scale pipeline: corpus I/O and
//! tokenization ([`corpus`]), ROUGE/BLEU/length metrics ([`metrics`]),
//! compression-rate binning ([`crbin`]), salience-driven data augmentation
//! ([`augment`]), a synthetic salience-translation corpus ([`synth`]), and a
//! small 64-bit encoder-decoder transformer with a learned bin embedding
//! ([`model`]).

pub mod augment;
pub mod corpus;
pub mod crbin;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod synth;

pub use augment::{AugmentConfig, AugmentError, RougeVariant, SalienceTable, Schedule};
pub use corpus::{
    compression_rate, segment_sentences, AugmentedSample, ClsSample, CorpusError, Document,
    MergesTable, PairOrigin, Sentence, Token, Tokenizer, TokenizerScheme, TrainingPair,
};
pub use crbin::{clip_gamma, BinConfig, BinError, BinIndex};
pub use metrics::{
    bleu_corpus, length_variance, rouge_l, rouge_n, BleuScore, LengthVariance, MetricError,
    RougeScore,
};
pub use synth::{SynthConfig, SynthError, SynthSample};

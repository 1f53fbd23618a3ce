use crate::crbin::BinConfig;
use serde::{Deserialize, Serialize};

/// How the compression-rate bin is fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Learned bin embedding added to every token embedding on both sides.
    CrEmbedding,
    /// A reserved per-bin token prepended to source and target, mirroring
    /// the indicator-token multitask scheme.
    TaskToken,
    /// No conditioning; the bin is ignored.
    None,
}

impl std::str::FromStr for Conditioning {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cr_embedding" | "cr-embedding" => Ok(Conditioning::CrEmbedding),
            "task_token" | "task-token" => Ok(Conditioning::TaskToken),
            "none" => Ok(Conditioning::None),
            other => Err(format!("unknown conditioning mode: {other}")),
        }
    }
}

/// Architecture hyperparameters. All math is in 64-bit floats so
/// finite-difference checks are meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub bin_config: BinConfig,
    pub conditioning: Conditioning,
    pub label_smoothing: f64,
}

impl ModelConfig {
    /// Toy defaults that train in minutes on one CPU core set.
    pub fn toy(bin_config: BinConfig) -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            src_vocab: 0,
            tgt_vocab: 0,
            max_len: 64,
            bin_config,
            conditioning: Conditioning::CrEmbedding,
            label_smoothing: 0.0,
        }
    }

    /// Minimal config for finite-difference checks.
    pub fn tiny(bin_config: BinConfig) -> Self {
        ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            src_vocab: 0,
            tgt_vocab: 0,
            max_len: 32,
            bin_config,
            conditioning: Conditioning::CrEmbedding,
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), super::ModelError> {
        if self.d_model % self.heads != 0 {
            return Err(super::ModelError::ConfigMismatch(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.src_vocab == 0 || self.tgt_vocab == 0 {
            return Err(super::ModelError::ConfigMismatch(
                "layers and vocab sizes must be nonzero".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(super::ModelError::ConfigMismatch(
                "label smoothing must lie in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

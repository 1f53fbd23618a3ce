//! Effective tool configuration: CLI flag > config file > environment > default.

use crate::{Cli, CliError};
use csc_core::{BinConfig, MergesTable, Tokenizer, TokenizerScheme};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    delta: Option<f64>,
    jobs: Option<usize>,
    tokenizer: Option<String>,
    merges: Option<PathBuf>,
}

pub struct ToolConfig {
    pub seed: u64,
    pub delta: f64,
    pub jobs: usize,
    pub tokenizer_name: String,
    pub merges: Option<PathBuf>,
    seed_source: &'static str,
}

impl ToolConfig {
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let file: FileConfig = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Input(format!("config file {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Input(format!("config file {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let env_seed = match std::env::var("CSC_SEED") {
            Ok(v) => Some(v.parse::<u64>().map_err(|_| {
                CliError::Input(format!("CSC_SEED must be an unsigned integer, got {v:?}"))
            })?),
            Err(_) => None,
        };
        let (seed, seed_source) = if let Some(s) = cli.seed {
            (s, "flag")
        } else if let Some(s) = file.seed {
            (s, "config file")
        } else if let Some(s) = env_seed {
            (s, "CSC_SEED")
        } else {
            (0, "default")
        };

        let delta = cli.delta.or(file.delta).unwrap_or(0.2);
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(CliError::Input(format!("delta must lie in (0, 1], got {delta}")));
        }
        let jobs = cli.jobs.or(file.jobs).unwrap_or(1);
        if jobs < 1 {
            return Err(CliError::Input("jobs must be at least 1".into()));
        }
        let tokenizer_name = cli
            .tokenizer
            .clone()
            .or(file.tokenizer)
            .unwrap_or_else(|| "whitespace_cjk".to_string());
        let merges = cli.merges.clone().or(file.merges);
        if let Some(p) = &merges {
            if !p.exists() {
                return Err(CliError::Input(format!("merges table not found: {}", p.display())));
            }
        }
        Ok(ToolConfig { seed, delta, jobs, tokenizer_name, merges, seed_source })
    }

    pub fn bins(&self) -> Result<BinConfig, CliError> {
        Ok(BinConfig::new(self.delta)?)
    }

    pub fn tokenizer(&self) -> Result<Tokenizer, CliError> {
        if let Some(path) = &self.merges {
            let table = MergesTable::from_path(path)?;
            return Ok(Tokenizer::new(TokenizerScheme::Subword(table)));
        }
        let scheme = match self.tokenizer_name.as_str() {
            "whitespace" => TokenizerScheme::Whitespace,
            "whitespace_cjk" => TokenizerScheme::WhitespaceCjk,
            other => {
                return Err(CliError::Input(format!(
                    "unknown tokenizer {other:?} (expected whitespace or whitespace_cjk)"
                )))
            }
        };
        Ok(Tokenizer::new(scheme))
    }

    /// One auditable line on stderr describing the merged configuration.
    pub fn log_effective(&self) {
        eprintln!(
            "csc: seed={} (from {}), delta={}, jobs={}, tokenizer={}{}",
            self.seed,
            self.seed_source,
            self.delta,
            self.jobs,
            self.tokenizer_name,
            self.merges
                .as_ref()
                .map(|p| format!(", merges={}", p.display()))
                .unwrap_or_default()
        );
    }
}

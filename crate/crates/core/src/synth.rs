//! Synthetic salience-translation task: the desk-scale stand-in corpus for
//! verifying the compression-rate conditioning mechanism.
//!
//! A source is a random sequence over `a1..aV`. Its target keeps the
//! `ceil(gamma * n)` highest-salience tokens in source order, translated by
//! the fixed bijection `ai -> bi`. Salience is the token id itself with an
//! earlier-position tie-break, so importance is fully observable from
//! surface forms.

use crate::corpus::{write_jsonl, CorpusError, PairOrigin, TrainingPair};
use crate::crbin::BinConfig;
use crate::seeding::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("sample count must be positive")]
    InvalidCount,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { vocab_size: 20, len_min: 20, len_max: 40, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.vocab_size < 4 {
            return Err(SynthError::InvalidConfig("vocab_size must be >= 4".into()));
        }
        if self.len_min < 1 || self.len_min > self.len_max {
            return Err(SynthError::InvalidConfig(
                "need 1 <= len_min <= len_max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Token ids in 1..=V; surfaces are `a<id>` / `b<id>`.
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub gamma: f64,
}

impl SynthSample {
    pub fn source_surfaces(&self) -> Vec<String> {
        self.source_ids.iter().map(|i| format!("a{i}")).collect()
    }

    pub fn target_surfaces(&self) -> Vec<String> {
        self.target_ids.iter().map(|i| format!("b{i}")).collect()
    }
}

/// The `ceil(gamma * n)` highest-salience positions, emitted in source
/// order. Salience is the token id; ties keep the earlier position.
pub fn select_salient(source_ids: &[usize], gamma: f64) -> Vec<usize> {
    let n = source_ids.len();
    let m = ((gamma * n as f64).ceil() as usize).clamp(1, n);
    let mut positions: Vec<usize> = (0..n).collect();
    // highest id first; earlier position wins ties
    positions.sort_by(|&a, &b| source_ids[b].cmp(&source_ids[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = positions[..m].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|p| source_ids[p]).collect()
}

/// Draws one sample: length uniform in `len_min..=len_max`, ids i.i.d.
/// uniform over `1..=V`, gamma uniform over `(0, 1]`.
pub fn generate_sample(rng: &mut impl Rng, config: &SynthConfig) -> SynthSample {
    let n = rng.gen_range(config.len_min..=config.len_max);
    let source_ids: Vec<usize> =
        (0..n).map(|_| rng.gen_range(1..=config.vocab_size)).collect();
    // gen::<f64>() is [0,1); flip to (0,1]
    let gamma = 1.0 - rng.gen::<f64>();
    let target_ids = select_salient(&source_ids, gamma);
    SynthSample { source_ids, target_ids, gamma }
}

impl SynthSample {
    pub fn to_training_pair(&self, bins: &BinConfig) -> TrainingPair {
        TrainingPair {
            src: self.source_surfaces(),
            tgt: self.target_surfaces(),
            gamma: self.gamma,
            bin: bins.quantize(self.gamma).expect("gamma in (0,1]").value(),
            origin: PairOrigin::Synthetic,
        }
    }
}

/// The rate-1 reference for a synthetic source: every token translated in
/// order (`a<i>` becomes `b<i>`). Non-synthetic surfaces pass through.
pub fn full_translation(src_surfaces: &[String]) -> Vec<String> {
    src_surfaces
        .iter()
        .map(|s| match s.strip_prefix('a') {
            Some(rest) if rest.chars().all(|c| c.is_ascii_digit()) => format!("b{rest}"),
            _ => s.clone(),
        })
        .collect()
}

/// Generates `count` samples in parallel (per-index derived RNG, so output
/// is independent of worker count) without touching disk.
pub fn generate_samples(config: &SynthConfig, count: usize) -> Result<Vec<SynthSample>, SynthError> {
    config.validate()?;
    if count == 0 {
        return Err(SynthError::InvalidCount);
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &(i as u64).to_le_bytes()));
            generate_sample(&mut rng, config)
        })
        .collect())
}

/// Writes `count` samples as training-pair records. Same seed, same bytes.
pub fn generate_corpus(
    config: &SynthConfig,
    count: usize,
    bins: &BinConfig,
    path: impl AsRef<Path>,
) -> Result<(), SynthError> {
    let samples = generate_samples(config, count)?;
    write_jsonl(samples.iter().map(|s| s.to_training_pair(bins)), path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rate_is_pure_translation() {
        let ids = vec![3, 1, 2];
        assert_eq!(select_salient(&ids, 1.0), vec![3, 1, 2]);
    }

    #[test]
    fn half_rate_keeps_top_ids_in_source_order() {
        // ids [7,2,9,2], gamma 0.5 -> m=2; top ids 9 (pos 2) and 7 (pos 0)
        assert_eq!(select_salient(&[7, 2, 9, 2], 0.5), vec![7, 9]);
    }

    #[test]
    fn ties_keep_earlier_positions() {
        assert_eq!(select_salient(&[5, 5, 5, 5], 0.5), vec![5, 5]);
    }

    #[test]
    fn target_length_is_ceil_gamma_n() {
        let cfg = SynthConfig::default();
        let samples = generate_samples(&cfg, 500).unwrap();
        for s in samples {
            let expect = ((s.gamma * s.source_ids.len() as f64).ceil() as usize)
                .clamp(1, s.source_ids.len());
            assert_eq!(s.target_ids.len(), expect);
        }
    }

    #[test]
    fn brute_force_salience_equivalence() {
        // independent oracle: score positions by (id, -pos), take top m
        fn oracle(ids: &[usize], gamma: f64) -> Vec<usize> {
            let n = ids.len();
            let m = ((gamma * n as f64).ceil() as usize).clamp(1, n);
            let mut scored: Vec<(usize, usize)> =
                ids.iter().copied().enumerate().map(|(p, id)| (p, id)).collect();
            scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut keep: Vec<usize> = scored[..m].iter().map(|&(p, _)| p).collect();
            keep.sort_unstable();
            keep.into_iter().map(|p| ids[p]).collect()
        }
        let cfg = SynthConfig { vocab_size: 6, len_min: 1, len_max: 12, seed: 77 };
        for s in generate_samples(&cfg, 10_000).unwrap() {
            assert_eq!(s.target_ids, oracle(&s.source_ids, s.gamma));
        }
    }

    #[test]
    fn corpus_determinism_and_count_contract() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { seed: 42, ..Default::default() };
        let bins = BinConfig::new(0.2).unwrap();
        assert!(matches!(
            generate_corpus(&cfg, 0, &bins, dir.path().join("z.jsonl")),
            Err(SynthError::InvalidCount)
        ));
        let p1 = dir.path().join("one.jsonl");
        let p2 = dir.path().join("two.jsonl");
        generate_corpus(&cfg, 500, &bins, &p1).unwrap();
        generate_corpus(&cfg, 500, &bins, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn gamma_is_roughly_uniform() {
        // chi-squared over 10 equal bins; threshold is the 99.9% quantile of
        // chi2 with 9 dof (27.88)
        let cfg = SynthConfig { seed: 5, ..Default::default() };
        let samples = generate_samples(&cfg, 100_000).unwrap();
        let mut counts = [0f64; 10];
        for s in &samples {
            let b = ((s.gamma * 10.0).ceil() as usize).clamp(1, 10);
            counts[b - 1] += 1.0;
        }
        let expected = samples.len() as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }
}

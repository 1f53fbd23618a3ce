//! Compression-rate data augmentation: prune the least salient sentences of
//! a document, then delete words, until a prescribed rate is reached.
//!
//! Sentence salience is the ROUGE F1 of each sentence against the
//! monolingual summary. Sentences are deleted greedily (rescoring after each
//! deletion) as long as the deletion keeps the rate below the target; the
//! remainder is closed by word deletions, preferring words that do not occur
//! in the monolingual summary.

use crate::corpus::{
    compression_rate, AugmentedSample, ClsSample, CorpusError, Document, Token,
};
use crate::crbin::BinConfig;
use crate::metrics::{rouge_l, rouge_n, MetricError};
use crate::seeding::mix_seed;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("target rate {target} not in ({base}, 1]")]
    InvalidGamma { target: f64, base: f64 },
    #[error("target rate {target} unreachable: {reason}")]
    AugmentInfeasible { target: f64, reason: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// ROUGE variant used for sentence salience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    Rouge1,
    Rouge2,
    RougeL,
}

impl RougeVariant {
    pub fn f1(&self, candidate: &[Token], reference: &[Token]) -> Result<f64, MetricError> {
        let score = match self {
            RougeVariant::Rouge1 => rouge_n(candidate, reference, 1)?,
            RougeVariant::Rouge2 => rouge_n(candidate, reference, 2)?,
            RougeVariant::RougeL => rouge_l(candidate, reference)?,
        };
        Ok(score.f1)
    }
}

impl std::str::FromStr for RougeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rouge1" => Ok(RougeVariant::Rouge1),
            "rouge2" => Ok(RougeVariant::Rouge2),
            "rougeL" | "rougel" => Ok(RougeVariant::RougeL),
            other => Err(format!("unknown salience variant: {other}")),
        }
    }
}

/// Per-sentence salience scores, one entry per surviving sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceTable {
    pub scores: Vec<(usize, f64)>,
    pub variant: RougeVariant,
}

impl SalienceTable {
    /// Index of the least salient sentence. Ties rank the later sentence as
    /// less salient, so the earlier one is kept.
    pub fn argmin(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &(idx, score) in &self.scores {
            best = match best {
                None => Some((idx, score)),
                Some((bi, bs)) if score < bs || (score == bs && idx > bi) => Some((idx, score)),
                keep => keep,
            };
        }
        best.map(|(idx, _)| idx)
    }
}

/// Scores every sentence of `doc` against the monolingual summary.
pub fn sentence_salience(
    doc: &Document,
    mono_summary: &Document,
    variant: RougeVariant,
) -> Result<SalienceTable, AugmentError> {
    let reference: Vec<Token> = mono_summary.tokens().cloned().collect();
    let mut scores = Vec::with_capacity(doc.sentences().len());
    for sentence in doc.sentences() {
        scores.push((sentence.index, variant.f1(&sentence.tokens, &reference)?));
    }
    Ok(SalienceTable { scores, variant })
}

/// Ascending augmentation targets derived from a base rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub base_gamma: f64,
    pub targets: Vec<f64>,
}

/// Perturbed arithmetic progression of target rates:
/// `gamma + (i + u_i) * 0.1` for `i = 1..=10` with `u_i ~ U(0,1)`, keeping
/// values at most 1.
pub fn gamma_schedule(gamma: f64, rng: &mut impl Rng) -> Result<Schedule, AugmentError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AugmentError::InvalidGamma { target: gamma, base: gamma });
    }
    let mut targets = Vec::new();
    for i in 1..=10 {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let candidate = gamma + (i as f64 + u) * 0.1;
        if candidate <= 1.0 {
            targets.push(candidate);
        }
    }
    Ok(Schedule { base_gamma: gamma, targets })
}

struct WorkingSentence {
    orig_index: usize,
    tokens: Vec<Token>,
    salience: f64,
}

/// Prunes `sample.doc_src` until its rate against the cross-lingual summary
/// reaches `gamma_hat`.
///
/// Phase 1 repeatedly deletes the least salient sentence while the deletion
/// keeps the rate below the target (the sentence whose removal would reach
/// it survives). Phase 2 deletes uniformly random words, preferring words
/// absent from the monolingual summary, one at a time until first
/// satisfaction. Surviving sentences always keep at least one token.
pub fn augment_to_rate(
    sample: &ClsSample,
    gamma_hat: f64,
    rng: &mut impl Rng,
    variant: RougeVariant,
) -> Result<AugmentedSample, AugmentError> {
    let summary_len = sample.cross_summary.token_count();
    let base_gamma = compression_rate(&sample.doc_src, &sample.cross_summary)?;
    if !(gamma_hat > base_gamma && gamma_hat <= 1.0) {
        return Err(AugmentError::InvalidGamma { target: gamma_hat, base: base_gamma });
    }

    let mono_tokens: Vec<Token> = sample.mono_summary.tokens().cloned().collect();
    let mono_surfaces: HashSet<&str> = mono_tokens.iter().map(Token::surface).collect();

    let mut sentences: Vec<WorkingSentence> = sample
        .doc_src
        .sentences()
        .iter()
        .map(|s| {
            Ok(WorkingSentence {
                orig_index: s.index,
                tokens: s.tokens.clone(),
                salience: variant.f1(&s.tokens, &mono_tokens)?,
            })
        })
        .collect::<Result<_, MetricError>>()?;
    let mut doc_len: usize = sentences.iter().map(|s| s.tokens.len()).sum();
    let mut deleted_sentence_indices = Vec::new();

    let rate = |len: usize| summary_len as f64 / len as f64;
    let least_salient = |sents: &[WorkingSentence]| -> usize {
        let mut best = 0;
        for (pos, s) in sents.iter().enumerate() {
            if s.salience < sents[best].salience
                || (s.salience == sents[best].salience && s.orig_index > sents[best].orig_index)
            {
                best = pos;
            }
        }
        best
    };

    // Phase 1: sentence deletion with rescoring after each removal.
    loop {
        if sentences.len() == 1 {
            break;
        }
        let k = least_salient(&sentences);
        let remaining = doc_len - sentences[k].tokens.len();
        if remaining == 0 || rate(remaining) >= gamma_hat {
            break;
        }
        doc_len = remaining;
        let removed = sentences.remove(k);
        deleted_sentence_indices.push(removed.orig_index);
        for s in &mut sentences {
            s.salience = variant.f1(&s.tokens, &mono_tokens)?;
        }
    }

    // Phase 2: word deletion, sentences visited in ascending salience.
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by(|&a, &b| {
        sentences[a]
            .salience
            .total_cmp(&sentences[b].salience)
            .then(sentences[b].orig_index.cmp(&sentences[a].orig_index))
    });
    let mut deleted_word_count = 0usize;
    'outer: for &pos in &order {
        // first words absent from the monolingual summary, then any word;
        // sentences are never emptied
        for members_allowed in [false, true] {
            while rate(doc_len) < gamma_hat && sentences[pos].tokens.len() > 1 {
                let pool: Vec<usize> = sentences[pos]
                    .tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| members_allowed || !mono_surfaces.contains(t.surface()))
                    .map(|(i, _)| i)
                    .collect();
                if pool.is_empty() {
                    break;
                }
                let victim = pool[rng.gen_range(0..pool.len())];
                sentences[pos].tokens.remove(victim);
                doc_len -= 1;
                deleted_word_count += 1;
            }
        }
        if rate(doc_len) >= gamma_hat {
            break 'outer;
        }
    }

    let gamma_actual = rate(doc_len);
    if gamma_actual < gamma_hat {
        return Err(AugmentError::AugmentInfeasible {
            target: gamma_hat,
            reason: format!(
                "floor of one token per sentence reached at rate {gamma_actual:.4}"
            ),
        });
    }

    let doc = Document::new(sentences.into_iter().map(|s| s.tokens).collect())?;
    Ok(AugmentedSample {
        base_id: sample.id.clone(),
        doc,
        cross_summary: sample.cross_summary.clone(),
        gamma_target: gamma_hat,
        gamma_actual,
        deleted_sentence_indices,
        deleted_word_count,
    })
}

/// How augmentation targets are chosen per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    /// Perturbed progression drawn from the per-sample RNG.
    Eq5,
    /// A fixed target list; targets at or below a sample's base rate are
    /// skipped.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub seed: u64,
    pub variant: RougeVariant,
    pub schedule: ScheduleMode,
    pub jobs: usize,
    /// Bin layout for the emitted compression-rate histogram.
    pub hist_bins: BinConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentStats {
    pub samples_in: usize,
    pub emitted: usize,
    pub infeasible: usize,
    /// Samples whose base rate leaves no valid targets.
    pub skipped_samples: usize,
    /// Count of emitted samples per histogram bin of `gamma_actual`.
    pub histogram: Vec<u64>,
}

/// Augments every sample with its schedule of targets.
///
/// Each sample's RNG is seeded from `mix(seed, sample.id)`, so the output is
/// independent of worker count; results are sorted by
/// `(base_id, gamma_target)`.
pub fn augment_corpus(
    samples: Vec<ClsSample>,
    config: &AugmentConfig,
) -> Result<(Vec<AugmentedSample>, AugmentStats), AugmentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .expect("thread pool");
    let samples_in = samples.len();

    let per_sample: Vec<(Vec<AugmentedSample>, usize, usize)> = pool.install(|| {
        samples
            .par_iter()
            .map(|sample| augment_one(sample, config))
            .collect()
    });

    let mut emitted = Vec::new();
    let mut infeasible = 0;
    let mut skipped_samples = 0;
    for (outs, inf, skip) in per_sample {
        emitted.extend(outs);
        infeasible += inf;
        skipped_samples += skip;
    }
    emitted.sort_by(|a, b| {
        a.base_id
            .cmp(&b.base_id)
            .then(a.gamma_target.total_cmp(&b.gamma_target))
    });

    let mut histogram = vec![0u64; config.hist_bins.num_bins()];
    for s in &emitted {
        let bin = config
            .hist_bins
            .quantize(s.gamma_actual)
            .expect("gamma_actual is positive");
        histogram[bin.value() - 1] += 1;
    }
    let stats = AugmentStats {
        samples_in,
        emitted: emitted.len(),
        infeasible,
        skipped_samples,
        histogram,
    };
    Ok((emitted, stats))
}

fn augment_one(
    sample: &ClsSample,
    config: &AugmentConfig,
) -> (Vec<AugmentedSample>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, sample.id.as_bytes()));
    let base_gamma = match compression_rate(&sample.doc_src, &sample.cross_summary) {
        Ok(g) => g,
        Err(_) => return (Vec::new(), 0, 1),
    };
    let targets = match &config.schedule {
        ScheduleMode::Eq5 => match gamma_schedule(base_gamma, &mut rng) {
            Ok(s) => s.targets,
            Err(_) => return (Vec::new(), 0, 1),
        },
        ScheduleMode::Explicit(list) => {
            let mut t: Vec<f64> = list
                .iter()
                .copied()
                .filter(|&g| g > base_gamma && g <= 1.0)
                .collect();
            t.sort_by(f64::total_cmp);
            t
        }
    };
    if targets.is_empty() {
        return (Vec::new(), 0, 1);
    }
    let mut outs = Vec::new();
    let mut infeasible = 0;
    for target in targets {
        match augment_to_rate(sample, target, &mut rng, config.variant) {
            Ok(a) => outs.push(a),
            Err(AugmentError::AugmentInfeasible { .. }) => infeasible += 1,
            Err(_) => infeasible += 1,
        }
    }
    (outs, infeasible, 0)
}

/// Convenience for tests and callers that want an arbitrary deterministic RNG.
pub fn rng_for(seed: u64, key: &str) -> StdRng {
    StdRng::seed_from_u64(mix_seed(seed, key.as_bytes()))
}

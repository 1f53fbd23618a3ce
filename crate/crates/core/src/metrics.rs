//! Self-contained ROUGE-1/2/L, corpus BLEU, and length-variance metrics.
//!
//! Used both by the augmentation engine (sentence salience) and by the
//! evaluation harness. All functions are pure and operate on token slices;
//! tokenization policy lives in [`crate::corpus`].

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("candidate/reference counts differ: {0} vs {1}")]
    PairCountMismatch(usize, usize),
}

/// Precision / recall / F1 triple with F-measure beta fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }
}

/// Corpus BLEU on the 0-100 scale with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub ngram_precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

/// Mean squared difference between prediction and reference token lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthVariance {
    pub value: f64,
    pub n_samples: usize,
}

fn ngram_counts<'a, T: AsRef<str>>(tokens: &'a [T], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap counts, n in {1, 2}.
pub fn rouge_n<T: AsRef<str>>(
    candidate: &[T],
    reference: &[T],
    n: usize,
) -> Result<RougeScore, MetricError> {
    assert!(n == 1 || n == 2, "rouge_n supports n in {{1, 2}}");
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    let precision = if cand_total > 0 { overlap as f64 / cand_total as f64 } else { 0.0 };
    let recall = if ref_total > 0 { overlap as f64 / ref_total as f64 } else { 0.0 };
    Ok(RougeScore::from_pr(precision, recall))
}

fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    // two-row DP
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over the whole token sequences via LCS.
pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Result<RougeScore, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let l = lcs_len(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let recall = l / reference.len() as f64;
    Ok(RougeScore::from_pr(precision, recall))
}

/// Numerator smoothing constant applied when a clipped n-gram count is zero
/// but candidate n-grams of that order exist.
pub const BLEU_EPS: f64 = 1e-9;

/// Corpus-level BLEU with clipped precisions for n = 1..4 and
/// BP = min(1, exp(1 - ref_len/cand_len)).
pub fn bleu_corpus<T: AsRef<str>>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<BleuScore, MetricError> {
    if candidates.len() != references.len() || candidates.is_empty() {
        return Err(MetricError::PairCountMismatch(candidates.len(), references.len()));
    }
    let mut numer = [0usize; 4];
    let mut denom = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let c = ngram_counts(cand, n);
            let r = ngram_counts(reference, n);
            for (gram, &count) in &c {
                numer[n - 1] += count.min(r.get(gram).copied().unwrap_or(0));
                denom[n - 1] += count;
            }
        }
    }
    let mut precisions = [0.0f64; 4];
    let mut log_sum = 0.0;
    let mut any_zero_denom = false;
    for n in 0..4 {
        if denom[n] == 0 {
            any_zero_denom = true;
            precisions[n] = 0.0;
            continue;
        }
        let num = if numer[n] == 0 { BLEU_EPS } else { numer[n] as f64 };
        precisions[n] = num / denom[n] as f64;
        log_sum += precisions[n].ln();
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0)
    };
    let score = if any_zero_denom || cand_len == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (0.25 * log_sum).exp()
    };
    Ok(BleuScore {
        score,
        ngram_precisions: precisions,
        brevity_penalty,
        candidate_len: cand_len,
        reference_len: ref_len,
    })
}

/// Mean squared token-length difference between predictions and references.
pub fn length_variance(
    pred_lens: &[usize],
    ref_lens: &[usize],
) -> Result<LengthVariance, MetricError> {
    if pred_lens.len() != ref_lens.len() || pred_lens.is_empty() {
        return Err(MetricError::PairCountMismatch(pred_lens.len(), ref_lens.len()));
    }
    let sum: f64 = pred_lens
        .iter()
        .zip(ref_lens)
        .map(|(&p, &r)| {
            let d = p as f64 - r as f64;
            d * d
        })
        .sum();
    Ok(LengthVariance {
        value: sum / pred_lens.len() as f64,
        n_samples: pred_lens.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn rouge1_example() {
        let s = rouge_n(&toks("the cat sat"), &toks("the cat"), 1).unwrap();
        assert_relative_eq!(s.precision, 2.0 / 3.0);
        assert_relative_eq!(s.recall, 1.0);
        assert_relative_eq!(s.f1, 0.8);
    }

    #[test]
    fn rouge_identity() {
        for n in [1, 2] {
            let s = rouge_n(&toks("a b c d"), &toks("a b c d"), n).unwrap();
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn rouge2_example() {
        let s = rouge_n(&toks("a b c"), &toks("a b d"), 2).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn rouge_empty_reference() {
        let empty: Vec<String> = vec![];
        assert_eq!(rouge_n(&toks("a"), &empty, 1), Err(MetricError::EmptyReference));
        assert_eq!(rouge_l(&toks("a"), &empty), Err(MetricError::EmptyReference));
    }

    #[test]
    fn rouge_l_examples() {
        let s = rouge_l(&toks("a c b"), &toks("a b c")).unwrap();
        assert_relative_eq!(s.precision, 2.0 / 3.0);
        assert_relative_eq!(s.recall, 2.0 / 3.0);
        assert_relative_eq!(s.f1, 2.0 / 3.0);

        let id = rouge_l(&toks("x y z"), &toks("x y z")).unwrap();
        assert_eq!((id.precision, id.recall, id.f1), (1.0, 1.0, 1.0));

        let disjoint = rouge_l(&toks("a b"), &toks("c d")).unwrap();
        assert_eq!((disjoint.precision, disjoint.recall, disjoint.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bleu_identity_is_100() {
        let c = vec![toks("a b c d"), toks("w x y z q")];
        let s = bleu_corpus(&c, &c).unwrap();
        assert_relative_eq!(s.score, 100.0);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_brevity_example() {
        // all precisions 1, BP = exp(1 - 5/4) = exp(-0.25)
        let s = bleu_corpus(&[toks("a b c d")], &[toks("a b c d e")]).unwrap();
        for p in s.ngram_precisions {
            assert_relative_eq!(p, 1.0);
        }
        assert_relative_eq!(s.brevity_penalty, (-0.25f64).exp());
        assert_relative_eq!(s.score, 100.0 * (-0.25f64).exp(), epsilon = 1e-9);
        assert!((s.score - 77.88).abs() < 0.01);
    }

    #[test]
    fn bleu_zero_overlap_uses_smoothing() {
        // shared unigrams, zero 4-gram overlap: epsilon-smoothed p4, tiny nonzero score
        let s = bleu_corpus(&[toks("a b c d e")], &[toks("a c b e d")]).unwrap();
        assert!(s.ngram_precisions[3] > 0.0 && s.ngram_precisions[3] < 1e-8);
        assert!(s.score > 0.0 && s.score < 1.0);
    }

    #[test]
    fn bleu_mismatch() {
        let c = vec![toks("a")];
        assert_eq!(bleu_corpus(&c, &[]), Err(MetricError::PairCountMismatch(1, 0)));
    }

    #[test]
    fn length_variance_examples() {
        assert_eq!(length_variance(&[5, 5], &[5, 5]).unwrap().value, 0.0);
        assert_eq!(length_variance(&[4, 6], &[5, 5]).unwrap().value, 1.0);
        assert_eq!(length_variance(&[10], &[5]).unwrap().value, 25.0);
        assert_eq!(
            length_variance(&[1], &[1, 2]),
            Err(MetricError::PairCountMismatch(1, 2))
        );
    }
}

//! Greedy and beam-search decoding with length normalization, n-gram
//! blocking, and a fixed tie-break (lower token id wins).

use super::config::{Conditioning, ModelConfig};
use super::net::{decoder_logits, encoder_states, ModelParams};
use super::vocab::{Vocab, BOS, EOS};
use super::ModelError;
use crate::crbin::BinIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl DecodeMode {
    fn width(self) -> usize {
        match self {
            DecodeMode::Greedy => 1,
            DecodeMode::Beam(w) => w.max(1),
        }
    }
}

/// True when appending `candidate` would repeat an n-gram of size `n`
/// already present in `tokens`. `n = 0` disables blocking.
pub(crate) fn repeats_ngram(tokens: &[usize], candidate: usize, n: usize) -> bool {
    if n == 0 || tokens.len() + 1 < 2 * n {
        // The new n-gram needs n-1 prior tokens plus one earlier occurrence.
        return false;
    }
    let mut gram = tokens[tokens.len() - (n - 1)..].to_vec();
    gram.push(candidate);
    tokens.windows(n).any(|w| w == gram.as_slice())
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>, // generated tokens, EOS included once finished
    logp: f64,
    finished: bool,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        // Length-normalized log-probability; empty hypotheses rank last.
        if self.tokens.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.logp / self.tokens.len() as f64
        }
    }
}

/// Orders by score descending, breaking exact ties toward the
/// lexicographically smaller token sequence (lower token id wins).
fn better(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - log_z).collect()
}

/// Beam search over an arbitrary next-token distribution. `step` maps the
/// generated prefix to log-probabilities over the target vocabulary;
/// `banned[id]` marks ids that must never be emitted.
fn beam_search(
    step: &mut dyn FnMut(&[usize]) -> Result<Vec<f64>, ModelError>,
    banned: &[bool],
    width: usize,
    max_new: usize,
    block_ngram: usize,
) -> Result<Vec<usize>, ModelError> {
    let mut beams = vec![Hypothesis { tokens: Vec::new(), logp: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_new {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for beam in &beams {
            let logps = step(&beam.tokens)?;
            for (id, &lp) in logps.iter().enumerate() {
                if banned.get(id).copied().unwrap_or(false) {
                    continue;
                }
                if id != EOS && repeats_ngram(&beam.tokens, id, block_ngram) {
                    continue;
                }
                let mut tokens = beam.tokens.clone();
                tokens.push(id);
                candidates.push(Hypothesis {
                    tokens,
                    logp: beam.logp + lp,
                    finished: id == EOS,
                });
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(better);
        candidates.truncate(width);
        beams = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                beams.push(c);
            }
        }
        if beams.is_empty() {
            break;
        }
    }

    let mut pool = finished;
    pool.extend(beams);
    pool.sort_by(better);
    let mut best = pool
        .into_iter()
        .next()
        .unwrap_or(Hypothesis { tokens: Vec::new(), logp: 0.0, finished: false });
    if best.tokens.last() == Some(&EOS) {
        best.tokens.pop();
    }
    Ok(best.tokens)
}

/// Decodes target ids for a source under a compression-rate bin. The start
/// symbol is BOS, or the per-bin indicator token in task-token mode (which
/// is also prepended to the source). Reserved ids are never emitted and
/// generation hard-stops at `max_len`.
pub fn decode(
    src: &[usize],
    bin: BinIndex,
    params: &ModelParams,
    config: &ModelConfig,
    tgt_vocab: &Vocab,
    mode: DecodeMode,
    block_ngram: usize,
) -> Result<Vec<usize>, ModelError> {
    let (enc_src, start) = if config.conditioning == Conditioning::TaskToken {
        let t_task = tgt_vocab
            .task_token_id(bin)
            .ok_or_else(|| ModelError::ConfigMismatch("no task token for bin".into()))?;
        // The source-side indicator is the same trailing slot in the source
        // vocabulary; callers built both vocabs with matching task tokens.
        let mut s = Vec::with_capacity(src.len() + 1);
        s.push(config.src_vocab - config.bin_config.num_bins() + bin.value() - 1);
        s.extend_from_slice(src);
        (s, t_task)
    } else {
        (src.to_vec(), BOS)
    };

    let enc_out = encoder_states(&enc_src, bin, params, config)?;
    let banned: Vec<bool> = (0..config.tgt_vocab)
        .map(|id| tgt_vocab.is_reserved_for_input(id))
        .collect();
    let max_new = config.max_len.saturating_sub(1);

    let mut step = |generated: &[usize]| -> Result<Vec<f64>, ModelError> {
        let mut dec_in = Vec::with_capacity(generated.len() + 1);
        dec_in.push(start);
        dec_in.extend_from_slice(generated);
        let logits = decoder_logits(&enc_out, &dec_in, bin, params, config)?;
        let last = logits.row(logits.nrows() - 1);
        Ok(log_softmax(last.as_slice().unwrap()))
    };

    beam_search(&mut step, &banned, mode.width(), max_new, block_ngram)
}

#[cfg(test)]
mod tests {
    use super::*;

    // A scripted distribution: walks x y z x y z ... with overwhelming
    // probability, used to exercise n-gram blocking without a real model.
    fn looping_step(vocab: usize, loop_ids: &[usize]) -> impl FnMut(&[usize]) -> Result<Vec<f64>, ModelError> + '_ {
        move |generated: &[usize]| {
            let next = loop_ids[generated.len() % loop_ids.len()];
            let mut logps = vec![-20.0; vocab];
            logps[next] = -0.01;
            logps[EOS] = -10.0; // EOS is possible but strongly dispreferred
            Ok(logps)
        }
    }

    #[test]
    fn ngram_repeat_detection() {
        assert!(repeats_ngram(&[7, 8, 9, 7, 8], 9, 3));
        assert!(!repeats_ngram(&[7, 8, 9, 7, 8], 6, 3));
        assert!(!repeats_ngram(&[7, 8], 9, 3), "too short to repeat a trigram");
        assert!(!repeats_ngram(&[7, 8, 9, 7, 8], 9, 0), "0 disables blocking");
    }

    #[test]
    fn trigram_blocking_forces_alternative() {
        let loop_ids = [5usize, 6, 7];
        let banned = vec![true, true, false, false, false, false, false, false];
        let mut step = looping_step(8, &loop_ids);
        let unblocked = beam_search(&mut step, &banned, 1, 8, 0).unwrap();
        assert_eq!(unblocked, vec![5, 6, 7, 5, 6, 7, 5, 6], "loops without blocking");
        let mut step = looping_step(8, &loop_ids);
        let blocked = beam_search(&mut step, &banned, 1, 8, 3).unwrap();
        // After "5 6 7 5 6" the extension 7 would repeat the trigram 5-6-7.
        assert_eq!(&blocked[..5], &[5, 6, 7, 5, 6]);
        assert_ne!(blocked.get(5), Some(&7), "second loop iteration is pruned");
    }

    #[test]
    fn width_one_equals_greedy_trace() {
        // With a scripted distribution, beam(1) must reproduce the argmax walk.
        let loop_ids = [3usize, 4];
        let banned = vec![true, true, false, false, false];
        let mut step = looping_step(5, &loop_ids);
        let beam1 = beam_search(&mut step, &banned, 1, 6, 0).unwrap();
        assert_eq!(beam1, vec![3, 4, 3, 4, 3, 4]);
    }

    #[test]
    fn tie_break_prefers_lower_token_id() {
        let banned = vec![true, true, false, false, false];
        // Tokens 3 and 4 are exactly tied; EOS follows to terminate.
        let mut step = |generated: &[usize]| -> Result<Vec<f64>, ModelError> {
            let mut logps = vec![-30.0; 5];
            if generated.is_empty() {
                logps[3] = -1.0;
                logps[4] = -1.0;
            } else {
                logps[EOS] = -0.001;
            }
            Ok(logps)
        };
        let out = beam_search(&mut step, &banned, 3, 4, 0).unwrap();
        assert_eq!(out, vec![3]);
    }

    #[test]
    fn banned_ids_never_emitted() {
        let banned = vec![true, true, false, true, false];
        // Highest mass on a banned id; decoder must fall back.
        let mut step = |_: &[usize]| -> Result<Vec<f64>, ModelError> {
            Ok(vec![-0.001, -0.5, -3.0, -0.01, -8.0])
        };
        let out = beam_search(&mut step, &banned, 2, 3, 0).unwrap();
        assert!(out.iter().all(|&t| !banned[t]), "banned ids excluded: {out:?}");
    }
}

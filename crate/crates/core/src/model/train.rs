//! Adam trainer with inverse-square-root warmup and early stopping on
//! validation loss.

use super::config::{Conditioning, ModelConfig};
use super::net::{batch_loss, loss_and_grads, prepare_example, ModelParams, PreparedExample};
use super::vocab::Vocab;
use super::ModelError;
use crate::corpus::TrainingPair;
use crate::crbin::BinIndex;
use crate::seeding::mix_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub warmup: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 3e-3,
            warmup: 200,
            batch_size: 64,
            max_steps: 2000,
            eval_every: 100,
            patience: 2,
            val_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
        }
    }
}

impl Hyperparams {
    /// Inverse-square-root schedule: ramps linearly over `warmup` steps and
    /// decays as 1/sqrt(step) afterwards. `step` is 1-based.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup.max(1) as f64;
        self.lr * (step / warmup).min((warmup / step).sqrt())
    }
}

/// Optimizer state: parameters plus Adam moment accumulators.
pub struct TrainState {
    pub params: ModelParams,
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, config: &ModelConfig) -> Self {
        TrainState { params, m: ModelParams::zeros(config), v: ModelParams::zeros(config), step: 0 }
    }

    /// One Adam update with the warmup schedule.
    pub fn apply(&mut self, grads: &ModelParams, hp: &Hyperparams) {
        self.step += 1;
        let lr = hp.lr_at(self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - hp.adam_beta1.powi(t);
        let bc2 = 1.0 - hp.adam_beta2.powi(t);
        let grads_flat = grads.flat();
        for (((_, p), (_, m)), ((_, v), (_, g))) in self
            .params
            .flat_mut()
            .into_iter()
            .zip(self.m.flat_mut())
            .zip(self.v.flat_mut().into_iter().zip(grads_flat))
        {
            azip_update(p, m, v, g, hp, lr, bc1, bc2);
        }
    }
}

fn azip_update(
    p: &mut ndarray::Array2<f64>,
    m: &mut ndarray::Array2<f64>,
    v: &mut ndarray::Array2<f64>,
    g: &ndarray::Array2<f64>,
    hp: &Hyperparams,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
        *m = hp.adam_beta1 * *m + (1.0 - hp.adam_beta1) * g;
        *v = hp.adam_beta2 * *v + (1.0 - hp.adam_beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + hp.adam_eps);
    });
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainReport {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub log: Vec<MetricRow>,
    pub best_val_loss: f64,
    pub steps: usize,
}

impl TrainReport {
    /// Metrics log as CSV with a `step,split,loss,lr` header.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,split,loss,lr\n");
        for row in &self.log {
            out.push_str(&format!("{},{},{},{}\n", row.step, row.split, row.loss, row.lr));
        }
        out
    }
}

/// Builds source/target vocabularies from the pairs. Task-token
/// conditioning reserves one indicator token per bin in both vocabularies.
pub fn build_vocabs(pairs: &[TrainingPair], config: &ModelConfig) -> (Vocab, Vocab) {
    let num_task = if config.conditioning == Conditioning::TaskToken {
        config.bin_config.num_bins()
    } else {
        0
    };
    let src = Vocab::build(pairs.iter().flat_map(|p| p.src.iter().cloned()), num_task);
    let tgt = Vocab::build(pairs.iter().flat_map(|p| p.tgt.iter().cloned()), num_task);
    (src, tgt)
}

/// Encodes pairs into teacher-forcing examples, validating bins and lengths
/// against the config.
pub fn prepare_pairs(
    pairs: &[TrainingPair],
    config: &ModelConfig,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<Vec<PreparedExample>, ModelError> {
    let num_bins = config.bin_config.num_bins();
    pairs
        .iter()
        .map(|p| {
            if p.bin < 1 || p.bin > num_bins {
                return Err(ModelError::ConfigMismatch(format!(
                    "pair bin {} outside 1..={} for delta {}",
                    p.bin,
                    num_bins,
                    config.bin_config.delta()
                )));
            }
            let src_ids = src_vocab
                .encode(&p.src)
                .ok_or_else(|| ModelError::IndexError("source token missing from vocab".into()))?;
            let tgt_ids = tgt_vocab
                .encode(&p.tgt)
                .ok_or_else(|| ModelError::IndexError("target token missing from vocab".into()))?;
            let ex = prepare_example(&src_ids, &tgt_ids, BinIndex(p.bin), config, src_vocab, tgt_vocab)?;
            let longest = ex.src.len().max(ex.dec_in.len());
            if longest > config.max_len {
                return Err(ModelError::LengthError { len: longest, max: config.max_len });
            }
            Ok(ex)
        })
        .collect()
}

/// Trains from scratch on the pairs. Vocabularies are built from the data
/// and the config's vocab sizes are filled in; the returned config is the
/// one to persist alongside the parameters. Deterministic given the seed.
pub fn train(
    pairs: &[TrainingPair],
    config: &ModelConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (src_vocab, tgt_vocab) = build_vocabs(pairs, config);
    let mut config = config.clone();
    config.src_vocab = src_vocab.len();
    config.tgt_vocab = tgt_vocab.len();
    config.validate()?;

    let examples = prepare_pairs(pairs, &config, &src_vocab, &tgt_vocab)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b"train/shuffle"));
    order.shuffle(&mut shuffle_rng);
    let val_len = ((examples.len() as f64 * hp.val_fraction).round() as usize)
        .clamp(1, examples.len().saturating_sub(1).max(1));
    let (val_idx, train_idx) = order.split_at(val_len.min(examples.len() - 1));
    let val_set: Vec<PreparedExample> = val_idx.iter().map(|&i| examples[i].clone()).collect();
    let train_set: Vec<PreparedExample> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    if train_set.is_empty() {
        return Err(ModelError::EmptyBatch);
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b"train/init"));
    let params = ModelParams::init(&config, &mut init_rng);
    let mut state = TrainState::new(params, &config);

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = state.params.clone();
    let mut evals_without_improvement = 0usize;
    let mut epoch_order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = train_set.len(); // force a shuffle before the first batch

    while state.step < hp.max_steps {
        if cursor + hp.batch_size > epoch_order.len() {
            epoch_order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let take = hp.batch_size.min(epoch_order.len());
        let batch: Vec<PreparedExample> =
            epoch_order[cursor..cursor + take].iter().map(|&i| train_set[i].clone()).collect();
        cursor += take;

        let (loss, grads) = loss_and_grads(&batch, &state.params, &config)?;
        state.apply(&grads, hp);
        log.push(MetricRow {
            step: state.step,
            split: "train".into(),
            loss,
            lr: hp.lr_at(state.step),
        });

        if state.step % hp.eval_every == 0 || state.step == hp.max_steps {
            let val_loss = batch_loss(&val_set, &state.params, &config)?;
            log.push(MetricRow {
                step: state.step,
                split: "val".into(),
                loss: val_loss,
                lr: hp.lr_at(state.step),
            });
            if val_loss < best_val {
                best_val = val_loss;
                best_params = state.params.clone();
                evals_without_improvement = 0;
            } else {
                evals_without_improvement += 1;
                if evals_without_improvement >= hp.patience {
                    break;
                }
            }
        }
    }

    Ok(TrainReport {
        params: best_params,
        config,
        src_vocab,
        tgt_vocab,
        log,
        best_val_loss: best_val,
        steps: state.step,
    })
}

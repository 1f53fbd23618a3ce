//! Subcommand implementations. Diagnostics go to stderr; data goes to the
//! requested output file or stdout.

use crate::cfg::ToolConfig;
use crate::CliError;
use clap::Args;
use csc_core::augment::{AugmentConfig, ScheduleMode};
use csc_core::corpus::{read_corpus, write_jsonl, JsonlReader};
use csc_core::model::{
    decode, load_checkpoint, save_checkpoint, train as train_model, Checkpoint, Conditioning,
    DecodeMode, Hyperparams, ModelConfig,
};
use csc_core::synth::{full_translation, generate_corpus, SynthConfig};
use csc_core::{
    bleu_corpus, length_variance, rouge_l, rouge_n, BinConfig, BinIndex, ClsSample, RougeVariant,
    TrainingPair,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| {
            CliError::Input(format!("cannot write {}: {e}", p.display()))
        }),
        None => {
            std::io::stdout()
                .write_all(content.as_bytes())
                .map_err(|e| CliError::Internal(format!("stdout: {e}")))
        }
    }
}

fn histogram_csv(bins: &BinConfig, counts: &[u64]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins.bins() {
        let iv = bins.bin_interval(b).expect("bin in range");
        out.push_str(&format!("{},{},{}\n", iv.lo, iv.hi, counts[b.value() - 1]));
    }
    out
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Input corpus (JSONL of {id, doc, mono_summary, cross_summary}).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output augmented corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Salience metric for sentence deletion order.
    #[arg(long, default_value = "rouge1")]
    salience: String,
    /// Explicit comma-separated target rates instead of the randomized schedule.
    #[arg(long, conflicts_with = "schedule")]
    targets: Option<String>,
    /// Target schedule family (only "eq5", the randomized progression).
    #[arg(long, default_value = "eq5")]
    schedule: String,
    /// Where to write the gamma_actual histogram CSV (default: stdout).
    #[arg(long)]
    hist: Option<PathBuf>,
}

pub fn augment(args: &AugmentArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let tokenizer = tool.tokenizer()?;
    let samples: Vec<ClsSample> =
        read_corpus(&args.input, tokenizer)?.collect::<Result<_, _>>()?;
    let variant: RougeVariant = args
        .salience
        .parse()
        .map_err(|e: String| CliError::Input(e))?;
    let schedule = match &args.targets {
        Some(list) => {
            let targets: Vec<f64> = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Input(format!("bad target rate {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            ScheduleMode::Explicit(targets)
        }
        None if args.schedule == "eq5" => ScheduleMode::Eq5,
        None => {
            return Err(CliError::Input(format!(
                "unknown schedule {:?} (expected eq5 or --targets)",
                args.schedule
            )))
        }
    };
    let config = AugmentConfig {
        seed: tool.seed,
        variant,
        schedule,
        jobs: tool.jobs,
        hist_bins: tool.bins()?,
    };
    let (augmented, stats) = csc_core::augment::augment_corpus(samples, &config)?;
    write_jsonl(augmented.iter().map(|s| s.to_record()), &args.out)?;
    write_output(&args.hist, &histogram_csv(&config.hist_bins, &stats.histogram))?;
    eprintln!(
        "csc: augment read {} samples, emitted {}, infeasible targets {}, skipped samples {}",
        stats.samples_in, stats.emitted, stats.infeasible, stats.skipped_samples
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Input corpus (JSONL of {id, doc, mono_summary, cross_summary}).
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the histogram CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn stats(args: &StatsArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let bins = tool.bins()?;
    let tokenizer = tool.tokenizer()?;
    let mut counts = vec![0u64; bins.num_bins()];
    let mut total = 0usize;
    for sample in read_corpus(&args.input, tokenizer)? {
        let sample = sample?;
        let gamma = csc_core::compression_rate(&sample.doc_src, &sample.cross_summary)?;
        let b = bins.quantize(gamma)?;
        counts[b.value() - 1] += 1;
        total += 1;
    }
    write_output(&args.out, &histogram_csv(&bins, &counts))?;
    eprintln!("csc: stats over {total} records");
    Ok(())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// System output, one whitespace-tokenized line per sample.
    #[arg(long)]
    sys: PathBuf,
    /// Reference, aligned line-by-line with --sys.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Metric family: rouge | bleu.
    #[arg(long)]
    metric: String,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_token_lines(path: &PathBuf) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let sys = read_token_lines(&args.sys)?;
    let refs = read_token_lines(&args.reference)?;
    if sys.len() != refs.len() {
        return Err(CliError::Input(format!(
            "line count mismatch: {} system vs {} reference",
            sys.len(),
            refs.len()
        )));
    }
    if sys.is_empty() {
        return Err(CliError::Input("no samples to score".into()));
    }
    let csv = match args.metric.as_str() {
        "rouge" => {
            let mut out = String::from("metric,precision,recall,f1\n");
            type RougeFn = fn(&[String], &[String]) -> Result<csc_core::RougeScore, csc_core::MetricError>;
            let variants: [(&str, RougeFn); 3] = [
                ("rouge1", |c, r| rouge_n(c, r, 1)),
                ("rouge2", |c, r| rouge_n(c, r, 2)),
                ("rougeL", rouge_l),
            ];
            for (name, f) in variants {
                let mut p = 0.0;
                let mut r = 0.0;
                let mut f1 = 0.0;
                for (c, g) in sys.iter().zip(&refs) {
                    let s = f(c, g)?;
                    p += s.precision;
                    r += s.recall;
                    f1 += s.f1;
                }
                let n = sys.len() as f64;
                out.push_str(&format!("{name},{},{},{}\n", p / n, r / n, f1 / n));
            }
            out
        }
        "bleu" => {
            let b = bleu_corpus(&sys, &refs)?;
            format!(
                "bleu,score,p1,p2,p3,p4,bp\nbleu,{},{},{},{},{},{}\n",
                b.score,
                b.ngram_precisions[0],
                b.ngram_precisions[1],
                b.ngram_precisions[2],
                b.ngram_precisions[3],
                b.brevity_penalty
            )
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown metric {other:?} (expected rouge or bleu)"
            )))
        }
    };
    write_output(&args.out, &csv)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output training-pair corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Number of samples to generate.
    #[arg(long)]
    count: usize,
    /// Vocabulary size (ids 1..=V).
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    #[arg(long, default_value_t = 20)]
    len_min: usize,
    #[arg(long, default_value_t = 40)]
    len_max: usize,
}

pub fn synth(args: &SynthArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let config = SynthConfig {
        vocab_size: args.vocab,
        len_min: args.len_min,
        len_max: args.len_max,
        seed: tool.seed,
    };
    generate_corpus(&config, args.count, &tool.bins()?, &args.out)?;
    eprintln!("csc: wrote {} synthetic pairs to {}", args.count, args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training pairs (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the step,split,loss,lr metrics CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Conditioning mode: cr_embedding | task_token | none.
    #[arg(long, default_value = "cr_embedding")]
    conditioning: String,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 128)]
    d_ff: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    label_smoothing: f64,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    warmup: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 2000)]
    max_steps: usize,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
}

fn read_pairs(path: &PathBuf) -> Result<Vec<TrainingPair>, CliError> {
    let reader: JsonlReader<TrainingPair> = JsonlReader::open(path)?;
    Ok(reader.collect::<Result<_, _>>()?)
}

pub fn train(args: &TrainArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let pairs = read_pairs(&args.input)?;
    let mut config = ModelConfig::toy(tool.bins()?);
    config.layers = args.layers;
    config.heads = args.heads;
    config.d_model = args.d_model;
    config.d_ff = args.d_ff;
    config.max_len = args.max_len;
    config.label_smoothing = args.label_smoothing;
    config.conditioning = args
        .conditioning
        .parse::<Conditioning>()
        .map_err(CliError::Input)?;
    let hp = Hyperparams {
        lr: args.lr,
        warmup: args.warmup,
        batch_size: args.batch,
        max_steps: args.max_steps,
        eval_every: args.eval_every,
        ..Hyperparams::default()
    };
    let report = train_model(&pairs, &config, &hp, tool.seed)?;
    save_checkpoint(
        &report.params,
        &report.config,
        &report.src_vocab,
        &report.tgt_vocab,
        &args.out,
    )?;
    if args.log.is_some() {
        write_output(&args.log, &report.log_csv())?;
    }
    eprintln!(
        "csc: trained {} steps on {} pairs, best val loss {:.6}, checkpoint {}",
        report.steps,
        pairs.len(),
        report.best_val_loss,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Input training pairs (JSONL); only src (and gamma for oracle bins) is used.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL of {src, hyp, bin}.
    #[arg(long)]
    out: PathBuf,
    /// Bin to decode under: a 1-based index or "oracle" (each sample's own).
    #[arg(long, default_value = "oracle")]
    bin: String,
    /// Decoding mode: greedy | beam.
    #[arg(long, default_value = "beam")]
    mode: String,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    block_ngram: usize,
}

#[derive(Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub src: Vec<String>,
    pub hyp: Vec<String>,
    pub bin: usize,
}

fn parse_mode(mode: &str, width: usize) -> Result<DecodeMode, CliError> {
    match mode {
        "greedy" => Ok(DecodeMode::Greedy),
        "beam" => Ok(DecodeMode::Beam(width)),
        other => Err(CliError::Input(format!("unknown mode {other:?} (expected greedy or beam)"))),
    }
}

enum BinChoice {
    Oracle,
    Fixed(BinIndex),
}

fn parse_bin(spec: &str, bins: &BinConfig) -> Result<BinChoice, CliError> {
    if spec == "oracle" {
        return Ok(BinChoice::Oracle);
    }
    let b: usize = spec
        .parse()
        .map_err(|_| CliError::Input(format!("bin must be an index or \"oracle\", got {spec:?}")))?;
    if b < 1 || b > bins.num_bins() {
        return Err(CliError::Input(format!("bin {b} out of 1..={}", bins.num_bins())));
    }
    Ok(BinChoice::Fixed(BinIndex(b)))
}

fn decode_corpus(
    ckpt: &Checkpoint,
    pairs: &[TrainingPair],
    choice: &BinChoice,
    mode: DecodeMode,
    block_ngram: usize,
    jobs: usize,
) -> Result<Vec<GeneratedRecord>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let results: Vec<Result<GeneratedRecord, CliError>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|p| {
                let bin = match choice {
                    BinChoice::Fixed(b) => *b,
                    BinChoice::Oracle => ckpt.config.bin_config.quantize(p.gamma)?,
                };
                let src_ids = ckpt.src_vocab.encode(&p.src).ok_or_else(|| {
                    CliError::Input("source token missing from model vocabulary".into())
                })?;
                let hyp_ids = decode(
                    &src_ids,
                    bin,
                    &ckpt.params,
                    &ckpt.config,
                    &ckpt.tgt_vocab,
                    mode,
                    block_ngram,
                )?;
                Ok(GeneratedRecord {
                    src: p.src.clone(),
                    hyp: ckpt.tgt_vocab.decode(&hyp_ids),
                    bin: bin.value(),
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn generate(args: &GenerateArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.model)?;
    let pairs = read_pairs(&args.input)?;
    let choice = parse_bin(&args.bin, &ckpt.config.bin_config)?;
    let mode = parse_mode(&args.mode, args.width)?;
    let records = decode_corpus(&ckpt, &pairs, &choice, mode, args.block_ngram, tool.jobs)?;
    write_jsonl(records.iter(), &args.out)?;
    eprintln!("csc: decoded {} sources to {}", pairs.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Synthetic evaluation pairs (JSONL).
    #[arg(long)]
    eval: PathBuf,
    /// "all" or a comma-separated list of 1-based bin indices.
    #[arg(long, default_value = "all")]
    bins: String,
    /// Decoding mode: greedy | beam.
    #[arg(long, default_value = "greedy")]
    mode: String,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    block_ngram: usize,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct SweepRow {
    label: String,
    gamma_mid: Option<f64>,
    len_ratio: f64,
    recall: f64,
    precision: f64,
    bleu: f64,
    len_var: f64,
}

fn sweep_row(
    ckpt: &Checkpoint,
    pairs: &[TrainingPair],
    choice: &BinChoice,
    label: String,
    gamma_mid: Option<f64>,
    mode: DecodeMode,
    block_ngram: usize,
    jobs: usize,
) -> Result<SweepRow, CliError> {
    let records = decode_corpus(ckpt, pairs, choice, mode, block_ngram, jobs)?;
    let full_refs: Vec<Vec<String>> = pairs.iter().map(|p| full_translation(&p.src)).collect();
    let n = pairs.len() as f64;
    let len_ratio = records
        .iter()
        .zip(pairs)
        .map(|(r, p)| r.hyp.len() as f64 / p.src.len() as f64)
        .sum::<f64>()
        / n;
    let mut recall = 0.0;
    let mut precision = 0.0;
    for (r, full) in records.iter().zip(&full_refs) {
        let s = rouge_n(&r.hyp, full, 1)?;
        recall += s.recall;
        precision += s.precision;
    }
    let hyps: Vec<Vec<String>> = records.iter().map(|r| r.hyp.clone()).collect();
    let bleu = bleu_corpus(&hyps, &full_refs)?.score;
    // Oracle-length references: the exact target length each sample's own
    // rate dictates.
    let hyp_lens: Vec<usize> = records.iter().map(|r| r.hyp.len()).collect();
    let oracle_lens: Vec<usize> = pairs
        .iter()
        .map(|p| ((p.gamma * p.src.len() as f64).ceil() as usize).clamp(1, p.src.len()))
        .collect();
    let len_var = length_variance(&hyp_lens, &oracle_lens)?.value;
    Ok(SweepRow {
        label,
        gamma_mid,
        len_ratio,
        recall: recall / n,
        precision: precision / n,
        bleu,
        len_var,
    })
}

pub fn sweep(args: &SweepArgs, tool: &ToolConfig) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.model)?;
    ckpt.ensure_bins(&tool.bins()?)?;
    let pairs = read_pairs(&args.eval)?;
    if pairs.is_empty() {
        return Err(CliError::Input("eval corpus is empty".into()));
    }
    let mode = parse_mode(&args.mode, args.width)?;
    let bin_cfg = ckpt.config.bin_config;
    let requested: Vec<BinIndex> = if args.bins == "all" {
        bin_cfg.bins().collect()
    } else {
        args.bins
            .split(',')
            .map(|s| match parse_bin(s.trim(), &bin_cfg)? {
                BinChoice::Fixed(b) => Ok(b),
                BinChoice::Oracle => Err(CliError::Input(
                    "oracle is always reported; list numeric bins only".into(),
                )),
            })
            .collect::<Result<_, _>>()?
    };

    let mut rows = Vec::new();
    for b in requested {
        let mid = bin_cfg.midpoint(b)?;
        rows.push(sweep_row(
            &ckpt,
            &pairs,
            &BinChoice::Fixed(b),
            b.value().to_string(),
            Some(mid),
            mode,
            args.block_ngram,
            tool.jobs,
        )?);
    }
    rows.push(sweep_row(
        &ckpt,
        &pairs,
        &BinChoice::Oracle,
        "oracle".to_string(),
        None,
        mode,
        args.block_ngram,
        tool.jobs,
    )?);

    let mut csv = String::from("bin,gamma_mid,len_ratio,recall,precision,bleu,len_var\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.gamma_mid.map(|g| g.to_string()).unwrap_or_default(),
            r.len_ratio,
            r.recall,
            r.precision,
            r.bleu,
            r.len_var
        ));
    }
    write_output(&args.out, &csv)
}

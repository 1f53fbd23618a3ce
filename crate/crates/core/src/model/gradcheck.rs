//! Central finite-difference verification of the analytic gradients.

use super::config::ModelConfig;
use super::net::{loss_and_grads, ModelParams, PreparedExample};
use super::ModelError;
use rand::seq::SliceRandom;
use rand::Rng;

const FD_H: f64 = 1e-5;

/// Compares analytic gradients against central differences on
/// `probe_count` randomly chosen scalar parameters, always including at
/// least two coordinates of the bin-embedding table. Returns the maximum
/// relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[PreparedExample],
    probe_count: usize,
    rng: &mut impl Rng,
) -> Result<f64, ModelError> {
    let (_, grads) = loss_and_grads(batch, params, config)?;

    // Enumerate scalar coordinates as (tensor index, row, col).
    let shapes: Vec<(usize, usize, usize)> = params
        .flat()
        .iter()
        .enumerate()
        .map(|(i, (_, t))| (i, t.nrows(), t.ncols()))
        .collect();
    let bin_tensor = params
        .flat()
        .iter()
        .position(|(name, _)| name == "bin_emb")
        .expect("bin embedding present");

    let mut probes: Vec<(usize, usize, usize)> = Vec::with_capacity(probe_count);
    let (_, br, bc) = shapes[bin_tensor];
    while probes.len() < 2 {
        probes.push((bin_tensor, rng.gen_range(0..br), rng.gen_range(0..bc)));
    }
    while probes.len() < probe_count {
        let &(t, r, c) = shapes.choose(rng).unwrap();
        probes.push((t, rng.gen_range(0..r), rng.gen_range(0..c)));
    }

    let mut max_rel = 0.0f64;
    let mut work = params.clone();
    for (t, r, c) in probes {
        let analytic = grads.flat()[t].1[[r, c]];
        let orig = work.flat()[t].1[[r, c]];
        work.flat_mut()[t].1[[r, c]] = orig + FD_H;
        let (loss_plus, _) = loss_and_grads(batch, &work, config)?;
        work.flat_mut()[t].1[[r, c]] = orig - FD_H;
        let (loss_minus, _) = loss_and_grads(batch, &work, config)?;
        work.flat_mut()[t].1[[r, c]] = orig;
        let numeric = (loss_plus - loss_minus) / (2.0 * FD_H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

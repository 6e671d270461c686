//! Forward-looking Gittins index allocation.
//!
//! The next block is filled, patient by patient, by the greedy index policy
//! on hypothetical outcomes drawn from the posterior predictive, with the
//! simulated states updated inside the block. The allocation probability of
//! an arm is its expected share of the block, estimated over repeated
//! simulated blocks. When several arms share the maximal index the step is
//! credited to them equally (its conditional expectation) and the path
//! continues with one of them chosen uniformly.

use rand::Rng;

use super::{apply_control_floor, AllocationProbabilities, ArmState};
use crate::error::{Error, Result};
use crate::gittins::GittinsTable;

/// Monte Carlo block shares together with their standard errors.
#[derive(Clone, Debug)]
pub struct ForwardEstimate {
    pub probabilities: AllocationProbabilities,
    pub std_errors: Vec<f64>,
}

pub fn flgi_estimate<R: Rng + ?Sized>(
    states: &[ArmState],
    block_size: usize,
    table: &GittinsTable,
    sims: usize,
    rng: &mut R,
) -> Result<ForwardEstimate> {
    if block_size == 0 || sims == 0 {
        return Err(Error::InvalidRule(
            "FLGI needs a block size and simulation count >= 1".into(),
        ));
    }
    let arms = states.len();
    let start: Vec<(u32, u32)> = states
        .iter()
        .map(ArmState::posterior_counts)
        .collect::<Result<_>>()?;
    let start_index: Vec<f64> = start
        .iter()
        .map(|&(a, b)| table.index(a, b))
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; arms];
    let mut sum_sq = vec![0.0; arms];
    let mut counts = vec![0.0; arms];
    let mut state = start.clone();
    let mut index = start_index.clone();
    let mut tied = Vec::with_capacity(arms);
    for _ in 0..sims {
        state.copy_from_slice(&start);
        index.copy_from_slice(&start_index);
        counts.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..block_size {
            let best = index.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            tied.clear();
            tied.extend((0..arms).filter(|&k| index[k] == best));
            let share = 1.0 / tied.len() as f64;
            for &k in &tied {
                counts[k] += share;
            }
            let k = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.random_range(0..tied.len())]
            };
            let (a, b) = state[k];
            let success = rng.random::<f64>() * f64::from(a + b) < f64::from(a);
            state[k] = if success { (a + 1, b) } else { (a, b + 1) };
            index[k] = table.index(state[k].0, state[k].1)?;
        }
        for k in 0..arms {
            let share = counts[k] / block_size as f64;
            sum[k] += share;
            sum_sq[k] += share * share;
        }
    }
    let m = sims as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_errors = mean
        .iter()
        .zip(&sum_sq)
        .map(|(mu, sq)| {
            if sims < 2 {
                return f64::INFINITY;
            }
            let var = ((sq - m * mu * mu) / (m - 1.0)).max(0.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(ForwardEstimate {
        probabilities: AllocationProbabilities::from_weights(mean)?,
        std_errors,
    })
}

pub fn flgi_probabilities<R: Rng + ?Sized>(
    states: &[ArmState],
    block_size: usize,
    table: &GittinsTable,
    sims: usize,
    rng: &mut R,
) -> Result<AllocationProbabilities> {
    Ok(flgi_estimate(states, block_size, table, sims, rng)?.probabilities)
}

/// FLGI with the control probability raised to at least `floor`.
pub fn cflgi_probabilities<R: Rng + ?Sized>(
    states: &[ArmState],
    block_size: usize,
    table: &GittinsTable,
    sims: usize,
    floor: f64,
    rng: &mut R,
) -> Result<AllocationProbabilities> {
    let free = flgi_probabilities(states, block_size, table, sims, rng)?;
    apply_control_floor(&free, floor)
}

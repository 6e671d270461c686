//! Monte Carlo randomization test for block-adaptive designs.
//!
//! Outcomes stay attached to patient positions. Each resample re-runs the
//! allocation rule block by block on the observed outcomes, so the
//! reference distribution of the statistic reflects the rule's own
//! dependence on the accumulating data.

use rayon::prelude::*;

use super::{bonferroni_level, z_statistic, Alternative, TestResult};
use crate::allocation::{AllocationRuleSpec, ArmState};
use crate::engine::TrialResult;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Statistics closer than this count as ties with the observed one.
const TIE: f64 = 1e-12;

fn statistics(states: &[ArmState]) -> Vec<f64> {
    let c = states[0];
    states[1..]
        .iter()
        .map(|s| {
            z_statistic::<f64>(
                u64::from(c.successes),
                u64::from(c.observations()),
                u64::from(s.successes),
                u64::from(s.observations()),
            )
        })
        .collect()
}

fn resample(
    observed: &TrialResult,
    rule: &AllocationRuleSpec,
    key: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream(key, index);
    let b = observed.block_size;
    let total = observed.records.len();
    let mut states = vec![ArmState::default(); observed.arms];
    let mut block = Vec::with_capacity(b);
    for (j, chunk) in observed.records.chunks(b).enumerate() {
        let probs = rule.block_probabilities(&states, j + 1, b, total, &mut rng)?;
        block.clear();
        block.extend(
            chunk
                .iter()
                .map(|r| (probs.sample(&mut rng), r.outcome == 1)),
        );
        for &(arm, y) in &block {
            states[arm].record(y);
        }
    }
    Ok(statistics(&states))
}

/// Add-one Monte Carlo p-values, one per experimental arm, for the pooled
/// z statistic of each arm against control. Resample `m` uses stream `m` of
/// `key`.
pub fn randomization_p_values(
    observed: &TrialResult,
    rule: &AllocationRuleSpec,
    resamples: usize,
    alternative: Alternative,
    key: u64,
) -> Result<Vec<f64>> {
    if resamples == 0 {
        return Err(Error::InvalidData("randomization test needs M >= 1".into()));
    }
    if observed.block_size == 0 || !observed.records.len().is_multiple_of(observed.block_size) {
        return Err(Error::InvalidData(format!(
            "{} records do not form blocks of {}",
            observed.records.len(),
            observed.block_size
        )));
    }
    let z_obs = statistics(&observed.arm_states);
    let draws: Vec<Vec<f64>> = (0..resamples as u64)
        .into_par_iter()
        .map(|m| resample(observed, rule, key, m))
        .collect::<Result<_>>()?;
    Ok(z_obs
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let extreme = draws
                .iter()
                .filter(|d| match alternative {
                    Alternative::TwoSided => d[k].abs() >= z.abs() - TIE,
                    Alternative::Greater => d[k] <= z + TIE,
                })
                .count();
            (1 + extreme) as f64 / (resamples + 1) as f64
        })
        .collect())
}

/// Per-arm randomization tests at the Bonferroni level `alpha / K`.
pub fn randomization_test(
    observed: &TrialResult,
    rule: &AllocationRuleSpec,
    resamples: usize,
    alpha: f64,
    alternative: Alternative,
    key: u64,
) -> Result<Vec<TestResult>> {
    let p = randomization_p_values(observed, rule, resamples, alternative, key)?;
    let level = bonferroni_level(alpha, p.len())?;
    let z = statistics(&observed.arm_states);
    Ok(z.into_iter()
        .zip(p)
        .map(|(z, p)| TestResult::decide(z, p, level))
        .collect())
}

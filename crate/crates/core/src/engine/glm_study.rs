use rayon::prelude::*;

use super::{check_replicates, run_trial, TrialConfig};
use crate::error::Result;
use crate::inference::{fit_logistic_firth, fit_logistic_mle, GlmSpec};

/// Replicate averages for one coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub mse: f64,
    /// Fraction of fits with Wald `p < level`.
    pub rejection_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmStudy {
    pub penalized: bool,
    pub replicates: usize,
    /// Fits that could not be computed at all (an empty arm).
    pub failed: usize,
    pub coefficients: Vec<CoefficientSummary>,
    /// Among computed fits.
    pub finite_fraction: f64,
    pub separated_fraction: f64,
    pub converged_fraction: f64,
}

/// Fits the logistic model to each of `nr` simulated trials. Trials are the
/// same as those of [`super::run_study`] with this configuration, so
/// penalized and unpenalized studies are paired.
pub fn run_glm_study(
    cfg: &TrialConfig,
    nr: usize,
    spec: &GlmSpec,
    penalized: bool,
    level: f64,
) -> Result<GlmStudy> {
    check_replicates(nr)?;
    let model = &cfg.model;
    let mut truth = vec![model.beta0];
    if spec.time {
        truth.push(model.beta_t);
    }
    if spec.covariate {
        truth.push(model.beta_z);
    }
    truth.extend_from_slice(&model.beta_arm()[1..spec.arms.min(model.arms())]);

    let fits: Vec<_> = (0..nr as u64)
        .into_par_iter()
        .map(|r| {
            let trial = run_trial(cfg, &mut cfg.trial_stream(r))?;
            let fit = if penalized {
                fit_logistic_firth::<f64>(&trial.records, spec)
            } else {
                fit_logistic_mle::<f64>(&trial.records, spec)
            };
            Ok(fit.ok())
        })
        .collect::<Result<_>>()?;

    let done: Vec<_> = fits.iter().flatten().collect();
    let m = done.len().max(1) as f64;
    let coefficients = spec
        .names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let t = truth.get(c).copied().unwrap_or(0.0);
            let mean = done.iter().map(|f| f.coefficients[c]).sum::<f64>() / m;
            let mse = done
                .iter()
                .map(|f| (f.coefficients[c] - t).powi(2))
                .sum::<f64>()
                / m;
            let rejection_rate = done.iter().filter(|f| f.p_values[c] < level).count() as f64 / m;
            CoefficientSummary {
                name,
                truth: t,
                mean,
                mse,
                rejection_rate,
            }
        })
        .collect();
    let frac = |pred: &dyn Fn(&&&crate::inference::GlmFit) -> bool| {
        done.iter().filter(|f| pred(f)).count() as f64 / m
    };
    Ok(GlmStudy {
        penalized,
        replicates: nr,
        failed: nr - done.len(),
        coefficients,
        finite_fraction: frac(&|f| f.coefficients.iter().all(|b| b.is_finite())),
        separated_fraction: frac(&|f| f.separation_detected),
        converged_fraction: frac(&|f| f.converged),
    })
}

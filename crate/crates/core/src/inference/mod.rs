//! Hypothesis tests and logistic model fitting for trial data.
//!
//! Arm-versus-control tests take counts `(s0, n0)` for control and
//! `(s1, n1)` for the experimental arm. The z statistic is oriented as
//! `(p0 - p1) / se`, so benefit of the experimental arm gives negative
//! values.

mod glm;
mod linalg;
mod randomization;

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::num::Real;

pub use glm::{detect_separation, fit_logistic_firth, fit_logistic_mle, GlmFit, GlmSpec};
pub use randomization::{randomization_p_values, randomization_test};

/// Direction of the alternative hypothesis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// The experimental arm has the higher success rate.
    Greater,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
        })
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            other => Err(Error::InvalidData(format!(
                "unknown alternative `{other}` (expected two-sided or greater)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult<F = f64> {
    pub statistic: F,
    pub p_value: F,
    pub reject: bool,
}

impl<F: Real> TestResult<F> {
    /// Rejects when `p_value <= threshold`.
    pub fn decide(statistic: F, p_value: F, threshold: F) -> Self {
        Self {
            statistic,
            p_value,
            reject: p_value <= threshold,
        }
    }
}

fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn check_counts(s: u64, n: u64, which: &str) -> Result<()> {
    if s > n {
        return Err(Error::InvalidData(format!(
            "{which}: {s} successes out of {n} patients"
        )));
    }
    Ok(())
}

/// Pooled two-proportion statistic; zero when either arm is empty or the
/// pooled rate is 0 or 1.
pub fn z_statistic<F: Real>(s0: u64, n0: u64, s1: u64, n1: u64) -> F {
    if n0 == 0 || n1 == 0 {
        return F::zero();
    }
    let (s0f, n0f, s1f, n1f) = (
        F::of(s0 as f64),
        F::of(n0 as f64),
        F::of(s1 as f64),
        F::of(n1 as f64),
    );
    let pooled = (s0f + s1f) / (n0f + n1f);
    let var = pooled * (F::one() - pooled) * (F::one() / n0f + F::one() / n1f);
    if !(var > F::zero()) {
        return F::zero();
    }
    (s0f / n0f - s1f / n1f) / var.sqrt()
}

/// Unpooled (Wald) two-proportion statistic. Zero when either arm is empty
/// or both rates are equal; when both estimated variances vanish with
/// different rates it is infinite.
pub fn wald_z_statistic<F: Real>(s0: u64, n0: u64, s1: u64, n1: u64) -> F {
    if n0 == 0 || n1 == 0 {
        return F::zero();
    }
    let p0 = F::of(s0 as f64) / F::of(n0 as f64);
    let p1 = F::of(s1 as f64) / F::of(n1 as f64);
    let diff = p0 - p1;
    if diff == F::zero() {
        return F::zero();
    }
    let var = p0 * (F::one() - p0) / F::of(n0 as f64) + p1 * (F::one() - p1) / F::of(n1 as f64);
    if var > F::zero() {
        diff / var.sqrt()
    } else {
        diff.signum() * F::infinity()
    }
}

/// p-value of an oriented z statistic.
pub fn z_p_value<F: Real>(z: F, alternative: Alternative) -> F {
    let z = z.to_f64_lossy();
    let p = match alternative {
        Alternative::TwoSided => 2.0 * normal_sf(z.abs()),
        Alternative::Greater => normal_sf(-z),
    };
    F::of(p.min(1.0))
}

/// Pooled z-test of control against one experimental arm, rejecting at
/// `p <= level`.
pub fn z_test<F: Real>(
    s0: u64,
    n0: u64,
    s1: u64,
    n1: u64,
    level: F,
    alternative: Alternative,
) -> Result<TestResult<F>> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidData(format!(
            "z-test needs patients on both arms (n0 = {n0}, n1 = {n1})"
        )));
    }
    check_counts(s0, n0, "control")?;
    check_counts(s1, n1, "experimental arm")?;
    let z = z_statistic::<F>(s0, n0, s1, n1);
    Ok(TestResult::decide(z, z_p_value(z, alternative), level))
}

/// Wald z-test of control against one experimental arm, rejecting at
/// `p <= level`.
pub fn wald_z_test<F: Real>(
    s0: u64,
    n0: u64,
    s1: u64,
    n1: u64,
    level: F,
    alternative: Alternative,
) -> Result<TestResult<F>> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidData(format!(
            "z-test needs patients on both arms (n0 = {n0}, n1 = {n1})"
        )));
    }
    check_counts(s0, n0, "control")?;
    check_counts(s1, n1, "experimental arm")?;
    let z = wald_z_statistic::<F>(s0, n0, s1, n1);
    Ok(TestResult::decide(z, z_p_value(z, alternative), level))
}

/// Relative slack when comparing table probabilities, as in common
/// statistical software; ties in exact arithmetic must not be lost to
/// rounding.
const FISHER_RELATIVE_TIE: f64 = 1e-7;

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Fisher's exact test. The two-sided p-value sums the probabilities of all
/// tables with the observed margins that are no more likely than the
/// observed one. The statistic reported is the experimental-arm success
/// count minus its null expectation.
pub fn fisher_exact(
    s0: u64,
    n0: u64,
    s1: u64,
    n1: u64,
    level: f64,
    alternative: Alternative,
) -> Result<TestResult> {
    if n0 + n1 == 0 {
        return Err(Error::InvalidData(
            "Fisher's test needs at least one patient".into(),
        ));
    }
    check_counts(s0, n0, "control")?;
    check_counts(s1, n1, "experimental arm")?;
    let n = n0 + n1;
    let m = s0 + s1;
    let lo = m.saturating_sub(n0);
    let hi = m.min(n1);
    let denom = ln_choose(n, m);
    let prob = |x: u64| (ln_choose(n1, x) + ln_choose(n0, m - x) - denom).exp();
    let observed = prob(s1);
    let p = match alternative {
        Alternative::TwoSided => {
            let cut = observed * (1.0 + FISHER_RELATIVE_TIE);
            (lo..=hi).map(prob).filter(|&q| q <= cut).sum::<f64>()
        }
        Alternative::Greater => (s1..=hi).map(prob).sum::<f64>(),
    };
    let expected = m as f64 * n1 as f64 / n as f64;
    Ok(TestResult::decide(s1 as f64 - expected, p.min(1.0), level))
}

/// Per-comparison level controlling the family-wise error over `k` tests.
pub fn bonferroni_level<F: Real>(alpha: F, k: usize) -> Result<F> {
    if k == 0 {
        return Err(Error::InvalidData(
            "Bonferroni correction needs K >= 1".into(),
        ));
    }
    Ok(alpha / F::of_usize(k))
}

/// Largest cutoff `c` among the observed p-values for which the empirical
/// rejection rate `#{p <= c} / N` does not exceed `alpha`. Returns 0 when
/// even the smallest p-value would reject too often, and 1 for
/// `alpha >= 1`.
pub fn empirical_cutoff(p_values: &[f64], alpha: f64) -> Result<f64> {
    if p_values.is_empty() {
        return Err(Error::InvalidData("no p-values to calibrate on".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidData(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if alpha >= 1.0 {
        return Ok(1.0);
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidData(format!("p-value {p} outside [0, 1]")));
    }
    let n = p_values.len();
    if (n as f64) * alpha < 10.0 {
        warn!(
            "calibrating an alpha = {alpha} cutoff on {n} p-values: fewer than 10 expected rejections"
        );
    }
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let allowed = (alpha * n as f64 + 1e-9).floor() as usize;
    if allowed >= n {
        return Ok(1.0);
    }
    // The cutoff may not reach sorted[allowed]; among values below it take
    // the largest one that is not tied with it.
    let barrier = sorted[allowed];
    Ok(sorted[..allowed]
        .iter()
        .rev()
        .copied()
        .find(|&p| p < barrier)
        .unwrap_or(0.0))
}

pub use crate::engine::calibrate_cutoff;

//! Block allocation rules.
//!
//! Every rule maps the per-arm posterior state at the end of a block to the
//! probability vector used for the next block. Rules are pure given the
//! states, their parameters and the caller's random stream.

mod forward;
mod thompson;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::trace;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gittins::GittinsTable;
use crate::num::Real;

pub use forward::{cflgi_probabilities, flgi_estimate, flgi_probabilities, ForwardEstimate};
pub use thompson::{posterior_best_probabilities, ts_probabilities};

pub const DEFAULT_M_TS: usize = 10_000;
pub const DEFAULT_M_FLGI: usize = 100;

/// Success/failure counts of one arm with its Beta prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmState {
    pub successes: u32,
    pub failures: u32,
    pub prior_a: f64,
    pub prior_b: f64,
}

impl Default for ArmState {
    fn default() -> Self {
        Self::new(0, 0)
    }
}

impl ArmState {
    /// Counts under the uniform Beta(1, 1) prior.
    pub fn new(successes: u32, failures: u32) -> Self {
        Self {
            successes,
            failures,
            prior_a: 1.0,
            prior_b: 1.0,
        }
    }

    pub fn with_prior(mut self, prior_a: f64, prior_b: f64) -> Self {
        self.prior_a = prior_a;
        self.prior_b = prior_b;
        self
    }

    pub fn observations(&self) -> u32 {
        self.successes + self.failures
    }

    pub fn record(&mut self, success: bool) {
        if success {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
    }

    /// Posterior Beta parameters.
    pub fn posterior(&self) -> (f64, f64) {
        (
            self.prior_a + self.successes as f64,
            self.prior_b + self.failures as f64,
        )
    }

    pub fn posterior_mean(&self) -> f64 {
        let (a, b) = self.posterior();
        a / (a + b)
    }

    /// Posterior counts as integers, for Gittins table lookups.
    pub(crate) fn posterior_counts(&self) -> Result<(u32, u32)> {
        let integral = |x: f64| x >= 1.0 && x.fract() == 0.0 && x < u32::MAX as f64;
        if !(integral(self.prior_a) && integral(self.prior_b)) {
            return Err(Error::InvalidRule(format!(
                "Gittins rules need integer priors >= 1, got Beta({}, {})",
                self.prior_a, self.prior_b
            )));
        }
        Ok((
            self.prior_a as u32 + self.successes,
            self.prior_b as u32 + self.failures,
        ))
    }
}

/// Probability of assigning the next block's patients to each arm,
/// control first.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProbabilities<F = f64>(Vec<F>);

impl<F: Real> AllocationProbabilities<F> {
    /// Checks the simplex constraints: entries in [0, 1] summing to 1 within
    /// 1e-12 (a few ulps for `f32`).
    pub fn new(values: Vec<F>) -> Result<Self> {
        let tol = F::of(1e-12).max(F::epsilon() * F::of(64.0));
        let sum = values.iter().fold(F::zero(), |acc, &v| acc + v);
        if values.is_empty()
            || values.iter().any(|&v| !(v >= F::zero() && v <= F::one()))
            || (sum - F::one()).abs() > tol
        {
            return Err(Error::InvalidRule(format!(
                "not a probability vector: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform
    /// vector.
    pub fn from_weights(weights: Vec<F>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= F::zero()) || !w.is_finite()) {
            return Err(Error::InvalidRule(format!("invalid weights {weights:?}")));
        }
        let total = weights.iter().fold(F::zero(), |acc, &w| acc + w);
        if weights.is_empty() {
            return Err(Error::InvalidRule("no arms".into()));
        }
        if total == F::zero() {
            return Ok(Self::uniform(weights.len()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(arms: usize) -> Self {
        Self(vec![F::one() / F::of_usize(arms); arms])
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }

    pub fn arms(&self) -> usize {
        self.0.len()
    }

    pub fn control(&self) -> F {
        self.0[0]
    }

    /// Draws an arm by inversion of one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.0.iter().enumerate() {
            acc += p.to_f64_lossy();
            if u < acc {
                return k;
            }
        }
        // rounding left u beyond the cumulative sum; take the last arm with mass
        self.0
            .iter()
            .rposition(|p| *p > F::zero())
            .unwrap_or(self.0.len() - 1)
    }
}

/// Complete randomisation over control plus `experimental` arms.
pub fn cr_probabilities<F: Real>(experimental: usize) -> AllocationProbabilities<F> {
    AllocationProbabilities::uniform(experimental + 1)
}

/// Square-root rule on the estimated success rates. For two arms this is
/// `sqrt(p0) / (sqrt(p0) + sqrt(p1))` on control; with more arms each arm
/// gets weight `sqrt(p_k)`.
pub fn rsihr_probabilities<F: Real>(estimates: &[F]) -> Result<AllocationProbabilities<F>> {
    if let Some(p) = estimates
        .iter()
        .find(|p| !(**p > F::zero() && **p < F::one()))
    {
        return Err(Error::InvalidRule(format!(
            "RSIHR needs rate estimates in (0, 1), got {p}"
        )));
    }
    AllocationProbabilities::from_weights(estimates.iter().map(|p| p.sqrt()).collect())
}

/// Plug-in rate estimates for RSIHR: the prior mean for arms without data,
/// otherwise the MLE clamped to `[e, 1 - e]` with `e = 1 / (2n + 2)`.
pub fn rsihr_estimates(states: &[ArmState]) -> Vec<f64> {
    states
        .iter()
        .map(|s| {
            let n = s.observations();
            if n == 0 {
                return s.prior_a / (s.prior_a + s.prior_b);
            }
            let mle = s.successes as f64 / n as f64;
            let eps = 1.0 / (2.0 * n as f64 + 2.0);
            if mle < eps || mle > 1.0 - eps {
                trace!("RSIHR: clamping boundary estimate {mle} (n = {n})");
            }
            mle.clamp(eps, 1.0 - eps)
        })
        .collect()
}

/// Raises the control probability to at least `floor`, scaling the
/// experimental arms proportionally into the remaining mass.
pub fn apply_control_floor<F: Real>(
    probs: &AllocationProbabilities<F>,
    floor: F,
) -> Result<AllocationProbabilities<F>> {
    if !(floor >= F::zero() && floor <= F::one()) {
        return Err(Error::InvalidRule(format!(
            "control floor {floor} outside [0, 1]"
        )));
    }
    let p = probs.as_slice();
    if p[0] >= floor {
        return Ok(probs.clone());
    }
    let rest: F = p[1..].iter().fold(F::zero(), |acc, &v| acc + v);
    let scale = (F::one() - floor) / rest;
    let mut out = Vec::with_capacity(p.len());
    out.push(floor);
    out.extend(p[1..].iter().map(|&v| v * scale));
    Ok(AllocationProbabilities(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Cr,
    Ts,
    Rsihr,
    Flgi,
    Cflgi,
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Cr => "CR",
            RuleKind::Ts => "TS",
            RuleKind::Rsihr => "RSIHR",
            RuleKind::Flgi => "FLGI",
            RuleKind::Cflgi => "CFLGI",
        }
    }

    pub fn needs_gittins(&self) -> bool {
        matches!(self, RuleKind::Flgi | RuleKind::Cflgi)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CR" => Ok(RuleKind::Cr),
            "TS" => Ok(RuleKind::Ts),
            "RSIHR" => Ok(RuleKind::Rsihr),
            "FLGI" => Ok(RuleKind::Flgi),
            "CFLGI" => Ok(RuleKind::Cflgi),
            other => Err(Error::InvalidRule(format!(
                "unknown rule `{other}` (expected CR, TS, RSIHR, FLGI or CFLGI)"
            ))),
        }
    }
}

/// A rule together with its tuning parameters.
#[derive(Clone, Debug)]
pub struct AllocationRuleSpec {
    pub kind: RuleKind,
    /// Posterior draws per Thompson block.
    pub m_ts: usize,
    /// Simulated blocks per forward-looking Gittins estimate.
    pub m_flgi: usize,
    /// CFLGI control floor; `None` means `1 / (K + 1)`.
    pub control_floor: Option<f64>,
    pub gittins: Option<Arc<GittinsTable>>,
}

impl AllocationRuleSpec {
    pub fn new(kind: RuleKind) -> Self {
        Self {
            kind,
            m_ts: DEFAULT_M_TS,
            m_flgi: DEFAULT_M_FLGI,
            control_floor: None,
            gittins: None,
        }
    }

    pub fn cr() -> Self {
        Self::new(RuleKind::Cr)
    }

    pub fn thompson(m_ts: usize) -> Self {
        Self {
            m_ts,
            ..Self::new(RuleKind::Ts)
        }
    }

    pub fn rsihr() -> Self {
        Self::new(RuleKind::Rsihr)
    }

    pub fn flgi(table: Arc<GittinsTable>, m_flgi: usize) -> Self {
        Self {
            m_flgi,
            gittins: Some(table),
            ..Self::new(RuleKind::Flgi)
        }
    }

    pub fn cflgi(table: Arc<GittinsTable>, m_flgi: usize, floor: Option<f64>) -> Self {
        Self {
            m_flgi,
            control_floor: floor,
            gittins: Some(table),
            ..Self::new(RuleKind::Cflgi)
        }
    }

    pub fn floor_for(&self, arms: usize) -> f64 {
        self.control_floor.unwrap_or(1.0 / arms as f64)
    }

    /// Checks parameters against a trial with `arms` arms and at most
    /// `max_per_arm` patients on any arm.
    pub fn validate(&self, arms: usize, max_per_arm: usize) -> Result<()> {
        if arms < 2 {
            return Err(Error::InvalidRule("need at least two arms".into()));
        }
        match self.kind {
            RuleKind::Ts if self.m_ts == 0 => {
                return Err(Error::InvalidRule("m_ts must be >= 1".into()))
            }
            RuleKind::Flgi | RuleKind::Cflgi => {
                if self.m_flgi == 0 {
                    return Err(Error::InvalidRule("m_flgi must be >= 1".into()));
                }
                let table = self
                    .gittins
                    .as_ref()
                    .ok_or(Error::GittinsRequired(self.kind.name()))?;
                if (table.max_n() as usize) < max_per_arm {
                    return Err(Error::GittinsMissing {
                        a: 1,
                        b: max_per_arm as u32 + 1,
                    });
                }
            }
            _ => {}
        }
        if let Some(f) = self.control_floor {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidRule(format!(
                    "control floor {f} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Probabilities for block `stage` (1-based) of a trial with blocks of
    /// `block_size` and `total` patients, given the states after the
    /// previous blocks. The first block is always uniform.
    pub fn block_probabilities<R: Rng + ?Sized>(
        &self,
        states: &[ArmState],
        stage: usize,
        block_size: usize,
        total: usize,
        rng: &mut R,
    ) -> Result<AllocationProbabilities> {
        let arms = states.len();
        if stage <= 1 {
            return Ok(AllocationProbabilities::uniform(arms));
        }
        match self.kind {
            RuleKind::Cr => Ok(cr_probabilities(arms - 1)),
            RuleKind::Ts => {
                let c = ((stage - 1) * block_size) as f64 / (2.0 * total as f64);
                ts_probabilities(states, c, self.m_ts, rng)
            }
            RuleKind::Rsihr => rsihr_probabilities(&rsihr_estimates(states)),
            RuleKind::Flgi => {
                let table = self
                    .gittins
                    .as_deref()
                    .ok_or(Error::GittinsRequired("FLGI"))?;
                flgi_probabilities(states, block_size, table, self.m_flgi, rng)
            }
            RuleKind::Cflgi => {
                let table = self
                    .gittins
                    .as_deref()
                    .ok_or(Error::GittinsRequired("CFLGI"))?;
                cflgi_probabilities(
                    states,
                    block_size,
                    table,
                    self.m_flgi,
                    self.floor_for(arms),
                    rng,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn complete_randomisation() {
        assert_eq!(cr_probabilities::<f64>(1).as_slice(), &[0.5, 0.5]);
        assert_eq!(cr_probabilities::<f64>(2).as_slice(), &[1.0 / 3.0; 3]);
        assert_eq!(cr_probabilities::<f64>(3).as_slice(), &[0.25; 4]);
    }

    #[test]
    fn rsihr_examples() {
        assert_eq!(
            rsihr_probabilities(&[0.4, 0.4]).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        let p = rsihr_probabilities(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.3956, epsilon = 5e-5);
        assert_abs_diff_eq!(p.as_slice()[1], 0.6044, epsilon = 5e-5);
        let p3 = rsihr_probabilities(&[0.25, 0.25, 0.25]).unwrap();
        for v in p3.as_slice() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(rsihr_probabilities(&[0.0, 0.5]).is_err());
        let p32: AllocationProbabilities<f32> = rsihr_probabilities(&[0.3_f32, 0.7]).unwrap();
        assert!((p32.as_slice()[0] - 0.3956).abs() < 1e-4);
    }

    #[test]
    fn rsihr_plug_in_estimates() {
        let states = [
            ArmState::new(0, 0),
            ArmState::new(0, 4),
            ArmState::new(5, 0),
            ArmState::new(3, 1),
        ];
        let est = rsihr_estimates(&states);
        assert_eq!(est[0], 0.5);
        assert_abs_diff_eq!(est[1], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(est[2], 1.0 - 1.0 / 12.0, epsilon = 1e-15);
        assert_eq!(est[3], 0.75);
        assert!(rsihr_probabilities(&est).is_ok());
    }

    #[test]
    fn control_floor_rescaling() {
        let p = AllocationProbabilities::new(vec![0.1, 0.6, 0.3]).unwrap();
        let c = apply_control_floor(&p, 1.0 / 3.0).unwrap();
        let v = c.as_slice();
        assert_abs_diff_eq!(v[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.6 * (2.0 / 3.0) / 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.3 * (2.0 / 3.0) / 0.9, epsilon = 1e-15);
        let high = AllocationProbabilities::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert_eq!(apply_control_floor(&high, 1.0 / 3.0).unwrap(), high);
        assert!(apply_control_floor(&high, 1.5).is_err());
    }

    #[test]
    fn probability_vector_checks() {
        assert!(AllocationProbabilities::new(vec![0.5, 0.6]).is_err());
        assert!(AllocationProbabilities::new(vec![-0.1, 1.1]).is_err());
        assert!(AllocationProbabilities::<f64>::new(vec![]).is_err());
        assert_eq!(
            AllocationProbabilities::from_weights(vec![0.0, 0.0])
                .unwrap()
                .as_slice(),
            &[0.5, 0.5]
        );
        assert!(AllocationProbabilities::from_weights(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rule_names_round_trip() {
        for k in [
            RuleKind::Cr,
            RuleKind::Ts,
            RuleKind::Rsihr,
            RuleKind::Flgi,
            RuleKind::Cflgi,
        ] {
            assert_eq!(k.name().parse::<RuleKind>().unwrap(), k);
        }
        assert_eq!("flgi".parse::<RuleKind>().unwrap(), RuleKind::Flgi);
        assert!("DBCD".parse::<RuleKind>().is_err());
    }

    #[test]
    fn first_block_is_uniform_and_tables_are_required() {
        let mut rng = crate::rng::stream(1, 0);
        let states = [ArmState::new(9, 0), ArmState::new(0, 9)];
        for spec in [
            AllocationRuleSpec::thompson(100),
            AllocationRuleSpec::rsihr(),
        ] {
            let p = spec
                .block_probabilities(&states, 1, 10, 50, &mut rng)
                .unwrap();
            assert_eq!(p.as_slice(), &[0.5, 0.5]);
        }
        let flgi = AllocationRuleSpec::new(RuleKind::Flgi);
        assert!(matches!(
            flgi.validate(2, 10),
            Err(Error::GittinsRequired("FLGI"))
        ));
        assert!(flgi
            .block_probabilities(&states, 2, 10, 50, &mut rng)
            .is_err());
        let small = Arc::new(GittinsTable::from_fn(0.9, 5, |a, b| {
            a as f64 / (a + b) as f64
        }));
        assert!(matches!(
            AllocationRuleSpec::flgi(small, 10).validate(2, 20),
            Err(Error::GittinsMissing { .. })
        ));
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = crate::rng::stream(2, 0);
        let p = AllocationProbabilities::new(vec![0.2, 0.0, 0.8]).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[p.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.2).abs() < 0.015);
    }
}

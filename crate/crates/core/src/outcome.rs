//! Binary outcome model with a stage trend and one binary patient covariate.
//!
//! On the logit scale a patient in stage `j` (1-based) with covariate `z`
//! allocated to arm `k` succeeds with log-odds
//! `beta0 + beta_t * (j - 1) + beta_z * z + beta_arm[k]`, where arm 0 is the
//! control and `beta_arm[0] == 0`. The covariate is Bernoulli(`q_j`).

use crate::error::{Error, Result};
use crate::num::Real;

/// Logistic function `exp(u) / (1 + exp(u))`, evaluated without overflow.
pub fn expit<F: Real>(u: F) -> F {
    if u >= F::zero() {
        F::one() / (F::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (F::one() + e)
    }
}

pub fn logit<F: Real>(p: F) -> F {
    (p / (F::one() - p)).ln()
}

/// Log-odds shift that moves a success rate from `base_rate` to `target_rate`.
pub fn effect_coefficient<F: Real>(base_rate: F, target_rate: F) -> F {
    logit(target_rate) - logit(base_rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeModel<F = f64> {
    pub beta0: F,
    pub beta_t: F,
    pub beta_z: F,
    beta_arm: Vec<F>,
    q_schedule: Vec<F>,
    block_size: usize,
    /// Whether trial records carry the drawn covariate. When false the
    /// covariate still drives outcomes but is recorded as 0.
    pub z_observed: bool,
}

/// One simulated patient. Stage is 1-based, arm 0 is control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatientRecord {
    pub stage: usize,
    pub z: u8,
    pub arm: usize,
    pub outcome: u8,
}

impl<F: Real> OutcomeModel<F> {
    pub fn new(
        beta0: F,
        beta_t: F,
        beta_z: F,
        beta_arm: Vec<F>,
        q_schedule: Vec<F>,
        block_size: usize,
    ) -> Result<Self> {
        let model = Self {
            beta0,
            beta_t,
            beta_z,
            beta_arm,
            q_schedule,
            block_size,
            z_observed: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_z_observed(mut self, observed: bool) -> Self {
        self.z_observed = observed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.beta_arm.len() < 2 {
            return Err(Error::InvalidModel(
                "beta_arm needs the control plus at least one experimental arm".into(),
            ));
        }
        if self.beta_arm[0] != F::zero() {
            return Err(Error::InvalidModel(
                "beta_arm[0] (control) must be 0".into(),
            ));
        }
        if self.q_schedule.is_empty() {
            return Err(Error::InvalidModel(
                "q_schedule must have J >= 1 entries".into(),
            ));
        }
        if let Some(q) = self
            .q_schedule
            .iter()
            .find(|q| !(**q >= F::zero() && **q <= F::one()))
        {
            return Err(Error::InvalidModel(format!("q_j = {q} is outside [0, 1]")));
        }
        if self.block_size == 0 {
            return Err(Error::InvalidModel("block size b must be >= 1".into()));
        }
        let coefs = [self.beta0, self.beta_t, self.beta_z];
        if coefs
            .iter()
            .chain(self.beta_arm.iter())
            .any(|c| !c.is_finite())
        {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Number of experimental arms `K`.
    pub fn experimental_arms(&self) -> usize {
        self.beta_arm.len() - 1
    }

    /// Number of arms including control, `K + 1`.
    pub fn arms(&self) -> usize {
        self.beta_arm.len()
    }

    /// Number of stages `J`.
    pub fn stages(&self) -> usize {
        self.q_schedule.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Trial size `T = b * J`.
    pub fn total_size(&self) -> usize {
        self.block_size * self.stages()
    }

    pub fn beta_arm(&self) -> &[F] {
        &self.beta_arm
    }

    pub fn q_schedule(&self) -> &[F] {
        &self.q_schedule
    }

    fn check(&self, arm: usize, stage: usize) -> Result<()> {
        if arm >= self.arms() {
            return Err(Error::IndexOutOfRange {
                what: "arm",
                index: arm,
                limit: self.arms() - 1,
            });
        }
        if stage == 0 || stage > self.stages() {
            return Err(Error::IndexOutOfRange {
                what: "stage",
                index: stage,
                limit: self.stages(),
            });
        }
        Ok(())
    }

    fn linear_predictor(&self, arm: usize, stage: usize, z: bool) -> F {
        let t = F::of_usize(stage - 1);
        let mut eta = self.beta0 + self.beta_t * t + self.beta_arm[arm];
        if z {
            eta = eta + self.beta_z;
        }
        eta
    }

    pub fn success_probability(&self, arm: usize, stage: usize, z: bool) -> Result<F> {
        self.check(arm, stage)?;
        Ok(expit(self.linear_predictor(arm, stage, z)))
    }

    /// Success rate with the covariate averaged out at its stage prevalence.
    pub fn marginal_success_probability(&self, arm: usize, stage: usize) -> Result<F> {
        self.check(arm, stage)?;
        let q = self.q_schedule[stage - 1];
        let neg = expit(self.linear_predictor(arm, stage, false));
        let pos = expit(self.linear_predictor(arm, stage, true));
        Ok((F::one() - q) * neg + q * pos)
    }

    /// Average of the marginal rate over equally sized stages.
    pub fn mean_response_rate(&self, arm: usize) -> Result<F> {
        let mut total = F::zero();
        for stage in 1..=self.stages() {
            total = total + self.marginal_success_probability(arm, stage)?;
        }
        Ok(total / F::of_usize(self.stages()))
    }

    /// Difference in mean response rate between `arm` and control.
    pub fn treatment_effect(&self, arm: usize) -> Result<F> {
        Ok(self.mean_response_rate(arm)? - self.mean_response_rate(0)?)
    }

    /// Arm with the highest mean response rate. When several arms share the
    /// maximum (the global null in particular) the highest label wins.
    pub fn best_arm(&self) -> usize {
        let rates: Vec<F> = (0..self.arms())
            .map(|k| self.mean_response_rate(k).unwrap_or_else(|_| F::nan()))
            .collect();
        let max = rates.iter().copied().fold(F::neg_infinity(), F::max);
        let eps = F::of(1e-12);
        (0..self.arms())
            .rev()
            .find(|&k| (rates[k] - max).abs() <= eps)
            .unwrap_or(self.arms() - 1)
    }

    /// Arms whose mean rate differs from control, i.e. where the null fails.
    pub fn effective_arms(&self) -> Vec<usize> {
        let eps = F::of(1e-12);
        (1..self.arms())
            .filter(|&k| {
                self.treatment_effect(k)
                    .map(|d| d.abs() > eps)
                    .unwrap_or(false)
            })
            .collect()
    }

    /// Control-arm rate in the last stage minus the first stage.
    pub fn overall_trend(&self) -> F {
        let last = self.stages();
        self.marginal_success_probability(0, last)
            .unwrap_or_else(|_| F::nan())
            - self
                .marginal_success_probability(0, 1)
                .unwrap_or_else(|_| F::nan())
    }
}

/// Per-stage log-odds trend giving an overall control-rate change of `d`
/// between stage 1 and stage `stages`, with no covariate effect.
pub fn solve_trend_coefficient<F: Real>(d: F, beta0: F, stages: usize) -> Result<F> {
    if stages < 2 {
        return Err(Error::InvalidModel(
            "a time trend needs at least two stages".into(),
        ));
    }
    let start = expit(beta0);
    let end = start + d;
    if !(end > F::zero() && end < F::one()) {
        return Err(Error::InvalidModel(format!(
            "trend D = {d} moves the success rate {start} outside (0, 1)"
        )));
    }
    if d == F::zero() {
        return Ok(F::zero());
    }
    Ok((logit(end) - beta0) / F::of_usize(stages - 1))
}

/// Changes in the standard of care: linear log-odds trend over stages,
/// no covariate effect.
pub fn build_scenario_i<F: Real>(
    d: F,
    beta0: F,
    beta_arm: Vec<F>,
    stages: usize,
    block_size: usize,
) -> Result<OutcomeModel<F>> {
    let beta_t = solve_trend_coefficient(d, beta0, stages)?;
    OutcomeModel::new(
        beta0,
        beta_t,
        F::zero(),
        beta_arm,
        vec![F::zero(); stages],
        block_size,
    )
}

/// Patient drift: no stage trend, the covariate prevalence follows
/// `q_schedule` (one entry per stage).
pub fn build_scenario_ii<F: Real>(
    q_schedule: Vec<F>,
    beta_z: F,
    beta0: F,
    beta_arm: Vec<F>,
    stages: usize,
    block_size: usize,
) -> Result<OutcomeModel<F>> {
    if q_schedule.len() != stages {
        return Err(Error::InvalidModel(format!(
            "q_schedule has {} entries but J = {stages}",
            q_schedule.len()
        )));
    }
    OutcomeModel::new(beta0, F::zero(), beta_z, beta_arm, q_schedule, block_size)
}

/// Named covariate-prevalence schedules used in the patient-drift studies.
///
/// `linear-<step>` is `0.5 + (j-1)*step`, `const-<q>` is constant,
/// `up-down` rises from 0.2 by 0.05 for `j < 6` then falls from 0.35, and
/// `down-up` falls from 0.8 then rises from 0.65.
pub fn preset_schedule(name: &str, stages: usize) -> Option<Vec<f64>> {
    let j = |i: usize| i as f64;
    let schedule = if let Some(step) = name.strip_prefix("linear-") {
        let step: f64 = step.parse().ok()?;
        (0..stages).map(|i| 0.5 + j(i) * step).collect()
    } else if let Some(q) = name.strip_prefix("const-") {
        let q: f64 = q.parse().ok()?;
        vec![q; stages]
    } else if name == "up-down" {
        (1..=stages)
            .map(|s| {
                if s < 6 {
                    0.2 + j(s - 1) * 0.05
                } else {
                    0.35 - j(s - 6) * 0.05
                }
            })
            .collect()
    } else if name == "down-up" {
        (1..=stages)
            .map(|s| {
                if s < 6 {
                    0.8 - j(s - 1) * 0.05
                } else {
                    0.65 + j(s - 6) * 0.05
                }
            })
            .collect()
    } else {
        return None;
    };
    Some(schedule)
}

//! Block-by-block trial simulation and replicated studies.
//!
//! Replicate `r` of a study draws from stream `r` of a key derived from the
//! master seed, and per-replicate summaries are reduced in replicate order,
//! so results do not depend on the number of worker threads.

mod glm_study;

use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationRuleSpec, ArmState};
use crate::error::{Error, Result};
use crate::inference::{
    bonferroni_level, empirical_cutoff, fisher_exact, randomization_test, wald_z_test, z_test,
    Alternative, TestResult,
};
use crate::outcome::{OutcomeModel, PatientRecord};
use crate::rng::{derive_key, stream};

pub use glm_study::{run_glm_study, CoefficientSummary, GlmStudy};

const LABEL_TRIALS: u64 = 1;
const LABEL_RESAMPLES: u64 = 2;
const LABEL_CALIBRATION: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    /// Pooled two-proportion z-test.
    #[serde(rename = "z")]
    ZTest,
    /// Two-proportion z-test with unpooled (Wald) variance.
    #[serde(rename = "wald")]
    WaldZ,
    #[serde(rename = "fisher")]
    FisherExact,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::ZTest => "z",
            TestKind::WaldZ => "wald",
            TestKind::FisherExact => "fisher",
        })
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(TestKind::ZTest),
            "wald" => Ok(TestKind::WaldZ),
            "fisher" => Ok(TestKind::FisherExact),
            other => Err(Error::InvalidData(format!(
                "unknown test `{other}` (expected z, wald or fisher)"
            ))),
        }
    }
}

/// Arm-versus-control test applied at the end of each trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestSpec {
    pub kind: TestKind,
    /// Family-wise nominal level.
    pub alpha: f64,
    pub alternative: Alternative,
    /// Calibrated per-comparison cutoff replacing `alpha / K`.
    pub cutoff: Option<f64>,
}

impl TestSpec {
    pub fn new(kind: TestKind, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            alternative: Alternative::TwoSided,
            cutoff: None,
        }
    }

    pub fn with_alternative(mut self, alternative: Alternative) -> Self {
        self.alternative = alternative;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    /// Operative per-comparison threshold for `k` experimental arms.
    pub fn level(&self, k: usize) -> Result<f64> {
        match self.cutoff {
            Some(c) => Ok(c),
            None => bonferroni_level(self.alpha, k),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidData(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if let Some(c) = self.cutoff {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidData(format!("cutoff {c} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Tests every experimental arm against control.
    pub fn apply(&self, states: &[ArmState]) -> Result<Vec<TestResult>> {
        let k = states.len() - 1;
        let level = self.level(k)?;
        let c = states[0];
        let (s0, n0) = (u64::from(c.successes), u64::from(c.observations()));
        states[1..]
            .iter()
            .map(|s| {
                let (s1, n1) = (u64::from(s.successes), u64::from(s.observations()));
                match self.kind {
                    // an empty arm carries no evidence
                    TestKind::ZTest | TestKind::WaldZ if n0 == 0 || n1 == 0 => {
                        Ok(TestResult::decide(0.0, 1.0, level))
                    }
                    TestKind::ZTest => z_test(s0, n0, s1, n1, level, self.alternative),
                    TestKind::WaldZ => wald_z_test(s0, n0, s1, n1, level, self.alternative),
                    TestKind::FisherExact => fisher_exact(s0, n0, s1, n1, level, self.alternative),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrialConfig {
    pub model: OutcomeModel,
    pub rule: AllocationRuleSpec,
    pub test: TestSpec,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(
        model: OutcomeModel,
        rule: AllocationRuleSpec,
        test: TestSpec,
        seed: u64,
    ) -> Result<Self> {
        rule.validate(model.arms(), model.total_size())?;
        test.validate()?;
        Ok(Self {
            model,
            rule,
            test,
            seed,
        })
    }

    pub fn total_size(&self) -> usize {
        self.model.total_size()
    }

    /// Generator for replicate `replicate`; the same one `run_study` uses.
    pub fn trial_stream(&self, replicate: u64) -> crate::rng::TrialRng {
        stream(derive_key(self.seed, LABEL_TRIALS), replicate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    /// In allocation order, block by block.
    pub records: Vec<PatientRecord>,
    pub arm_states: Vec<ArmState>,
    /// Probability vector used for each block.
    pub block_probabilities: Vec<Vec<f64>>,
    /// One test per experimental arm.
    pub tests: Vec<TestResult>,
    pub block_size: usize,
    pub arms: usize,
}

impl TrialResult {
    /// Rebuilds per-arm counts from records; `tests` is left empty.
    pub fn from_records(
        records: Vec<PatientRecord>,
        block_probabilities: Vec<Vec<f64>>,
        block_size: usize,
        arms: usize,
    ) -> Result<Self> {
        if arms < 2 || block_size == 0 {
            return Err(Error::InvalidData(
                "need two arms and a positive block size".into(),
            ));
        }
        if records.len() != block_size * block_probabilities.len() {
            return Err(Error::InvalidData(format!(
                "{} records but {} blocks of {block_size}",
                records.len(),
                block_probabilities.len()
            )));
        }
        let mut arm_states = vec![ArmState::default(); arms];
        for (i, r) in records.iter().enumerate() {
            if r.arm >= arms || r.outcome > 1 || r.stage != i / block_size + 1 {
                return Err(Error::InvalidData(format!(
                    "record {} ({r:?}) is inconsistent with {arms} arms and blocks of {block_size}",
                    i + 1
                )));
            }
            arm_states[r.arm].record(r.outcome == 1);
        }
        if let Some(p) = block_probabilities.iter().find(|p| p.len() != arms) {
            return Err(Error::InvalidData(format!(
                "block probabilities {p:?} do not cover {arms} arms"
            )));
        }
        Ok(Self {
            records,
            arm_states,
            block_probabilities,
            tests: Vec::new(),
            block_size,
            arms,
        })
    }

    pub fn successes(&self) -> u32 {
        self.arm_states.iter().map(|s| s.successes).sum()
    }

    pub fn patients_on(&self, arm: usize) -> u32 {
        self.arm_states[arm].observations()
    }
}

/// Simulates one trial.
pub fn run_trial<R: Rng + ?Sized>(cfg: &TrialConfig, rng: &mut R) -> Result<TrialResult> {
    let model = &cfg.model;
    let arms = model.arms();
    let b = model.block_size();
    let total = model.total_size();
    let mut states = vec![ArmState::default(); arms];
    let mut records = Vec::with_capacity(total);
    let mut block_probabilities = Vec::with_capacity(model.stages());
    let mut block = Vec::with_capacity(b);
    for stage in 1..=model.stages() {
        let probs = cfg
            .rule
            .block_probabilities(&states, stage, b, total, rng)?;
        let q = model.q_schedule()[stage - 1];
        block.clear();
        for _ in 0..b {
            let arm = probs.sample(rng);
            let (z, p) = if model.z_observed {
                let z = rng.random::<f64>() < q;
                (z, model.success_probability(arm, stage, z)?)
            } else {
                (false, model.marginal_success_probability(arm, stage)?)
            };
            let y = rng.random::<f64>() < p;
            block.push(PatientRecord {
                stage,
                z: u8::from(z),
                arm,
                outcome: u8::from(y),
            });
        }
        for r in &block {
            states[r.arm].record(r.outcome == 1);
        }
        records.extend_from_slice(&block);
        block_probabilities.push(probs.into_vec());
    }
    let tests = cfg.test.apply(&states)?;
    Ok(TrialResult {
        records,
        arm_states: states,
        block_probabilities,
        tests,
        block_size: b,
        arms,
    })
}

/// Change in ENS against a complete-randomisation study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaEns {
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatingCharacteristics {
    pub rule: String,
    /// Model fingerprint used to refuse comparisons across scenarios.
    pub scenario: String,
    pub replicates: usize,
    pub total_size: usize,
    /// Type I error under the global null, otherwise power: the fraction of
    /// trials rejecting at least one arm that truly differs from control.
    pub rejection_rate: f64,
    pub rejection_se: f64,
    pub p_star: f64,
    pub p_star_sd: f64,
    pub p_star_se: f64,
    pub ens: f64,
    pub ens_sd: f64,
    pub ens_se: f64,
    pub delta_ens: Option<DeltaEns>,
}

#[derive(Clone, Copy, Debug)]
struct Summary {
    reject: bool,
    best_share: f64,
    successes: f64,
}

fn summarize(model: &OutcomeModel, trial: &TrialResult, decisions: &[bool]) -> Summary {
    let effective = model.effective_arms();
    let reject = if effective.is_empty() {
        decisions.iter().any(|&r| r)
    } else {
        effective.iter().any(|&k| decisions[k - 1])
    };
    let best = model.best_arm();
    Summary {
        reject,
        best_share: f64::from(trial.patients_on(best)) / model.total_size() as f64,
        successes: f64::from(trial.successes()),
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn aggregate(cfg: &TrialConfig, summaries: &[Summary]) -> OperatingCharacteristics {
    let n = summaries.len() as f64;
    let rate = summaries.iter().filter(|s| s.reject).count() as f64 / n;
    let (p_star, p_star_sd) = mean_sd(summaries.iter().map(|s| s.best_share));
    let (ens, ens_sd) = mean_sd(summaries.iter().map(|s| s.successes));
    OperatingCharacteristics {
        rule: cfg.rule.kind.name().to_string(),
        scenario: format!("{:?}", cfg.model),
        replicates: summaries.len(),
        total_size: cfg.total_size(),
        rejection_rate: rate,
        rejection_se: (rate * (1.0 - rate) / n).sqrt(),
        p_star,
        p_star_sd,
        p_star_se: p_star_sd / n.sqrt(),
        ens,
        ens_sd,
        ens_se: ens_sd / n.sqrt(),
        delta_ens: None,
    }
}

fn check_replicates(nr: usize) -> Result<()> {
    if nr == 0 {
        return Err(Error::InvalidData(
            "a study needs Nr >= 1 replicates".into(),
        ));
    }
    Ok(())
}

/// Simulates `nr` trials and reports their operating characteristics.
pub fn run_study(cfg: &TrialConfig, nr: usize) -> Result<OperatingCharacteristics> {
    check_replicates(nr)?;
    debug!("study: {} x {nr}", cfg.rule.kind);
    let summaries: Vec<Summary> = (0..nr as u64)
        .into_par_iter()
        .map(|r| {
            let trial = run_trial(cfg, &mut cfg.trial_stream(r))?;
            let decisions: Vec<bool> = trial.tests.iter().map(|t| t.reject).collect();
            Ok(summarize(&cfg.model, &trial, &decisions))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(cfg, &summaries))
}

/// As [`run_study`], with each trial's decision taken from a randomization
/// test with `resamples` re-allocations at the family-wise level `alpha`.
pub fn run_randomization_study(
    cfg: &TrialConfig,
    nr: usize,
    resamples: usize,
) -> Result<OperatingCharacteristics> {
    check_replicates(nr)?;
    let resample_key = derive_key(cfg.seed, LABEL_RESAMPLES);
    let summaries: Vec<Summary> = (0..nr as u64)
        .into_par_iter()
        .map(|r| {
            let trial = run_trial(cfg, &mut cfg.trial_stream(r))?;
            let tests = randomization_test(
                &trial,
                &cfg.rule,
                resamples,
                cfg.test.alpha,
                cfg.test.alternative,
                derive_key(resample_key, r),
            )?;
            let decisions: Vec<bool> = tests.iter().map(|t| t.reject).collect();
            Ok(summarize(&cfg.model, &trial, &decisions))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(cfg, &summaries))
}

/// ENS difference `study - cr`, with standard errors combined as for
/// independent studies.
pub fn compare_to_cr(
    study: &OperatingCharacteristics,
    cr: &OperatingCharacteristics,
) -> Result<DeltaEns> {
    if study.scenario != cr.scenario || study.total_size != cr.total_size {
        return Err(Error::StudyMismatch(format!(
            "{} and {} studies were run under different models",
            study.rule, cr.rule
        )));
    }
    Ok(DeltaEns {
        value: study.ens - cr.ens,
        se: (study.ens_se.powi(2) + cr.ens_se.powi(2)).sqrt(),
    })
}

/// Smallest p-value over the experimental arms of each of `nr` null trials.
pub fn null_p_values(cfg: &TrialConfig, nr: usize) -> Result<Vec<f64>> {
    check_replicates(nr)?;
    (0..nr as u64)
        .into_par_iter()
        .map(|r| {
            let trial = run_trial(cfg, &mut cfg.trial_stream(r))?;
            Ok(trial.tests.iter().map(|t| t.p_value).fold(1.0, f64::min))
        })
        .collect()
}

/// Per-comparison cutoff giving family-wise rejection rate `alpha_target`
/// under `null_model`: the empirical quantile of the smallest per-arm
/// p-value over `nr` simulated trials. The calibration run uses its own
/// streams derived from `seed`.
pub fn calibrate_cutoff(
    rule: &AllocationRuleSpec,
    null_model: &OutcomeModel,
    nr: usize,
    alpha_target: f64,
    test: TestSpec,
    seed: u64,
) -> Result<f64> {
    if !null_model.effective_arms().is_empty() || null_model.beta_arm().iter().any(|b| *b != 0.0) {
        return Err(Error::InvalidModel(
            "calibration needs a null model with every arm effect equal to zero".into(),
        ));
    }
    let cfg = TrialConfig::new(
        null_model.clone(),
        rule.clone(),
        TestSpec {
            cutoff: None,
            ..test
        },
        derive_key(seed, LABEL_CALIBRATION),
    )?;
    let p = null_p_values(&cfg, nr)?;
    empirical_cutoff(&p, alpha_target)
}

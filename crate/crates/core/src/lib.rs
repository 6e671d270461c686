//! Simulation of response-adaptive randomised trials with binary outcomes.
//!
//! The crate covers the outcome model with stage trends and covariate
//! drift, block allocation rules (complete randomisation, Thompson
//! sampling, RSIHR and forward-looking Gittins rules), Gittins index
//! tables, end-of-trial tests including a randomization test, logistic
//! model fits with Firth's correction, and the study engine that estimates
//! operating characteristics over replicated trials.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod cli;
pub mod engine;
pub mod error;
pub mod gittins;
pub mod inference;
pub mod num;
pub mod outcome;
pub mod rng;

pub use allocation::{AllocationProbabilities, AllocationRuleSpec, ArmState, RuleKind};
pub use engine::{OperatingCharacteristics, TestKind, TestSpec, TrialConfig, TrialResult};
pub use error::{Error, Result};
pub use gittins::GittinsTable;
pub use inference::{Alternative, GlmFit, GlmSpec, TestResult};
pub use num::Real;
pub use outcome::{OutcomeModel, PatientRecord};

/// Double precision instantiations, the default for simulation.
pub type Model = OutcomeModel<f64>;
pub type Probabilities = AllocationProbabilities<f64>;
pub type Fit = GlmFit<f64>;

/// Single precision variants of the generic kernels.
pub type ModelF32 = OutcomeModel<f32>;
pub type ProbabilitiesF32 = AllocationProbabilities<f32>;
pub type FitF32 = GlmFit<f32>;

//! Logistic regression on trial records: maximum likelihood and Firth's
//! penalized likelihood, both with Wald inference.
//!
//! The linear predictor mirrors the outcome model: an intercept, the stage
//! index `j - 1`, the covariate, and one indicator per experimental arm.

use super::linalg::{cholesky, inverse, log_det, solve};
use super::{normal_sf, Real};
use crate::error::{Error, Result};
use crate::outcome::{expit, PatientRecord};

const MAX_ITERATIONS: usize = 50;
/// Relative deviance change at which the likelihood iterations stop.
const DEVIANCE_TOL: f64 = 1e-8;
const MAX_STEP: f64 = 5.0;
const MAX_HALVINGS: usize = 25;
/// Coefficients beyond this size on the logit scale count as diverging
/// when further iterations keep moving them.
const DIVERGENCE_NORM: f64 = 10.0;

/// Which terms enter the model besides the intercept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlmSpec {
    pub time: bool,
    pub covariate: bool,
    /// Arms including control; `arms - 1` indicator columns.
    pub arms: usize,
}

impl GlmSpec {
    pub fn new(time: bool, covariate: bool, arms: usize) -> Self {
        Self {
            time,
            covariate,
            arms,
        }
    }

    pub fn columns(&self) -> usize {
        1 + usize::from(self.time) + usize::from(self.covariate) + self.arms.saturating_sub(1)
    }

    /// Column names in coefficient order: `intercept`, `time`, `z`,
    /// `arm1`, `arm2`, ...
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        if self.time {
            names.push("time".into());
        }
        if self.covariate {
            names.push("z".into());
        }
        names.extend((1..self.arms).map(|k| format!("arm{k}")));
        names
    }

    /// Position of the indicator for experimental arm `k >= 1`.
    pub fn arm_column(&self, k: usize) -> usize {
        usize::from(self.time) + usize::from(self.covariate) + k
    }

    fn row<F: Real>(&self, r: &PatientRecord, out: &mut Vec<F>) {
        out.clear();
        out.push(F::one());
        if self.time {
            out.push(F::of_usize(r.stage - 1));
        }
        if self.covariate {
            out.push(F::of(f64::from(r.z)));
        }
        for k in 1..self.arms {
            out.push(if r.arm == k { F::one() } else { F::zero() });
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmFit<F = f64> {
    pub names: Vec<String>,
    pub coefficients: Vec<F>,
    pub std_errors: Vec<F>,
    pub p_values: Vec<F>,
    pub converged: bool,
    pub separation_detected: bool,
    pub penalized: bool,
    pub iterations: usize,
    /// Largest absolute component of the (penalized) score at the estimate.
    pub max_score: F,
}

impl<F: Real> GlmFit<F> {
    /// Coefficient of experimental arm `k >= 1`.
    pub fn arm_effect(&self, spec: &GlmSpec, k: usize) -> (F, F, F) {
        let c = spec.arm_column(k);
        (self.coefficients[c], self.std_errors[c], self.p_values[c])
    }
}

struct Design<F> {
    x: Vec<F>,
    y: Vec<F>,
    n: usize,
    p: usize,
}

impl<F: Real> Design<F> {
    fn build(records: &[PatientRecord], spec: &GlmSpec) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidData("no records to fit".into()));
        }
        if spec.arms == 0 {
            return Err(Error::InvalidData("model needs at least one arm".into()));
        }
        let p = spec.columns();
        let mut x = Vec::with_capacity(records.len() * p);
        let mut y = Vec::with_capacity(records.len());
        let mut row = Vec::with_capacity(p);
        for r in records {
            if r.arm >= spec.arms || r.stage == 0 || r.outcome > 1 || r.z > 1 {
                return Err(Error::InvalidData(format!(
                    "record {r:?} does not fit the model"
                )));
            }
            spec.row(r, &mut row);
            x.extend_from_slice(&row);
            y.push(F::of(f64::from(r.outcome)));
        }
        Ok(Self {
            x,
            y,
            n: records.len(),
            p,
        })
    }

    fn rows(&self) -> impl Iterator<Item = (&[F], F)> + '_ {
        self.x.chunks_exact(self.p).zip(self.y.iter().copied())
    }

    fn eta(&self, beta: &[F]) -> Vec<F> {
        self.x
            .chunks_exact(self.p)
            .map(|row| {
                row.iter()
                    .zip(beta)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    fn log_likelihood(&self, eta: &[F]) -> F {
        self.y.iter().zip(eta).fold(F::zero(), |acc, (&y, &e)| {
            let signed = if y > F::zero() { -e } else { e };
            acc - softplus(signed)
        })
    }

    /// `X' W X` with `w = mu (1 - mu)`, row-major.
    fn information(&self, mu: &[F]) -> Vec<F> {
        let p = self.p;
        let mut info = vec![F::zero(); p * p];
        for ((row, _), &m) in self.rows().zip(mu) {
            let w = m * (F::one() - m);
            for i in 0..p {
                let wi = w * row[i];
                for j in 0..=i {
                    info[i * p + j] = info[i * p + j] + wi * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                info[j * p + i] = info[i * p + j];
            }
        }
        info
    }

    fn score(&self, residual: &[F]) -> Vec<F> {
        let mut g = vec![F::zero(); self.p];
        for ((row, _), &r) in self.rows().zip(residual) {
            for (gi, &xi) in g.iter_mut().zip(row) {
                *gi = *gi + xi * r;
            }
        }
        g
    }

    fn score_tolerance(&self) -> F {
        F::of(1e-6).max(F::epsilon() * F::of(100.0) * F::of_usize(self.n))
    }
}

fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn max_abs<F: Real>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, x| m.max(x.abs()))
}

fn mean_vector<F: Real>(eta: &[F]) -> Vec<F> {
    let eps = F::epsilon();
    eta.iter()
        .map(|&e| expit(e).max(eps).min(F::one() - eps))
        .collect()
}

fn wald<F: Real>(beta: &[F], info_chol: Option<&[F]>, p: usize) -> (Vec<F>, Vec<F>) {
    match info_chol {
        Some(l) => {
            let cov = inverse(l, p);
            let se: Vec<F> = (0..p)
                .map(|i| cov[i * p + i].max(F::zero()).sqrt())
                .collect();
            let pv = beta
                .iter()
                .zip(&se)
                .map(|(&b, &s)| {
                    let z = (b / s).to_f64_lossy();
                    F::of((2.0 * normal_sf(z.abs())).min(1.0))
                })
                .collect();
            (se, pv)
        }
        None => (vec![F::nan(); p], vec![F::nan(); p]),
    }
}

fn rank_deficient(spec: &GlmSpec) -> Error {
    Error::InvalidData(format!(
        "information matrix is singular for columns {:?}; an arm or covariate level is empty",
        spec.names()
    ))
}

/// Whether some direction in coefficient space separates the outcomes:
/// a binary column (or its complement) whose patients all share one outcome,
/// the full sample sharing one outcome, or a stage threshold splitting
/// failures from successes.
fn perfect_prediction(records: &[PatientRecord], spec: &GlmSpec) -> bool {
    let pure = |rows: &mut dyn Iterator<Item = &PatientRecord>| {
        let mut seen = [false; 2];
        let mut any = false;
        for r in rows {
            seen[usize::from(r.outcome)] = true;
            any = true;
        }
        any && !(seen[0] && seen[1])
    };
    if pure(&mut records.iter()) {
        return true;
    }
    for k in 1..spec.arms {
        if pure(&mut records.iter().filter(|r| r.arm == k))
            || pure(&mut records.iter().filter(|r| r.arm != k))
        {
            return true;
        }
    }
    if spec.covariate {
        for level in 0..=1 {
            if pure(&mut records.iter().filter(|r| r.z == level)) {
                return true;
            }
        }
    }
    if spec.time {
        let last = records.iter().map(|r| r.stage).max().unwrap_or(1);
        for c in 1..=last {
            let split = |lo: u8| {
                records.iter().all(|r| {
                    r.stage == c
                        || (r.stage < c && r.outcome == lo)
                        || (r.stage > c && r.outcome != lo)
                })
            };
            let off = records.iter().any(|r| r.stage != c);
            if off && (split(0) || split(1)) {
                return true;
            }
        }
    }
    false
}

/// True when the unpenalized likelihood has no finite maximizer for these
/// records: either a perfect-prediction pattern is found, or the maximum
/// likelihood iterations drift off to large coefficients.
pub fn detect_separation<F: Real>(records: &[PatientRecord], spec: &GlmSpec) -> Result<bool> {
    if perfect_prediction(records, spec) {
        return Ok(true);
    }
    Ok(fit_logistic_mle::<F>(records, spec)?.separation_detected)
}

struct MleState<F> {
    beta: Vec<F>,
    mu: Vec<F>,
    deviance: F,
}

fn irls_step<F: Real>(d: &Design<F>, mu: &[F], eta: &[F], spec: &GlmSpec) -> Result<Vec<F>> {
    let info = d.information(mu);
    let l = cholesky(&info, d.p).ok_or_else(|| rank_deficient(spec))?;
    let mut rhs = vec![F::zero(); d.p];
    for (((row, y), &m), &e) in d.rows().zip(mu).zip(eta) {
        let w = m * (F::one() - m);
        let z = e + (y - m) / w;
        for (ri, &xi) in rhs.iter_mut().zip(row) {
            *ri = *ri + xi * w * z;
        }
    }
    Ok(solve(&l, d.p, &rhs))
}

fn deviance<F: Real>(d: &Design<F>, eta: &[F]) -> F {
    -(F::one() + F::one()) * d.log_likelihood(eta)
}

/// Maximum likelihood by iteratively reweighted least squares, started and
/// stopped as in common GLM software (start at `mu = (y + 1/2) / 2`, stop
/// on a relative deviance change below 1e-8). Under separation the
/// estimates are those reached at the stopping point, flagged.
pub fn fit_logistic_mle<F: Real>(records: &[PatientRecord], spec: &GlmSpec) -> Result<GlmFit<F>> {
    let d = Design::<F>::build(records, spec)?;
    let half = F::of(0.5);
    let mut mu: Vec<F> = d.y.iter().map(|&y| (y + half) * half).collect();
    let mut eta: Vec<F> = mu.iter().map(|&m| (m / (F::one() - m)).ln()).collect();
    let mut state = MleState {
        beta: vec![F::zero(); d.p],
        mu: mu.clone(),
        deviance: F::infinity(),
    };
    let mut iterations = 0;
    let mut dev_converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let beta = irls_step(&d, &mu, &eta, spec)?;
        eta = d.eta(&beta);
        mu = mean_vector(&eta);
        let dev = deviance(&d, &eta);
        let change = (dev - state.deviance).abs() / (dev.abs() + F::of(0.1));
        state = MleState {
            beta,
            mu: mu.clone(),
            deviance: dev,
        };
        if change < F::of(DEVIANCE_TOL) {
            dev_converged = true;
            break;
        }
    }

    let scan = perfect_prediction(records, spec);
    // Away from separation, polish until the score vanishes to working
    // precision; the deviance rule alone can stop a little early.
    if !scan {
        for _ in 0..10 {
            let residual: Vec<F> = d.y.iter().zip(&state.mu).map(|(&y, &m)| y - m).collect();
            if max_abs(&d.score(&residual)) < d.score_tolerance() * F::of(1e-3) {
                break;
            }
            let eta_now = d.eta(&state.beta);
            let beta = irls_step(&d, &state.mu, &eta_now, spec)?;
            let eta_new = d.eta(&beta);
            state.mu = mean_vector(&eta_new);
            state.deviance = deviance(&d, &eta_new);
            state.beta = beta;
        }
    }

    let residual: Vec<F> = d.y.iter().zip(&state.mu).map(|(&y, &m)| y - m).collect();
    let max_score = max_abs(&d.score(&residual));
    let norm = max_abs(&state.beta);
    let diverging = norm > F::of(DIVERGENCE_NORM) && {
        let eta_now = d.eta(&state.beta);
        irls_step(&d, &state.mu, &eta_now, spec)
            .map(|next| {
                let moved = next
                    .iter()
                    .zip(&state.beta)
                    .fold(F::zero(), |m, (a, b)| m.max((*a - *b).abs()));
                moved > F::of(0.1)
            })
            .unwrap_or(true)
    };
    let stuck =
        norm > F::of(DIVERGENCE_NORM) && max_score > F::of(1e-4) && iterations == MAX_ITERATIONS;
    let separation_detected = scan || diverging || stuck;
    let converged = dev_converged && !separation_detected && max_score < d.score_tolerance();

    let info = d.information(&state.mu);
    let chol = cholesky(&info, d.p);
    let (std_errors, p_values) = wald(&state.beta, chol.as_deref(), d.p);
    Ok(GlmFit {
        names: spec.names(),
        coefficients: state.beta,
        std_errors,
        p_values,
        converged,
        separation_detected,
        penalized: false,
        iterations,
        max_score,
    })
}

struct FirthEval<F> {
    objective: F,
    score: Vec<F>,
    chol: Vec<F>,
}

fn firth_eval<F: Real>(d: &Design<F>, beta: &[F], spec: &GlmSpec) -> Result<FirthEval<F>> {
    let eta = d.eta(beta);
    let mu = mean_vector(&eta);
    let info = d.information(&mu);
    let l = cholesky(&info, d.p).ok_or_else(|| rank_deficient(spec))?;
    let cov = inverse(&l, d.p);
    let half = F::of(0.5);
    let mut adjusted = Vec::with_capacity(d.n);
    for ((row, y), &m) in d.rows().zip(&mu) {
        let mut quad = F::zero();
        for i in 0..d.p {
            let mut s = F::zero();
            for j in 0..d.p {
                s = s + cov[i * d.p + j] * row[j];
            }
            quad = quad + row[i] * s;
        }
        let h = m * (F::one() - m) * quad;
        adjusted.push(y - m + h * (half - m));
    }
    Ok(FirthEval {
        objective: d.log_likelihood(&eta) + half * log_det(&l, d.p),
        score: d.score(&adjusted),
        chol: l,
    })
}

/// Firth's bias-reducing fit: maximizes the log-likelihood plus half the
/// log-determinant of the Fisher information, by Newton steps on the
/// modified score with step capping and halving.
pub fn fit_logistic_firth<F: Real>(records: &[PatientRecord], spec: &GlmSpec) -> Result<GlmFit<F>> {
    let d = Design::<F>::build(records, spec)?;
    let mut beta = vec![F::zero(); d.p];
    let mut cur = firth_eval(&d, &beta, spec)?;
    let target = d.score_tolerance() * F::of(1e-4);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && max_abs(&cur.score) >= target {
        iterations += 1;
        let mut step = solve(&cur.chol, d.p, &cur.score);
        let size = max_abs(&step);
        if size > F::of(MAX_STEP) {
            let shrink = F::of(MAX_STEP) / size;
            step.iter_mut().for_each(|s| *s = *s * shrink);
        }
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<F> = beta.iter().zip(&step).map(|(&b, &s)| b + s).collect();
            if let Ok(next) = firth_eval(&d, &trial, spec) {
                // strict progress; a bare Newton step can cycle around the root
                if next.objective > cur.objective || max_abs(&next.score) < max_abs(&cur.score) {
                    accepted = Some((trial, next));
                    break;
                }
            }
            step.iter_mut().for_each(|s| *s = *s * F::of(0.5));
        }
        match accepted {
            Some((b, next)) => {
                beta = b;
                cur = next;
            }
            None => break,
        }
    }
    let max_score = max_abs(&cur.score);
    let (std_errors, p_values) = wald(&beta, Some(&cur.chol), d.p);
    Ok(GlmFit {
        names: spec.names(),
        coefficients: beta,
        std_errors,
        p_values,
        converged: max_score < d.score_tolerance(),
        separation_detected: perfect_prediction(records, spec),
        penalized: true,
        iterations,
        max_score,
    })
}

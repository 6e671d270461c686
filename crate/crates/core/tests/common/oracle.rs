//! Independent brute-force computations the library is checked against.
//! Each check returns a one-line summary or a description of the first
//! mismatch.

use rar_sim::allocation::{flgi_estimate, ArmState};
use rar_sim::inference::{fisher_exact, fit_logistic_firth, randomization_p_values};
use rar_sim::rng::stream;
use rar_sim::{AllocationRuleSpec, Alternative, GittinsTable, GlmSpec, PatientRecord, TrialResult};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

/// Gittins index of Beta(a, b) by bisection on the retirement reward, each
/// probe solved by a fresh finite-horizon backward induction.
pub fn brute_force_gittins(a: u32, b: u32, discount: f64, horizon: usize) -> f64 {
    let (af, bf) = (f64::from(a), f64::from(b));
    let continues = |lambda: f64| {
        let retire = lambda / (1.0 - discount);
        // v[i]: value at the current depth with i extra successes
        let mut v: Vec<f64> = (0..=horizon)
            .map(|i| {
                let p = (af + i as f64) / (af + bf + horizon as f64);
                retire.max(p / (1.0 - discount))
            })
            .collect();
        for n in (0..horizon).rev() {
            for i in 0..=n {
                let s = af + i as f64;
                let p = s / (af + bf + n as f64);
                let go = p * (1.0 + discount * v[i + 1]) + (1.0 - p) * discount * v[i];
                v[i] = retire.max(go);
            }
        }
        v[0] > retire + 1e-12
    };
    let (mut lo, mut hi) = (af / (af + bf), 1.0);
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if continues(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Table against brute force on the 10 x 10 grid of posterior counts.
pub fn gittins_grid(discount: f64) -> Check {
    let table = GittinsTable::compute(discount, 18, 1e-6).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for a in 1..=10 {
        for b in 1..=10 {
            let oracle = brute_force_gittins(a, b, discount, table.horizon());
            let got = table.index(a, b).map_err(|e| e.to_string())?;
            ensure!(
                (got - oracle).abs() < 1e-4,
                "({a}, {b}): table {got}, oracle {oracle}"
            );
            worst = worst.max((got - oracle).abs());
        }
    }
    Ok(format!(
        "100 states at d={discount}, largest deviation {worst:.1e}"
    ))
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

fn hypergeometric(n0: u64, n1: u64, m: u64, x: u64) -> f64 {
    let ln_c = |n: u64, k: u64| ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_c(n1, x) + ln_c(n0, m - x) - ln_c(n0 + n1, m)).exp()
}

/// Every 2 x 2 table with at most 30 patients, both alternatives.
pub fn fisher_tables() -> Check {
    let mut tables = 0;
    for n in 1..=30u64 {
        for n0 in 0..=n {
            let n1 = n - n0;
            for s0 in 0..=n0 {
                for s1 in 0..=n1 {
                    let m = s0 + s1;
                    let law: Vec<(u64, f64)> = (m.saturating_sub(n0)..=m.min(n1))
                        .map(|x| (x, hypergeometric(n0, n1, m, x)))
                        .collect();
                    let obs = hypergeometric(n0, n1, m, s1);
                    let two: f64 = law
                        .iter()
                        .filter(|(_, q)| *q <= obs * (1.0 + 1e-7))
                        .map(|(_, q)| q)
                        .sum();
                    let greater: f64 = law.iter().filter(|(x, _)| *x >= s1).map(|(_, q)| q).sum();
                    for (alt, want) in [
                        (Alternative::TwoSided, two),
                        (Alternative::Greater, greater),
                    ] {
                        let got = fisher_exact(s0, n0, s1, n1, 0.05, alt)
                            .map_err(|e| e.to_string())?
                            .p_value;
                        ensure!(
                            (got - want.min(1.0)).abs() < 1e-9,
                            "{s0}/{n0} vs {s1}/{n1} {alt}: {got} != {want}"
                        );
                    }
                    tables += 1;
                }
            }
        }
    }
    Ok(format!("{tables} tables"))
}

pub fn firth_intercept() -> Check {
    let spec = GlmSpec::new(false, false, 1);
    let mut worst: f64 = 0.0;
    for n in [1usize, 2, 5, 13, 40] {
        for s in 0..=n {
            let records: Vec<PatientRecord> = (0..n)
                .map(|i| PatientRecord {
                    stage: 1,
                    z: 0,
                    arm: 0,
                    outcome: u8::from(i < s),
                })
                .collect();
            let fit = fit_logistic_firth::<f64>(&records, &spec).map_err(|e| e.to_string())?;
            let p = (s as f64 + 0.5) / (n as f64 + 1.0);
            let want = (p / (1.0 - p)).ln();
            let err = (fit.coefficients[0] - want).abs();
            ensure!(err < 1e-6, "s={s} n={n}: {} vs {want}", fit.coefficients[0]);
            worst = worst.max(err);
        }
    }
    Ok(format!("64 samples, largest deviation {worst:.1e}"))
}

/// Exact expected block shares of the greedy index policy, enumerating
/// every outcome path and splitting ties evenly.
fn exact_block_shares(state: &mut [(u32, u32)], left: usize, table: &GittinsTable) -> Vec<f64> {
    let arms = state.len();
    if left == 0 {
        return vec![0.0; arms];
    }
    let index: Vec<f64> = state
        .iter()
        .map(|&(a, b)| table.index(a, b).unwrap())
        .collect();
    let best = index.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..arms).filter(|&k| index[k] == best).collect();
    let w = 1.0 / tied.len() as f64;
    let mut out = vec![0.0; arms];
    for &k in &tied {
        out[k] += w;
        let (a, b) = state[k];
        let p = f64::from(a) / f64::from(a + b);
        for (next, prob) in [((a + 1, b), p), ((a, b + 1), 1.0 - p)] {
            state[k] = next;
            let rest = exact_block_shares(state, left - 1, table);
            for (o, r) in out.iter_mut().zip(rest) {
                *o += w * prob * r;
            }
        }
        state[k] = (a, b);
    }
    out
}

pub fn flgi_paths(table: &GittinsTable) -> Check {
    let cases: [&[(u32, u32)]; 5] = [
        &[(1, 1), (1, 1)],
        &[(2, 2), (3, 2)],
        &[(3, 2), (2, 3)],
        &[(2, 2), (1, 1), (4, 5)],
        &[(5, 1), (1, 5), (3, 3)],
    ];
    let mut checks = 0;
    for (c, start) in cases.iter().enumerate() {
        for block in 1..=3 {
            let exact: Vec<f64> = exact_block_shares(&mut start.to_vec(), block, table)
                .into_iter()
                .map(|v| v / block as f64)
                .collect();
            let states: Vec<ArmState> = start
                .iter()
                .map(|&(a, b)| ArmState::new(a - 1, b - 1))
                .collect();
            let est = flgi_estimate(
                &states,
                block,
                table,
                20_000,
                &mut stream(7, (c * 10 + block) as u64),
            )
            .map_err(|e| e.to_string())?;
            for (k, want) in exact.iter().enumerate() {
                let got = est.probabilities.as_slice()[k];
                let tol = 3.0 * est.std_errors[k] + 1e-12;
                ensure!(
                    (got - want).abs() <= tol,
                    "case {c} b={block} arm {k}: {got} vs {want} (tol {tol:.1e})"
                );
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} block shares within 3 s.e."))
}

fn pooled_z(alloc: &[usize], outcomes: &[u8]) -> f64 {
    let (mut n, mut s) = ([0.0f64; 2], [0.0f64; 2]);
    for (&a, &y) in alloc.iter().zip(outcomes) {
        n[a] += 1.0;
        s[a] += f64::from(y);
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return 0.0;
    }
    let p = (s[0] + s[1]) / (n[0] + n[1]);
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    let se = (p * (1.0 - p) * (1.0 / n[0] + 1.0 / n[1])).sqrt();
    (s[0] / n[0] - s[1] / n[1]) / se
}

/// Exact law of the statistic for one-patient blocks: every allocation
/// sequence, weighted by the rule's probabilities along it.
fn enumerate_allocations(
    rule: &AllocationRuleSpec,
    outcomes: &[u8],
    prefix: &mut Vec<usize>,
    weight: f64,
    out: &mut Vec<(f64, f64)>,
) {
    if prefix.len() == outcomes.len() {
        out.push((pooled_z(prefix, outcomes), weight));
        return;
    }
    let mut states = vec![ArmState::default(); 2];
    for (&a, &y) in prefix.iter().zip(outcomes) {
        states[a].record(y == 1);
    }
    let probs = rule
        .block_probabilities(
            &states,
            prefix.len() + 1,
            1,
            outcomes.len(),
            &mut stream(0, 0),
        )
        .unwrap();
    for arm in 0..2 {
        let p = probs.as_slice()[arm];
        if p > 0.0 {
            prefix.push(arm);
            enumerate_allocations(rule, outcomes, prefix, weight * p, out);
            prefix.pop();
        }
    }
}

/// Randomization p-values of four-patient trials against the exact law.
pub fn randomization_small_trials() -> Check {
    let resamples = 4000;
    let rules = [AllocationRuleSpec::cr(), AllocationRuleSpec::rsihr()];
    let trials: [([usize; 4], [u8; 4]); 3] = [
        ([0, 1, 1, 0], [0, 1, 1, 0]),
        ([1, 0, 1, 1], [1, 0, 1, 0]),
        ([0, 0, 1, 1], [1, 1, 0, 1]),
    ];
    let mut checks = 0;
    for rule in &rules {
        for (t, (alloc, outcomes)) in trials.iter().enumerate() {
            let records: Vec<PatientRecord> = alloc
                .iter()
                .zip(outcomes)
                .enumerate()
                .map(|(i, (&arm, &outcome))| PatientRecord {
                    stage: i + 1,
                    z: 0,
                    arm,
                    outcome,
                })
                .collect();
            let observed = TrialResult::from_records(records, vec![vec![0.5, 0.5]; 4], 1, 2)
                .map_err(|e| e.to_string())?;
            let z_obs = pooled_z(alloc, outcomes);
            let mut law = Vec::new();
            enumerate_allocations(rule, outcomes, &mut Vec::new(), 1.0, &mut law);
            let total: f64 = law.iter().map(|(_, w)| w).sum();
            ensure!(
                (total - 1.0).abs() < 1e-12,
                "enumerated law sums to {total}"
            );
            for alt in [Alternative::TwoSided, Alternative::Greater] {
                let exact: f64 = law
                    .iter()
                    .filter(|(z, _)| match alt {
                        Alternative::TwoSided => z.abs() >= z_obs.abs() - 1e-12,
                        Alternative::Greater => *z <= z_obs + 1e-12,
                    })
                    .map(|(_, w)| w)
                    .sum();
                let p = randomization_p_values(&observed, rule, resamples, alt, 99 + t as u64)
                    .map_err(|e| e.to_string())?[0];
                // undo the add-one correction to get the raw exceedance share
                let share = (p * (resamples + 1) as f64 - 1.0) / resamples as f64;
                let se = (exact * (1.0 - exact) / resamples as f64).sqrt();
                ensure!(
                    (share - exact).abs() <= 3.0 * se + 1e-12,
                    "{} trial {t} {alt}: {share} vs {exact}",
                    rule.kind
                );
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} p-values within 3 s.e. of enumeration"))
}

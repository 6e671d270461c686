//! Gittins indices for Bernoulli arms with Beta posteriors.
//!
//! States are posterior counts `(a, b)` (prior plus observed successes and
//! failures). The index of a state is the standing reward `lambda` at which
//! playing the arm once more and retiring on `lambda / (1 - d)` per step are
//! equally good.
//!
//! The calibration problem is solved by backward induction on the triangle of
//! states with `a + b <= top`, where `top` leaves every tabulated state at
//! least `horizon` steps before truncation and `d^horizon / (1 - d) < tol`.
//! A single induction pass for a fixed `lambda` yields the continuation
//! advantage `f(lambda)` of every tabulated state at once, together with its
//! right derivative. `f` is convex, piecewise linear and decreasing, so each
//! evaluation either raises a state's lower bound to the tangent root or
//! lowers its upper bound to a chord root. A coarse grid supplies the first
//! brackets; later passes are placed at the lower bounds of unfinished states
//! and shared by every state whose bracket contains them.

use std::fmt::Write as _;
use std::path::Path;

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};

const FORMAT_TAG: &str = "# gittins-table v1";
const GRID_POINTS: usize = 1024;
const MAX_ROUNDS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct GittinsTable {
    discount: f64,
    max_n: u32,
    tol: f64,
    horizon: usize,
    /// Row-major by `a`; row `a` holds `b = 1 ..= max_n + 2 - a`.
    values: Vec<f64>,
    row_offsets: Vec<usize>,
}

fn row_offsets(max_n: u32) -> Vec<usize> {
    let limit = max_n as usize + 2;
    let mut offsets = Vec::with_capacity(limit);
    offsets.push(0); // a = 0 unused
    let mut acc = 0;
    for a in 1..limit {
        offsets.push(acc);
        acc += limit - a;
    }
    offsets.push(acc);
    offsets
}

/// Smallest horizon with `d^h / (1 - d) < tol`.
pub fn horizon_for(discount: f64, tol: f64) -> usize {
    let h = ((tol * (1.0 - discount)).ln() / discount.ln()).floor() as usize + 1;
    h.max(1)
}

/// Backward induction for the retirement problem.
struct Calibrator {
    discount: f64,
    top: usize,
    limit: usize,
    offsets: Vec<usize>,
    /// `a as f64` for every column, so the inner loop stays branch free.
    columns: Vec<f64>,
}

#[derive(Default)]
struct Buffers {
    value: Vec<f64>,
    slope: Vec<f64>,
    next_value: Vec<f64>,
    next_slope: Vec<f64>,
}

impl Calibrator {
    fn new(discount: f64, limit: usize, horizon: usize, offsets: Vec<usize>) -> Self {
        let top = limit + horizon;
        Self {
            discount,
            top,
            limit,
            offsets,
            columns: (0..top + 2).map(|a| a as f64).collect(),
        }
    }

    fn states(&self) -> usize {
        self.offsets[self.limit]
    }

    /// Writes `(f, f')` at `lambda` for every tabulated state into `out`.
    fn sweep(&self, lambda: f64, buf: &mut Buffers, out: &mut [(f64, f64)]) {
        let d = self.discount;
        let retire_slope = 1.0 / (1.0 - d);
        let retire = lambda * retire_slope;
        let width = self.top + 2;
        for v in [
            &mut buf.value,
            &mut buf.slope,
            &mut buf.next_value,
            &mut buf.next_slope,
        ] {
            v.clear();
            v.resize(width, 0.0);
        }

        let inv = 1.0 / self.top as f64;
        for a in 1..self.top {
            let p = a as f64 * inv;
            if p > lambda {
                buf.next_value[a] = p * retire_slope;
            } else {
                buf.next_value[a] = retire;
                buf.next_slope[a] = retire_slope;
            }
        }
        for n in (2..self.top).rev() {
            let inv = 1.0 / n as f64;
            let len = n - 1;
            let cols = &self.columns[1..=len];
            let (nv0, nv1) = (&buf.next_value[1..=len], &buf.next_value[2..=len + 1]);
            let (ns0, ns1) = (&buf.next_slope[1..=len], &buf.next_slope[2..=len + 1]);
            let cv = &mut buf.value[1..=len];
            let cs = &mut buf.slope[1..=len];
            if n > self.limit {
                let rows = cv.iter_mut().zip(cs.iter_mut());
                let inputs = cols
                    .iter()
                    .zip(nv0.iter().zip(nv1))
                    .zip(ns0.iter().zip(ns1));
                for ((v, s), ((&c, (&v0, &v1)), (&s0, &s1))) in rows.zip(inputs) {
                    let p = c * inv;
                    let q = 1.0 - p;
                    let cont = p + d * (p * v1 + q * v0);
                    let cont_slope = d * (p * s1 + q * s0);
                    let play = cont > retire;
                    *v = if play { cont } else { retire };
                    *s = if play { cont_slope } else { retire_slope };
                }
            } else {
                for i in 0..len {
                    let p = cols[i] * inv;
                    let q = 1.0 - p;
                    let cont = p + d * (p * nv1[i] + q * nv0[i]);
                    let cont_slope = d * (p * ns1[i] + q * ns0[i]);
                    let a = i + 1;
                    out[self.offsets[a] + (n - a - 1)] = (cont - retire, cont_slope - retire_slope);
                    let play = cont > retire;
                    cv[i] = if play { cont } else { retire };
                    cs[i] = if play { cont_slope } else { retire_slope };
                }
            }
            std::mem::swap(&mut buf.value, &mut buf.next_value);
            std::mem::swap(&mut buf.slope, &mut buf.next_slope);
        }
    }

    /// Sweeps every `lambda`, in parallel batches, and hands the results to
    /// `consume` in input order.
    fn sweep_each(&self, lambdas: &[f64], mut consume: impl FnMut(usize, &[(f64, f64)])) {
        let batch = 4 * rayon::current_num_threads();
        for (c, chunk) in lambdas.chunks(batch).enumerate() {
            let evals: Vec<Vec<(f64, f64)>> = chunk
                .par_iter()
                .map_init(Buffers::default, |buf, &lambda| {
                    let mut out = vec![(0.0, 0.0); self.states()];
                    self.sweep(lambda, buf, &mut out);
                    out
                })
                .collect();
            for (k, e) in evals.iter().enumerate() {
                consume(c * batch + k, e);
            }
        }
    }
}

/// Root bracket for one state, with the evaluations that produced it.
#[derive(Clone, Copy, Debug)]
struct Bracket {
    lo: f64,
    hi: f64,
    /// Rightmost evaluation with `f >= 0`: `(lambda, f, f')`.
    left: (f64, f64, f64),
    /// Leftmost evaluation with `f < 0`: `(lambda, f)`.
    right: (f64, f64),
}

impl Bracket {
    fn chord(&self) -> f64 {
        let (l0, f0, _) = self.left;
        let (l1, f1) = self.right;
        l0 + f0 * (l1 - l0) / (f0 - f1)
    }

    fn update(&mut self, lambda: f64, f: f64, fp: f64) {
        if f >= 0.0 {
            if lambda >= self.left.0 {
                self.left = (lambda, f, fp);
            }
            let tangent = if fp < 0.0 { lambda - f / fp } else { lambda };
            self.lo = self.lo.max(tangent.min(self.hi));
        } else if lambda < self.right.0 {
            self.right = (lambda, f);
        }
        self.hi = self.hi.min(self.chord().max(self.lo));
    }
}

impl GittinsTable {
    /// Computes indices for every state with `a + b <= max_n + 2`, i.e. up to
    /// `max_n` observations on an arm under a uniform prior.
    pub fn compute(discount: f64, max_n: u32, tol: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidRule(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        if !(tol > 0.0 && tol < 0.5) {
            return Err(Error::InvalidRule(format!(
                "tol must lie in (0, 0.5), got {tol}"
            )));
        }
        if tol < 1e-12 {
            return Err(Error::GittinsConvergence {
                a: 1,
                b: 1,
                detail: format!(
                    "tol {tol:e} is below the resolution of the value recursion \
                     (values are O(1/(1-d)) = {:.1})",
                    1.0 / (1.0 - discount)
                ),
            });
        }
        let horizon = horizon_for(discount, tol);
        let limit = max_n as usize + 2;
        let offsets = row_offsets(max_n);
        let calib = Calibrator::new(discount, limit, horizon, offsets.clone());
        let size = calib.states();
        debug!(
            "gittins: d = {discount}, max_n = {max_n}, tol = {tol:e}, horizon = {horizon}, {size} states"
        );

        let grid: Vec<f64> = (0..=GRID_POINTS)
            .map(|g| g as f64 / GRID_POINTS as f64)
            .collect();
        let mut last_nonneg: Vec<Option<(f64, f64, f64)>> = vec![None; size];
        let mut brackets: Vec<Option<Bracket>> = vec![None; size];
        calib.sweep_each(&grid, |g, evals| {
            for (idx, &(f, fp)) in evals.iter().enumerate() {
                if f >= 0.0 {
                    last_nonneg[idx] = Some((grid[g], f, fp));
                } else if brackets[idx].is_none() {
                    if let Some(left) = last_nonneg[idx] {
                        let mut br = Bracket {
                            lo: left.0,
                            hi: grid[g],
                            left,
                            right: (grid[g], f),
                        };
                        br.update(left.0, left.1, left.2);
                        brackets[idx] = Some(br);
                    }
                }
            }
        });
        let mut brackets = brackets
            .into_iter()
            .enumerate()
            .map(|(idx, br)| {
                br.ok_or_else(|| {
                    let (a, b) = Self::coords(&offsets, idx);
                    Error::GittinsConvergence {
                        a,
                        b,
                        detail: "no sign change of the continuation advantage on [0, 1]".into(),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;

        for round in 0..MAX_ROUNDS {
            let mut pending: Vec<usize> = (0..size)
                .filter(|&i| brackets[i].hi - brackets[i].lo > tol)
                .collect();
            if pending.is_empty() {
                break;
            }
            // Probing just above the lower bound either certifies the root or
            // moves the bound by at least a quarter of the tolerance.
            let probe = |i: usize| (brackets[i].lo + 0.25 * tol).min(brackets[i].hi);
            pending.sort_by(|&i, &j| probe(i).total_cmp(&probe(j)));
            let mut lambdas: Vec<f64> = Vec::new();
            for &i in &pending {
                let covered = lambdas
                    .last()
                    .is_some_and(|&l| l >= brackets[i].lo && l <= brackets[i].hi);
                if !covered {
                    lambdas.push(probe(i));
                }
            }
            debug!(
                "gittins: round {round}, {} open states, {} sweeps",
                pending.len(),
                lambdas.len()
            );
            // Every pending state's bracket contains at least one probe, and
            // probes are sorted, so each state only scans its own window.
            let windows: Vec<(usize, usize)> = pending
                .iter()
                .map(|&i| {
                    let from = lambdas.partition_point(|&l| l < brackets[i].lo);
                    let to = lambdas.partition_point(|&l| l <= brackets[i].hi);
                    (from, to)
                })
                .collect();
            calib.sweep_each(&lambdas, |k, evals| {
                for (&i, &(from, to)) in pending.iter().zip(&windows) {
                    if (from..to).contains(&k) {
                        let (f, fp) = evals[i];
                        brackets[i].update(lambdas[k], f, fp);
                    }
                }
            });
        }

        let mut values = Vec::with_capacity(size);
        for (idx, br) in brackets.iter().enumerate() {
            if br.hi - br.lo > tol {
                let (a, b) = Self::coords(&offsets, idx);
                return Err(Error::GittinsConvergence {
                    a,
                    b,
                    detail: format!(
                        "bracket [{}, {}] still wider than tol {tol:e} after {MAX_ROUNDS} rounds",
                        br.lo, br.hi
                    ),
                });
            }
            values.push(0.5 * (br.lo + br.hi));
        }

        Ok(Self {
            discount,
            max_n,
            tol,
            horizon,
            values,
            row_offsets: offsets,
        })
    }

    fn coords(offsets: &[usize], idx: usize) -> (u32, u32) {
        let a = offsets[1..].partition_point(|&o| o <= idx);
        (a as u32, (idx - offsets[a] + 1) as u32)
    }

    /// Builds a table from explicit values; `index(a, b)` must lie in (0, 1).
    pub fn from_fn(discount: f64, max_n: u32, index: impl Fn(u32, u32) -> f64) -> Self {
        let offsets = row_offsets(max_n);
        let limit = max_n + 2;
        let mut values = Vec::with_capacity(offsets[limit as usize]);
        for a in 1..limit {
            for b in 1..=(limit - a) {
                values.push(index(a, b));
            }
        }
        Self {
            discount,
            max_n,
            tol: 0.0,
            horizon: 0,
            values,
            row_offsets: offsets,
        }
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn max_n(&self) -> u32 {
        self.max_n
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        a >= 1 && b >= 1 && a + b <= self.max_n + 2
    }

    /// Index of posterior counts `(a, b)`.
    pub fn index(&self, a: u32, b: u32) -> Result<f64> {
        if !self.contains(a, b) {
            return Err(Error::GittinsMissing { a, b });
        }
        Ok(self.values[self.row_offsets[a as usize] + (b as usize - 1)])
    }

    /// Index after `successes` and `failures` observations under the
    /// uniform Beta(1, 1) prior.
    pub fn lookup(&self, successes: u32, failures: u32) -> Result<f64> {
        self.index(successes + 1, failures + 1)
    }

    /// Iterates `(a, b, index)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let limit = self.max_n + 2;
        (1..limit)
            .flat_map(move |a| (1..=(limit - a)).map(move |b| (a, b)))
            .zip(self.values.iter().copied())
            .map(|((a, b), v)| (a, b, v))
    }

    /// Flat text form: a tagged header with `discount`, `max_n`, `tol` and
    /// `horizon`, then one line per `a = 1 ..= max_n + 1` listing the indices
    /// for `b = 1 ..= max_n + 2 - a`. Values use the shortest decimal form
    /// that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_TAG}");
        let _ = writeln!(out, "discount {}", self.discount);
        let _ = writeln!(out, "max_n {}", self.max_n);
        let _ = writeln!(out, "tol {}", self.tol);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let limit = self.max_n as usize + 2;
        for a in 1..limit {
            let row = &self.values[self.row_offsets[a]..self.row_offsets[a + 1]];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::GittinsFormat(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(FORMAT_TAG) {
            return Err(bad(format!("missing header line `{FORMAT_TAG}`")));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{key}` header")))?;
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            if k != key {
                return Err(bad(format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.trim().to_string())
        };
        let parse_f = |s: String, key: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(format!("bad {key} `{s}`: {e}")))
        };
        let discount = parse_f(header("discount")?, "discount")?;
        let max_n: u32 = header("max_n")?
            .parse()
            .map_err(|e| bad(format!("bad max_n: {e}")))?;
        let tol = parse_f(header("tol")?, "tol")?;
        let horizon: usize = header("horizon")?
            .parse()
            .map_err(|e| bad(format!("bad horizon: {e}")))?;

        let offsets = row_offsets(max_n);
        let limit = max_n as usize + 2;
        let mut values = Vec::with_capacity(offsets[limit]);
        for a in 1..limit {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing row a = {a}")))?;
            let before = values.len();
            for tok in line.split_ascii_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| bad(format!("row a = {a}: bad value `{tok}`: {e}")))?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(bad(format!("row a = {a}: index {v} outside (0, 1)")));
                }
                values.push(v);
            }
            if values.len() - before != limit - a {
                return Err(bad(format!(
                    "row a = {a} has {} values, expected {}",
                    values.len() - before,
                    limit - a
                )));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data after the last row".into()));
        }
        Ok(Self {
            discount,
            max_n,
            tol,
            horizon,
            values,
            row_offsets: offsets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

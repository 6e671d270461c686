//! Study configuration files.
//!
//! A configuration is a TOML document. Its top-level keys describe one
//! suite. With a `[[suite]]` array they become defaults instead: each entry
//! is a suite inheriting every top-level key it does not set. List-valued keys (`D`, `beta_t`,
//! `schedule`, `rule`) expand into a grid, in the order
//! scenario-major, rule-minor.
//!
//! ```toml
//! seed = 7
//! nr = 5000
//! base_rate = 0.3
//! J = 5
//! b = 20
//! K = 1
//! D = [0.0, 0.08, 0.16, 0.24]
//! rule = ["CR", "TS", "RSIHR"]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::allocation::{AllocationRuleSpec, RuleKind, DEFAULT_M_FLGI, DEFAULT_M_TS};
use crate::engine::{TestKind, TestSpec};
use crate::error::{Error, Result};
use crate::inference::Alternative;
use crate::outcome::{
    effect_coefficient, logit, preset_schedule, solve_trend_coefficient, OutcomeModel,
};

pub const DEFAULT_SEED: u64 = 20_170_417;
pub const DEFAULT_NR: usize = 5000;
const DEFAULT_BASE_RATE: f64 = 0.3;

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    name: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    gittins_table: Option<PathBuf>,

    beta0: Option<f64>,
    base_rate: Option<f64>,
    beta_t: Option<OneOrMany<f64>>,
    #[serde(rename = "D")]
    d: Option<OneOrMany<f64>>,
    beta_z: Option<f64>,
    /// Experimental-arm effects on the logit scale (control excluded).
    beta_arm: Option<Vec<f64>>,
    /// Experimental-arm success rates in stage 1 without the covariate.
    arm_rates: Option<Vec<f64>>,
    #[serde(rename = "K")]
    k: Option<Spanned<i64>>,
    q_schedule: Option<Vec<f64>>,
    schedule: Option<OneOrMany<String>>,
    #[serde(rename = "J")]
    j: Option<Spanned<i64>>,
    b: Option<Spanned<i64>>,
    z_observed: Option<bool>,

    rule: Option<OneOrMany<String>>,
    m_ts: Option<Spanned<i64>>,
    m_flgi: Option<Spanned<i64>>,
    control_floor: Option<Spanned<f64>>,

    test: Option<String>,
    alpha: Option<Spanned<f64>>,
    alternative: Option<String>,
    calibrate: Option<bool>,
    calibrate_nr: Option<Spanned<i64>>,
    nr: Option<Spanned<i64>>,
    /// Randomization-test resamples; absent or 0 for the standard test.
    m: Option<Spanned<i64>>,
    delta_ens: Option<bool>,

    suite: Option<Vec<RawSuite>>,
}

macro_rules! inherit {
    ($child:ident, $parent:ident, $($field:ident),+) => {
        $( if $child.$field.is_none() { $child.$field = $parent.$field.clone(); } )+
    };
}

impl RawSuite {
    fn inherit(mut self, parent: &RawSuite) -> RawSuite {
        inherit!(
            self,
            parent,
            name,
            seed,
            gittins_table,
            beta0,
            base_rate,
            beta_t,
            d,
            beta_z,
            beta_arm,
            arm_rates,
            k,
            q_schedule,
            schedule,
            j,
            b,
            z_observed,
            rule,
            m_ts,
            m_flgi,
            control_floor,
            test,
            alpha,
            alternative,
            calibrate,
            calibrate_nr,
            nr,
            m,
            delta_ens
        );
        self
    }
}

/// One fully resolved study: a model, a rule and how to analyse it.
#[derive(Clone, Debug)]
pub struct StudyItem {
    pub suite: String,
    pub scenario: String,
    pub model: OutcomeModel,
    /// The same scenario frozen at its stage-1 state with no arm effects;
    /// calibration runs use it as the null.
    pub calibration_null: OutcomeModel,
    pub rule: AllocationRuleSpec,
    pub test: TestSpec,
    pub calibrate: bool,
    pub calibrate_nr: usize,
    pub nr: usize,
    pub resamples: usize,
    pub delta_ens: bool,
    pub seed: u64,
    pub gittins_table: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct StudySuite {
    pub items: Vec<StudyItem>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl StudySuite {
    /// Gittins table files referenced by rules that need them.
    pub fn gittins_tables(&self) -> BTreeSet<PathBuf> {
        self.items
            .iter()
            .filter(|i| i.rule.kind.needs_gittins())
            .filter_map(|i| i.gittins_table.clone())
            .collect()
    }
}

struct Ctx<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Ctx<'_> {
    /// Relative paths in a configuration are taken from its directory.
    fn resolve(&self, file: &Path) -> PathBuf {
        match self.path.parent() {
            Some(dir) if file.is_relative() => dir.join(file),
            _ => file.to_path_buf(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn at<T>(&self, value: &Spanned<T>, message: impl std::fmt::Display) -> Error {
        let line = self.text[..value.span().start].matches('\n').count() + 1;
        self.err(format!("line {line}: {message}"))
    }

    fn positive(&self, value: &Option<Spanned<i64>>, key: &str) -> Result<Option<usize>> {
        match value {
            None => Ok(None),
            Some(v) if *v.get_ref() >= 1 => Ok(Some(*v.get_ref() as usize)),
            Some(v) => Err(self.at(
                v,
                format!("`{key}` must be a positive integer, got {}", v.get_ref()),
            )),
        }
    }

    fn non_negative(&self, value: &Option<Spanned<i64>>, key: &str) -> Result<Option<usize>> {
        match value {
            None => Ok(None),
            Some(v) if *v.get_ref() >= 0 => Ok(Some(*v.get_ref() as usize)),
            Some(v) => Err(self.at(v, format!("`{key}` must be >= 0, got {}", v.get_ref()))),
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<StudySuite> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

/// Parses configuration text; `path` names it in messages and anchors
/// relative paths.
pub fn parse_config_str(text: &str, path: &Path) -> Result<StudySuite> {
    let ctx = Ctx { path, text };
    let raw: RawSuite = toml::from_str(text).map_err(|e| ctx.err(e.to_string()))?;
    let seed = raw.seed.unwrap_or(DEFAULT_SEED);
    let out = raw.out.as_deref().map(|p| ctx.resolve(p));
    let mut suites = raw.suite.clone().unwrap_or_default();
    if suites.is_empty() {
        suites.push(RawSuite::default());
    }
    let mut items = Vec::new();
    for (i, s) in suites.into_iter().enumerate() {
        if s.suite.is_some() {
            return Err(ctx.err("suites cannot be nested"));
        }
        if s.out.is_some() {
            return Err(ctx.err("`out` is only allowed at the top level"));
        }
        let s = s.inherit(&raw);
        resolve_suite(&ctx, &s, i, &mut items)?;
    }
    Ok(StudySuite { items, out, seed })
}

fn resolve_suite(ctx: &Ctx, s: &RawSuite, index: usize, items: &mut Vec<StudyItem>) -> Result<()> {
    let name = s
        .name
        .clone()
        .unwrap_or_else(|| format!("suite{}", index + 1));
    let stages = ctx
        .positive(&s.j, "J")?
        .ok_or_else(|| ctx.err(format!("{name}: `J` is required")))?;
    let block = ctx
        .positive(&s.b, "b")?
        .ok_or_else(|| ctx.err(format!("{name}: `b` is required")))?;

    let beta0 = match (s.beta0, s.base_rate) {
        (Some(_), Some(_)) => {
            return Err(ctx.err(format!("{name}: give `beta0` or `base_rate`, not both")))
        }
        (Some(b0), None) => b0,
        (None, rate) => {
            let r = rate.unwrap_or(DEFAULT_BASE_RATE);
            if !(r > 0.0 && r < 1.0) {
                return Err(ctx.err(format!("{name}: base_rate {r} outside (0, 1)")));
            }
            logit(r)
        }
    };

    let k = ctx.positive(&s.k, "K")?;
    let effects: Vec<f64> = match (&s.beta_arm, &s.arm_rates) {
        (Some(_), Some(_)) => {
            return Err(ctx.err(format!("{name}: give `beta_arm` or `arm_rates`, not both")))
        }
        (Some(b), None) => b.clone(),
        (None, Some(rates)) => {
            let base = crate::outcome::expit(beta0);
            rates
                .iter()
                .map(|&r| {
                    if r > 0.0 && r < 1.0 {
                        Ok(effect_coefficient(base, r))
                    } else {
                        Err(ctx.err(format!("{name}: arm rate {r} outside (0, 1)")))
                    }
                })
                .collect::<Result<_>>()?
        }
        (None, None) => vec![0.0; k.unwrap_or(1)],
    };
    if effects.is_empty() {
        return Err(ctx.err(format!("{name}: need at least one experimental arm")));
    }
    if let Some(k) = k {
        if k != effects.len() {
            return Err(ctx.err(format!(
                "{name}: K = {k} but {} experimental arm effects were given",
                effects.len()
            )));
        }
    }
    let mut beta_arm = vec![0.0];
    beta_arm.extend(&effects);

    // trend axis
    let trends: Vec<(String, f64)> = match (&s.beta_t, &s.d) {
        (Some(_), Some(_)) => {
            return Err(ctx.err(format!("{name}: give `beta_t` or `D`, not both")))
        }
        (Some(bt), None) => bt
            .to_vec()
            .into_iter()
            .map(|v| (format!("beta_t={v}"), v))
            .collect(),
        (None, Some(d)) => d
            .to_vec()
            .into_iter()
            .map(|v| {
                let bt = solve_trend_coefficient(v, beta0, stages).or_else(|e| {
                    if stages == 1 && v == 0.0 {
                        Ok(0.0)
                    } else {
                        Err(ctx.err(format!("{name}: {e}")))
                    }
                })?;
                Ok((format!("D={v}"), bt))
            })
            .collect::<Result<_>>()?,
        (None, None) => vec![(String::new(), 0.0)],
    };

    // covariate schedule axis
    let schedules: Vec<(String, Vec<f64>)> = match (&s.q_schedule, &s.schedule) {
        (Some(_), Some(_)) => {
            return Err(ctx.err(format!("{name}: give `q_schedule` or `schedule`, not both")))
        }
        (Some(q), None) => {
            if q.len() != stages {
                return Err(ctx.err(format!(
                    "{name}: q_schedule has {} entries but J = {stages}",
                    q.len()
                )));
            }
            vec![("q=custom".to_string(), q.clone())]
        }
        (None, Some(names)) => names
            .to_vec()
            .into_iter()
            .map(|n| {
                preset_schedule(&n, stages)
                    .map(|q| (format!("q={n}"), q))
                    .ok_or_else(|| {
                        ctx.err(format!(
                            "{name}: unknown schedule `{n}` (expected linear-<step>, const-<q>, up-down or down-up)"
                        ))
                    })
            })
            .collect::<Result<_>>()?,
        (None, None) => vec![(String::new(), vec![0.0; stages])],
    };

    let beta_z = s.beta_z.unwrap_or(0.0);
    let z_observed = s.z_observed.unwrap_or(false);

    let rules: Vec<RuleKind> = s
        .rule
        .as_ref()
        .map(|r| r.to_vec())
        .unwrap_or_else(|| vec!["CR".into()])
        .iter()
        .map(|r| {
            r.parse::<RuleKind>()
                .map_err(|e| ctx.err(format!("{name}: {e}")))
        })
        .collect::<Result<_>>()?;

    let m_ts = ctx.positive(&s.m_ts, "m_ts")?.unwrap_or(DEFAULT_M_TS);
    let m_flgi = ctx.positive(&s.m_flgi, "m_flgi")?.unwrap_or(DEFAULT_M_FLGI);
    let control_floor = match &s.control_floor {
        Some(f) if !(0.0..=1.0).contains(f.get_ref()) => {
            return Err(ctx.at(f, format!("control_floor {} outside [0, 1]", f.get_ref())))
        }
        other => other.as_ref().map(|f| *f.get_ref()),
    };

    let alpha = match &s.alpha {
        Some(a) if !(*a.get_ref() > 0.0 && *a.get_ref() <= 1.0) => {
            return Err(ctx.at(a, format!("alpha {} outside (0, 1]", a.get_ref())))
        }
        Some(a) => *a.get_ref(),
        None => 0.05,
    };
    let explicit_test = s
        .test
        .as_deref()
        .map(|t| {
            t.parse::<TestKind>()
                .map_err(|e| ctx.err(format!("{name}: {e}")))
        })
        .transpose()?;
    let alternative = s
        .alternative
        .as_deref()
        .map(|a| {
            a.parse::<Alternative>()
                .map_err(|e| ctx.err(format!("{name}: {e}")))
        })
        .transpose()?
        .unwrap_or_default();

    let nr = ctx.positive(&s.nr, "nr")?.unwrap_or(DEFAULT_NR);
    let calibrate_nr = ctx.positive(&s.calibrate_nr, "calibrate_nr")?.unwrap_or(nr);
    let resamples = ctx.non_negative(&s.m, "m")?.unwrap_or(0);
    let seed = s.seed.unwrap_or(DEFAULT_SEED);

    for (trend_label, beta_t) in &trends {
        for (schedule_label, q) in &schedules {
            let model =
                OutcomeModel::new(beta0, *beta_t, beta_z, beta_arm.clone(), q.clone(), block)
                    .map_err(|e| ctx.err(format!("{name}: {e}")))?
                    .with_z_observed(z_observed);
            let calibration_null = OutcomeModel::new(
                beta0,
                0.0,
                beta_z,
                vec![0.0; beta_arm.len()],
                vec![q[0]; stages],
                block,
            )
            .map_err(|e| ctx.err(format!("{name}: {e}")))?
            .with_z_observed(z_observed);
            let scenario = [trend_label.as_str(), schedule_label.as_str()]
                .iter()
                .filter(|l| !l.is_empty())
                .copied()
                .collect::<Vec<_>>()
                .join(";");
            for &kind in &rules {
                // bandit rules are analysed with the calibrated exact test
                // unless told otherwise
                let bandit = matches!(kind, RuleKind::Flgi);
                let test_kind = explicit_test.unwrap_or(if bandit {
                    TestKind::FisherExact
                } else {
                    TestKind::ZTest
                });
                let calibrate = s.calibrate.unwrap_or(bandit && explicit_test.is_none());
                let rule = AllocationRuleSpec {
                    m_ts,
                    m_flgi,
                    control_floor,
                    ..AllocationRuleSpec::new(kind)
                };
                items.push(StudyItem {
                    suite: name.clone(),
                    scenario: if scenario.is_empty() {
                        "base".into()
                    } else {
                        scenario.clone()
                    },
                    model: model.clone(),
                    calibration_null: calibration_null.clone(),
                    rule,
                    test: TestSpec::new(test_kind, alpha).with_alternative(alternative),
                    calibrate: calibrate && resamples == 0,
                    calibrate_nr,
                    nr,
                    resamples,
                    delta_ens: s.delta_ens.unwrap_or(false),
                    seed,
                    gittins_table: s.gittins_table.as_deref().map(|p| ctx.resolve(p)),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<StudySuite> {
        parse_config_str(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config() {
        let s = parse("J = 5\nb = 20\n").unwrap();
        assert_eq!(s.items.len(), 1);
        let item = &s.items[0];
        assert_eq!(item.rule.kind, RuleKind::Cr);
        assert_eq!(item.model.total_size(), 100);
        assert_eq!(item.model.arms(), 2);
        assert_eq!(item.nr, DEFAULT_NR);
        assert_eq!(item.test.kind, TestKind::ZTest);
        assert!(!item.calibrate);
    }

    #[test]
    fn grid_expansion_and_defaults() {
        let s = parse(
            "seed = 3\nJ = 5\nb = 20\nK = 2\nD = [0.0, 0.24]\nrule = [\"CR\", \"FLGI\"]\nnr = 100\n",
        )
        .unwrap();
        assert_eq!(s.items.len(), 4);
        assert_eq!(s.items[0].scenario, "D=0");
        assert_eq!(s.items[3].scenario, "D=0.24");
        let flgi = &s.items[1];
        assert_eq!(flgi.rule.kind, RuleKind::Flgi);
        assert_eq!(flgi.test.kind, TestKind::FisherExact);
        assert!(flgi.calibrate);
        assert!((s.items[3].model.overall_trend() - 0.24).abs() < 1e-12);
        assert_eq!(s.items[3].calibration_null.beta_t, 0.0);
    }

    #[test]
    fn suites_inherit() {
        let s = parse(
            "J = 5\nb = 30\nnr = 10\n[[suite]]\nname = \"a\"\nrule = \"TS\"\n[[suite]]\nb = 20\nm = 50\nrule = \"FLGI\"\n",
        )
        .unwrap();
        assert_eq!(s.items.len(), 2);
        assert_eq!(s.items[0].model.block_size(), 30);
        assert_eq!(s.items[1].model.block_size(), 20);
        assert_eq!(s.items[1].resamples, 50);
        assert!(!s.items[1].calibrate);
    }

    #[test]
    fn schema_errors() {
        let neg = parse("J = 5\nb = -20\n").unwrap_err().to_string();
        assert!(neg.contains("line 2") && neg.contains("positive"), "{neg}");
        let unknown = parse("J = 5\nb = 20\nbeta_q = 1\n")
            .unwrap_err()
            .to_string();
        assert!(unknown.contains("beta_q"), "{unknown}");
        assert!(parse("J = 5\nb = 20\nD = 0.1\nbeta_t = 0.1\n").is_err());
        assert!(parse("J = 5\nb = 20\nK = 2\nbeta_arm = [0.5]\n").is_err());
        assert!(parse("J = 5\nb = 20\nrule = \"DBCD\"\n").is_err());
        assert!(parse("J = 5\nb = 20\nschedule = \"zigzag\"\n").is_err());
        assert!(parse("b = 20\n").is_err());
    }

    #[test]
    fn arm_rates_and_schedules() {
        let s = parse(
            "J = 10\nb = 20\narm_rates = [0.575, 0.3]\nbeta_z = 1.2528\nschedule = [\"linear-0.05\", \"const-0.5\"]\n",
        )
        .unwrap();
        assert_eq!(s.items.len(), 2);
        let m = &s.items[0].model;
        assert_eq!(m.experimental_arms(), 2);
        assert!((crate::outcome::expit(m.beta0 + m.beta_arm()[1]) - 0.575).abs() < 1e-12);
        assert_eq!(m.beta_arm()[2], 0.0);
        assert!((m.q_schedule()[9] - 0.95).abs() < 1e-12);
        assert_eq!(s.items[1].scenario, "q=const-0.5");
    }
}

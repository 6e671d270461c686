//! Command-line front end.

pub mod config;
pub mod records;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;

use crate::allocation::{AllocationRuleSpec, RuleKind, DEFAULT_M_FLGI, DEFAULT_M_TS};
use crate::engine::{
    calibrate_cutoff, compare_to_cr, run_randomization_study, run_study, run_trial, TrialConfig,
};
use crate::error::{Error, Result};
use crate::gittins::GittinsTable;
use crate::inference::{
    fit_logistic_firth, fit_logistic_mle, randomization_test, Alternative, GlmSpec,
};
use crate::rng::derive_key;

pub use config::{parse_config, parse_config_str, StudyItem, StudySuite};

const LABEL_RANDTEST: u64 = 11;

/// Header of the study CSV written by `simulate`.
pub const STUDY_HEADER: &[&str] = &[
    "rule",
    "K",
    "T",
    "b",
    "J",
    "scenario",
    "test",
    "cutoff",
    "alpha_or_power",
    "alpha_or_power_se",
    "p_star",
    "p_star_se",
    "ens",
    "ens_se",
    "delta_ens",
    "delta_ens_se",
    "runtime_s",
    "seed",
];

const CALIBRATION_HEADER: &[&str] = &[
    "rule", "K", "T", "b", "J", "scenario", "test", "alpha", "cutoff", "nr", "seed",
];

#[derive(Debug, Parser)]
#[command(
    name = "rar-sim",
    version,
    about = "Simulate response-adaptive randomised trials"
)]
pub struct Cli {
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: the configuration's `out`, else stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a Gittins index table for Bernoulli arms.
    GittinsTable {
        #[arg(long, default_value_t = 0.99)]
        discount: f64,
        /// Largest number of observations per arm covered.
        #[arg(long, default_value_t = 200)]
        max_n: u32,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run every study in a configuration file and write one CSV row each.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute calibrated test cutoffs for every study in a configuration.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate one trial of the first study and write its records.
    Trial {
        #[arg(long)]
        config: PathBuf,
        /// Per-block probability sidecar (default: `<out>.probs.csv`).
        #[arg(long)]
        probabilities: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Randomization test of a recorded trial.
    Randtest {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        probabilities: PathBuf,
        #[arg(long)]
        rule: RuleKind,
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = Alternative::TwoSided)]
        alternative: Alternative,
        #[arg(long)]
        gittins_table: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_M_TS)]
        m_ts: usize,
        #[arg(long, default_value_t = DEFAULT_M_FLGI)]
        m_flgi: usize,
        #[arg(long)]
        control_floor: Option<f64>,
    },
    /// Fit a logistic model to a patient-record CSV.
    Fit {
        #[arg(long)]
        records: PathBuf,
        /// Use Firth's penalized likelihood.
        #[arg(long)]
        firth: bool,
        /// Include the stage trend term.
        #[arg(long)]
        time: bool,
        /// Include the patient covariate.
        #[arg(long)]
        covariate: bool,
        /// Number of arms including control (default: from the data).
        #[arg(long)]
        arms: Option<usize>,
    },
}

/// Runs the command line; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GittinsTable {
            discount,
            max_n,
            tol,
        } => {
            let start = Instant::now();
            let table = GittinsTable::compute(discount, max_n, tol)?;
            info!("gittins table computed in {:.1?}", start.elapsed());
            match &cli.out {
                Some(path) => table.save(path),
                None => write_stdout(&table.to_text()),
            }
        }
        Command::Simulate { config } => {
            let suite = load_suite(&config, cli.seed)?;
            let out = cli.out.clone().or_else(|| suite.out.clone());
            simulate(&suite, out.as_deref())
        }
        Command::Calibrate { config } => {
            let suite = load_suite(&config, cli.seed)?;
            calibrate(&suite, cli.out.as_deref())
        }
        Command::Trial {
            config,
            probabilities,
            replicate,
        } => {
            let suite = load_suite(&config, cli.seed)?;
            let out = cli.out.clone().ok_or_else(|| {
                Error::InvalidData("`trial` needs --out for the records CSV".into())
            })?;
            let probs = probabilities.unwrap_or_else(|| sidecar_path(&out));
            simulate_one(&suite, replicate, &out, &probs)
        }
        Command::Randtest {
            records,
            probabilities,
            rule,
            m,
            alpha,
            alternative,
            gittins_table,
            m_ts,
            m_flgi,
            control_floor,
        } => {
            let trial = records::read_trial(&records, &probabilities)?;
            let mut spec = AllocationRuleSpec {
                m_ts,
                m_flgi,
                control_floor,
                ..AllocationRuleSpec::new(rule)
            };
            if rule.needs_gittins() {
                let path = gittins_table.ok_or_else(|| missing_table(rule))?;
                spec.gittins = Some(Arc::new(load_table(&path)?));
            }
            spec.validate(trial.arms, trial.records.len())?;
            let key = derive_key(cli.seed.unwrap_or(config::DEFAULT_SEED), LABEL_RANDTEST);
            let tests = randomization_test(&trial, &spec, m, alpha, alternative, key)?;
            let mut rows = vec![vec![
                "arm".to_string(),
                "statistic".into(),
                "p_value".into(),
                "reject".into(),
            ]];
            for (k, t) in tests.iter().enumerate() {
                rows.push(vec![
                    (k + 1).to_string(),
                    t.statistic.to_string(),
                    t.p_value.to_string(),
                    t.reject.to_string(),
                ]);
            }
            write_rows(cli.out.as_deref(), &rows)
        }
        Command::Fit {
            records,
            firth,
            time,
            covariate,
            arms,
        } => {
            let recs = records::read_records(&records)?;
            let arms = arms.unwrap_or_else(|| recs.iter().map(|r| r.arm).max().unwrap_or(0) + 1);
            let spec = GlmSpec::new(time, covariate, arms);
            let fit = if firth {
                fit_logistic_firth::<f64>(&recs, &spec)?
            } else {
                fit_logistic_mle::<f64>(&recs, &spec)?
            };
            let mut rows = vec![[
                "term",
                "estimate",
                "std_error",
                "p_value",
                "converged",
                "separation_detected",
                "penalized",
            ]
            .map(String::from)
            .to_vec()];
            for (i, name) in fit.names.iter().enumerate() {
                rows.push(vec![
                    name.clone(),
                    fit.coefficients[i].to_string(),
                    fit.std_errors[i].to_string(),
                    fit.p_values[i].to_string(),
                    fit.converged.to_string(),
                    fit.separation_detected.to_string(),
                    fit.penalized.to_string(),
                ]);
            }
            write_rows(cli.out.as_deref(), &rows)
        }
    }
}

fn load_suite(path: &Path, seed: Option<u64>) -> Result<StudySuite> {
    let mut suite = parse_config(path)?;
    if let Some(seed) = seed {
        suite.seed = seed;
        suite.items.iter_mut().for_each(|i| i.seed = seed);
    }
    Ok(suite)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.probs.csv"))
}

fn missing_table(rule: RuleKind) -> Error {
    Error::InvalidData(format!(
        "rule {rule} needs a Gittins index table; build one with \
         `rar-sim gittins-table --discount 0.99 --max-n <T> --out <file>` and pass it \
         (`gittins_table = \"<file>\"` in a configuration, --gittins-table on the command line)"
    ))
}

fn load_table(path: &Path) -> Result<GittinsTable> {
    GittinsTable::load(path).map_err(|e| match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::InvalidData(format!(
                "Gittins table {} not found; build it with \
                 `rar-sim gittins-table --discount 0.99 --max-n <T> --out {}`",
                path.display(),
                path.display()
            ))
        }
        other => other,
    })
}

/// Attaches Gittins tables to every study that needs one.
fn prepare(suite: &StudySuite) -> Result<Vec<TrialConfig>> {
    let mut tables: HashMap<PathBuf, Arc<GittinsTable>> = HashMap::new();
    for path in suite.gittins_tables() {
        let t = load_table(&path)?;
        tables.insert(path, Arc::new(t));
    }
    suite
        .items
        .iter()
        .map(|item| {
            let mut rule = item.rule.clone();
            if rule.kind.needs_gittins() {
                let path = item
                    .gittins_table
                    .as_ref()
                    .ok_or_else(|| missing_table(rule.kind))?;
                rule.gittins = Some(tables[path].clone());
            }
            TrialConfig::new(item.model.clone(), rule, item.test, item.seed)
        })
        .collect()
}

type CalibrationKey = (String, String, String, usize, u64);

fn calibration_key(item: &StudyItem) -> CalibrationKey {
    (
        format!(
            "{:?}/{}/{}/{:?}",
            item.rule.kind, item.rule.m_ts, item.rule.m_flgi, item.rule.control_floor
        ),
        format!("{:?}", item.calibration_null),
        format!("{:?}", item.test),
        item.calibrate_nr,
        item.seed,
    )
}

fn cutoff_for(
    item: &StudyItem,
    cfg: &TrialConfig,
    cache: &mut HashMap<CalibrationKey, f64>,
) -> Result<f64> {
    let key = calibration_key(item);
    if let Some(c) = cache.get(&key) {
        return Ok(*c);
    }
    info!(
        "calibrating {} on {} null trials",
        item.rule.kind, item.calibrate_nr
    );
    let c = calibrate_cutoff(
        &cfg.rule,
        &item.calibration_null,
        item.calibrate_nr,
        item.test.alpha,
        cfg.test,
        item.seed,
    )?;
    cache.insert(key, c);
    Ok(c)
}

fn test_label(item: &StudyItem) -> String {
    if item.resamples > 0 {
        return format!(
            "randomization/{}/M={}",
            item.test.alternative, item.resamples
        );
    }
    let mut label = format!("{}/{}", item.test.kind, item.test.alternative);
    if item.calibrate {
        label.push_str("/calibrated");
    }
    label
}

fn simulate(suite: &StudySuite, out: Option<&Path>) -> Result<()> {
    let configs = prepare(suite)?;
    let mut sink = CsvSink::open(out, STUDY_HEADER)?;
    let mut cutoffs = HashMap::new();
    let mut cr_studies = HashMap::new();
    for (item, cfg) in suite.items.iter().zip(configs) {
        let mut cfg = cfg;
        let cutoff = if item.calibrate {
            let c = cutoff_for(item, &cfg, &mut cutoffs)?;
            cfg.test = cfg.test.with_cutoff(c);
            Some(c)
        } else {
            None
        };
        info!(
            "{} {}: {} replicates",
            item.rule.kind, item.scenario, item.nr
        );
        let start = Instant::now();
        let oc = if item.resamples > 0 {
            run_randomization_study(&cfg, item.nr, item.resamples)?
        } else {
            run_study(&cfg, item.nr)?
        };
        let runtime = start.elapsed().as_secs_f64();
        let delta = if item.delta_ens {
            let key = (format!("{:?}", item.model), item.nr, item.seed);
            if !cr_studies.contains_key(&key) {
                let cr_cfg = TrialConfig::new(
                    item.model.clone(),
                    AllocationRuleSpec::cr(),
                    item.test,
                    item.seed,
                )?;
                cr_studies.insert(key.clone(), run_study(&cr_cfg, item.nr)?);
            }
            Some(compare_to_cr(&oc, &cr_studies[&key])?)
        } else {
            None
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        sink.write(&[
            item.rule.kind.name().to_string(),
            item.model.experimental_arms().to_string(),
            item.model.total_size().to_string(),
            item.model.block_size().to_string(),
            item.model.stages().to_string(),
            item.scenario.clone(),
            test_label(item),
            opt(cutoff),
            oc.rejection_rate.to_string(),
            oc.rejection_se.to_string(),
            oc.p_star.to_string(),
            oc.p_star_se.to_string(),
            oc.ens.to_string(),
            oc.ens_se.to_string(),
            opt(delta.map(|d| d.value)),
            opt(delta.map(|d| d.se)),
            format!("{runtime:.3}"),
            item.seed.to_string(),
        ])?;
    }
    sink.finish()
}

fn calibrate(suite: &StudySuite, out: Option<&Path>) -> Result<()> {
    let configs = prepare(suite)?;
    let mut sink = CsvSink::open(out, CALIBRATION_HEADER)?;
    let mut cache = HashMap::new();
    for (item, cfg) in suite.items.iter().zip(configs) {
        let c = cutoff_for(item, &cfg, &mut cache)?;
        sink.write(&[
            item.rule.kind.name().to_string(),
            item.model.experimental_arms().to_string(),
            item.model.total_size().to_string(),
            item.model.block_size().to_string(),
            item.model.stages().to_string(),
            item.scenario.clone(),
            format!("{}/{}", item.test.kind, item.test.alternative),
            item.test.alpha.to_string(),
            c.to_string(),
            item.calibrate_nr.to_string(),
            item.seed.to_string(),
        ])?;
    }
    sink.finish()
}

fn simulate_one(suite: &StudySuite, replicate: u64, out: &Path, probs: &Path) -> Result<()> {
    let configs = prepare(suite)?;
    let cfg = configs
        .first()
        .ok_or_else(|| Error::InvalidData("configuration defines no study".into()))?;
    let trial = run_trial(cfg, &mut cfg.trial_stream(replicate))?;
    records::write_records(out, &trial.records)?;
    records::write_probabilities(probs, &trial.block_probabilities)?;
    for (k, t) in trial.tests.iter().enumerate() {
        println!(
            "arm {}: statistic {} p-value {} reject {}",
            k + 1,
            t.statistic,
            t.p_value,
            t.reject
        );
    }
    Ok(())
}

/// CSV writer that appends to an existing file with the same header.
struct CsvSink {
    writer: csv::Writer<Box<dyn Write>>,
    path: Option<PathBuf>,
}

impl CsvSink {
    fn open(path: Option<&Path>, header: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            let mut writer =
                csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn Write>);
            writer.write_record(header)?;
            return Ok(Self { writer, path: None });
        };
        let existing = match std::fs::File::open(path) {
            Ok(f) => {
                let mut line = String::new();
                BufReader::new(f)
                    .read_line(&mut line)
                    .map_err(|e| Error::io(path, e))?;
                Some(line.trim_end().to_string())
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        };
        let expected = header.join(",");
        let append = match existing.as_deref() {
            None | Some("") => false,
            Some(h) if h == expected => true,
            Some(h) => {
                return Err(Error::InvalidData(format!(
                    "{} has header `{h}`, expected `{expected}`; refusing to append",
                    path.display()
                )))
            }
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(Box::new(file) as Box<dyn Write>);
        if !append {
            writer.write_record(header)?;
        }
        Ok(Self {
            writer,
            path: Some(path.to_path_buf()),
        })
    }

    fn write(&mut self, row: &[String]) -> Result<()> {
        self.writer.write_record(row)?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| match &self.path {
            Some(p) => Error::io(p, e),
            None => Error::io("<stdout>", e),
        })
    }

    fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

fn write_rows(out: Option<&Path>, rows: &[Vec<String>]) -> Result<()> {
    let mut buf = csv::Writer::from_writer(Vec::new());
    for r in rows {
        buf.write_record(r)?;
    }
    let bytes = buf
        .into_inner()
        .map_err(|e| Error::InvalidData(format!("csv buffer: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => write_stdout(&String::from_utf8_lossy(&bytes)),
    }
}

fn write_stdout(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

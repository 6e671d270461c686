//! Invariant sweeps shared by the property tests and the acceptance run.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rar_sim::allocation::ArmState;
use rar_sim::rng::stream;
use rar_sim::{AllocationRuleSpec, GittinsTable, RuleKind};

use super::oracle::Check;

/// Every rule on `cases` random states, stages and block sizes; returns the
/// number of probability vectors checked.
pub fn simplex_sweep(table: &Arc<GittinsTable>, cases: usize, seed: u64) -> Check {
    let rules = [
        AllocationRuleSpec::cr(),
        AllocationRuleSpec::thompson(200),
        AllocationRuleSpec::rsihr(),
        AllocationRuleSpec::flgi(table.clone(), 20),
        AllocationRuleSpec::cflgi(table.clone(), 20, None),
    ];
    let mut rng = stream(seed, 0);
    let mut checked = 0;
    for case in 0..cases {
        let arms = rng.random_range(2..=4);
        let states: Vec<ArmState> = (0..arms)
            .map(|_| ArmState::new(rng.random_range(0..=40), rng.random_range(0..=40)))
            .collect();
        let stage = rng.random_range(1..=10);
        let block = rng.random_range(1..=30);
        let rule = &rules[case % rules.len()];
        let p = rule
            .block_probabilities(
                &states,
                stage,
                block,
                300,
                &mut stream(seed, case as u64 + 1),
            )
            .map_err(|e| format!("{} on {states:?}: {e}", rule.kind))?;
        let v = p.as_slice();
        let sum: f64 = v.iter().sum();
        if v.len() != arms || v.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-9
        {
            return Err(format!("{} on {states:?}: {v:?}", rule.kind));
        }
        if rule.kind == RuleKind::Cflgi && v[0] < 1.0 / arms as f64 - 1e-12 {
            return Err(format!("control floor violated on {states:?}: {v:?}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} probability vectors"))
}

pub fn gittins_monotone(table: &GittinsTable) -> Check {
    let mut pairs = 0;
    for (a, b, v) in table.iter() {
        if v <= f64::from(a) / f64::from(a + b) - 1e-9 || v >= 1.0 {
            return Err(format!("index {v} at ({a}, {b}) outside (mean, 1)"));
        }
        if table.contains(a + 1, b) && table.index(a + 1, b).unwrap() <= v {
            return Err(format!("not increasing in successes at ({a}, {b})"));
        }
        if table.contains(a, b + 1) && table.index(a, b + 1).unwrap() >= v {
            return Err(format!("not decreasing in failures at ({a}, {b})"));
        }
        pairs += 1;
    }
    Ok(format!("{pairs} states, max_n {}", table.max_n()))
}

fn run_cli(pool_threads: usize, config: &Path, out: &Path) -> Result<String, String> {
    let _ = std::fs::remove_file(out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_threads)
        .build()
        .map_err(|e| e.to_string())?;
    let args = [
        "rar-sim",
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let code = pool.install(|| rar_sim::cli::main_with_args(args));
    if code != 0 {
        return Err(format!("simulate exited with {code}"));
    }
    std::fs::read_to_string(out).map_err(|e| e.to_string())
}

/// The study CSV without its runtime column.
pub fn strip_runtime(csv_text: &str) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers().unwrap().clone();
    let col = header
        .iter()
        .position(|h| h == "runtime_s")
        .expect("runtime column");
    let mut rows = vec![header.iter().map(String::from).collect::<Vec<_>>()];
    for rec in reader.records() {
        let rec = rec.unwrap();
        rows.push(
            rec.iter()
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, v)| v.to_string())
                .collect(),
        );
    }
    rows[0].remove(col);
    rows
}

/// Same configuration under 1 and 3 worker threads.
pub fn determinism(table_path: &Path, dir: &Path) -> Check {
    let config = dir.join("determinism.toml");
    let text = format!(
        "seed = 11\nJ = 5\nb = 10\nK = 2\nnr = 60\nD = [0.0, 0.16]\ngittins_table = {:?}\n\
         rule = [\"CR\", \"TS\", \"RSIHR\", \"FLGI\", \"CFLGI\"]\ncalibrate_nr = 400\nm_ts = 300\n\
         [[suite]]\nname = \"plain\"\n\
         [[suite]]\nname = \"randomization\"\nK = 1\nrule = \"RSIHR\"\nm = 40\nnr = 20\n",
        table_path.display()
    );
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let one = run_cli(1, &config, &dir.join("one.csv"))?;
    let three = run_cli(3, &config, &dir.join("three.csv"))?;
    let (a, b) = (strip_runtime(&one), strip_runtime(&three));
    if a != b {
        return Err(format!("outputs differ:\n{one}\n---\n{three}"));
    }
    Ok(format!("{} identical rows", a.len() - 1))
}

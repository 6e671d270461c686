#![allow(dead_code)]

pub mod invariants;
pub mod oracle;

use std::path::PathBuf;
use std::sync::Arc;

use rar_sim::outcome::{build_scenario_i, logit};
use rar_sim::{GittinsTable, Model};

pub const DISCOUNT: f64 = 0.99;
pub const TABLE_MAX_N: u32 = 200;

/// Path of the shared discount-0.99 table, building it on first use
/// (about two minutes on one core).
pub fn gittins_path() -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join(format!("gittins-{DISCOUNT}-{TABLE_MAX_N}.txt"));
    if GittinsTable::load(&path).is_ok_and(|t| t.max_n() >= TABLE_MAX_N && t.discount() == DISCOUNT)
    {
        return path;
    }
    let table = GittinsTable::compute(DISCOUNT, TABLE_MAX_N, 1e-6).expect("gittins table");
    // write then rename so an interrupted build never leaves a partial file
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    table.save(&tmp).expect("save table");
    std::fs::rename(&tmp, &path).expect("rename table");
    path
}

pub fn gittins() -> Arc<GittinsTable> {
    Arc::new(GittinsTable::load(gittins_path()).expect("load table"))
}

/// Standard-of-care drift `d` from a control rate of 0.3, with the given
/// experimental arm rates.
pub fn drift_model(d: f64, arm_rates: &[f64], total: usize, block: usize) -> Model {
    let beta0 = logit(0.3);
    let mut beta_arm = vec![0.0];
    beta_arm.extend(arm_rates.iter().map(|&p| logit(p) - beta0));
    build_scenario_i(d, beta0, beta_arm, total / block, block).expect("model")
}

//! Exact cross-checks against independent brute-force computations.

mod common;

use common::oracle;
use rar_sim::GittinsTable;

fn ok(check: oracle::Check) {
    match check {
        Ok(summary) => eprintln!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn gittins_matches_brute_force_on_grid() {
    ok(oracle::gittins_grid(0.99));
    ok(oracle::gittins_grid(0.9));
}

#[test]
fn gittins_matches_published_values() {
    let t9 = GittinsTable::compute(0.9, 4, 1e-6).unwrap();
    assert!((t9.index(1, 1).unwrap() - 0.7029).abs() < 1e-4);
    let t99 = GittinsTable::compute(0.99, 4, 1e-6).unwrap();
    assert!((t99.index(1, 1).unwrap() - 0.8699).abs() < 1e-4);
}

#[test]
fn fisher_matches_hypergeometric_enumeration() {
    ok(oracle::fisher_tables());
}

#[test]
fn firth_intercept_only_closed_form() {
    ok(oracle::firth_intercept());
}

#[test]
fn flgi_matches_path_enumeration() {
    ok(oracle::flgi_paths(
        &GittinsTable::compute(0.99, 18, 1e-6).unwrap(),
    ));
    ok(oracle::flgi_paths(
        &GittinsTable::compute(0.9, 18, 1e-6).unwrap(),
    ));
}

#[test]
fn flgi_dominant_arm_takes_the_block() {
    use rar_sim::allocation::{flgi_probabilities, ArmState};
    let t = GittinsTable::compute(0.99, 40, 1e-6).unwrap();
    // 20 successes against 20 failures: no 3-step path can reverse the order
    let states = [ArmState::new(0, 20), ArmState::new(20, 0)];
    let p = flgi_probabilities(&states, 3, &t, 50, &mut rar_sim::rng::stream(1, 1)).unwrap();
    assert_eq!(p.as_slice(), &[0.0, 1.0]);
}

#[test]
fn randomization_test_matches_enumeration() {
    ok(oracle::randomization_small_trials());
}

#[test]
fn gittins_table_text_roundtrip() {
    let table = GittinsTable::compute(0.9, 6, 1e-6).unwrap();
    let back = GittinsTable::from_text(&table.to_text()).unwrap();
    assert_eq!(table, back);
}

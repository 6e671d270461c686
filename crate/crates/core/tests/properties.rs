//! Property suites over fuzzed states.

use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rar_sim::allocation::{apply_control_floor, ArmState};
use rar_sim::rng::stream;
use rar_sim::{AllocationProbabilities, AllocationRuleSpec, GittinsTable, RuleKind};

const MAX_N: u32 = 40;

fn table() -> Arc<GittinsTable> {
    static TABLE: OnceLock<Arc<GittinsTable>> = OnceLock::new();
    TABLE
        .get_or_init(|| Arc::new(GittinsTable::compute(0.95, MAX_N + 6, 1e-6).unwrap()))
        .clone()
}

fn rule(kind: RuleKind) -> AllocationRuleSpec {
    match kind {
        RuleKind::Ts => AllocationRuleSpec::thompson(500),
        RuleKind::Flgi => AllocationRuleSpec::flgi(table(), 20),
        RuleKind::Cflgi => AllocationRuleSpec::cflgi(table(), 20, None),
        k => AllocationRuleSpec::new(k),
    }
}

fn arm_states(max_arms: usize) -> impl Strategy<Value = Vec<ArmState>> {
    prop::collection::vec((0..=MAX_N / 2, 0..=MAX_N / 2), 2..=max_arms)
        .prop_map(|v| v.into_iter().map(|(s, f)| ArmState::new(s, f)).collect())
}

fn assert_simplex(p: &AllocationProbabilities, arms: usize) -> Result<(), TestCaseError> {
    let v = p.as_slice();
    prop_assert_eq!(v.len(), arms);
    prop_assert!(
        v.iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= 1.0),
        "{:?}",
        v
    );
    prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{:?}", v);
    Ok(())
}

const KINDS: [RuleKind; 5] = [
    RuleKind::Cr,
    RuleKind::Ts,
    RuleKind::Rsihr,
    RuleKind::Flgi,
    RuleKind::Cflgi,
];

proptest! {
    // 2000 cases x 5 rules = 10^4 rule outputs
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn every_rule_returns_a_distribution(states in arm_states(4), stage in 1usize..8, seed in any::<u64>()) {
        for kind in KINDS {
            let p = rule(kind)
                .block_probabilities(&states, stage, 5, 200, &mut stream(seed, 0))
                .unwrap();
            assert_simplex(&p, states.len())?;
        }
    }

    #[test]
    fn control_floor_is_never_violated(states in arm_states(5), stage in 2usize..8, seed in any::<u64>(), floor in 0.0f64..1.0) {
        let spec = AllocationRuleSpec::cflgi(table(), 20, Some(floor));
        let p = spec.block_probabilities(&states, stage, 5, 200, &mut stream(seed, 1)).unwrap();
        assert_simplex(&p, states.len())?;
        prop_assert!(p.control() >= floor - 1e-12, "{} < {}", p.control(), floor);

        let default = rule(RuleKind::Cflgi).block_probabilities(&states, stage, 5, 200, &mut stream(seed, 2)).unwrap();
        prop_assert!(default.control() >= 1.0 / states.len() as f64 - 1e-12);
    }

    #[test]
    fn floor_keeps_experimental_proportions(weights in prop::collection::vec(0.01f64..1.0, 2..6), floor in 0.0f64..1.0) {
        let p = AllocationProbabilities::from_weights(weights).unwrap();
        let q = apply_control_floor(&p, floor).unwrap();
        assert_simplex(&q, p.arms())?;
        prop_assert!(q.control() >= floor.min(1.0) - 1e-12);
        if p.control() < floor {
            let (a, b) = (p.as_slice(), q.as_slice());
            for k in 2..a.len() {
                prop_assert!((a[1] * b[k] - a[k] * b[1]).abs() < 1e-12);
            }
        } else {
            prop_assert_eq!(p.as_slice(), q.as_slice());
        }
    }
}

#[test]
fn gittins_is_monotone_over_the_whole_grid() {
    let t = table();
    let limit = t.max_n() + 2;
    for a in 1..limit {
        for b in 1..=(limit - a) {
            let v = t.index(a, b).unwrap();
            assert!(
                v > a as f64 / (a + b) as f64 - 1e-9,
                "index below the mean at ({a}, {b})"
            );
            assert!(v < 1.0);
            if t.contains(a + 1, b) {
                assert!(
                    t.index(a + 1, b).unwrap() > v,
                    "not increasing in a at ({a}, {b})"
                );
            }
            if t.contains(a, b + 1) {
                assert!(
                    t.index(a, b + 1).unwrap() < v,
                    "not decreasing in b at ({a}, {b})"
                );
            }
        }
    }
}

#[test]
fn gittins_increases_with_discount() {
    let low = GittinsTable::compute(0.8, 10, 1e-6).unwrap();
    let high = table();
    for (a, b, v) in low.iter() {
        assert!(high.index(a, b).unwrap() > v);
    }
}

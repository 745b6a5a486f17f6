use num_traits::One;
use proptest::prelude::*;

use qif_core::dist::Rational;
use qif_core::lang::{parse, pretty_print};
use qif_core::leakage::{program_leakage, program_leakage_by_traces};
use qif_core::oracle::{compare_with_pks, oracle_enumerate};
use qif_core::pks::{build_pks, Pks};
use qif_core::sched::{priority_scheduler, uniform_scheduler, SchedulerPolicy};
use qif_core::SecretDist;

fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![Just("S".to_string()), Just("O".to_string()), (0u64..6).prop_map(|n| n.to_string())];
    leaf.prop_recursive(2, 6, 2, |inner| {
        (inner.clone(), prop::sample::select(vec!["+", "-", "&", "|", "/", "mod", "=", "<"]), inner).prop_map(
            |(a, op, b)| match op {
                // keep divisors non-zero
                "/" | "mod" => format!("({a}) {op} ({b} + 1)"),
                _ => format!("({a}) {op} ({b})"),
            },
        )
    })
}

fn stmt() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        4 => expr().prop_map(|e| format!("O := {e};")),
        1 => Just("skip;".to_string()),
    ];
    leaf.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} {b}")),
            (expr(), inner.clone(), inner.clone())
                .prop_map(|(g, a, b)| format!("if ({g}) then {{ {a} }} else {{ {b} }}")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("{{ {a} }} || {{ {b} }}")),
        ]
    })
}

fn program() -> impl Strategy<Value = String> {
    // loops stay outside parallel composition to keep interleavings small
    (1u32..3, 0u64..3, stmt(), any::<bool>()).prop_map(|(bits, o, body, looping)| {
        let tail = if looping { "while (O < S) do { O := O + 1; }" } else { "" };
        format!("secret S : {bits}; public O := {o}; {body} {tail}")
    })
}

const BUDGET: usize = 64;

fn build(src: &str, policy: &SchedulerPolicy) -> Option<Pks> {
    build_pks(&parse(src).unwrap(), policy, BUDGET).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn printer_round_trips(src in program()) {
        let p = parse(&src).unwrap();
        prop_assert_eq!(parse(&pretty_print(&p)).unwrap(), p);
    }

    #[test]
    fn structure_matches_oracle(src in program(), left_first in any::<bool>()) {
        let policy = if left_first { priority_scheduler(vec![0, 1]) } else { uniform_scheduler() };
        let prog = parse(&src).unwrap();
        let prior = SecretDist::uniform(prog.domain.values()).unwrap();
        let pks = build_pks(&prog, &policy, BUDGET);
        let runs = oracle_enumerate(&prog, &policy, &prior, BUDGET);
        // both sides agree on whether the program fits the budget or fails
        prop_assert_eq!(pks.is_ok(), runs.is_ok(), "{}", src);
        if let (Ok(pks), Ok(runs)) = (pks, runs) {
            pks.check().unwrap();
            let total: Rational = pks.traces().iter().map(|t| &t.probability).sum();
            prop_assert!(total.is_one());
            if let Err(diff) = compare_with_pks(&pks, &runs) {
                prop_assert!(false, "{}\n{}", src, diff);
            }
        }
    }

    #[test]
    fn leakage_bounds(src in program()) {
        if let Some(pks) = build(&src, &uniform_scheduler()) {
            let leak = program_leakage(&pks);
            let bound = (pks.prior().len() as f64).log2();
            prop_assert!(leak >= -1e-9 && leak <= bound + 1e-9, "{} {}", src, leak);
            prop_assert!((leak - program_leakage_by_traces(&pks)).abs() < 1e-12);
        }
    }
}

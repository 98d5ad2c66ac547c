mod common;

use common::checks;
use dpsym::lang::{parse_program, print_program, Cmd};
use proptest::prelude::*;

/// Sequences flattened and skips dropped, as printing and parsing do not preserve nesting.
fn normalize(c: &Cmd) -> Vec<Cmd> {
    match c {
        Cmd::Skip => vec![],
        Cmd::Seq(a, b) => {
            let mut v = normalize(a);
            v.extend(normalize(b));
            v
        }
        Cmd::If(g, a, b) => vec![Cmd::if_(g.clone(), Cmd::seq_all(normalize(a)), Cmd::seq_all(normalize(b)))],
        Cmd::For(x, lo, hi, b) => vec![Cmd::for_(x, lo.clone(), hi.clone(), Cmd::seq_all(normalize(b)))],
        c => vec![c.clone()],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_then_parse_is_identity(p in common::printable_program()) {
        let text = print_program(&p);
        let q = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(normalize(&q.body), normalize(&p.body));
        prop_assert_eq!(q.params, p.params);
        prop_assert_eq!(q.queries, p.queries);
        prop_assert_eq!(q.consts, p.consts);
        prop_assert_eq!(q.budget, p.budget);
        prop_assert_eq!(q.output, p.output);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn symbolic_models_replay_concretely(p in common::small_program()) {
        let Some(solver) = common::solver() else { return Ok(()) };
        checks::models_replay(&p, &solver).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn shifted_laplace_ratio_within_coupling_cost(
        mu1 in -5i64..6,
        mu2 in -5i64..6,
        k in -4i64..5,
        inv in prop::sample::select(vec![0.25, 0.5, 1.0, 1.5, 2.0]),
    ) {
        let (ratio, bound) = checks::shifted_ratio(mu1, mu2, k, inv);
        prop_assert!(checks::ratio_within(ratio, bound), "ratio {ratio} bound {bound}");
    }
}

#[test]
fn oracle_mass_is_normalized_on_corpus() {
    checks::corpus_mass_normalized().unwrap();
}

#[test]
fn omega_parts_partition_every_trace() {
    let Some(solver) = common::solver() else { return };
    checks::omega_partitions(&solver).unwrap();
}

#[test]
fn avoiding_couplings_leaves_no_shifts() {
    let Some(solver) = common::solver() else { return };
    let counts = checks::avoc_trace_counts(&solver).unwrap();
    assert_eq!(counts["alg3_buggy"], 16);
}

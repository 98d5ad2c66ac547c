mod common;

use dpsym::corpus::{program, CORPUS};
use dpsym::engine::{parse_point, prove, prove_pointwise, refute, refute_all, EngineOpts, Outcome, Strategy};
use dpsym::lang::Program;
use num_rational::Ratio;

fn opts() -> EngineOpts {
    EngineOpts::default()
}

fn n(name: &str, n: i64) -> Program {
    program(name).with_const("n", n).unwrap()
}

#[test]
fn laplace_with_too_little_noise() {
    let Some(s) = common::solver() else { return };
    let p = program("alg1_buggy");
    let r = prove(&p, &s, &opts());
    assert_eq!(r.verdict, Outcome::Inconclusive);
    let r = refute(&p, &s, &opts(), Strategy::C);
    assert_eq!(r.verdict, Outcome::Refuted);
    assert_eq!(r.traces, 1);
    let cx = &r.counterexamples[0];
    assert_eq!(cx.certificate.as_deref(), Some("2*eps"));
    assert!(cx.confirmation.as_ref().unwrap().confirmed);

    // at twice the budget the same program is fine
    let mut p2 = p.clone();
    p2.budget = Ratio::from_integer(2);
    assert_eq!(prove(&p2, &s, &opts()).verdict, Outcome::Proved);
    let r = refute(&p2, &s, &opts(), Strategy::C);
    assert_eq!(r.verdict, Outcome::Inconclusive);
    assert!(r.counterexamples.is_empty());
}

#[test]
fn laplace_scaled_to_sensitivity() {
    let Some(s) = common::solver() else { return };
    let p = program("alg1_safe");
    let r = prove(&p, &s, &opts());
    assert_eq!(r.verdict, Outcome::Proved);
    let w = &r.proof.unwrap().witness;
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].sample, "rho");
    assert_eq!(refute(&p, &s, &opts(), Strategy::C).verdict, Outcome::Inconclusive);
}

#[test]
fn value_releasing_threshold_up_to_four_queries() {
    let Some(s) = common::solver() else { return };
    for k in 1..=4 {
        let r = prove(&n("alg2_buggy", k), &s, &opts());
        assert_eq!(r.verdict, Outcome::Proved, "n = {k}");
        let w = r.proof.unwrap().witness;
        assert!(w.iter().all(|c| c.expr == "0"), "n = {k}: {w:?}");
        assert_eq!(w.iter().filter(|c| c.sample == "th").count(), 1);
    }
}

#[test]
fn value_releasing_threshold_with_five_queries() {
    let Some(s) = common::solver() else { return };
    let p = program("alg2_buggy");
    assert_eq!(prove(&p, &s, &opts()).verdict, Outcome::Inconclusive);
    let r = refute(&p, &s, &opts(), Strategy::B);
    assert_eq!(r.verdict, Outcome::Refuted);
    let k = r.counterexamples.last().unwrap().confirmation.clone().unwrap();
    assert!(k.confirmed && k.max_ratio > std::f64::consts::E);
}

#[test]
fn noiseless_comparison_is_orthogonal() {
    let Some(s) = common::solver() else { return };
    let r = refute(&program("alg3_buggy"), &s, &opts(), Strategy::A);
    assert_eq!(r.verdict, Outcome::Refuted);
    let cx = r.counterexamples.last().unwrap();
    let k = cx.confirmation.as_ref().unwrap();
    assert!(k.confirmed && k.zero_one.is_some());
    let (l, rt) = (&cx.left.queries["q"], &cx.right.queries["q"]);
    // the two query answers move in opposite directions
    assert!((l[0] - rt[0]) * (l[1] - rt[1]) < 0, "{l:?} {rt:?}");

    let r = refute(&n("alg3_buggy", 1), &s, &opts(), Strategy::A);
    assert_eq!(r.verdict, Outcome::Inconclusive);
    assert!(r.counterexamples.is_empty());
}

#[test]
fn index_releasing_threshold_pointwise() {
    let Some(s) = common::solver() else { return };
    let p = program("alg2_safe_top");
    let pt = parse_point("[bot,bot,top,bot,bot]").unwrap();
    let r = prove_pointwise(&p, &s, &opts(), Some(vec![pt.clone()]));
    assert_eq!(r.verdict, Outcome::Proved);
    // the least-ranked coupling leaves four queries unshifted, at eps/4 each
    let w = &r.slices[0].result.witness;
    let labels: Vec<&str> = w.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["zero", "zero", "zero", "zero", "zero", "mean2-mean1"]);

    let fixed = |shifts: &[&str]| EngineOpts { shifts: Some(shifts.iter().map(|s| s.to_string()).collect()), ..opts() };
    let one_at_top = fixed(&["one", "mean2-mean1", "mean2-mean1", "one", "mean2-mean1", "mean2-mean1"]);
    assert_eq!(prove_pointwise(&p, &s, &one_at_top, Some(vec![pt.clone()])).verdict, Outcome::Proved);
    let all_zero = fixed(&["zero"; 6]);
    assert_eq!(prove_pointwise(&p, &s, &all_zero, Some(vec![pt.clone()])).verdict, Outcome::Inconclusive);
    let short = prove_pointwise(&p, &s, &fixed(&["one"]), Some(vec![pt]));
    assert!(short.slices[0].result.reasons.iter().any(|r| r.contains("template has 1 entries")));
}

#[test]
fn noised_release_pointwise_and_whole() {
    let Some(s) = common::solver() else { return };
    let p = program("alg2_safe_noised");
    let r = prove_pointwise(&p, &s, &opts(), None);
    assert_eq!(r.verdict, Outcome::Proved);
    assert_eq!(r.slices.len(), 6);
    assert_eq!(prove(&p, &s, &opts()).verdict, Outcome::Proved);
}

#[test]
fn empty_domain_is_vacuous() {
    let Some(s) = common::solver() else { return };
    let r = prove_pointwise(&program("alg2_safe_top"), &s, &opts(), Some(vec![]));
    assert_eq!(r.verdict, Outcome::Proved);
    assert!(r.vacuous);
}

#[test]
fn proved_programs_have_no_divergence_on_a_grid() {
    let Some(s) = common::solver() else { return };
    let cases = [program("alg1_safe"), n("alg2_buggy", 1), n("alg2_safe_noised", 1)];
    for p in cases {
        assert_eq!(prove(&p, &s, &opts()).verdict, Outcome::Proved, "{}", p.name);
        let d = common::checks::grid_divergence(&p);
        assert!(d <= 1e-6, "{}: {d}", p.name);
    }
}

#[test]
fn no_program_is_both_proved_and_refuted() {
    let Some(s) = common::solver() else { return };
    for (name, _) in CORPUS {
        let p = program(name);
        let proved = prove(&p, &s, &opts()).verdict == Outcome::Proved
            || prove_pointwise(&p, &s, &opts(), None).verdict == Outcome::Proved;
        let refuted = refute_all(&p, &s, &opts());
        assert!(!(proved && refuted.verdict == Outcome::Refuted), "{name}");
        if refuted.verdict == Outcome::Refuted {
            assert!(refuted.counterexamples.iter().any(|c| c.confirmation.as_ref().is_some_and(|k| k.confirmed && k.divergence > 0.0)));
        }
    }
}

#![allow(dead_code)]

use dpsym::lang::{BinOp, Cmd, Expr, Param, ParamType, Program, QueryDecl};
use dpsym::solver::Solver;
use num_rational::Ratio;
use proptest::prelude::*;

/// The solver, or `None` when it is not installed.
pub fn solver() -> Option<Solver> {
    match Solver::locate(None) {
        Ok(s) => Some(s),
        Err(e) => {
            eprintln!("skipping: {e}");
            None
        }
    }
}

const VARS: [&str; 3] = ["x", "y", "o"];

fn deterministic_leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0i64..4).prop_map(Expr::IntLit),
        Just(Expr::var("t")),
        Just(Expr::Query { name: "q".into(), index: None, db: "d".into() }),
    ]
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![deterministic_leaf(), prop::sample::select(VARS.to_vec()).prop_map(Expr::var)]
}

/// Linear integer expressions over the program variables, the parameter and the query.
pub fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec![BinOp::Add, BinOp::Sub]))
                .prop_map(|(a, b, op)| Expr::bin(op, a, b)),
            (inner, 1i64..3).prop_map(|(a, k)| Expr::bin(BinOp::Mul, Expr::IntLit(k), a)),
        ]
    })
}

fn mean() -> impl Strategy<Value = Expr> {
    (deterministic_leaf(), 0i64..3).prop_map(|(e, k)| if k == 0 { e } else { Expr::bin(BinOp::Add, e, Expr::IntLit(k)) })
}

fn scale() -> impl Strategy<Value = Expr> {
    prop_oneof![
        Just(Expr::var("eps")),
        Just(Expr::bin(BinOp::Div, Expr::var("eps"), Expr::IntLit(2))),
    ]
}

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(VARS.to_vec()).prop_map(String::from)
}

/// Straight-line and branching commands; loops and arrays are left to the corpus.
pub fn cmd() -> impl Strategy<Value = Cmd> {
    let atom = prop_oneof![
        (var(), expr()).prop_map(|(x, e)| Cmd::Assign(x, e)),
        (var(), mean(), scale()).prop_map(|(x, m, s)| Cmd::sample(&x, m, s)),
        Just(Cmd::Skip),
    ];
    atom.prop_recursive(3, 10, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Cmd::seq_all),
            (expr(), inner.clone(), inner).prop_map(|(g, a, b)| Cmd::if_(g, a, b)),
        ]
    })
}

fn skeleton(body: Cmd) -> Program {
    let init = VARS.iter().map(|v| Cmd::assign(v, Expr::IntLit(0))).collect::<Vec<_>>();
    let mut all = init;
    all.push(body);
    Program {
        name: "random".into(),
        consts: vec![],
        params: vec![Param { name: "d".into(), ty: ParamType::Db }, Param { name: "t".into(), ty: ParamType::Int }],
        queries: vec![QueryDecl { name: "q".into(), len: None, sensitivity: 1 }],
        requires: vec![],
        ensures: vec![],
        budget: Ratio::from_integer(1),
        body: Cmd::seq_all(all),
        output: "o".into(),
    }
}

/// Programs with at most three branchings and two samplings.
pub fn small_program() -> impl Strategy<Value = Program> {
    cmd().prop_filter("at most 3 branchings and 2 samplings", |c| c.count_ifs() <= 3 && c.count_samples() <= 2).prop_map(skeleton)
}

/// Programs that also use constants, arrays and loops, for printing and parsing.
pub fn printable_program() -> impl Strategy<Value = Program> {
    (small_program(), 1i64..5, 0i64..3).prop_map(|(mut p, n, fill)| {
        p.consts.push(("n".into(), n));
        let arr = Cmd::seq_all(vec![
            Cmd::ArrInit("a".into(), Expr::var("n"), Expr::IntLit(fill)),
            Cmd::for_("i", Expr::IntLit(1), Expr::var("n"), Cmd::ArrAssign("a".into(), Expr::var("i"), Expr::var("x"))),
        ]);
        p.body = Cmd::seq(p.body, arr);
        p
    })
}

pub mod checks {
    use std::collections::BTreeMap;

    use dpsym::concrete::{final_traces, Inputs};
    use dpsym::constraints::{omega_decompose, Origin, Registry};
    use dpsym::corpus::{program, CORPUS};
    use dpsym::lang::{print_program, ParamType, Program, Side};
    use dpsym::oracle::{denote_output_dist, eps_divergence, max_samples, shift_ratio_bound, shifted_max_ratio, DiscreteLaplace, OracleOpts, DEFAULT_TAIL};
    use dpsym::solver::{Solver, Status};
    use dpsym::symexec::{budget_units, explore, unary_finals, BudgetRule, Policy, RelCtx, SymCtx};

    /// A model of every satisfiable final symbolic trace, run concretely, follows the same
    /// branches and samples as often.
    pub fn models_replay(p: &Program, solver: &Solver) -> Result<(), String> {
        let mut reg = Registry::new();
        let finals = unary_finals(&mut reg, p, Side::Left, &SymCtx::default(), solver, 100_000)
            .map_err(|e| format!("{e}\n{}", print_program(p)))?;
        if finals.is_empty() {
            return Err(format!("no final trace\n{}", print_program(p)));
        }
        for f in &finals {
            let v = solver.check_sat(&reg, &f.cstrs, true);
            if v.status != Status::Sat {
                continue;
            }
            let m = v.model.unwrap_or_default();
            let val = |name: &str| reg.by_name(name).and_then(|s| m.get(s)).unwrap_or(0);
            let inputs = Inputs::default().with_int("t", val("t1")).with_query("q", vec![val("qd1")]);
            let mut creg = Registry::new();
            let concrete = final_traces(&mut creg, p, &inputs, Side::Left).map_err(|e| format!("{e}\n{}", print_program(p)))?;
            let want = f.prob_history();
            if !concrete.iter().any(|c| c.history == want && c.ptrace.samples() == f.ptrace.samples()) {
                return Err(format!("history {want:?} not replayed on {inputs:?}\n{}", print_program(p)));
            }
        }
        Ok(())
    }

    /// Largest pointwise ratio between two discrete Laplace laws one shifted by `k`, and its bound.
    pub fn shifted_ratio(mu1: i64, mu2: i64, k: i64, inv: f64) -> (f64, f64) {
        let d1 = DiscreteLaplace::new(mu1, inv).unwrap();
        let d2 = DiscreteLaplace::new(mu2, inv).unwrap();
        (shifted_max_ratio(d1, d2, k, DEFAULT_TAIL), shift_ratio_bound(mu1, mu2, k, inv))
    }

    pub fn ratio_within(ratio: f64, bound: f64) -> bool {
        // relative slack: the bound reaches e^18, far beyond absolute f64 resolution
        ratio <= bound * (1.0 + 1e-9) + 1e-9
    }

    fn zero_params(p: &Program, mut i: Inputs) -> Inputs {
        for prm in &p.params {
            if prm.ty == ParamType::Int {
                i.ints.insert(prm.name.clone(), 0);
            }
        }
        i
    }

    pub fn corpus_inputs(p: &Program) -> Inputs {
        let mut i = Inputs::default();
        for q in &p.queries {
            let n = p.query_len(q).unwrap() as usize;
            i.queries.insert(q.name.clone(), (0..n as i64).map(|k| k % 2).collect());
        }
        zero_params(p, i)
    }

    /// Total output mass of every corpus program must lie in `[1 - k*tail, 1]`.
    pub fn corpus_mass_normalized() -> Result<(), String> {
        let opts = OracleOpts::new(1.0);
        for (name, _) in CORPUS {
            let p = program(name);
            let inputs = corpus_inputs(&p);
            let d = denote_output_dist(&p, &inputs, &opts).map_err(|e| e.to_string())?;
            let k = max_samples(&p, &inputs).map_err(|e| e.to_string())? as f64;
            let w = d.weight();
            if !(w >= 1.0 - k * opts.tail && w <= 1.0 + 1e-12) {
                return Err(format!("{name}: total mass {w}"));
            }
        }
        Ok(())
    }

    /// Adjacent query tables with cells in `0..=2`, every integer parameter at 0.
    pub fn grid(p: &Program) -> Vec<(Inputs, Inputs)> {
        let q = &p.queries[0];
        let len = p.query_len(q).unwrap() as u32;
        let r = q.sensitivity;
        let tables: Vec<Vec<i64>> = (0..3i64.pow(len)).map(|m| (0..len).map(|i| m / 3i64.pow(i) % 3).collect()).collect();
        let mut out = Vec::new();
        for a in &tables {
            for b in &tables {
                if a.iter().zip(b).all(|(x, y)| (x - y).abs() <= r) {
                    let mk = |t: &Vec<i64>| zero_params(p, Inputs::default().with_query(&q.name, t.clone()));
                    out.push((mk(a), mk(b)));
                }
            }
        }
        out
    }

    /// Largest ε-divergence over the grid, at the program's own budget with ε = 1.
    pub fn grid_divergence(p: &Program) -> f64 {
        let o = OracleOpts::new(1.0);
        let eps = *p.budget.numer() as f64 / *p.budget.denom() as f64;
        let mut worst = 0.0f64;
        for (a, b) in grid(p) {
            let (m1, m2) = (denote_output_dist(p, &a, &o).unwrap(), denote_output_dist(p, &b, &o).unwrap());
            worst = worst.max(eps_divergence(&m1, &m2, eps));
        }
        worst
    }

    fn rel_ctx(p: &Program, policy: Policy) -> RelCtx {
        RelCtx { sym: SymCtx::default(), policy, rule: BudgetRule::Lemma, units: budget_units(p), max_configs: 200_000 }
    }

    /// Every explored corpus trace splits into left, right and relational parts with shifts
    /// only in the relational part.
    pub fn omega_partitions(solver: &Solver) -> Result<(), String> {
        for (name, _) in CORPUS {
            let p = program(name);
            for policy in [Policy::LapGen, Policy::Avoc] {
                let mut reg = Registry::new();
                let x = explore(&mut reg, &p, &rel_ctx(&p, policy), solver).map_err(|e| e.to_string())?;
                for c in x.worlds.iter().flat_map(|w| &w.configs) {
                    let om = omega_decompose(&c.cstrs);
                    if om.omega1.len() + om.omega2.len() + om.relational.len() != c.cstrs.len() {
                        return Err(format!("{name}: parts do not cover the trace"));
                    }
                    for (part, side) in [(&om.omega1, Side::Left), (&om.omega2, Side::Right)] {
                        for s in part.symbols() {
                            if s.side != side || s.origin == Origin::Shift {
                                return Err(format!("{name}: {} misplaced", reg.name(s)));
                            }
                        }
                    }
                    if om.k_vec.iter().any(|k| k.origin != Origin::Shift) {
                        return Err(format!("{name}: non-shift symbol among shifts"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Trace counts per corpus program when no sampling is coupled; fails if any trace has a shift.
    pub fn avoc_trace_counts(solver: &Solver) -> Result<BTreeMap<&'static str, usize>, String> {
        let mut counts = BTreeMap::new();
        for (name, _) in CORPUS {
            let p = program(name);
            let mut reg = Registry::new();
            let x = explore(&mut reg, &p, &rel_ctx(&p, Policy::Avoc), solver).map_err(|e| e.to_string())?;
            let mut n = 0;
            for c in x.worlds.iter().flat_map(|w| &w.configs) {
                if !omega_decompose(&c.cstrs).k_vec.is_empty() {
                    return Err(format!("{name}: shift under the avoiding policy"));
                }
                n += 1;
            }
            counts.insert(*name, n);
        }
        Ok(counts)
    }
}

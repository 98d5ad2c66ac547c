use std::collections::BTreeMap;
use std::time::Instant;

use num_rational::Ratio;

use super::prove::run_explore;
use super::{fix_inputs, inputs_from, named_model, output_identifies_trace, Counterexample, EngineOpts, Outcome, Report};
use crate::concrete::Inputs;
use crate::constraints::{
    omega_decompose, CExpr, Constraint, ConstraintSet, Origin, Registry, Role, Substitution, SymInt,
};
use crate::lang::{Program, Side};
use crate::oracle::{check_adjacent, confirm_counterexample, Confirmation};
use crate::solver::{Solver, Status, Validity};
use crate::symexec::{trace_json, translate, Exploration, InputSyms, Policy, SRConfig, SR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    A,
    B,
    C,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C",
        }
    }
}

fn start(command: &str, p: &Program, solver: &Solver) -> (Instant, crate::solver::SolverStats, Report) {
    (Instant::now(), solver.stats(), Report::new(command, p))
}

/// Only input symbols, by name.
fn input_model(reg: &Registry, sigma: &Substitution) -> BTreeMap<String, serde_json::Value> {
    let mut s = sigma.clone();
    s.ints.retain(|id, _| reg.get(*id).is_some_and(|i| i.sym.origin == Origin::Input));
    s.arrays.retain(|id, _| reg.get(*id).is_some_and(|i| i.sym.origin == Origin::Input));
    named_model(reg, &s)
}

fn post_of(reg: &mut Registry, p: &Program, c: &SRConfig, defs: &mut ConstraintSet) -> SR<Constraint> {
    let (mut m1, mut m2) = (c.mem1.clone(), c.mem2.clone());
    let mut logic = BTreeMap::new();
    let cs = p
        .postcondition()
        .iter()
        .map(|a| translate(reg, a, &mut m1, &mut m2, &mut logic, defs))
        .collect::<SR<Vec<_>>>()?;
    Ok(Constraint::and(cs))
}

fn all_configs(x: &Exploration) -> impl Iterator<Item = &SRConfig> {
    x.worlds.iter().flat_map(|w| w.configs.iter())
}

fn symbols_where(s: &ConstraintSet, keep: impl Fn(SymInt) -> bool) -> Vec<SymInt> {
    s.symbols().into_iter().filter(|x| keep(*x)).collect()
}

/// Caches oracle runs by input pair.
struct OracleCache<'a> {
    p: &'a Program,
    opts: &'a EngineOpts,
    seen: BTreeMap<String, Result<Confirmation, String>>,
}

impl OracleCache<'_> {
    fn confirm(&mut self, l: &Inputs, r: &Inputs) -> Result<Confirmation, String> {
        let key = serde_json::to_string(&(l, r)).expect("inputs serialize");
        self.seen
            .entry(key)
            .or_insert_with(|| confirm_counterexample(self.p, l, r, &self.opts.oracle()).map_err(|e| e.to_string()))
            .clone()
    }
}

fn counterexample(
    strategy: Strategy,
    reg: &Registry,
    c: &SRConfig,
    sigma: &Substitution,
    left: Inputs,
    right: Inputs,
    oracle: Result<Confirmation, String>,
) -> Counterexample {
    let (confirmation, oracle_error) = match oracle {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e)),
    };
    Counterexample {
        strategy: strategy.name().to_string(),
        trace: trace_json(reg, c),
        sigma: input_model(reg, sigma),
        left,
        right,
        certificate: None,
        confirmation,
        oracle_error,
    }
}

fn explored(
    rep: &mut Report,
    reg: &mut Registry,
    p: &Program,
    solver: &Solver,
    opts: &EngineOpts,
    policy: Policy,
) -> Option<Exploration> {
    match run_explore(reg, p, solver, opts, policy, false) {
        Ok(x) => {
            rep.worlds = x.worlds.len();
            rep.traces = x.worlds.iter().map(|w| w.configs.len()).sum();
            Some(x)
        }
        Err(e) => {
            rep.notes.push(e.to_string());
            None
        }
    }
}

/// Keep every query cell in `[0, r]`.
fn boxed(syms: &InputSyms, p: &Program) -> ConstraintSet {
    let mut s = ConstraintSet::new();
    for (q, cells) in &syms.queries {
        let r = p.query(q).map(|d| d.sensitivity).unwrap_or(1);
        for (a, b) in cells {
            for x in [a, b] {
                s.push(Constraint::le(CExpr::Lit(0), CExpr::sym(*x)), Role::Pre);
                s.push(Constraint::le(CExpr::sym(*x), CExpr::Lit(r)), Role::Pre);
            }
        }
    }
    s
}

/// Strategy A: a left trace whose right counterpart is infeasible for every right sample,
/// so one output has mass on one side only.
pub fn refute_a(p: &Program, solver: &Solver, opts: &EngineOpts) -> Report {
    let (t0, before, mut rep) = start("refute A", p, solver);
    if !opts.assume_identifiable && !output_identifies_trace(p) {
        rep.notes.push("the output may not identify the trace; strategy A skipped".into());
        return rep.finish(t0, solver, before);
    }
    let mut reg = Registry::new();
    let Some(x) = explored(&mut rep, &mut reg, p, solver, opts, Policy::Avoc) else {
        return rep.finish(t0, solver, before);
    };
    let mut cache = OracleCache { p, opts, seen: BTreeMap::new() };
    let mut orthogonal = 0;
    for c in all_configs(&x).filter(|c| c.same_history()) {
        let om = omega_decompose(&c.cstrs);
        let mut hyp = om.omega1.clone();
        hyp.extend(&om.relational);
        hyp.extend(&om.omega2.filter(|e| matches!(e.role, Role::Def(_))));
        let concl: Vec<Constraint> = om.omega2.entries().iter().filter(|e| !matches!(e.role, Role::Def(_))).map(|e| e.c.clone()).collect();
        if concl.is_empty() {
            continue;
        }
        let uni = symbols_where(&c.cstrs, |s| s.side == Side::Right && s.origin != Origin::Input);
        let mut tight = hyp.clone();
        tight.extend(&boxed(&x.inputs, p));
        let sigma = match solver.check_validity(&reg, &tight, &concl, &uni) {
            Validity::Invalid(s) => s,
            _ => match solver.check_validity(&reg, &hyp, &concl, &uni) {
                Validity::Invalid(s) => s,
                Validity::Unknown(r) => {
                    rep.notes.push(format!("solver unknown on a trace: {r}"));
                    continue;
                }
                Validity::Valid => continue,
            },
        };
        orthogonal += 1;
        let left = inputs_from(&sigma, &x.inputs, &reg, false);
        let right = inputs_from(&sigma, &x.inputs, &reg, true);
        let k = cache.confirm(&left, &right);
        let refuted = matches!(&k, Ok(k) if k.confirmed && k.zero_one.is_some());
        rep.counterexamples.push(counterexample(Strategy::A, &reg, c, &sigma, left, right, k));
        if refuted {
            rep.verdict = Outcome::Refuted;
            break;
        }
        rep.verdict = Outcome::Suspected;
    }
    if orthogonal == 0 {
        rep.notes.push("no orthogonal trace".into());
    }
    rep.finish(t0, solver, before)
}

/// Concrete adjacent input pairs to try: sign patterns of the query differences with every
/// other input at zero.
fn candidate_inputs(reg: &Registry, p: &Program, syms: &InputSyms, max_cells: usize) -> Vec<Substitution> {
    let cells: Vec<(SymInt, SymInt, i64)> = syms
        .queries
        .iter()
        .flat_map(|(q, cs)| {
            let r = p.query(q).map(|d| d.sensitivity).unwrap_or(1);
            cs.iter().map(move |(a, b)| (*a, *b, r))
        })
        .collect();
    let n = cells.len();
    let mut patterns: Vec<Vec<bool>> = Vec::new();
    if n <= max_cells {
        for mask in 0..(1u64 << n) {
            patterns.push((0..n).map(|i| mask >> (n - 1 - i) & 1 == 0).collect());
        }
    } else {
        patterns.push(vec![true; n]);
        patterns.push(vec![false; n]);
        for i in 0..n {
            let mut v = vec![true; n];
            v[i] = false;
            patterns.push(v.clone());
            patterns.push(v.iter().map(|b| !b).collect());
        }
    }
    patterns
        .into_iter()
        .map(|pat| {
            let mut s = Substitution::new();
            for ((a, b, r), up) in cells.iter().zip(pat) {
                let d = if up { *r } else { -*r };
                s.set(*a, (-d).max(0));
                s.set(*b, d.max(0));
            }
            for (a, b) in syms.ints.values() {
                s.set(*a, 0);
                s.set(*b, 0);
            }
            for (a, b) in syms.arrays.values() {
                for x in [a, b] {
                    s.set_array(*x, vec![0; reg.array_len(*x).unwrap_or(0).max(0) as usize]);
                }
            }
            s
        })
        .collect()
}

fn exist_syms(s: &ConstraintSet) -> Vec<SymInt> {
    symbols_where(s, |x| matches!(x.origin, Origin::Shift | Origin::Bound))
}

/// Strategy B: on fixed inputs a trace stays synchronised under some shift choice, but no
/// shift choice makes it satisfy the postcondition within the budget.
pub fn refute_b(p: &Program, solver: &Solver, opts: &EngineOpts) -> Report {
    let (t0, before, mut rep) = start("refute B", p, solver);
    let mut reg = Registry::new();
    let Some(x) = explored(&mut rep, &mut reg, p, solver, opts, Policy::LapGen) else {
        return rep.finish(t0, solver, before);
    };
    let mut cands = candidate_inputs(&reg, p, &x.inputs, opts.max_pattern_cells);
    let mut cache = OracleCache { p, opts, seen: BTreeMap::new() };
    let bl = CExpr::Lit(x.budget_units);
    let mut flagged = 0;
    'traces: for c in all_configs(&x).filter(|c| c.same_history()) {
        let om = omega_decompose(&c.cstrs);
        let mut hyp = om.omega1.clone();
        hyp.extend(&om.relational);
        hyp.extend(&om.omega2.filter(|e| matches!(e.role, Role::Def(_))));
        let guards: Vec<Constraint> = om.omega2.entries().iter().filter(|e| !matches!(e.role, Role::Def(_))).map(|e| e.c.clone()).collect();
        let post = match post_of(&mut reg, p, c, &mut hyp) {
            Ok(q) => q,
            Err(e) => {
                rep.notes.push(format!("postcondition: {e}"));
                continue;
            }
        };
        let exist = exist_syms(&c.cstrs);
        let mut goal_b = guards.clone();
        goal_b.push(post);
        goal_b.push(Constraint::le(CExpr::sym(c.budget), bl.clone()));
        let mut tries = cands.clone();
        if let Some(m) = solver.check_sat(&reg, &hyp, true).model {
            tries.push(m);
        }
        for sigma in tries {
            let left = inputs_from(&sigma, &x.inputs, &reg, false);
            let right = inputs_from(&sigma, &x.inputs, &reg, true);
            if check_adjacent(p, &left, &right).is_err() {
                continue;
            }
            let mut h = hyp.clone();
            h.extend(&fix_inputs(&sigma, &x.inputs));
            if solver.exists_forall(&reg, &h, &goal_b, &exist).status != Status::Unsat {
                continue;
            }
            if solver.exists_forall(&reg, &h, &guards, &exist).status != Status::Sat {
                continue;
            }
            flagged += 1;
            let k = cache.confirm(&left, &right);
            let confirmed = matches!(&k, Ok(k) if k.confirmed);
            rep.counterexamples.push(counterexample(Strategy::B, &reg, c, &sigma, left, right, k));
            if confirmed {
                rep.verdict = Outcome::Refuted;
                break 'traces;
            }
            rep.verdict = Outcome::Suspected;
            // a flagged pair that the oracle cannot confirm is not retried on other traces
            cands.retain(|s| s != &sigma);
            continue 'traces;
        }
    }
    if flagged == 0 {
        rep.notes.push("no trace flagged".into());
    }
    rep.finish(t0, solver, before)
}

/// Strategy C: on fixed inputs equal outputs are reachable only at a cost above the budget.
/// The certificate is the smallest sufficient budget.
pub fn refute_c(p: &Program, solver: &Solver, opts: &EngineOpts) -> Report {
    let (t0, before, mut rep) = start("refute C", p, solver);
    let mut reg = Registry::new();
    let Some(x) = explored(&mut rep, &mut reg, p, solver, opts, Policy::LapGen) else {
        return rep.finish(t0, solver, before);
    };
    let cands = candidate_inputs(&reg, p, &x.inputs, 1);
    let mut cache = OracleCache { p, opts, seen: BTreeMap::new() };
    let hi = 64 * x.budget_units.max(x.units);
    let mut flagged = 0;
    'traces: for c in all_configs(&x) {
        let mut hyp = c.cstrs.clone();
        let post = match post_of(&mut reg, p, c, &mut hyp) {
            Ok(q) => q,
            Err(e) => {
                rep.notes.push(format!("postcondition: {e}"));
                continue;
            }
        };
        let exist = exist_syms(&c.cstrs);
        for sigma in &cands {
            let left = inputs_from(sigma, &x.inputs, &reg, false);
            let right = inputs_from(sigma, &x.inputs, &reg, true);
            if check_adjacent(p, &left, &right).is_err() {
                continue;
            }
            let mut h = hyp.clone();
            h.extend(&fix_inputs(sigma, &x.inputs));
            let feasible = |theta: i64| {
                let goal = [post.clone(), Constraint::le(CExpr::sym(c.budget), CExpr::Lit(theta))];
                solver.exists_forall(&reg, &h, &goal, &exist).status
            };
            if feasible(x.budget_units) != Status::Unsat {
                continue;
            }
            let Some(min) = solver.minimize(x.budget_units + 1, hi, feasible) else {
                continue;
            };
            flagged += 1;
            let k = cache.confirm(&left, &right);
            let confirmed = matches!(&k, Ok(k) if k.confirmed);
            let mut cx = counterexample(Strategy::C, &reg, c, sigma, left, right, k);
            cx.certificate = Some(crate::lang::pretty::print_budget(&Ratio::new(min, x.units)));
            rep.counterexamples.push(cx);
            if confirmed {
                rep.verdict = Outcome::Refuted;
                break 'traces;
            }
            rep.verdict = Outcome::Suspected;
            continue 'traces;
        }
    }
    if flagged == 0 {
        rep.notes.push("no trace needs more than the budget".into());
    }
    rep.finish(t0, solver, before)
}

pub fn refute(p: &Program, solver: &Solver, opts: &EngineOpts, s: Strategy) -> Report {
    match s {
        Strategy::A => refute_a(p, solver, opts),
        Strategy::B => refute_b(p, solver, opts),
        Strategy::C => refute_c(p, solver, opts),
    }
}

/// Strategies A, B and C in turn, stopping at the first refutation.
pub fn refute_all(p: &Program, solver: &Solver, opts: &EngineOpts) -> Report {
    let t0 = Instant::now();
    let before = solver.stats();
    let mut best: Option<Report> = None;
    let mut notes = Vec::new();
    for s in [Strategy::A, Strategy::B, Strategy::C] {
        let r = refute(p, solver, opts, s);
        notes.extend(r.notes.iter().map(|n| format!("{}: {n}", s.name())));
        let rank = |o: Outcome| match o {
            Outcome::Refuted => 3,
            Outcome::Suspected => 2,
            Outcome::Proved => 1,
            Outcome::Inconclusive => 0,
        };
        let done = r.verdict == Outcome::Refuted;
        if best.as_ref().is_none_or(|b| rank(r.verdict) > rank(b.verdict)) {
            best = Some(r);
        }
        if done {
            break;
        }
    }
    let mut rep = best.expect("three strategies ran");
    rep.command = "refute all".into();
    rep.notes = notes;
    rep.finish(t0, solver, before)
}

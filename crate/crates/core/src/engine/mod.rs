//! The prove and refute pipelines and their reports.

mod prove;
mod refute;

pub use prove::*;
pub use refute::*;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::concrete::Inputs;
use crate::constraints::{CExpr, Constraint, ConstraintSet, Registry, Role, Substitution, SymInt};
use crate::lang::{Cmd, Expr, Program};
use crate::oracle::Confirmation;
use crate::solver::{HoleChoice, Solver};
use crate::symexec::{BudgetRule, InputSyms, SymCtx, DEFAULT_UNROLL};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit codes of the command-line tool.
pub mod exit {
    pub const PROVED: i32 = 0;
    pub const REFUTED: i32 = 10;
    pub const SUSPECTED: i32 = 11;
    pub const INCONCLUSIVE: i32 = 20;
    pub const USAGE: i32 = 64;
    pub const FILE: i32 = 66;
    pub const NO_SOLVER: i32 = 69;
}

#[derive(Debug, Clone)]
pub struct EngineOpts {
    pub unroll: usize,
    pub rule: BudgetRule,
    /// Fork worlds over both policies at every sampling when proving.
    pub mixed_policy: bool,
    pub assume_identifiable: bool,
    /// Concrete eps used by the oracle.
    pub eps: f64,
    pub tail: f64,
    pub max_configs: usize,
    /// Sign patterns are enumerated exhaustively up to this many query cells.
    pub max_pattern_cells: usize,
    /// Fix each shift, in witness order, to the named candidate or an integer instead of searching.
    pub shifts: Option<Vec<String>>,
}

impl Default for EngineOpts {
    fn default() -> Self {
        EngineOpts {
            unroll: DEFAULT_UNROLL,
            rule: BudgetRule::Lemma,
            mixed_policy: false,
            assume_identifiable: false,
            eps: 1.0,
            tail: crate::oracle::DEFAULT_TAIL,
            max_configs: 200_000,
            max_pattern_cells: 6,
            shifts: None,
        }
    }
}

impl EngineOpts {
    pub fn sym_ctx(&self, strict: bool) -> SymCtx {
        SymCtx { unroll: self.unroll, strict_loops: strict, samples_as_ints: false }
    }

    pub fn oracle(&self) -> crate::oracle::OracleOpts {
        crate::oracle::OracleOpts { tail: self.tail, ..crate::oracle::OracleOpts::new(self.eps) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Proved,
    Refuted,
    Suspected,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Proved => exit::PROVED,
            Outcome::Refuted => exit::REFUTED,
            Outcome::Suspected => exit::SUSPECTED,
            Outcome::Inconclusive => exit::INCONCLUSIVE,
        }
    }
}

/// A chosen coupling shift.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftChoice {
    pub shift: String,
    /// Sampled variable the shift couples.
    pub sample: String,
    pub label: String,
    pub expr: String,
}

/// Outcome of one proof obligation set, for a whole program or one output slice.
#[derive(Debug, Clone, Serialize)]
pub struct ProofResult {
    pub proved: bool,
    pub world: Option<usize>,
    pub witness: Vec<ShiftChoice>,
    /// Trace whose obligation could not be discharged, with its counter-model.
    pub failing: Option<String>,
    pub counter_model: Option<BTreeMap<String, serde_json::Value>>,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slice {
    pub point: String,
    pub result: ProofResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub strategy: String,
    pub trace: serde_json::Value,
    pub sigma: BTreeMap<String, serde_json::Value>,
    pub left: Inputs,
    pub right: Inputs,
    /// Smallest budget, in eps, under which equal outputs are reachable.
    pub certificate: Option<String>,
    pub confirmation: Option<Confirmation>,
    pub oracle_error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub total_ms: u128,
    pub solver_ms: u128,
    pub solver_queries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub program: String,
    pub budget: String,
    pub verdict: Outcome,
    pub worlds: usize,
    pub traces: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proof: Option<ProofResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<Slice>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub vacuous: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub counterexamples: Vec<Counterexample>,
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl Report {
    pub(crate) fn new(command: &str, p: &Program) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            program: p.name.clone(),
            budget: crate::lang::pretty::print_budget(&p.budget).to_string(),
            verdict: Outcome::Inconclusive,
            worlds: 0,
            traces: 0,
            proof: None,
            slices: vec![],
            vacuous: false,
            counterexamples: vec![],
            notes: vec![],
            timing: Timing::default(),
        }
    }

    pub(crate) fn finish(mut self, start: Instant, solver: &Solver, before: crate::solver::SolverStats) -> Report {
        let s = solver.stats();
        self.timing = Timing {
            total_ms: start.elapsed().as_millis(),
            solver_ms: s.millis - before.millis,
            solver_queries: s.queries - before.queries,
        };
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }

    /// JSON without timing, for golden comparisons.
    pub fn to_stable_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        v
    }

    /// A short human-readable summary.
    pub fn summary(&self) -> String {
        let verdict = serde_json::to_value(self.verdict).expect("verdict serializes");
        let mut out = format!("{} {}: {}", self.command, self.program, verdict.as_str().unwrap_or_default());
        if let Some(p) = &self.proof {
            if p.proved {
                let w: Vec<String> = p.witness.iter().map(|c| format!("{}({})={}", c.shift, c.sample, c.expr)).collect();
                out.push_str(&format!("\n  witness: {}", w.join(", ")));
            } else if let Some(f) = &p.failing {
                out.push_str(&format!("\n  failing trace: {f}"));
            }
            for r in &p.reasons {
                out.push_str(&format!("\n  {r}"));
            }
        }
        for s in &self.slices {
            let tag = if s.result.proved { "proved" } else { "not proved" };
            out.push_str(&format!("\n  {}: {tag}", s.point));
        }
        for c in &self.counterexamples {
            out.push_str(&format!("\n  strategy {}: left {:?} right {:?}", c.strategy, c.left.queries, c.right.queries));
            if let Some(cert) = &c.certificate {
                out.push_str(&format!(", needs {cert}"));
            }
            if let Some(k) = &c.confirmation {
                out.push_str(&format!(
                    "\n    oracle: confirmed={} divergence={:.3e} max ratio={:.4}",
                    k.confirmed, k.divergence, k.max_ratio
                ));
            }
        }
        for n in &self.notes {
            out.push_str(&format!("\n  note: {n}"));
        }
        out
    }
}

/// Concrete inputs for one run read off a model.
pub fn inputs_from(sigma: &Substitution, syms: &InputSyms, reg: &Registry, right: bool) -> Inputs {
    let pick = |p: &(SymInt, SymInt)| if right { p.1 } else { p.0 };
    let mut inp = Inputs::default();
    for (k, v) in &syms.ints {
        inp.ints.insert(k.clone(), sigma.get(pick(v)).unwrap_or(0));
    }
    for (k, v) in &syms.arrays {
        let s = pick(v);
        let len = reg.array_len(s).unwrap_or(0).max(0) as usize;
        let mut a = sigma.arrays.get(&s.id).cloned().unwrap_or_default();
        a.resize(len, 0);
        inp.arrays.insert(k.clone(), a);
    }
    for (k, cells) in &syms.queries {
        inp.queries.insert(k.clone(), cells.iter().map(|c| sigma.get(pick(c)).unwrap_or(0)).collect());
    }
    inp
}

/// Constraints fixing every input symbol to its value in `sigma`.
pub(crate) fn fix_inputs(sigma: &Substitution, syms: &InputSyms) -> ConstraintSet {
    let mut s = ConstraintSet::new();
    let mut all: Vec<SymInt> = syms.all(crate::lang::Side::Left);
    all.extend(syms.all(crate::lang::Side::Right));
    for x in all {
        let v = match x.sort {
            crate::constraints::Sort::Int => CExpr::Lit(sigma.get(x).unwrap_or(0)),
            crate::constraints::Sort::Array => CExpr::ArrLit(sigma.arrays.get(&x.id).cloned().unwrap_or_default()),
        };
        s.push(Constraint::eq(CExpr::sym(x), v), Role::Pre);
    }
    s
}

fn writes(c: &Cmd, out: &str) -> bool {
    match c {
        Cmd::Assign(x, _) | Cmd::ArrAssign(x, ..) | Cmd::ArrInit(x, ..) => x == out,
        Cmd::Seq(a, b) | Cmd::If(_, a, b) | Cmd::PairCmd(a, b) => writes(a, out) || writes(b, out),
        Cmd::For(_, _, _, b) => writes(b, out),
        _ => false,
    }
}

fn top_write(c: &Cmd, out: &str) -> Option<Expr> {
    match c {
        Cmd::Assign(x, e) | Cmd::ArrAssign(x, _, e) if x == out => Some(e.clone()),
        Cmd::Seq(a, b) => top_write(a, out).or_else(|| top_write(b, out)),
        _ => None,
    }
}

/// Sufficient syntactic check that the output identifies the branches taken: every branching
/// on a value influenced by sampling writes the output in one of its arms, and arms that both
/// write it directly write different expressions.
pub fn output_identifies_trace(p: &Program) -> bool {
    let mut tainted: std::collections::BTreeSet<String> = Default::default();
    loop {
        let before = tainted.len();
        taint(&p.body, false, &mut tainted);
        if tainted.len() == before {
            break;
        }
    }
    check_ifs(&p.body, &p.output, &tainted)
}

fn mentions(e: &Expr, t: &std::collections::BTreeSet<String>) -> bool {
    let mut r = Vec::new();
    e.reads(&mut r);
    r.iter().any(|x| t.contains(x))
}

fn taint(c: &Cmd, under: bool, t: &mut std::collections::BTreeSet<String>) {
    match c {
        Cmd::LapSample { var, .. } => {
            t.insert(var.clone());
        }
        Cmd::Assign(x, e) | Cmd::ArrAssign(x, _, e) => {
            if under || mentions(e, t) {
                t.insert(x.clone());
            }
        }
        Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => {
            taint(a, under, t);
            taint(b, under, t);
        }
        Cmd::If(g, a, b) => {
            let u = under || mentions(g, t);
            taint(a, u, t);
            taint(b, u, t);
        }
        Cmd::For(_, _, _, b) => taint(b, under, t),
        _ => {}
    }
}

fn check_ifs(c: &Cmd, out: &str, t: &std::collections::BTreeSet<String>) -> bool {
    match c {
        Cmd::If(g, a, b) => {
            if mentions(g, t) {
                if !writes(a, out) && !writes(b, out) {
                    return false;
                }
                if let (Some(x), Some(y)) = (top_write(a, out), top_write(b, out)) {
                    if x == y {
                        return false;
                    }
                }
            }
            check_ifs(a, out, t) && check_ifs(b, out, t)
        }
        Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => check_ifs(a, out, t) && check_ifs(b, out, t),
        Cmd::For(_, _, _, b) => check_ifs(b, out, t),
        _ => true,
    }
}

/// Model values keyed by symbol name.
pub fn named_model(reg: &Registry, sigma: &Substitution) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    for (id, v) in &sigma.ints {
        if let Some(info) = reg.get(*id) {
            out.insert(info.name.clone(), serde_json::json!(v));
        }
    }
    for (id, v) in &sigma.arrays {
        if let Some(info) = reg.get(*id) {
            out.insert(info.name.clone(), serde_json::json!(v));
        }
    }
    out
}

pub(crate) fn choices_json(reg: &Registry, sites: &[crate::symexec::CouplingSite], w: &[HoleChoice]) -> Vec<ShiftChoice> {
    w.iter()
        .map(|h| ShiftChoice {
            shift: reg.name(h.sym).to_string(),
            sample: sites.iter().find(|s| s.shift == Some(h.sym)).map(|s| s.var.clone()).unwrap_or_default(),
            label: h.label.clone(),
            expr: h.expr.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::program;

    #[test]
    fn identifiability_on_corpus() {
        for name in ["alg1_buggy", "alg2_buggy", "alg2_safe_top", "alg3_buggy"] {
            assert!(output_identifies_trace(&program(name)), "{name}");
        }
        let p = crate::lang::parse_program(
            "program f\nparam d : db\nquery q sensitivity 1\nbudget eps\noutput o\nbegin\n  o := 0;\n  x :~ lap(q(d), eps);\n  if x then y := 1 else y := 2 end\nend",
        )
        .unwrap();
        assert!(!output_identifies_trace(&p));
    }
}

//! Concrete evaluation with random values kept as symbols: unary and relational stepping,
//! and a worklist driver that runs a set of configurations to completion.

mod rel;

pub use rel::*;

use std::collections::{BTreeMap, VecDeque};

use num_rational::Ratio;
use serde::Serialize;

use crate::constraints::{CExpr, ProbEntry, ProbSym, ProbTrace, RandExpr, Registry, SampleVar, Scale};
use crate::lang::{BinOp, Cmd, Expr, ParamType, Program, Side, EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Value {
    Int(i64),
    Prob(ProbSym),
}

impl Value {
    fn rand(self) -> RandExpr {
        match self {
            Value::Int(n) => RandExpr::Int(n),
            Value::Prob(y) => RandExpr::Prob(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConcreteError {
    #[error("unbound identifier `{0}`")]
    Unbound(String),
    #[error("index {1} out of bounds for `{0}`")]
    OutOfBounds(String, i64),
    #[error("division by zero")]
    DivZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("sampling with a random mean or scale")]
    StuckSampling,
    #[error("sampling scale must be positive")]
    NonPositiveScale,
    #[error("unsupported scale expression: {0}")]
    BadScale(String),
    #[error("`eps` may only appear in a sampling scale")]
    EpsOutsideScale,
    #[error("random value used where an integer is required: {0}")]
    RandomInt(&'static str),
    #[error("pair construct in a unary command")]
    PairInUnary,
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("query `{0}` has no table entry {1}")]
    MissingQuery(String, i64),
    #[error("step limit exceeded")]
    StepLimit,
}

type R<T> = Result<T, ConcreteError>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProbMemory {
    pub vars: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, Vec<Value>>,
}

/// Concrete inputs for one run: integer parameters, array parameters and query tables.
/// Database parameters need no value; queries are read from the tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Inputs {
    pub ints: BTreeMap<String, i64>,
    pub arrays: BTreeMap<String, Vec<i64>>,
    pub queries: BTreeMap<String, Vec<i64>>,
}

impl Inputs {
    pub fn with_query(mut self, q: &str, table: Vec<i64>) -> Inputs {
        self.queries.insert(q.to_string(), table);
        self
    }

    pub fn with_int(mut self, x: &str, v: i64) -> Inputs {
        self.ints.insert(x.to_string(), v);
        self
    }
}

/// Initial memory: constants and parameters.
pub fn initial_memory(p: &Program, inputs: &Inputs) -> R<ProbMemory> {
    let mut m = ProbMemory::default();
    for (c, v) in &p.consts {
        m.vars.insert(c.clone(), Value::Int(*v));
    }
    for prm in &p.params {
        match &prm.ty {
            ParamType::Db => {}
            ParamType::Int => {
                let v = inputs.ints.get(&prm.name).ok_or_else(|| ConcreteError::MissingInput(prm.name.clone()))?;
                m.vars.insert(prm.name.clone(), Value::Int(*v));
            }
            ParamType::Array(_) => {
                let v = inputs.arrays.get(&prm.name).ok_or_else(|| ConcreteError::MissingInput(prm.name.clone()))?;
                m.arrays.insert(prm.name.clone(), v.iter().map(|x| Value::Int(*x)).collect());
            }
        }
    }
    for q in &p.queries {
        let n = p.query_len(q).unwrap_or(0);
        match inputs.queries.get(&q.name) {
            Some(t) if t.len() as i64 >= n => {}
            _ => return Err(ConcreteError::MissingInput(q.name.clone())),
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UConfig {
    pub mem: ProbMemory,
    pub cmd: Cmd,
    pub ptrace: ProbTrace,
    /// Outcome of every branch on a random guard, in order.
    pub history: Vec<bool>,
}

impl UConfig {
    pub fn new(mem: ProbMemory, cmd: Cmd) -> UConfig {
        UConfig { mem, cmd, ptrace: ProbTrace::new(), history: Vec::new() }
    }

    pub fn is_final(&self) -> bool {
        self.cmd.is_skip()
    }
}

/// Everything evaluation needs besides the memory.
pub struct Env<'a> {
    pub queries: &'a BTreeMap<String, Vec<i64>>,
    pub side: Side,
}

pub fn eval_expr_c(
    reg: &mut Registry,
    env: &Env,
    m: &ProbMemory,
    e: &Expr,
    p: &mut ProbTrace,
) -> R<Value> {
    match e {
        Expr::IntLit(n) => Ok(Value::Int(*n)),
        Expr::Var(x) if x == EPS => Err(ConcreteError::EpsOutsideScale),
        Expr::Var(x) => m.vars.get(x).copied().ok_or_else(|| ConcreteError::Unbound(x.clone())),
        Expr::Len(a) => m
            .arrays
            .get(a)
            .map(|v| Value::Int(v.len() as i64))
            .ok_or_else(|| ConcreteError::Unbound(a.clone())),
        Expr::ArrIdx(a, i) => {
            let k = int_of(eval_expr_c(reg, env, m, i, p)?, "array index")?;
            let arr = m.arrays.get(a).ok_or_else(|| ConcreteError::Unbound(a.clone()))?;
            if k < 1 || k as usize > arr.len() {
                return Err(ConcreteError::OutOfBounds(a.clone(), k));
            }
            Ok(arr[k as usize - 1])
        }
        Expr::Query { name, index, .. } => {
            let k = match index {
                Some(i) => int_of(eval_expr_c(reg, env, m, i, p)?, "query index")?,
                None => 1,
            };
            let t = env.queries.get(name).ok_or_else(|| ConcreteError::MissingInput(name.clone()))?;
            if k < 1 || k as usize > t.len() {
                return Err(ConcreteError::MissingQuery(name.clone(), k));
            }
            Ok(Value::Int(t[k as usize - 1]))
        }
        Expr::BinOp(op, a, b) => {
            let va = eval_expr_c(reg, env, m, a, p)?;
            let vb = eval_expr_c(reg, env, m, b, p)?;
            match (va, vb) {
                (Value::Int(x), Value::Int(y)) => {
                    if *op == BinOp::Div && y == 0 {
                        return Err(ConcreteError::DivZero);
                    }
                    op.apply(x, y).map(Value::Int).ok_or(ConcreteError::Overflow)
                }
                _ => {
                    let y = reg.fresh_prob(env.side);
                    p.push(ProbEntry::Eq(y, RandExpr::bin(*op, va.rand(), vb.rand())));
                    Ok(Value::Prob(y))
                }
            }
        }
        Expr::Pair(..) => Err(ConcreteError::PairInUnary),
    }
}

fn int_of(v: Value, what: &'static str) -> R<i64> {
    match v {
        Value::Int(n) => Ok(n),
        Value::Prob(_) => Err(ConcreteError::RandomInt(what)),
    }
}

/// A sampling scale as `a + b*eps` with rational coefficients.
fn linear_scale(m: &ProbMemory, e: &Expr) -> R<(Ratio<i64>, Ratio<i64>)> {
    let zero = Ratio::from_integer(0);
    match e {
        Expr::IntLit(n) => Ok((Ratio::from_integer(*n), zero)),
        Expr::Var(x) if x == EPS => Ok((zero, Ratio::from_integer(1))),
        Expr::Var(x) => match m.vars.get(x) {
            Some(Value::Int(n)) => Ok((Ratio::from_integer(*n), zero)),
            Some(Value::Prob(_)) => Err(ConcreteError::StuckSampling),
            None => Err(ConcreteError::Unbound(x.clone())),
        },
        Expr::BinOp(op, a, b) => {
            let (a0, a1) = linear_scale(m, a)?;
            let (b0, b1) = linear_scale(m, b)?;
            match op {
                BinOp::Add => Ok((a0 + b0, a1 + b1)),
                BinOp::Sub => Ok((a0 - b0, a1 - b1)),
                BinOp::Mul if a1 == zero => Ok((a0 * b0, a0 * b1)),
                BinOp::Mul if b1 == zero => Ok((a0 * b0, a1 * b0)),
                BinOp::Div if b1 == zero && b0 != zero => Ok((a0 / b0, a1 / b0)),
                _ => Err(ConcreteError::BadScale(crate::lang::print_expr(e))),
            }
        }
        _ => Err(ConcreteError::BadScale(crate::lang::print_expr(e))),
    }
}

/// Evaluate a sampling scale to a positive rational or a positive multiple of eps.
pub fn eval_scale(m: &ProbMemory, e: &Expr) -> R<Scale> {
    let (a, b) = linear_scale(m, e)?;
    let zero = Ratio::from_integer(0);
    if b == zero {
        if a <= zero {
            return Err(ConcreteError::NonPositiveScale);
        }
        Ok(Scale::Rat(a))
    } else if a == zero {
        if b <= zero {
            return Err(ConcreteError::NonPositiveScale);
        }
        Ok(Scale::Eps(b))
    } else {
        Err(ConcreteError::BadScale(crate::lang::print_expr(e)))
    }
}

fn assign(m: &mut ProbMemory, x: &str, v: Value) {
    m.vars.insert(x.to_string(), v);
}

fn arr_assign(m: &mut ProbMemory, a: &str, k: i64, v: Value) -> R<()> {
    let arr = m.arrays.get_mut(a).ok_or_else(|| ConcreteError::Unbound(a.to_string()))?;
    if k < 1 || k as usize > arr.len() {
        return Err(ConcreteError::OutOfBounds(a.to_string(), k));
    }
    arr[k as usize - 1] = v;
    Ok(())
}

/// Unroll one iteration of a loop with concrete bounds.
pub(crate) fn unroll(x: &str, lo: i64, hi: i64, body: &Cmd) -> Cmd {
    if lo > hi {
        Cmd::Skip
    } else {
        Cmd::seq(
            Cmd::assign(x, Expr::IntLit(lo)),
            Cmd::seq(body.clone(), Cmd::For(x.to_string(), Expr::IntLit(lo + 1), Expr::IntLit(hi), Box::new(body.clone()))),
        )
    }
}

/// One small step of a unary configuration.
pub fn step_c(reg: &mut Registry, env: &Env, cfg: &UConfig) -> R<Vec<UConfig>> {
    let mut out = Vec::new();
    let mk = |cmd: Cmd, mem: ProbMemory, ptrace: ProbTrace, history: Vec<bool>| UConfig { mem, cmd, ptrace, history };
    match &cfg.cmd {
        Cmd::Skip => out.push(cfg.clone()),
        Cmd::Seq(a, b) if a.is_skip() => out.push(mk((**b).clone(), cfg.mem.clone(), cfg.ptrace.clone(), cfg.history.clone())),
        Cmd::Seq(a, b) => {
            let sub = UConfig { cmd: (**a).clone(), ..cfg.clone() };
            for s in step_c(reg, env, &sub)? {
                let cmd = if s.cmd.is_skip() { (**b).clone() } else { Cmd::Seq(Box::new(s.cmd), b.clone()) };
                out.push(UConfig { cmd, ..s });
            }
        }
        Cmd::Assign(x, e) => {
            let mut p = cfg.ptrace.clone();
            let v = eval_expr_c(reg, env, &cfg.mem, e, &mut p)?;
            let mut m = cfg.mem.clone();
            assign(&mut m, x, v);
            out.push(mk(Cmd::Skip, m, p, cfg.history.clone()));
        }
        Cmd::ArrInit(a, len, fill) => {
            let mut p = cfg.ptrace.clone();
            let n = int_of(eval_expr_c(reg, env, &cfg.mem, len, &mut p)?, "array length")?;
            let v = eval_expr_c(reg, env, &cfg.mem, fill, &mut p)?;
            let mut m = cfg.mem.clone();
            m.arrays.insert(a.clone(), vec![v; n.max(0) as usize]);
            out.push(mk(Cmd::Skip, m, p, cfg.history.clone()));
        }
        Cmd::ArrAssign(a, i, e) => {
            let mut p = cfg.ptrace.clone();
            let k = int_of(eval_expr_c(reg, env, &cfg.mem, i, &mut p)?, "array index")?;
            let v = eval_expr_c(reg, env, &cfg.mem, e, &mut p)?;
            let mut m = cfg.mem.clone();
            arr_assign(&mut m, a, k, v)?;
            out.push(mk(Cmd::Skip, m, p, cfg.history.clone()));
        }
        Cmd::LapSample { var, mean, inv_scale } => {
            let mut p = cfg.ptrace.clone();
            let mu = match eval_expr_c(reg, env, &cfg.mem, mean, &mut p)? {
                Value::Int(n) => n,
                Value::Prob(_) => return Err(ConcreteError::StuckSampling),
            };
            let scale = eval_scale(&cfg.mem, inv_scale)?;
            let y = reg.fresh_prob(env.side);
            p.push(ProbEntry::LapDecl { var: SampleVar::Prob(y), mean: CExpr::Lit(mu), scale });
            let mut m = cfg.mem.clone();
            assign(&mut m, var, Value::Prob(y));
            out.push(mk(Cmd::Skip, m, p, cfg.history.clone()));
        }
        Cmd::If(g, a, b) => {
            let mut p = cfg.ptrace.clone();
            match eval_expr_c(reg, env, &cfg.mem, g, &mut p)? {
                Value::Int(n) => {
                    let c = if n > 0 { a } else { b };
                    out.push(mk((**c).clone(), cfg.mem.clone(), p, cfg.history.clone()));
                }
                Value::Prob(y) => {
                    for (taken, c) in [(true, a), (false, b)] {
                        let mut p2 = p.clone();
                        p2.push(if taken { ProbEntry::Gt0(RandExpr::Prob(y)) } else { ProbEntry::Le0(RandExpr::Prob(y)) });
                        let mut h = cfg.history.clone();
                        h.push(taken);
                        out.push(mk((**c).clone(), cfg.mem.clone(), p2, h));
                    }
                }
            }
        }
        Cmd::For(x, lo, hi, body) => {
            let mut p = cfg.ptrace.clone();
            let l = int_of(eval_expr_c(reg, env, &cfg.mem, lo, &mut p)?, "loop bound")?;
            let h = int_of(eval_expr_c(reg, env, &cfg.mem, hi, &mut p)?, "loop bound")?;
            out.push(mk(unroll(x, l, h, body), cfg.mem.clone(), p, cfg.history.clone()));
        }
        Cmd::PairCmd(..) => return Err(ConcreteError::PairInUnary),
    }
    Ok(out)
}

/// One collecting step: the first non-final configuration is replaced by its successors.
pub fn collect_c(reg: &mut Registry, env: &Env, d: &[UConfig]) -> R<Vec<UConfig>> {
    let mut out = Vec::with_capacity(d.len() + 1);
    let mut done = false;
    for c in d {
        if !done && !c.is_final() {
            out.extend(step_c(reg, env, c)?);
            done = true;
        } else {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Run every configuration to a final one, breadth first.
pub fn run_to_final(reg: &mut Registry, env: &Env, start: Vec<UConfig>, max_steps: usize) -> R<Vec<UConfig>> {
    let mut work: VecDeque<UConfig> = start.into();
    let mut finals = Vec::new();
    let mut steps = 0;
    while let Some(c) = work.pop_front() {
        if c.is_final() {
            finals.push(c);
            continue;
        }
        steps += 1;
        if steps > max_steps {
            return Err(ConcreteError::StepLimit);
        }
        work.extend(step_c(reg, env, &c)?);
    }
    Ok(finals)
}

pub const DEFAULT_MAX_STEPS: usize = 2_000_000;

/// All final traces of a program on concrete inputs.
pub fn final_traces(reg: &mut Registry, p: &Program, inputs: &Inputs, side: Side) -> R<Vec<UConfig>> {
    let m = initial_memory(p, inputs)?;
    let env = Env { queries: &inputs.queries, side };
    run_to_final(reg, &env, vec![UConfig::new(m, p.body.clone())], DEFAULT_MAX_STEPS)
}

/// Every random symbol stored in memory is declared by the trace.
pub fn mem_consistent(m: &ProbMemory, p: &ProbTrace) -> bool {
    let declared: std::collections::BTreeSet<ProbSym> = p.declared().into_iter().collect();
    let ok = |v: &Value| match v {
        Value::Prob(y) => declared.contains(y),
        Value::Int(_) => true,
    };
    p.well_formed() && m.vars.values().all(ok) && m.arrays.values().all(|a| a.iter().all(ok))
}

pub fn trace_json(reg: &Registry, c: &UConfig) -> serde_json::Value {
    let show = |v: &Value| match v {
        Value::Int(n) => serde_json::json!(n),
        Value::Prob(y) => serde_json::json!(y.to_string()),
    };
    let vars: BTreeMap<_, _> = c.mem.vars.iter().map(|(k, v)| (k.clone(), show(v))).collect();
    let arrays: BTreeMap<_, _> =
        c.mem.arrays.iter().map(|(k, v)| (k.clone(), v.iter().map(show).collect::<Vec<_>>())).collect();
    serde_json::json!({
        "memory": { "vars": vars, "arrays": arrays },
        "ptrace": c.ptrace.to_text(reg),
        "history": c.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn env(q: &BTreeMap<String, Vec<i64>>) -> Env<'_> {
        Env { queries: q, side: Side::Left }
    }

    #[test]
    fn expression_examples() {
        let mut reg = Registry::new();
        let q = BTreeMap::new();
        let mut m = ProbMemory::default();
        m.vars.insert("x".into(), Value::Int(3));
        let mut p = ProbTrace::new();
        let e = Expr::bin(BinOp::Add, Expr::var("x"), Expr::int(4));
        assert_eq!(eval_expr_c(&mut reg, &env(&q), &m, &e, &mut p), Ok(Value::Int(7)));
        assert!(p.is_empty());

        let y1 = reg.fresh_prob(Side::Left);
        m.vars.insert("x".into(), Value::Prob(y1));
        let e = Expr::bin(BinOp::Add, Expr::var("x"), Expr::int(1));
        let v = eval_expr_c(&mut reg, &env(&q), &m, &e, &mut p).unwrap();
        assert_eq!(p.to_text(&reg), vec!["Y2 = Y1 + 1"]);
        assert_eq!(v, Value::Prob(ProbSym { id: 2, side: Side::Left }));

        m.arrays.insert("a".into(), vec![Value::Int(0); 3]);
        let e = Expr::ArrIdx("a".into(), Box::new(Expr::int(5)));
        assert_eq!(
            eval_expr_c(&mut reg, &env(&q), &m, &e, &mut p),
            Err(ConcreteError::OutOfBounds("a".into(), 5))
        );
    }

    #[test]
    fn step_examples() {
        let mut reg = Registry::new();
        let q = BTreeMap::new();
        let cfg = UConfig::new(ProbMemory::default(), Cmd::sample("x", Expr::int(0), Expr::int(2)));
        let next = step_c(&mut reg, &env(&q), &cfg).unwrap();
        assert_eq!(next.len(), 1);
        assert!(next[0].is_final());
        assert_eq!(next[0].ptrace.to_text(&reg), vec!["Y1 ~ lap(0, 2)"]);

        let mut m = ProbMemory::default();
        m.vars.insert("x".into(), Value::Prob(ProbSym { id: 1, side: Side::Left }));
        let c = Cmd::if_(Expr::var("x"), Cmd::assign("o", Expr::int(1)), Cmd::assign("o", Expr::int(2)));
        let next = step_c(&mut reg, &env(&q), &UConfig::new(m, c.clone())).unwrap();
        assert_eq!(next.len(), 2);
        assert_eq!(next[0].ptrace.to_text(&reg), vec!["Y1 > 0"]);
        assert_eq!(next[1].ptrace.to_text(&reg), vec!["Y1 <= 0"]);

        let c = Cmd::if_(Expr::int(0), Cmd::assign("o", Expr::int(1)), Cmd::assign("o", Expr::int(2)));
        let next = step_c(&mut reg, &env(&q), &UConfig::new(ProbMemory::default(), c)).unwrap();
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].cmd, Cmd::assign("o", Expr::int(2)));
    }

    #[test]
    fn random_scale_is_stuck() {
        let mut reg = Registry::new();
        let q = BTreeMap::new();
        let mut m = ProbMemory::default();
        m.vars.insert("b".into(), Value::Prob(ProbSym { id: 9, side: Side::Left }));
        let c = Cmd::sample("x", Expr::int(0), Expr::var("b"));
        assert_eq!(step_c(&mut reg, &env(&q), &UConfig::new(m, c)), Err(ConcreteError::StuckSampling));
        let c = Cmd::sample("x", Expr::int(0), Expr::int(0));
        assert_eq!(
            step_c(&mut reg, &env(&q), &UConfig::new(ProbMemory::default(), c)),
            Err(ConcreteError::NonPositiveScale)
        );
    }

    #[test]
    fn alg3_two_iterations_has_four_traces() {
        let src = include_str!("../../../../corpus/alg3_buggy.pfor");
        let p = parse_program(src).unwrap();
        let inputs = Inputs::default().with_int("t", 0).with_query("q", vec![0, 1]);
        let mut reg = Registry::new();
        let finals = final_traces(&mut reg, &p, &inputs, Side::Left).unwrap();
        assert_eq!(finals.len(), 4);
        for f in &finals {
            assert!(mem_consistent(&f.mem, &f.ptrace));
        }
    }

    #[test]
    fn eps_scales() {
        let m = ProbMemory::default();
        let e = Expr::bin(BinOp::Div, Expr::var(EPS), Expr::int(4));
        assert_eq!(eval_scale(&m, &e), Ok(Scale::Eps(Ratio::new(1, 4))));
        let e = Expr::bin(BinOp::Mul, Expr::int(3), Expr::var(EPS));
        assert_eq!(eval_scale(&m, &e), Ok(Scale::Eps(Ratio::from_integer(3))));
    }
}

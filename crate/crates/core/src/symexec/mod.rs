//! Symbolic execution: unary stepping over symbolic memories, relational stepping, and the
//! coupling proof semantics over sets of worlds.

mod assert;
mod rel;

pub use assert::*;
pub use rel::*;

use std::collections::{BTreeMap, VecDeque};

use num_rational::Ratio;
use serde::Serialize;

use crate::constraints::{
    CExpr, Constraint, ConstraintSet, Origin, ProbEntry, ProbSym, ProbTrace, RandExpr, Registry, Role, SampleVar, Scale,
    SymInt,
};
use crate::lang::{BinOp, Cmd, Expr, Side, EPS};

pub const DEFAULT_UNROLL: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SymError {
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
    #[error("unsupported scale `{0}`: only positive rationals, positive multiples of eps or integer expressions")]
    UnsupportedScale(String),
    #[error("`eps` may only appear in a sampling scale")]
    EpsOutsideScale,
    #[error("random value used where an integer is required: {0}")]
    RandomInt(&'static str),
    #[error("pair construct in a unary command")]
    PairInUnary,
    #[error("array `{0}` needs a concrete length")]
    SymbolicLength(String),
    #[error("loop over `{0}` has a symbolic bound, which proving does not unroll")]
    SymbolicLoop(String),
    #[error("exploration exceeded {0} configurations")]
    Limit(usize),
    #[error("{0}")]
    Unsupported(String),
}

pub type SR<T> = Result<T, SymError>;

/// A symbolic value: a literal, an integer symbol or a random symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SValue {
    Int(i64),
    Sym(SymInt),
    Prob(ProbSym),
}

impl SValue {
    pub fn cexpr(self) -> Option<CExpr> {
        match self {
            SValue::Int(n) => Some(CExpr::Lit(n)),
            SValue::Sym(s) => Some(CExpr::Sym(s)),
            SValue::Prob(_) => None,
        }
    }

    fn rand(self) -> RandExpr {
        match self {
            SValue::Int(n) => RandExpr::Int(n),
            SValue::Sym(s) => RandExpr::Sym(s),
            SValue::Prob(y) => RandExpr::Prob(y),
        }
    }

    fn int(self, what: &'static str) -> SR<CExpr> {
        self.cexpr().ok_or(SymError::RandomInt(what))
    }
}

/// A fixed-length array: an optional content symbol overlaid with known cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SArray {
    pub base: Option<SymInt>,
    pub len: i64,
    /// 1-based cells that override `base`. Without a base every cell is present.
    pub cells: BTreeMap<i64, SValue>,
}

impl SArray {
    pub fn filled(len: i64, v: SValue) -> SArray {
        SArray { base: None, len, cells: (1..=len).map(|k| (k, v)).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SymMemory {
    pub vars: BTreeMap<String, SValue>,
    pub arrays: BTreeMap<String, SArray>,
    /// Query answers on this side, indexed from 1.
    pub queries: BTreeMap<String, SArray>,
}

/// A branch taken along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Fork {
    /// Branch on a random symbol (recorded in the probabilistic trace) or on an integer symbol.
    pub prob: bool,
    pub taken: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SPConfig {
    pub mem: SymMemory,
    pub cmd: Cmd,
    pub ptrace: ProbTrace,
    pub cstrs: ConstraintSet,
    pub history: Vec<Fork>,
    /// A satisfiability check on this path came back unknown.
    pub unknown_sat: bool,
}

impl SPConfig {
    pub fn is_final(&self) -> bool {
        self.cmd.is_skip()
    }

    /// Outcomes of branches on random symbols, as concrete execution records them.
    pub fn prob_history(&self) -> Vec<bool> {
        self.history.iter().filter(|f| f.prob).map(|f| f.taken).collect()
    }
}

/// Evaluation context shared by all steps.
#[derive(Debug, Clone)]
pub struct SymCtx {
    pub unroll: usize,
    /// Reject loops with symbolic bounds instead of truncating them.
    pub strict_loops: bool,
    /// Samples become fresh integer symbols instead of random symbols.
    pub samples_as_ints: bool,
}

impl Default for SymCtx {
    fn default() -> Self {
        SymCtx { unroll: DEFAULT_UNROLL, strict_loops: false, samples_as_ints: false }
    }
}

/// Mutable state threaded through expression evaluation.
pub struct Eval<'a> {
    pub reg: &'a mut Registry,
    pub side: Side,
    pub p: &'a mut ProbTrace,
    pub s: &'a mut ConstraintSet,
}

impl Eval<'_> {
    fn define(&mut self, hint: &str, e: CExpr) -> SymInt {
        let x = self.reg.fresh(self.side, Origin::Other, hint);
        self.s.push(Constraint::eq(CExpr::sym(x), e), Role::Def(x));
        x
    }
}

/// Evaluate a unary expression symbolically.
pub fn sp_eval_expr(ev: &mut Eval, m: &mut SymMemory, e: &Expr) -> SR<SValue> {
    match e {
        Expr::IntLit(n) => Ok(SValue::Int(*n)),
        Expr::Var(x) if x == EPS => Err(SymError::EpsOutsideScale),
        Expr::Var(x) => m.vars.get(x).copied().ok_or_else(|| SymError::Unbound(x.clone())),
        Expr::ArrIdx(a, i) => {
            let k = sp_eval_expr(ev, m, i)?;
            let mut arr = m.arrays.get(a).cloned().ok_or_else(|| SymError::Unbound(a.clone()))?;
            let v = read_array(ev, a, &mut arr, k)?;
            m.arrays.insert(a.clone(), arr);
            Ok(v)
        }
        Expr::Len(a) => m.arrays.get(a).map(|x| SValue::Int(x.len)).ok_or_else(|| SymError::Unbound(a.clone())),
        Expr::Query { name, index, .. } => {
            let k = match index {
                Some(i) => sp_eval_expr(ev, m, i)?,
                None => SValue::Int(1),
            };
            let mut arr = m.queries.get(name).cloned().ok_or_else(|| SymError::Unbound(name.clone()))?;
            let v = read_array(ev, name, &mut arr, k)?;
            m.queries.insert(name.clone(), arr);
            Ok(v)
        }
        Expr::BinOp(op, a, b) => {
            let va = sp_eval_expr(ev, m, a)?;
            let vb = sp_eval_expr(ev, m, b)?;
            sp_binop(ev, *op, va, vb)
        }
        Expr::Pair(..) => Err(SymError::PairInUnary),
    }
}

pub fn sp_binop(ev: &mut Eval, op: BinOp, va: SValue, vb: SValue) -> SR<SValue> {
    match (va, vb) {
        (SValue::Int(x), SValue::Int(y)) => {
            if op == BinOp::Div && y == 0 {
                return Err(SymError::DivZero);
            }
            op.apply(x, y).map(SValue::Int).ok_or(SymError::Overflow)
        }
        (SValue::Prob(_), _) | (_, SValue::Prob(_)) => {
            let y = ev.reg.fresh_prob(ev.side);
            ev.p.push(ProbEntry::Eq(y, RandExpr::bin(op, va.rand(), vb.rand())));
            Ok(SValue::Prob(y))
        }
        _ => {
            let (ca, cb) = (va.cexpr().unwrap(), vb.cexpr().unwrap());
            if op == BinOp::Div {
                if let SValue::Sym(_) = vb {
                    ev.s.push(Constraint::cmp(crate::lang::CmpOp::Ne, cb.clone(), CExpr::Lit(0)), Role::Guard);
                } else if vb == SValue::Int(0) {
                    return Err(SymError::DivZero);
                }
            }
            Ok(SValue::Sym(ev.define("V", CExpr::bin(op, ca, cb))))
        }
    }
}

/// The array's contents as one term, materialising a content symbol when needed.
fn array_term(ev: &mut Eval, name: &str, arr: &mut SArray) -> SR<CExpr> {
    let mut t = match arr.base {
        Some(b) => CExpr::Sym(b),
        None => {
            let b = ev.reg.fresh_array(ev.side, Origin::Other, name, arr.len);
            arr.base = Some(b);
            CExpr::Sym(b)
        }
    };
    for (k, v) in &arr.cells {
        let c = v.cexpr().ok_or_else(|| SymError::Unsupported(format!("random value stored in `{name}` read at a symbolic index")))?;
        t = CExpr::store(t, CExpr::Lit(*k), c);
    }
    Ok(t)
}

fn bounds(ev: &mut Eval, i: &CExpr, len: i64) {
    ev.s.push(Constraint::le(CExpr::Lit(1), i.clone()), Role::Guard);
    ev.s.push(Constraint::le(i.clone(), CExpr::Lit(len)), Role::Guard);
}

fn read_array(ev: &mut Eval, name: &str, arr: &mut SArray, k: SValue) -> SR<SValue> {
    match k {
        SValue::Int(k) => {
            if k < 1 || k > arr.len {
                return Err(SymError::OutOfBounds(name.to_string(), k));
            }
            if let Some(v) = arr.cells.get(&k) {
                return Ok(*v);
            }
            let b = arr.base.expect("cell without base");
            let x = ev.define(&format!("{name}{k}"), CExpr::select(CExpr::Sym(b), CExpr::Lit(k)));
            arr.cells.insert(k, SValue::Sym(x));
            Ok(SValue::Sym(x))
        }
        SValue::Sym(i) => {
            let t = array_term(ev, name, arr)?;
            bounds(ev, &CExpr::Sym(i), arr.len);
            Ok(SValue::Sym(ev.define(name, CExpr::select(t, CExpr::Sym(i)))))
        }
        SValue::Prob(_) => Err(SymError::RandomInt("array index")),
    }
}

fn write_array(ev: &mut Eval, name: &str, arr: &mut SArray, k: SValue, v: SValue) -> SR<()> {
    match k {
        SValue::Int(k) => {
            if k < 1 || k > arr.len {
                return Err(SymError::OutOfBounds(name.to_string(), k));
            }
            arr.cells.insert(k, v);
            Ok(())
        }
        SValue::Sym(i) => {
            let cv = v.int("value stored at a symbolic index")?;
            let t = array_term(ev, name, arr)?;
            bounds(ev, &CExpr::Sym(i), arr.len);
            let c = ev.reg.fresh_array(ev.side, Origin::Other, name, arr.len);
            ev.s.push(Constraint::eq(CExpr::sym(c), CExpr::store(t, CExpr::Sym(i), cv)), Role::Def(c));
            *arr = SArray { base: Some(c), len: arr.len, cells: BTreeMap::new() };
            Ok(())
        }
        SValue::Prob(_) => Err(SymError::RandomInt("array index")),
    }
}

/// Linear form of a scale expression.
enum Lin {
    Rat(Ratio<i64>),
    Eps(Ratio<i64>),
    Sym(CExpr),
}

fn scale_lin(ev: &mut Eval, m: &mut SymMemory, e: &Expr) -> SR<Lin> {
    let bad = || SymError::UnsupportedScale(crate::lang::print_expr(e));
    let int_of = |r: &Ratio<i64>| r.is_integer().then(|| r.to_integer());
    match e {
        Expr::Var(x) if x == EPS => Ok(Lin::Eps(Ratio::from_integer(1))),
        Expr::BinOp(op, a, b) => {
            let (x, y) = (scale_lin(ev, m, a)?, scale_lin(ev, m, b)?);
            let zero = Ratio::from_integer(0);
            Ok(match (op, x, y) {
                (BinOp::Add, Lin::Rat(p), Lin::Rat(q)) => Lin::Rat(p + q),
                (BinOp::Sub, Lin::Rat(p), Lin::Rat(q)) => Lin::Rat(p - q),
                (BinOp::Mul, Lin::Rat(p), Lin::Rat(q)) => Lin::Rat(p * q),
                (BinOp::Div, Lin::Rat(p), Lin::Rat(q)) if q != zero => Lin::Rat(p / q),
                (BinOp::Add, Lin::Eps(p), Lin::Eps(q)) => Lin::Eps(p + q),
                (BinOp::Sub, Lin::Eps(p), Lin::Eps(q)) => Lin::Eps(p - q),
                (BinOp::Add | BinOp::Sub, Lin::Eps(p), Lin::Rat(q)) if q == zero => Lin::Eps(p),
                (BinOp::Add, Lin::Rat(q), Lin::Eps(p)) if q == zero => Lin::Eps(p),
                (BinOp::Mul, Lin::Rat(q), Lin::Eps(p)) | (BinOp::Mul, Lin::Eps(p), Lin::Rat(q)) => Lin::Eps(p * q),
                (BinOp::Div, Lin::Eps(p), Lin::Rat(q)) if q != zero => Lin::Eps(p / q),
                (op, Lin::Sym(p), Lin::Sym(q)) => Lin::Sym(CExpr::bin(*op, p, q)),
                (op, Lin::Sym(p), Lin::Rat(q)) => Lin::Sym(CExpr::bin(*op, p, CExpr::Lit(int_of(&q).ok_or_else(bad)?))),
                (op, Lin::Rat(q), Lin::Sym(p)) => Lin::Sym(CExpr::bin(*op, CExpr::Lit(int_of(&q).ok_or_else(bad)?), p)),
                _ => return Err(bad()),
            })
        }
        _ => match sp_eval_expr(ev, m, e)? {
            SValue::Int(n) => Ok(Lin::Rat(Ratio::from_integer(n))),
            SValue::Sym(s) => Ok(Lin::Sym(CExpr::Sym(s))),
            SValue::Prob(_) => Err(SymError::StuckSampling),
        },
    }
}

/// Evaluate a sampling scale. Symbolic integer scales add a positivity constraint.
pub fn sp_scale(ev: &mut Eval, m: &mut SymMemory, e: &Expr) -> SR<Scale> {
    let zero = Ratio::from_integer(0);
    match scale_lin(ev, m, e)? {
        Lin::Rat(r) if r > zero => Ok(Scale::Rat(r)),
        Lin::Eps(c) if c > zero => Ok(Scale::Eps(c)),
        Lin::Rat(_) | Lin::Eps(_) => Err(SymError::NonPositiveScale),
        Lin::Sym(c) => {
            ev.s.push(Constraint::gt0(c.clone()), Role::Guard);
            Ok(Scale::Sym(c))
        }
    }
}

/// Eps coefficient of a scale that only mentions literals, constants and eps.
pub fn static_scale(p: &crate::lang::Program, e: &Expr) -> Option<Ratio<i64>> {
    fn go(p: &crate::lang::Program, e: &Expr) -> Option<(Ratio<i64>, Ratio<i64>)> {
        let zero = Ratio::from_integer(0);
        match e {
            Expr::IntLit(n) => Some((Ratio::from_integer(*n), zero)),
            Expr::Var(x) if x == EPS => Some((zero, Ratio::from_integer(1))),
            Expr::Var(x) => p.const_value(x).map(|v| (Ratio::from_integer(v), zero)),
            Expr::BinOp(op, a, b) => {
                let ((a0, a1), (b0, b1)) = (go(p, a)?, go(p, b)?);
                match op {
                    BinOp::Add => Some((a0 + b0, a1 + b1)),
                    BinOp::Sub => Some((a0 - b0, a1 - b1)),
                    BinOp::Mul if a1 == zero => Some((a0 * b0, a0 * b1)),
                    BinOp::Mul if b1 == zero => Some((a0 * b0, a1 * b0)),
                    BinOp::Div if b1 == zero && b0 != zero => Some((a0 / b0, a1 / b0)),
                    _ => None,
                }
            }
            _ => None,
        }
    }
    let (a, b) = go(p, e)?;
    (a == Ratio::from_integer(0)).then_some(b)
}

/// Unroll a loop with concrete bounds by one iteration.
fn unroll(x: &str, lo: i64, hi: i64, body: &Cmd) -> Cmd {
    if lo > hi {
        Cmd::Skip
    } else {
        Cmd::seq(
            Cmd::assign(x, Expr::IntLit(lo)),
            Cmd::seq(body.clone(), Cmd::For(x.to_string(), Expr::IntLit(lo + 1), Expr::IntLit(hi), Box::new(body.clone()))),
        )
    }
}

/// Hidden variable holding a symbolic loop's lower bound.
fn lo_var(x: &str) -> String {
    format!("#{x}_lo")
}

/// Expand a loop with symbolic bounds into one successor per iteration count up to the
/// unroll limit; each successor carries the constraint that fixes the count.
pub(crate) fn symbolic_loop(
    ctx: &SymCtx,
    x: &str,
    lo: SValue,
    hi: SValue,
    body: &Cmd,
) -> SR<Vec<(Constraint, Cmd, Vec<(String, SValue)>)>> {
    if ctx.strict_loops {
        return Err(SymError::SymbolicLoop(x.to_string()));
    }
    let (l, h) = (lo.int("loop bound")?, hi.int("loop bound")?);
    let count = CExpr::add(CExpr::sub(h, l), CExpr::Lit(1));
    let mut out = Vec::new();
    let hidden = lo_var(x);
    for n in 0..=ctx.unroll as i64 {
        let c = if n == 0 {
            Constraint::le0(count.clone())
        } else {
            Constraint::eq(count.clone(), CExpr::Lit(n))
        };
        let mut cmds = Vec::new();
        for j in 0..n {
            let idx = Expr::bin(BinOp::Add, Expr::var(&hidden), Expr::IntLit(j));
            cmds.push(Cmd::assign(x, idx));
            cmds.push(body.clone());
        }
        out.push((c, Cmd::seq_all(cmds), vec![(hidden.clone(), lo)]));
    }
    Ok(out)
}

/// One symbolic step of a unary configuration. Successors are not yet pruned.
pub fn sp_step(reg: &mut Registry, ctx: &SymCtx, side: Side, cfg: &SPConfig) -> SR<Vec<SPConfig>> {
    let mut out = Vec::new();
    match &cfg.cmd {
        Cmd::Skip => out.push(cfg.clone()),
        Cmd::Seq(a, b) if a.is_skip() => out.push(SPConfig { cmd: (**b).clone(), ..cfg.clone() }),
        Cmd::Seq(a, b) => {
            let sub = SPConfig { cmd: (**a).clone(), ..cfg.clone() };
            for s in sp_step(reg, ctx, side, &sub)? {
                let cmd = if s.cmd.is_skip() { (**b).clone() } else { Cmd::Seq(Box::new(s.cmd), b.clone()) };
                out.push(SPConfig { cmd, ..s });
            }
        }
        Cmd::Assign(x, e) => {
            let mut c = cfg.clone();
            let v = {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                sp_eval_expr(&mut ev, &mut c.mem, e)?
            };
            c.mem.vars.insert(x.clone(), v);
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::ArrInit(a, len, fill) => {
            let mut c = cfg.clone();
            let (n, v) = {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                (sp_eval_expr(&mut ev, &mut c.mem, len)?, sp_eval_expr(&mut ev, &mut c.mem, fill)?)
            };
            let SValue::Int(n) = n else { return Err(SymError::SymbolicLength(a.clone())) };
            c.mem.arrays.insert(a.clone(), SArray::filled(n.max(0), v));
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::ArrAssign(a, i, e) => {
            let mut c = cfg.clone();
            {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                let k = sp_eval_expr(&mut ev, &mut c.mem, i)?;
                let v = sp_eval_expr(&mut ev, &mut c.mem, e)?;
                let mut arr = c.mem.arrays.get(a).cloned().ok_or_else(|| SymError::Unbound(a.clone()))?;
                write_array(&mut ev, a, &mut arr, k, v)?;
                c.mem.arrays.insert(a.clone(), arr);
            }
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::LapSample { var, mean, inv_scale } => {
            let mut c = cfg.clone();
            {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                let mu = sp_eval_expr(&mut ev, &mut c.mem, mean)?;
                let mu = mu.cexpr().ok_or(SymError::StuckSampling)?;
                let scale = sp_scale(&mut ev, &mut c.mem, inv_scale)?;
                let (sv, v) = if ctx.samples_as_ints {
                    let x = ev.reg.fresh(side, Origin::Sample, &format!("{var}{}", side.index()));
                    (SampleVar::Int(x), SValue::Sym(x))
                } else {
                    let y = ev.reg.fresh_prob(side);
                    (SampleVar::Prob(y), SValue::Prob(y))
                };
                ev.p.push(ProbEntry::LapDecl { var: sv, mean: mu, scale });
                c.mem.vars.insert(var.clone(), v);
            }
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::If(g, a, b) => {
            let mut c = cfg.clone();
            let v = {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                sp_eval_expr(&mut ev, &mut c.mem, g)?
            };
            for (taken, branch) in [(true, a), (false, b)] {
                let mut n = c.clone();
                n.cmd = (**branch).clone();
                match v {
                    SValue::Int(k) => {
                        if (k > 0) != taken {
                            continue;
                        }
                    }
                    SValue::Sym(x) => {
                        let e = CExpr::Sym(x);
                        n.cstrs.push(if taken { Constraint::gt0(e) } else { Constraint::le0(e) }, Role::Guard);
                        n.history.push(Fork { prob: false, taken });
                    }
                    SValue::Prob(y) => {
                        let r = RandExpr::Prob(y);
                        n.ptrace.push(if taken { ProbEntry::Gt0(r) } else { ProbEntry::Le0(r) });
                        n.history.push(Fork { prob: true, taken });
                    }
                }
                out.push(n);
            }
        }
        Cmd::For(x, lo, hi, body) => {
            let mut c = cfg.clone();
            let (l, h) = {
                let mut ev = Eval { reg, side, p: &mut c.ptrace, s: &mut c.cstrs };
                (sp_eval_expr(&mut ev, &mut c.mem, lo)?, sp_eval_expr(&mut ev, &mut c.mem, hi)?)
            };
            match (l, h) {
                (SValue::Int(l), SValue::Int(h)) => {
                    c.cmd = unroll(x, l, h, body);
                    out.push(c);
                }
                _ => {
                    for (k, cmd, binds) in symbolic_loop(ctx, x, l, h, body)? {
                        let mut n = c.clone();
                        n.cstrs.push(k, Role::Guard);
                        for (v, val) in binds {
                            n.mem.vars.insert(v, val);
                        }
                        n.cmd = cmd;
                        out.push(n);
                    }
                }
            }
        }
        Cmd::PairCmd(..) => return Err(SymError::PairInUnary),
    }
    Ok(out)
}

/// Answers satisfiability questions for pruning.
pub trait SatOracle {
    /// `Some(false)` only when the set is definitely unsatisfiable.
    fn maybe_sat(&self, reg: &Registry, s: &ConstraintSet) -> Option<bool>;
}

impl SatOracle for crate::solver::Solver {
    fn maybe_sat(&self, reg: &Registry, s: &ConstraintSet) -> Option<bool> {
        match self.check_sat(reg, s, false).status {
            crate::solver::Status::Sat => Some(true),
            crate::solver::Status::Unsat => Some(false),
            crate::solver::Status::Unknown => None,
        }
    }
}

/// One collecting step: the group of configurations sharing the first non-final
/// configuration's constraint set is replaced by its satisfiable successors.
pub fn sp_collect(
    reg: &mut Registry,
    ctx: &SymCtx,
    side: Side,
    sat: &dyn SatOracle,
    h: Vec<SPConfig>,
) -> SR<Vec<SPConfig>> {
    let Some(pick) = h.iter().find(|c| !c.is_final()).map(|c| c.cstrs.clone()) else {
        return Ok(h);
    };
    let mut out = Vec::new();
    for c in h {
        if c.is_final() || c.cstrs != pick {
            out.push(c);
            continue;
        }
        for mut n in sp_step(reg, ctx, side, &c)? {
            if n.cstrs.len() > c.cstrs.len() {
                match sat.maybe_sat(reg, &n.cstrs) {
                    Some(false) => continue,
                    None => n.unknown_sat = true,
                    Some(true) => {}
                }
            }
            out.push(n);
        }
    }
    Ok(out)
}

/// Run unary configurations to completion, pruning unsatisfiable paths.
pub fn sp_run_to_final(
    reg: &mut Registry,
    ctx: &SymCtx,
    side: Side,
    sat: &dyn SatOracle,
    start: Vec<SPConfig>,
    max_steps: usize,
) -> SR<Vec<SPConfig>> {
    let mut work: VecDeque<SPConfig> = start.into();
    let mut finals = Vec::new();
    let mut steps = 0;
    while let Some(c) = work.pop_front() {
        if c.is_final() {
            finals.push(c);
            continue;
        }
        steps += 1;
        if steps > max_steps {
            return Err(SymError::Limit(max_steps));
        }
        // the group of `c` is processed one configuration at a time; the result is the same set
        for n in sp_collect(reg, ctx, side, sat, vec![c])? {
            work.push_back(n);
        }
    }
    Ok(finals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::omega_decompose;
    use crate::corpus::program;
    use crate::lang::BOT;

    struct NoPrune;
    impl SatOracle for NoPrune {
        fn maybe_sat(&self, _: &Registry, _: &ConstraintSet) -> Option<bool> {
            Some(true)
        }
    }

    fn rel_ctx(p: &crate::lang::Program, policy: Policy) -> RelCtx {
        RelCtx {
            sym: SymCtx { strict_loops: policy == Policy::LapGen, ..SymCtx::default() },
            policy,
            rule: BudgetRule::Lemma,
            units: budget_units(p),
            max_configs: 100_000,
        }
    }

    #[test]
    fn expression_rules() {
        let mut reg = Registry::new();
        let mut p = ProbTrace::new();
        let mut s = ConstraintSet::new();
        let x = reg.fresh(Side::Left, Origin::Input, "X");
        let y = reg.fresh_prob(Side::Left);
        let mut m = SymMemory::default();
        m.vars.insert("x".into(), SValue::Sym(x));
        m.vars.insert("y".into(), SValue::Prob(y));
        let mut ev = Eval { reg: &mut reg, side: Side::Left, p: &mut p, s: &mut s };
        let one = |v: &str| Expr::bin(BinOp::Add, Expr::var(v), Expr::int(1));
        assert!(matches!(sp_eval_expr(&mut ev, &mut m, &one("x")).unwrap(), SValue::Sym(_)));
        assert!(matches!(sp_eval_expr(&mut ev, &mut m, &one("y")).unwrap(), SValue::Prob(_)));
        let five = Expr::bin(BinOp::Add, Expr::int(2), Expr::int(3));
        assert_eq!(sp_eval_expr(&mut ev, &mut m, &five).unwrap(), SValue::Int(5));
        assert_eq!(s.len(), 1);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn symbolic_index_reads_through_store() {
        let mut reg = Registry::new();
        let mut p = ProbTrace::new();
        let mut s = ConstraintSet::new();
        let i = reg.fresh(Side::Left, Origin::Input, "I");
        let mut m = SymMemory::default();
        m.vars.insert("i".into(), SValue::Sym(i));
        m.arrays.insert("a".into(), SArray::filled(3, SValue::Int(7)));
        let mut ev = Eval { reg: &mut reg, side: Side::Left, p: &mut p, s: &mut s };
        let v = sp_eval_expr(&mut ev, &mut m, &Expr::ArrIdx("a".into(), Box::new(Expr::var("i")))).unwrap();
        assert!(matches!(v, SValue::Sym(_)));
        // two bounds guards and the definition of the read
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn alg2_unary_final_count() {
        let p = program("alg2_buggy");
        let mut reg = Registry::new();
        let finals = unary_finals(&mut reg, &p, Side::Left, &SymCtx::default(), &NoPrune, 100_000).unwrap();
        assert_eq!(finals.len(), 6);
        let mut pts: Vec<OutputPoint> =
            finals.iter().map(|c| output_point(&c.mem, "o").unwrap()).collect();
        pts.sort();
        assert!(pts.iter().any(|x| x.cells == vec![Some(BOT); 5]));
    }

    #[test]
    fn alg1_single_trace_with_one_shift() {
        let p = program("alg1_buggy");
        let mut reg = Registry::new();
        let x = explore(&mut reg, &p, &rel_ctx(&p, Policy::LapGen), &NoPrune).unwrap();
        assert_eq!(x.worlds.len(), 1);
        assert_eq!(x.worlds[0].configs.len(), 1);
        let o = omega_decompose(&x.worlds[0].configs[0].cstrs);
        assert_eq!(o.k_vec.len(), 1);
        assert_eq!(x.units, 1);
    }

    #[test]
    fn alg3_avoc_has_orthogonal_shape() {
        let p = program("alg3_buggy");
        let mut reg = Registry::new();
        let x = explore(&mut reg, &p, &rel_ctx(&p, Policy::Avoc), &NoPrune).unwrap();
        let w = &x.worlds[0];
        // two relational branchings over two independent guards
        assert_eq!(w.configs.len(), 16);
        for c in &w.configs {
            assert!(omega_decompose(&c.cstrs).k_vec.is_empty());
        }
        let tf = |h: &[Fork]| h.iter().map(|f| f.taken).collect::<Vec<_>>();
        assert!(w.configs.iter().any(|c| tf(&c.hist1) == [false, true] && tf(&c.hist2) == [false, true]));
    }

    #[test]
    fn budget_units_cover_scales() {
        assert_eq!(budget_units(&program("alg2_buggy")), 4);
        assert_eq!(budget_units(&program("alg1_safe")), 2);
        assert_eq!(budget_units(&program("alg2_safe_noised")), 4);
    }

    #[test]
    fn figure_rule_records_bound() {
        let p = program("alg1_safe");
        let mut reg = Registry::new();
        let ctx = RelCtx { rule: BudgetRule::Figure, ..rel_ctx(&p, Policy::LapGen) };
        let x = explore(&mut reg, &p, &ctx, &NoPrune).unwrap();
        let c = &x.worlds[0].configs[0];
        assert!(c.cstrs.entries().iter().any(|e| e.role == Role::Choice));
    }

    #[test]
    fn mixed_policy_forks_worlds() {
        let p = program("alg1_buggy");
        let mut reg = Registry::new();
        let x = explore(&mut reg, &p, &rel_ctx(&p, Policy::Both), &NoPrune).unwrap();
        assert_eq!(x.worlds.len(), 2);
        assert_eq!(x.worlds[0].choices, vec![Policy::LapGen]);
        assert_eq!(x.worlds[1].choices, vec![Policy::Avoc]);
    }
}

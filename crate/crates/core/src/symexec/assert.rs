use std::collections::BTreeMap;

use serde::Serialize;

use super::{sp_eval_expr, Eval, SValue, SymError, SymMemory, SR};
use crate::constraints::{CExpr, Constraint, ConstraintSet, Origin, ProbTrace, Registry, SymInt};
use crate::lang::{CmpOp, Expr, RelAssertion, RelTerm, Side};

enum TVal {
    Scalar(CExpr),
    Array(Vec<CExpr>),
}

fn cells(reg: &mut Registry, side: Side, m: &mut SymMemory, a: &str, s: &mut ConstraintSet) -> SR<Vec<CExpr>> {
    let len = m.arrays.get(a).map(|x| x.len).ok_or_else(|| SymError::Unbound(a.to_string()))?;
    let mut p = ProbTrace::new();
    let mut ev = Eval { reg, side, p: &mut p, s };
    (1..=len)
        .map(|k| {
            let v = sp_eval_expr(&mut ev, m, &Expr::ArrIdx(a.to_string(), Box::new(Expr::IntLit(k))))?;
            v.cexpr().ok_or(SymError::RandomInt("assertion"))
        })
        .collect()
}

struct Tr<'a> {
    reg: &'a mut Registry,
    m1: &'a mut SymMemory,
    m2: &'a mut SymMemory,
    logic: &'a mut BTreeMap<String, SymInt>,
    defs: &'a mut ConstraintSet,
}

impl Tr<'_> {
    fn mem(&mut self, side: Side) -> &mut SymMemory {
        if side == Side::Right {
            self.m2
        } else {
            self.m1
        }
    }

    fn term(&mut self, t: &RelTerm) -> SR<TVal> {
        Ok(match t {
            RelTerm::Int(n) => TVal::Scalar(CExpr::Lit(*n)),
            RelTerm::Logic(x) => {
                let s = match self.logic.get(x) {
                    Some(s) => *s,
                    None => {
                        let s = self.reg.fresh_named(Side::Shared, Origin::Logic, x);
                        self.logic.insert(x.clone(), s);
                        s
                    }
                };
                TVal::Scalar(CExpr::Sym(s))
            }
            RelTerm::Proj(Expr::Var(a), side) if self.mem(*side).arrays.contains_key(a) => {
                let (reg, defs) = (&mut *self.reg, &mut *self.defs);
                let m = if *side == Side::Right { &mut *self.m2 } else { &mut *self.m1 };
                TVal::Array(cells(reg, *side, m, a, defs)?)
            }
            RelTerm::Proj(e, side) => {
                let mut p = ProbTrace::new();
                let m = if *side == Side::Right { &mut *self.m2 } else { &mut *self.m1 };
                let mut ev = Eval { reg: &mut *self.reg, side: *side, p: &mut p, s: &mut *self.defs };
                match sp_eval_expr(&mut ev, m, e)? {
                    SValue::Prob(_) => return Err(SymError::RandomInt("assertion")),
                    v => TVal::Scalar(v.cexpr().unwrap()),
                }
            }
            RelTerm::Bin(op, a, b) => match (self.term(a)?, self.term(b)?) {
                (TVal::Scalar(x), TVal::Scalar(y)) => TVal::Scalar(CExpr::bin(*op, x, y)),
                _ => return Err(SymError::Unsupported("arithmetic on arrays in an assertion".into())),
            },
            RelTerm::Abs(a) => match self.term(a)? {
                TVal::Scalar(x) => TVal::Scalar(CExpr::abs(x)),
                _ => return Err(SymError::Unsupported("abs of an array in an assertion".into())),
            },
        })
    }

    fn max_len(&self) -> i64 {
        self.m1.arrays.values().chain(self.m2.arrays.values()).map(|a| a.len).max().unwrap_or(0)
    }

    fn assertion(&mut self, a: &RelAssertion) -> SR<Constraint> {
        Ok(match a {
            RelAssertion::True => Constraint::True,
            RelAssertion::Cmp(op, x, y) => match (self.term(x)?, self.term(y)?) {
                (TVal::Scalar(x), TVal::Scalar(y)) => Constraint::cmp(*op, x, y),
                (TVal::Array(x), TVal::Array(y)) if matches!(op, CmpOp::Eq | CmpOp::Ne) => {
                    let eq = if x.len() == y.len() {
                        Constraint::and(x.into_iter().zip(y).map(|(a, b)| Constraint::eq(a, b)).collect())
                    } else {
                        Constraint::not(Constraint::True)
                    };
                    if *op == CmpOp::Eq {
                        eq
                    } else {
                        Constraint::not(eq)
                    }
                }
                _ => return Err(SymError::Unsupported("comparison between an array and a scalar".into())),
            },
            RelAssertion::And(xs) => Constraint::and(xs.iter().map(|x| self.assertion(x)).collect::<SR<_>>()?),
            RelAssertion::Not(x) => Constraint::not(self.assertion(x)?),
            RelAssertion::Implies(x, y) => Constraint::implies(self.assertion(x)?, self.assertion(y)?),
            RelAssertion::Forall(x, body) => {
                // bound variables range over array indices
                let mut parts = Vec::new();
                let saved = (self.m1.vars.get(x).copied(), self.m2.vars.get(x).copied());
                for k in 1..=self.max_len() {
                    self.m1.vars.insert(x.clone(), SValue::Int(k));
                    self.m2.vars.insert(x.clone(), SValue::Int(k));
                    let prev = self.logic.remove(x);
                    let body = subst_logic(body, x, k);
                    parts.push(self.assertion(&body)?);
                    if let Some(p) = prev {
                        self.logic.insert(x.clone(), p);
                    }
                }
                for (m, v) in [(&mut *self.m1, saved.0), (&mut *self.m2, saved.1)] {
                    match v {
                        Some(v) => m.vars.insert(x.clone(), v),
                        None => m.vars.remove(x),
                    };
                }
                Constraint::and(parts)
            }
        })
    }
}

fn subst_term(t: &RelTerm, x: &str, k: i64) -> RelTerm {
    match t {
        RelTerm::Logic(y) if y == x => RelTerm::Int(k),
        RelTerm::Bin(op, a, b) => RelTerm::Bin(*op, Box::new(subst_term(a, x, k)), Box::new(subst_term(b, x, k))),
        RelTerm::Abs(a) => RelTerm::Abs(Box::new(subst_term(a, x, k))),
        t => t.clone(),
    }
}

fn subst_logic(a: &RelAssertion, x: &str, k: i64) -> RelAssertion {
    match a {
        RelAssertion::True => RelAssertion::True,
        RelAssertion::Cmp(op, l, r) => RelAssertion::Cmp(*op, subst_term(l, x, k), subst_term(r, x, k)),
        RelAssertion::And(xs) => RelAssertion::And(xs.iter().map(|y| subst_logic(y, x, k)).collect()),
        RelAssertion::Not(y) => RelAssertion::Not(Box::new(subst_logic(y, x, k))),
        RelAssertion::Implies(l, r) => RelAssertion::Implies(Box::new(subst_logic(l, x, k)), Box::new(subst_logic(r, x, k))),
        RelAssertion::Forall(y, _) if y == x => a.clone(),
        RelAssertion::Forall(y, b) => RelAssertion::Forall(y.clone(), Box::new(subst_logic(b, x, k))),
    }
}

/// Translate a relational assertion over two symbolic memories. Reads that need fresh
/// symbols add their definitions to `defs`; logical variables become shared symbols.
pub fn translate(
    reg: &mut Registry,
    a: &RelAssertion,
    m1: &mut SymMemory,
    m2: &mut SymMemory,
    logic: &mut BTreeMap<String, SymInt>,
    defs: &mut ConstraintSet,
) -> SR<Constraint> {
    Tr { reg, m1, m2, logic, defs }.assertion(a)
}

/// A possible program output; `None` cells match any value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct OutputPoint {
    pub cells: Vec<Option<i64>>,
    pub array: bool,
}

impl OutputPoint {
    pub fn text(&self) -> String {
        let cell = |c: &Option<i64>| match c {
            None => "_".to_string(),
            Some(v) if *v == crate::lang::BOT => "bot".to_string(),
            Some(v) if *v == crate::lang::TOP => "top".to_string(),
            Some(v) => v.to_string(),
        };
        if self.array {
            format!("[{}]", self.cells.iter().map(cell).collect::<Vec<_>>().join(","))
        } else {
            cell(&self.cells[0])
        }
    }
}

/// The output of one run as constraint terms.
pub fn output_terms(reg: &mut Registry, side: Side, m: &mut SymMemory, output: &str, defs: &mut ConstraintSet) -> SR<Vec<CExpr>> {
    if m.arrays.contains_key(output) {
        return cells(reg, side, m, output, defs);
    }
    let v = m.vars.get(output).copied().ok_or_else(|| SymError::Unbound(output.to_string()))?;
    Ok(vec![v.cexpr().ok_or(SymError::RandomInt("output"))?])
}

/// `o<1> = point ⟹ o<2> = point`, wildcard cells shared between the two sides.
pub fn pointwise_post(
    reg: &mut Registry,
    point: &OutputPoint,
    m1: &mut SymMemory,
    m2: &mut SymMemory,
    output: &str,
    defs: &mut ConstraintSet,
) -> SR<Constraint> {
    let o1 = output_terms(reg, Side::Left, m1, output, defs)?;
    let o2 = output_terms(reg, Side::Right, m2, output, defs)?;
    if o1.len() != point.cells.len() || o2.len() != point.cells.len() {
        return Err(SymError::Unsupported("output length differs from the output point".into()));
    }
    let mut l = Vec::new();
    let mut r = Vec::new();
    for (k, c) in point.cells.iter().enumerate() {
        let v = match c {
            Some(v) => CExpr::Lit(*v),
            None => CExpr::Sym(reg.fresh(Side::Shared, Origin::Logic, &format!("w{}", k + 1))),
        };
        l.push(Constraint::eq(o1[k].clone(), v.clone()));
        r.push(Constraint::eq(o2[k].clone(), v));
    }
    Ok(Constraint::implies(Constraint::and(l), Constraint::and(r)))
}

/// Output-equality of the two runs.
pub fn output_equal(reg: &mut Registry, m1: &mut SymMemory, m2: &mut SymMemory, output: &str, defs: &mut ConstraintSet) -> SR<Constraint> {
    let o1 = output_terms(reg, Side::Left, m1, output, defs)?;
    let o2 = output_terms(reg, Side::Right, m2, output, defs)?;
    if o1.len() != o2.len() {
        return Ok(Constraint::not(Constraint::True));
    }
    Ok(Constraint::and(o1.into_iter().zip(o2).map(|(a, b)| Constraint::eq(a, b)).collect()))
}

/// Output point of a final unary memory: literal cells stay, symbolic and random cells
/// become wildcards.
pub fn output_point(m: &SymMemory, output: &str) -> SR<OutputPoint> {
    let lit = |v: &SValue| if let SValue::Int(n) = v { Some(*n) } else { None };
    if let Some(a) = m.arrays.get(output) {
        let cells = (1..=a.len).map(|k| a.cells.get(&k).and_then(lit)).collect();
        return Ok(OutputPoint { cells, array: true });
    }
    let v = m.vars.get(output).ok_or_else(|| SymError::Unbound(output.to_string()))?;
    Ok(OutputPoint { cells: vec![lit(v)], array: false })
}

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{CExpr, Constraint, ConstraintSet, ProbTrace, Registry, Sort, SymInt};

/// A ground assignment for integer and array symbols, keyed by symbol id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Substitution {
    pub ints: BTreeMap<u32, i64>,
    /// 1-based array contents.
    pub arrays: BTreeMap<u32, Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("symbol #{0} has no value")]
    Unmapped(u32),
    #[error("bound variable i{0} is free")]
    FreeBound(u32),
    #[error("division by zero")]
    DivZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("index {0} out of bounds")]
    OutOfBounds(i64),
    #[error("sort mismatch")]
    Sort,
    #[error("quantifier has no finite index domain")]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GVal {
    Int(i64),
    Arr(Vec<i64>),
}

impl Substitution {
    pub fn new() -> Substitution {
        Substitution::default()
    }

    pub fn set(&mut self, s: SymInt, v: i64) {
        self.ints.insert(s.id, v);
    }

    pub fn set_array(&mut self, s: SymInt, v: Vec<i64>) {
        self.arrays.insert(s.id, v);
    }

    pub fn get(&self, s: SymInt) -> Option<i64> {
        self.ints.get(&s.id).copied()
    }

    pub fn covers(&self, s: SymInt) -> bool {
        match s.sort {
            Sort::Int => self.ints.contains_key(&s.id),
            Sort::Array => self.arrays.contains_key(&s.id),
        }
    }

    /// Replace every mapped symbol by its value.
    pub fn apply_expr(&self, e: &CExpr) -> CExpr {
        e.map_syms(&mut |s| match s.sort {
            Sort::Int => self.ints.get(&s.id).map(|v| CExpr::Lit(*v)).unwrap_or(CExpr::Sym(s)),
            Sort::Array => self.arrays.get(&s.id).map(|v| CExpr::ArrLit(v.clone())).unwrap_or(CExpr::Sym(s)),
        })
    }

    pub fn apply(&self, c: &Constraint) -> Constraint {
        c.map_exprs(&mut |e| self.apply_expr(e))
    }

    pub fn eval(&self, e: &CExpr) -> Result<i64, EvalError> {
        match eval_g(&self.apply_expr(e))? {
            GVal::Int(n) => Ok(n),
            GVal::Arr(_) => Err(EvalError::Sort),
        }
    }

    pub fn holds(&self, c: &Constraint) -> Result<bool, EvalError> {
        holds_ground(&self.apply(c))
    }

    pub fn to_named(&self, reg: &Registry) -> BTreeMap<String, serde_json::Value> {
        let mut out = BTreeMap::new();
        for (id, v) in &self.ints {
            let name = reg.get(*id).map(|i| i.name.clone()).unwrap_or_else(|| format!("#{id}"));
            out.insert(name, serde_json::json!(v));
        }
        for (id, v) in &self.arrays {
            let name = reg.get(*id).map(|i| i.name.clone()).unwrap_or_else(|| format!("#{id}"));
            out.insert(name, serde_json::json!(v));
        }
        out
    }
}

/// Evaluate an expression with no symbols left.
pub fn eval_g(e: &CExpr) -> Result<GVal, EvalError> {
    let int = |e: &CExpr| match eval_g(e)? {
        GVal::Int(n) => Ok(n),
        GVal::Arr(_) => Err(EvalError::Sort),
    };
    let arr = |e: &CExpr| match eval_g(e)? {
        GVal::Arr(v) => Ok(v),
        GVal::Int(_) => Err(EvalError::Sort),
    };
    match e {
        CExpr::Lit(n) => Ok(GVal::Int(*n)),
        CExpr::ArrLit(v) => Ok(GVal::Arr(v.clone())),
        CExpr::Sym(s) => Err(EvalError::Unmapped(s.id)),
        CExpr::Bound(b) => Err(EvalError::FreeBound(*b)),
        CExpr::Bin(op, a, b) => {
            let (x, y) = (int(a)?, int(b)?);
            if *op == crate::lang::BinOp::Div && y == 0 {
                return Err(EvalError::DivZero);
            }
            op.apply(x, y).map(GVal::Int).ok_or(EvalError::Overflow)
        }
        CExpr::Abs(a) => int(a)?.checked_abs().map(GVal::Int).ok_or(EvalError::Overflow),
        CExpr::Select(a, i) => {
            let (v, k) = (arr(a)?, int(i)?);
            index(&v, k).map(|x| GVal::Int(v[x]))
        }
        CExpr::Store(a, i, x) => {
            let (mut v, k, x) = (arr(a)?, int(i)?, int(x)?);
            let pos = index(&v, k)?;
            v[pos] = x;
            Ok(GVal::Arr(v))
        }
    }
}

fn index(v: &[i64], k: i64) -> Result<usize, EvalError> {
    if k >= 1 && (k as usize) <= v.len() {
        Ok(k as usize - 1)
    } else {
        Err(EvalError::OutOfBounds(k))
    }
}

/// Lengths of the concrete arrays a constraint mentions.
fn array_lens(c: &Constraint, out: &mut BTreeSet<usize>) {
    fn expr(e: &CExpr, out: &mut BTreeSet<usize>) {
        match e {
            CExpr::ArrLit(v) => {
                out.insert(v.len());
            }
            CExpr::Bin(_, a, b) | CExpr::Select(a, b) => {
                expr(a, out);
                expr(b, out);
            }
            CExpr::Store(a, b, c) => {
                expr(a, out);
                expr(b, out);
                expr(c, out);
            }
            CExpr::Abs(a) => expr(a, out),
            _ => {}
        }
    }
    match c {
        Constraint::True => {}
        Constraint::Cmp(_, a, b) => {
            expr(a, out);
            expr(b, out);
        }
        Constraint::And(cs) => cs.iter().for_each(|c| array_lens(c, out)),
        Constraint::Not(c) | Constraint::Forall(_, c) => array_lens(c, out),
    }
}

pub fn holds_ground(c: &Constraint) -> Result<bool, EvalError> {
    match c {
        Constraint::True => Ok(true),
        Constraint::Cmp(op, a, b) => match (eval_g(a)?, eval_g(b)?) {
            (GVal::Int(x), GVal::Int(y)) => Ok(op.holds(x, y)),
            (GVal::Arr(x), GVal::Arr(y)) => match op {
                crate::lang::CmpOp::Eq => Ok(x == y),
                crate::lang::CmpOp::Ne => Ok(x != y),
                _ => Err(EvalError::Sort),
            },
            _ => Err(EvalError::Sort),
        },
        Constraint::And(cs) => {
            for c in cs {
                if !holds_ground(c)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Constraint::Not(c) => Ok(!holds_ground(c)?),
        Constraint::Forall(v, body) => {
            let mut lens = BTreeSet::new();
            array_lens(body, &mut lens);
            let n = *lens.iter().max().ok_or(EvalError::Unbounded)?;
            for k in 1..=n as i64 {
                if !holds_ground(&body.subst_bound(*v, &CExpr::Lit(k)))? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Ground every constraint of `s`. Fails if `σ` misses one of its symbols.
pub fn apply_subst(sigma: &Substitution, s: &ConstraintSet) -> Result<Vec<Constraint>, EvalError> {
    let mut out = Vec::new();
    for c in s.iter() {
        for sym in c.symbol_set() {
            if !sigma.covers(sym) {
                return Err(EvalError::Unmapped(sym.id));
            }
        }
        out.push(sigma.apply(c));
    }
    Ok(out)
}

/// Whether `σ` satisfies every constraint of `s`.
pub fn satisfies(sigma: &Substitution, s: &ConstraintSet) -> Result<bool, EvalError> {
    for c in apply_subst(sigma, s)? {
        if !holds_ground(&c)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Ground a probabilistic trace. Random symbols are left untouched.
pub fn apply_subst_prob(sigma: &Substitution, p: &ProbTrace) -> Result<ProbTrace, EvalError> {
    let mut missing = None;
    let out = p.map_syms(&mut |s| match sigma.get(s) {
        Some(v) => CExpr::Lit(v),
        None => {
            missing.get_or_insert(s.id);
            CExpr::Sym(s)
        }
    });
    match missing {
        Some(id) => Err(EvalError::Unmapped(id)),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Origin, Role, Scale};
    use crate::lang::{CmpOp, Side};

    #[test]
    fn ground_after_subst() {
        let mut r = Registry::new();
        let x = r.fresh(Side::Left, Origin::Other, "X");
        let mut s = ConstraintSet::new();
        s.push(Constraint::gt0(CExpr::sym(x)), Role::Guard);
        let mut sigma = Substitution::new();
        sigma.set(x, 3);
        assert_eq!(apply_subst(&sigma, &s).unwrap(), vec![Constraint::Cmp(CmpOp::Gt, CExpr::Lit(3), CExpr::Lit(0))]);
        assert!(satisfies(&sigma, &s).unwrap());
        assert_eq!(apply_subst(&Substitution::new(), &s), Err(EvalError::Unmapped(x.id)));
    }

    #[test]
    fn ground_prob_trace() {
        let mut r = Registry::new();
        let x = r.fresh(Side::Left, Origin::Other, "X");
        let y = r.fresh_prob(Side::Left);
        let mut p = ProbTrace::new();
        p.push(crate::constraints::ProbEntry::LapDecl {
            var: crate::constraints::SampleVar::Prob(y),
            mean: CExpr::sym(x),
            scale: Scale::Sym(CExpr::mul(CExpr::Lit(2), CExpr::sym(x))),
        });
        let mut sigma = Substitution::new();
        sigma.set(x, 3);
        let g = apply_subst_prob(&sigma, &p).unwrap();
        assert_eq!(g.to_text(&r), vec!["Y2 ~ lap(3, 6)"]);
    }

    #[test]
    fn forall_over_array() {
        let c = Constraint::Forall(
            0,
            Box::new(Constraint::eq(CExpr::select(CExpr::ArrLit(vec![7, 7, 7]), CExpr::Bound(0)), CExpr::Lit(7))),
        );
        assert_eq!(holds_ground(&c), Ok(true));
        let bad = Constraint::Forall(
            0,
            Box::new(Constraint::eq(CExpr::select(CExpr::ArrLit(vec![7, 1]), CExpr::Bound(0)), CExpr::Lit(7))),
        );
        assert_eq!(holds_ground(&bad), Ok(false));
    }
}

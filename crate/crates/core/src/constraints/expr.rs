use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use super::{Registry, SymInt};
use crate::lang::{BinOp, CmpOp, BOT, TOP};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum CExpr {
    Lit(i64),
    Sym(SymInt),
    /// Variable bound by an enclosing `Forall`.
    Bound(u32),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Store(Box<CExpr>, Box<CExpr>, Box<CExpr>),
    Select(Box<CExpr>, Box<CExpr>),
    Abs(Box<CExpr>),
    /// A concrete array, produced only by substitution.
    ArrLit(Vec<i64>),
}

impl CExpr {
    pub fn sym(s: SymInt) -> CExpr {
        CExpr::Sym(s)
    }

    pub fn bin(op: BinOp, a: CExpr, b: CExpr) -> CExpr {
        CExpr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: CExpr, b: CExpr) -> CExpr {
        CExpr::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: CExpr, b: CExpr) -> CExpr {
        CExpr::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: CExpr, b: CExpr) -> CExpr {
        CExpr::bin(BinOp::Mul, a, b)
    }

    pub fn abs(a: CExpr) -> CExpr {
        CExpr::Abs(Box::new(a))
    }

    pub fn select(a: CExpr, i: CExpr) -> CExpr {
        CExpr::Select(Box::new(a), Box::new(i))
    }

    pub fn store(a: CExpr, i: CExpr, v: CExpr) -> CExpr {
        CExpr::Store(Box::new(a), Box::new(i), Box::new(v))
    }

    pub fn symbols(&self, out: &mut BTreeSet<SymInt>) {
        match self {
            CExpr::Lit(_) | CExpr::Bound(_) | CExpr::ArrLit(_) => {}
            CExpr::Sym(s) => {
                out.insert(*s);
            }
            CExpr::Bin(_, a, b) | CExpr::Select(a, b) => {
                a.symbols(out);
                b.symbols(out);
            }
            CExpr::Store(a, b, c) => {
                a.symbols(out);
                b.symbols(out);
                c.symbols(out);
            }
            CExpr::Abs(a) => a.symbols(out),
        }
    }

    pub fn has_nonlinear(&self) -> bool {
        match self {
            CExpr::Bin(BinOp::Mul, a, b) => {
                !(a.is_ground() || b.is_ground()) || a.has_nonlinear() || b.has_nonlinear()
            }
            CExpr::Bin(BinOp::Div, a, b) => !b.is_ground() || a.has_nonlinear(),
            CExpr::Bin(_, a, b) | CExpr::Select(a, b) => a.has_nonlinear() || b.has_nonlinear(),
            CExpr::Store(a, b, c) => a.has_nonlinear() || b.has_nonlinear() || c.has_nonlinear(),
            CExpr::Abs(a) => a.has_nonlinear(),
            _ => false,
        }
    }

    /// No symbols and no bound variables.
    pub fn is_ground(&self) -> bool {
        match self {
            CExpr::Lit(_) | CExpr::ArrLit(_) => true,
            CExpr::Sym(_) | CExpr::Bound(_) => false,
            CExpr::Bin(_, a, b) | CExpr::Select(a, b) => a.is_ground() && b.is_ground(),
            CExpr::Store(a, b, c) => a.is_ground() && b.is_ground() && c.is_ground(),
            CExpr::Abs(a) => a.is_ground(),
        }
    }

    pub fn map_syms(&self, f: &mut impl FnMut(SymInt) -> CExpr) -> CExpr {
        match self {
            CExpr::Sym(s) => f(*s),
            CExpr::Lit(_) | CExpr::Bound(_) | CExpr::ArrLit(_) => self.clone(),
            CExpr::Bin(op, a, b) => CExpr::bin(*op, a.map_syms(f), b.map_syms(f)),
            CExpr::Select(a, b) => CExpr::select(a.map_syms(f), b.map_syms(f)),
            CExpr::Store(a, b, c) => CExpr::store(a.map_syms(f), b.map_syms(f), c.map_syms(f)),
            CExpr::Abs(a) => CExpr::abs(a.map_syms(f)),
        }
    }

    pub fn subst_bound(&self, var: u32, v: &CExpr) -> CExpr {
        match self {
            CExpr::Bound(b) if *b == var => v.clone(),
            CExpr::Lit(_) | CExpr::Bound(_) | CExpr::ArrLit(_) | CExpr::Sym(_) => self.clone(),
            CExpr::Bin(op, a, b) => CExpr::bin(*op, a.subst_bound(var, v), b.subst_bound(var, v)),
            CExpr::Select(a, b) => CExpr::select(a.subst_bound(var, v), b.subst_bound(var, v)),
            CExpr::Store(a, b, c) => {
                CExpr::store(a.subst_bound(var, v), b.subst_bound(var, v), c.subst_bound(var, v))
            }
            CExpr::Abs(a) => CExpr::abs(a.subst_bound(var, v)),
        }
    }

    /// Constant folding over literals only.
    pub fn fold(&self) -> CExpr {
        match self {
            CExpr::Bin(op, a, b) => {
                let (a, b) = (a.fold(), b.fold());
                if let (CExpr::Lit(x), CExpr::Lit(y)) = (&a, &b) {
                    if let Some(v) = op.apply(*x, *y) {
                        return CExpr::Lit(v);
                    }
                }
                match (op, &a, &b) {
                    (BinOp::Add, CExpr::Lit(0), _) => b,
                    (BinOp::Add | BinOp::Sub, _, CExpr::Lit(0)) => a,
                    (BinOp::Mul, CExpr::Lit(1), _) => b,
                    (BinOp::Mul | BinOp::Div, _, CExpr::Lit(1)) => a,
                    _ => CExpr::bin(*op, a, b),
                }
            }
            CExpr::Abs(a) => match a.fold() {
                CExpr::Lit(x) if x != i64::MIN => CExpr::Lit(x.abs()),
                a => CExpr::abs(a),
            },
            CExpr::Select(a, i) => CExpr::select(a.fold(), i.fold()),
            CExpr::Store(a, i, v) => CExpr::store(a.fold(), i.fold(), v.fold()),
            e => e.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Constraint {
    True,
    Cmp(CmpOp, CExpr, CExpr),
    And(Vec<Constraint>),
    Not(Box<Constraint>),
    /// Universally quantified over the index domain of the arrays it mentions.
    Forall(u32, Box<Constraint>),
}

impl Constraint {
    pub fn cmp(op: CmpOp, a: CExpr, b: CExpr) -> Constraint {
        Constraint::Cmp(op, a, b)
    }

    pub fn eq(a: CExpr, b: CExpr) -> Constraint {
        Constraint::Cmp(CmpOp::Eq, a, b)
    }

    pub fn le(a: CExpr, b: CExpr) -> Constraint {
        Constraint::Cmp(CmpOp::Le, a, b)
    }

    pub fn gt0(a: CExpr) -> Constraint {
        Constraint::Cmp(CmpOp::Gt, a, CExpr::Lit(0))
    }

    pub fn le0(a: CExpr) -> Constraint {
        Constraint::Cmp(CmpOp::Le, a, CExpr::Lit(0))
    }

    pub fn not(c: Constraint) -> Constraint {
        match c {
            Constraint::Not(inner) => *inner,
            c => Constraint::Not(Box::new(c)),
        }
    }

    pub fn and(mut cs: Vec<Constraint>) -> Constraint {
        cs.retain(|c| *c != Constraint::True);
        match cs.len() {
            0 => Constraint::True,
            1 => cs.pop().unwrap(),
            _ => Constraint::And(cs),
        }
    }

    pub fn implies(a: Constraint, b: Constraint) -> Constraint {
        // a => b  ==  not (a and not b)
        Constraint::not(Constraint::and(vec![a, Constraint::not(b)]))
    }

    pub fn or(cs: Vec<Constraint>) -> Constraint {
        if cs.is_empty() {
            return Constraint::not(Constraint::True);
        }
        Constraint::not(Constraint::and(cs.into_iter().map(Constraint::not).collect()))
    }

    pub fn symbols(&self, out: &mut BTreeSet<SymInt>) {
        match self {
            Constraint::True => {}
            Constraint::Cmp(_, a, b) => {
                a.symbols(out);
                b.symbols(out);
            }
            Constraint::And(cs) => cs.iter().for_each(|c| c.symbols(out)),
            Constraint::Not(c) | Constraint::Forall(_, c) => c.symbols(out),
        }
    }

    pub fn symbol_set(&self) -> BTreeSet<SymInt> {
        let mut s = BTreeSet::new();
        self.symbols(&mut s);
        s
    }

    pub fn map_exprs(&self, f: &mut impl FnMut(&CExpr) -> CExpr) -> Constraint {
        match self {
            Constraint::True => Constraint::True,
            Constraint::Cmp(op, a, b) => Constraint::Cmp(*op, f(a), f(b)),
            Constraint::And(cs) => Constraint::And(cs.iter().map(|c| c.map_exprs(f)).collect()),
            Constraint::Not(c) => Constraint::Not(Box::new(c.map_exprs(f))),
            Constraint::Forall(v, c) => Constraint::Forall(*v, Box::new(c.map_exprs(f))),
        }
    }

    pub fn map_syms(&self, f: &mut impl FnMut(SymInt) -> CExpr) -> Constraint {
        self.map_exprs(&mut |e| e.map_syms(f))
    }

    pub fn subst_bound(&self, var: u32, v: &CExpr) -> Constraint {
        match self {
            Constraint::Forall(w, _) if *w == var => self.clone(),
            c => c.map_exprs_shallow(var, v),
        }
    }

    fn map_exprs_shallow(&self, var: u32, v: &CExpr) -> Constraint {
        match self {
            Constraint::True => Constraint::True,
            Constraint::Cmp(op, a, b) => Constraint::Cmp(*op, a.subst_bound(var, v), b.subst_bound(var, v)),
            Constraint::And(cs) => Constraint::And(cs.iter().map(|c| c.subst_bound(var, v)).collect()),
            Constraint::Not(c) => Constraint::Not(Box::new(c.subst_bound(var, v))),
            Constraint::Forall(w, c) => Constraint::Forall(*w, Box::new(c.subst_bound(var, v))),
        }
    }

    pub fn has_nonlinear(&self) -> bool {
        match self {
            Constraint::True => false,
            Constraint::Cmp(_, a, b) => a.has_nonlinear() || b.has_nonlinear(),
            Constraint::And(cs) => cs.iter().any(|c| c.has_nonlinear()),
            Constraint::Not(c) | Constraint::Forall(_, c) => c.has_nonlinear(),
        }
    }

    pub fn has_forall(&self) -> bool {
        match self {
            Constraint::Forall(..) => true,
            Constraint::And(cs) => cs.iter().any(|c| c.has_forall()),
            Constraint::Not(c) => c.has_forall(),
            _ => false,
        }
    }
}

// Canonical text.

pub fn fmt_cexpr(reg: &Registry, e: &CExpr) -> String {
    let mut s = String::new();
    cexpr(&mut s, reg, e, 0);
    s
}

fn lit(out: &mut String, n: i64) {
    match n {
        BOT => out.push_str("bot"),
        TOP => out.push_str("top"),
        n => write!(out, "{n}").unwrap(),
    }
}

fn cexpr(out: &mut String, reg: &Registry, e: &CExpr, parent: u8) {
    match e {
        CExpr::Lit(n) => lit(out, *n),
        CExpr::Sym(s) => out.push_str(reg.name(*s)),
        CExpr::Bound(b) => write!(out, "i{b}").unwrap(),
        CExpr::ArrLit(v) => write!(out, "{v:?}").unwrap(),
        CExpr::Bin(op, a, b) => {
            let p = op.precedence();
            let wrap = p < parent;
            if wrap {
                out.push('(');
            }
            cexpr(out, reg, a, p);
            write!(out, " {} ", op.symbol()).unwrap();
            cexpr(out, reg, b, p + 1);
            if wrap {
                out.push(')');
            }
        }
        CExpr::Abs(a) => {
            out.push('|');
            cexpr(out, reg, a, 0);
            out.push('|');
        }
        CExpr::Select(a, i) => {
            cexpr(out, reg, a, 3);
            out.push('[');
            cexpr(out, reg, i, 0);
            out.push(']');
        }
        CExpr::Store(a, i, v) => {
            out.push_str("store(");
            cexpr(out, reg, a, 0);
            out.push_str(", ");
            cexpr(out, reg, i, 0);
            out.push_str(", ");
            cexpr(out, reg, v, 0);
            out.push(')');
        }
    }
}

pub fn fmt_constraint(reg: &Registry, c: &Constraint) -> String {
    let mut s = String::new();
    constraint(&mut s, reg, c, false);
    s
}

fn constraint(out: &mut String, reg: &Registry, c: &Constraint, nested: bool) {
    match c {
        Constraint::True => out.push_str("true"),
        Constraint::Cmp(op, a, b) => {
            cexpr(out, reg, a, 0);
            write!(out, " {} ", op.symbol()).unwrap();
            cexpr(out, reg, b, 0);
        }
        Constraint::And(cs) => {
            if nested {
                out.push('(');
            }
            for (k, c) in cs.iter().enumerate() {
                if k > 0 {
                    out.push_str(" and ");
                }
                constraint(out, reg, c, true);
            }
            if nested {
                out.push(')');
            }
        }
        Constraint::Not(c) => {
            out.push_str("not ");
            constraint(out, reg, c, true);
        }
        Constraint::Forall(v, c) => {
            if nested {
                out.push('(');
            }
            write!(out, "forall i{v}. ").unwrap();
            constraint(out, reg, c, false);
            if nested {
                out.push(')');
            }
        }
    }
}

/// Why a constraint was added; the engine treats each kind differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "target", rename_all = "kebab-case")]
pub enum Role {
    /// Precondition (adjacency, `requires`).
    Pre,
    /// Branch condition chosen along the path.
    Guard,
    /// Functional definition of the given symbol in terms of earlier ones.
    Def(SymInt),
    /// Side condition on coupling choices.
    Choice,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Entry {
    pub c: Constraint,
    pub role: Role,
}

/// An ordered, duplicate-free list of constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConstraintSet {
    entries: Vec<Entry>,
}

impl ConstraintSet {
    pub fn new() -> ConstraintSet {
        ConstraintSet::default()
    }

    pub fn push(&mut self, c: Constraint, role: Role) {
        if c == Constraint::True || self.entries.iter().any(|e| e.c == c) {
            return;
        }
        self.entries.push(Entry { c, role });
    }

    pub fn push_entry(&mut self, e: Entry) {
        self.push(e.c, e.role)
    }

    pub fn extend(&mut self, other: &ConstraintSet) {
        for e in &other.entries {
            self.push_entry(e.clone());
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.entries.iter().map(|e| &e.c)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn filter(&self, mut keep: impl FnMut(&Entry) -> bool) -> ConstraintSet {
        ConstraintSet { entries: self.entries.iter().filter(|e| keep(e)).cloned().collect() }
    }

    pub fn symbols(&self) -> BTreeSet<SymInt> {
        let mut s = BTreeSet::new();
        for e in &self.entries {
            e.c.symbols(&mut s);
            if let Role::Def(t) = e.role {
                s.insert(t);
            }
        }
        s
    }

    pub fn conjunction(&self) -> Constraint {
        Constraint::and(self.iter().cloned().collect())
    }

    pub fn to_text(&self, reg: &Registry) -> Vec<String> {
        self.iter().map(|c| fmt_constraint(reg, c)).collect()
    }

    pub fn contains(&self, c: &Constraint) -> bool {
        self.entries.iter().any(|e| e.c == *c)
    }
}

impl FromIterator<Entry> for ConstraintSet {
    fn from_iter<T: IntoIterator<Item = Entry>>(iter: T) -> Self {
        let mut s = ConstraintSet::new();
        for e in iter {
            s.push_entry(e);
        }
        s
    }
}

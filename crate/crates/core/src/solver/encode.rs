use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::constraints::{CExpr, Constraint, Registry, Sort, SymInt};
use crate::lang::{BinOp, CmpOp};

/// Assertion language handed to the solver: constraints plus quantifier blocks over symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Atom(Constraint),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall(Vec<SymInt>, Box<Formula>),
    /// Raw SMT-LIB text, for selector constraints built by the synthesiser.
    Raw(String),
}

impl Formula {
    pub fn and_of(cs: &[Constraint]) -> Formula {
        Formula::And(cs.iter().cloned().map(Formula::Atom).collect())
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall(vars: Vec<SymInt>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Forall(vars, Box::new(body))
        }
    }

    /// Free symbols: those not bound by an enclosing `Forall`.
    pub fn free_symbols(&self, out: &mut BTreeSet<SymInt>) {
        match self {
            Formula::Atom(c) => c.symbols(out),
            Formula::Not(f) => f.free_symbols(out),
            Formula::And(fs) => fs.iter().for_each(|f| f.free_symbols(out)),
            Formula::Implies(a, b) => {
                a.free_symbols(out);
                b.free_symbols(out);
            }
            Formula::Forall(vs, f) => {
                let mut inner = BTreeSet::new();
                f.free_symbols(&mut inner);
                for s in inner {
                    if !vs.contains(&s) {
                        out.insert(s);
                    }
                }
            }
            Formula::Raw(_) => {}
        }
    }

    fn features(&self, f: &mut Features) {
        match self {
            Formula::Atom(c) => f.constraint(c),
            Formula::Not(x) => x.features(f),
            Formula::And(xs) => xs.iter().for_each(|x| x.features(f)),
            Formula::Implies(a, b) => {
                a.features(f);
                b.features(f);
            }
            Formula::Forall(vs, x) => {
                f.quantified = true;
                if vs.iter().any(|s| s.sort == Sort::Array) {
                    f.arrays = true;
                }
                x.features(f);
            }
            Formula::Raw(_) => {}
        }
    }
}

#[derive(Default)]
struct Features {
    quantified: bool,
    arrays: bool,
    nonlinear: bool,
}

impl Features {
    fn constraint(&mut self, c: &Constraint) {
        if c.has_forall() {
            self.quantified = true;
        }
        if c.has_nonlinear() {
            self.nonlinear = true;
        }
        let mut syms = BTreeSet::new();
        c.symbols(&mut syms);
        if syms.iter().any(|s| s.sort == Sort::Array) || has_array_lit(c) {
            self.arrays = true;
        }
    }
}

fn has_array_lit(c: &Constraint) -> bool {
    fn e(x: &CExpr) -> bool {
        match x {
            CExpr::ArrLit(_) | CExpr::Select(..) | CExpr::Store(..) => true,
            CExpr::Bin(_, a, b) => e(a) || e(b),
            CExpr::Abs(a) => e(a),
            _ => false,
        }
    }
    match c {
        Constraint::True => false,
        Constraint::Cmp(_, a, b) => e(a) || e(b),
        Constraint::And(cs) => cs.iter().any(has_array_lit),
        Constraint::Not(c) | Constraint::Forall(_, c) => has_array_lit(c),
    }
}

/// Name of a symbol on the wire.
pub fn smt_name(s: SymInt) -> String {
    format!("v{}", s.id)
}

fn lit(n: i64) -> String {
    if n < 0 {
        format!("(- {})", n.unsigned_abs())
    } else {
        n.to_string()
    }
}

/// Emits SMT-LIB text; `rename` overrides the wire name of selected symbols.
pub struct Encoder<'a> {
    pub rename: &'a BTreeMap<u32, String>,
}

impl Encoder<'_> {
    fn name(&self, s: SymInt) -> String {
        self.rename.get(&s.id).cloned().unwrap_or_else(|| smt_name(s))
    }

    pub fn expr(&self, e: &CExpr) -> String {
        match e {
            CExpr::Lit(n) => lit(*n),
            CExpr::Sym(s) => self.name(*s),
            CExpr::Bound(b) => format!("i{b}"),
            CExpr::Bin(op, a, b) => {
                let (x, y) = (self.expr(a), self.expr(b));
                match op {
                    BinOp::Add => format!("(+ {x} {y})"),
                    BinOp::Sub => format!("(- {x} {y})"),
                    BinOp::Mul => format!("(* {x} {y})"),
                    // truncating division
                    BinOp::Div => format!("(ite (>= {x} 0) (div {x} {y}) (- (div (- {x}) {y})))"),
                }
            }
            CExpr::Abs(a) => {
                let x = self.expr(a);
                format!("(ite (>= {x} 0) {x} (- {x}))")
            }
            CExpr::Select(a, i) => format!("(select {} {})", self.expr(a), self.expr(i)),
            CExpr::Store(a, i, v) => format!("(store {} {} {})", self.expr(a), self.expr(i), self.expr(v)),
            CExpr::ArrLit(v) => {
                let mut s = "((as const (Array Int Int)) 0)".to_string();
                for (k, x) in v.iter().enumerate() {
                    s = format!("(store {s} {} {})", k + 1, lit(*x));
                }
                s
            }
        }
    }

    pub fn constraint(&self, c: &Constraint) -> String {
        match c {
            Constraint::True => "true".into(),
            Constraint::Cmp(op, a, b) => {
                let (x, y) = (self.expr(a), self.expr(b));
                match op {
                    CmpOp::Ne => format!("(not (= {x} {y}))"),
                    _ => format!("({} {x} {y})", op.symbol()),
                }
            }
            Constraint::And(cs) if cs.is_empty() => "true".into(),
            Constraint::And(cs) => {
                format!("(and {})", cs.iter().map(|c| self.constraint(c)).collect::<Vec<_>>().join(" "))
            }
            Constraint::Not(c) => format!("(not {})", self.constraint(c)),
            Constraint::Forall(b, c) => format!("(forall ((i{b} Int)) {})", self.constraint(c)),
        }
    }

    pub fn formula(&self, f: &Formula) -> String {
        match f {
            Formula::Atom(c) => self.constraint(c),
            Formula::Not(x) => format!("(not {})", self.formula(x)),
            Formula::And(xs) if xs.is_empty() => "true".into(),
            Formula::And(xs) => format!("(and {})", xs.iter().map(|x| self.formula(x)).collect::<Vec<_>>().join(" ")),
            Formula::Implies(a, b) => format!("(=> {} {})", self.formula(a), self.formula(b)),
            Formula::Forall(vs, x) => {
                let binders: Vec<String> = vs.iter().map(|s| format!("({} {})", self.name(*s), sort_text(*s))).collect();
                format!("(forall ({}) {})", binders.join(" "), self.formula(x))
            }
            Formula::Raw(s) => s.clone(),
        }
    }
}

fn sort_text(s: SymInt) -> &'static str {
    match s.sort {
        Sort::Int => "Int",
        Sort::Array => "(Array Int Int)",
    }
}

/// A complete query script minus the trailing `(check-sat)`.
#[derive(Debug, Clone)]
pub struct Script {
    pub text: String,
    pub logic: String,
    /// Declared symbols, in id order.
    pub declared: Vec<SymInt>,
}

/// Build the declarations and assertions for `asserts`; `extra_decls` are raw
/// `(declare-const ...)` lines for names outside the registry.
pub fn build_script(
    reg: &Registry,
    asserts: &[Formula],
    extra_decls: &[String],
    timeout_ms: u64,
    rename: &BTreeMap<u32, String>,
) -> Script {
    let mut feats = Features::default();
    let mut free = BTreeSet::new();
    for f in asserts {
        f.features(&mut feats);
        f.free_symbols(&mut free);
    }
    let free: Vec<SymInt> = free.into_iter().filter(|s| !rename.contains_key(&s.id)).collect();
    let logic = if feats.nonlinear {
        "ALL".to_string()
    } else {
        format!("{}{}", if feats.quantified { "" } else { "QF_" }, if feats.arrays { "AUFLIA" } else { "LIA" })
    };
    let enc = Encoder { rename };
    let mut t = String::new();
    let _ = writeln!(t, "(set-option :produce-models true)");
    let _ = writeln!(t, "(set-option :timeout {timeout_ms})");
    let _ = writeln!(t, "(set-logic {logic})");
    for s in &free {
        let _ = writeln!(t, "(declare-const {} {}) ; {}", smt_name(*s), sort_text(*s), reg.name(*s));
    }
    for d in extra_decls {
        let _ = writeln!(t, "{d}");
    }
    for f in asserts {
        let _ = writeln!(t, "(assert {})", enc.formula(f));
    }
    Script { text: t, logic, declared: free }
}

/// Recover the declared symbol ids from a script's text.
pub fn decoded_declarations(text: &str) -> Vec<u32> {
    text.lines()
        .filter_map(|l| l.strip_prefix("(declare-const v"))
        .filter_map(|rest| rest.split_whitespace().next()?.parse().ok())
        .collect()
}

/// Minimal s-expressions for `get-value` replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExp {
    Atom(String),
    List(Vec<SExp>),
}

pub fn parse_sexp(text: &str) -> Option<SExp> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    let mut pos = 0;
    let e = parse_at(&toks, &mut pos)?;
    Some(e)
}

fn parse_at(toks: &[String], pos: &mut usize) -> Option<SExp> {
    let t = toks.get(*pos)?;
    *pos += 1;
    if t == "(" {
        let mut items = Vec::new();
        while toks.get(*pos)? != ")" {
            items.push(parse_at(toks, pos)?);
        }
        *pos += 1;
        Some(SExp::List(items))
    } else if t == ")" {
        None
    } else {
        Some(SExp::Atom(t.clone()))
    }
}

/// Integer value of `n` or `(- n)`.
pub fn sexp_int(e: &SExp) -> Option<i64> {
    match e {
        SExp::Atom(a) => a.parse().ok(),
        SExp::List(xs) => match xs.as_slice() {
            [SExp::Atom(m), x] if m == "-" => sexp_int(x).map(|v| -v),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Origin;
    use crate::lang::Side;

    #[test]
    fn literals_and_division() {
        let enc = Encoder { rename: &BTreeMap::new() };
        assert_eq!(enc.expr(&CExpr::Lit(-3)), "(- 3)");
        let d = enc.expr(&CExpr::bin(BinOp::Div, CExpr::Lit(7), CExpr::Lit(2)));
        assert!(d.starts_with("(ite (>= 7 0) (div 7 2)"));
    }

    #[test]
    fn sexp_values() {
        let e = parse_sexp("((v1 (- 4)) (v2 7))").unwrap();
        let SExp::List(items) = e else { panic!() };
        let SExp::List(p) = &items[0] else { panic!() };
        assert_eq!(sexp_int(&p[1]), Some(-4));
    }

    #[test]
    fn declarations_round_trip() {
        let mut r = Registry::new();
        let x = r.fresh(Side::Left, Origin::Input, "X");
        let y = r.fresh(Side::Right, Origin::Input, "Y");
        let f = Formula::Atom(Constraint::le(CExpr::sym(x), CExpr::sym(y)));
        let s = build_script(&r, &[f], &[], 1000, &BTreeMap::new());
        assert_eq!(s.logic, "QF_LIA");
        assert_eq!(decoded_declarations(&s.text), s.declared.iter().map(|s| s.id).collect::<Vec<_>>());
    }
}

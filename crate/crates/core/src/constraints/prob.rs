use std::collections::BTreeSet;
use std::fmt::Write;

use num_rational::Ratio;
use serde::Serialize;

use super::{fmt_cexpr, CExpr, ProbSym, Registry, SymInt};
use crate::lang::BinOp;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum RandExpr {
    Int(i64),
    Sym(SymInt),
    Prob(ProbSym),
    Bin(BinOp, Box<RandExpr>, Box<RandExpr>),
}

impl RandExpr {
    pub fn bin(op: BinOp, a: RandExpr, b: RandExpr) -> RandExpr {
        RandExpr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Integer expressions without arrays or absolute values embed directly.
    pub fn from_cexpr(e: &CExpr) -> Option<RandExpr> {
        Some(match e {
            CExpr::Lit(n) => RandExpr::Int(*n),
            CExpr::Sym(s) => RandExpr::Sym(*s),
            CExpr::Bin(op, a, b) => RandExpr::bin(*op, RandExpr::from_cexpr(a)?, RandExpr::from_cexpr(b)?),
            _ => return None,
        })
    }

    pub fn probs(&self, out: &mut BTreeSet<ProbSym>) {
        match self {
            RandExpr::Prob(y) => {
                out.insert(*y);
            }
            RandExpr::Bin(_, a, b) => {
                a.probs(out);
                b.probs(out);
            }
            _ => {}
        }
    }

    pub fn symbols(&self, out: &mut BTreeSet<SymInt>) {
        match self {
            RandExpr::Sym(s) => {
                out.insert(*s);
            }
            RandExpr::Bin(_, a, b) => {
                a.symbols(out);
                b.symbols(out);
            }
            _ => {}
        }
    }

    pub fn map_syms(&self, f: &mut impl FnMut(SymInt) -> RandExpr) -> RandExpr {
        match self {
            RandExpr::Sym(s) => f(*s),
            RandExpr::Bin(op, a, b) => RandExpr::bin(*op, a.map_syms(f), b.map_syms(f)),
            e => e.clone(),
        }
    }
}

/// Inverse scale of a Laplace sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Scale {
    /// A concrete positive rational.
    Rat(#[serde(serialize_with = "ser_ratio")] Ratio<i64>),
    /// A rational multiple of the privacy parameter.
    Eps(#[serde(serialize_with = "ser_ratio")] Ratio<i64>),
    /// A symbolic integer.
    Sym(CExpr),
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl Scale {
    /// Numeric inverse scale given a concrete eps.
    pub fn value(&self, eps: f64) -> Option<f64> {
        let f = |r: &Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
        match self {
            Scale::Rat(r) => Some(f(r)),
            Scale::Eps(c) => Some(f(c) * eps),
            Scale::Sym(CExpr::Lit(n)) => Some(*n as f64),
            Scale::Sym(_) => None,
        }
    }

    pub fn text(&self, reg: &Registry) -> String {
        match self {
            Scale::Rat(r) => r.to_string(),
            Scale::Eps(c) => crate::lang::pretty::print_budget(c),
            Scale::Sym(e) => fmt_cexpr(reg, e),
        }
    }
}

/// The variable a sampling site binds: a random symbol, or an integer symbol once a coupling
/// or an avoided coupling has turned the sample into an ordinary unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SampleVar {
    Prob(ProbSym),
    Int(SymInt),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum ProbEntry {
    LapDecl { var: SampleVar, mean: CExpr, scale: Scale },
    /// Declares a random symbol as an expression over earlier ones.
    Eq(ProbSym, RandExpr),
    Gt0(RandExpr),
    Le0(RandExpr),
}

/// Ordered probabilistic path constraints; only ever appended to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProbTrace {
    entries: Vec<ProbEntry>,
}

impl ProbTrace {
    pub fn new() -> ProbTrace {
        ProbTrace::default()
    }

    pub fn push(&mut self, e: ProbEntry) {
        self.entries.push(e);
    }

    pub fn entries(&self) -> &[ProbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_prefix_of(&self, other: &ProbTrace) -> bool {
        other.entries.len() >= self.entries.len() && other.entries[..self.entries.len()] == self.entries[..]
    }

    /// Number of sampling declarations.
    pub fn samples(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, ProbEntry::LapDecl { .. })).count()
    }

    /// Random symbols in declaration order.
    pub fn declared(&self) -> Vec<ProbSym> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                ProbEntry::LapDecl { var: SampleVar::Prob(y), .. } | ProbEntry::Eq(y, _) => Some(*y),
                _ => None,
            })
            .collect()
    }

    /// Every random symbol is declared before it is used.
    pub fn well_formed(&self) -> bool {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let mut used = BTreeSet::new();
            match e {
                ProbEntry::LapDecl { var, .. } => {
                    if let SampleVar::Prob(y) = var {
                        if !seen.insert(*y) {
                            return false;
                        }
                    }
                }
                ProbEntry::Eq(y, re) => {
                    re.probs(&mut used);
                    if !used.is_subset(&seen) || !seen.insert(*y) {
                        return false;
                    }
                }
                ProbEntry::Gt0(re) | ProbEntry::Le0(re) => {
                    re.probs(&mut used);
                    if !used.is_subset(&seen) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn to_text(&self, reg: &Registry) -> Vec<String> {
        self.entries.iter().map(|e| fmt_prob_entry(reg, e)).collect()
    }

    pub fn map_syms(&self, f: &mut impl FnMut(SymInt) -> CExpr) -> ProbTrace {
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let mut g = |s: SymInt| RandExpr::from_cexpr(&f(s)).unwrap_or(RandExpr::Sym(s));
            entries.push(match e {
                ProbEntry::Eq(y, re) => ProbEntry::Eq(*y, re.map_syms(&mut g)),
                ProbEntry::Gt0(re) => ProbEntry::Gt0(re.map_syms(&mut g)),
                ProbEntry::Le0(re) => ProbEntry::Le0(re.map_syms(&mut g)),
                ProbEntry::LapDecl { var, mean, scale } => ProbEntry::LapDecl {
                    var: *var,
                    mean: mean.map_syms(f).fold(),
                    scale: match scale {
                        Scale::Sym(c) => Scale::Sym(c.map_syms(f).fold()),
                        s => s.clone(),
                    },
                },
            });
        }
        ProbTrace { entries }
    }
}

pub fn fmt_rand(reg: &Registry, e: &RandExpr) -> String {
    let mut s = String::new();
    rand(&mut s, reg, e, 0);
    s
}

fn rand(out: &mut String, reg: &Registry, e: &RandExpr, parent: u8) {
    match e {
        RandExpr::Int(n) => out.push_str(&fmt_cexpr(reg, &CExpr::Lit(*n))),
        RandExpr::Sym(s) => out.push_str(reg.name(*s)),
        RandExpr::Prob(y) => write!(out, "{y}").unwrap(),
        RandExpr::Bin(op, a, b) => {
            let p = op.precedence();
            if p < parent {
                out.push('(');
            }
            rand(out, reg, a, p);
            write!(out, " {} ", op.symbol()).unwrap();
            rand(out, reg, b, p + 1);
            if p < parent {
                out.push(')');
            }
        }
    }
}

pub fn fmt_prob_entry(reg: &Registry, e: &ProbEntry) -> String {
    match e {
        ProbEntry::LapDecl { var, mean, scale } => {
            let v = match var {
                SampleVar::Prob(y) => y.to_string(),
                SampleVar::Int(s) => reg.name(*s).to_string(),
            };
            format!("{v} ~ lap({}, {})", fmt_cexpr(reg, mean), scale.text(reg))
        }
        ProbEntry::Eq(y, re) => format!("{y} = {}", fmt_rand(reg, re)),
        ProbEntry::Gt0(re) => format!("{} > 0", fmt_rand(reg, re)),
        ProbEntry::Le0(re) => format!("{} <= 0", fmt_rand(reg, re)),
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Short invariant name, e.g. `output-assigned`.
    pub invariant: &'static str,
    /// Path into the AST, e.g. `body.1.then.0`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] at {}: {}", self.invariant, self.location, self.message)
    }
}

pub fn check_wellformed(p: &Program) -> Vec<Diagnostic> {
    let mut cx = Checker { p, out: Vec::new() };
    for q in &p.queries {
        if q.sensitivity < 0 {
            cx.push("query-sensitivity", format!("query {}", q.name), "sensitivity must be non-negative".into());
        }
        if p.query_len(q).is_none_or(|n| n < 1) {
            cx.push("query-length", format!("query {}", q.name), "length must be a positive constant".into());
        }
    }
    if *p.budget.numer() <= 0 {
        cx.push("budget", "budget".into(), "budget must be positive".into());
    }
    cx.cmd(&p.body, "body", false);
    if !assigns(&p.body, &p.output, p) {
        cx.push(
            "output-assigned",
            "body".into(),
            format!("output `{}` is not assigned on every path", p.output),
        );
    }
    cx.out
}

struct Checker<'a> {
    p: &'a Program,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, invariant: &'static str, location: String, message: String) {
        self.out.push(Diagnostic { invariant, location, message });
    }

    fn cmd(&mut self, c: &Cmd, loc: &str, in_pair: bool) {
        match c {
            Cmd::Skip => {}
            Cmd::Seq(..) => {
                let mut items = Vec::new();
                flatten(c, &mut items);
                for (k, item) in items.iter().enumerate() {
                    self.cmd(item, &format!("{loc}.{k}"), in_pair);
                }
            }
            Cmd::Assign(_, e) => self.expr(e, &format!("{loc}.rhs"), in_pair, false),
            Cmd::ArrAssign(_, i, e) | Cmd::ArrInit(_, i, e) => {
                self.expr(i, &format!("{loc}.index"), in_pair, false);
                self.expr(e, &format!("{loc}.rhs"), in_pair, false);
            }
            Cmd::LapSample { mean, inv_scale, .. } => {
                self.expr(mean, &format!("{loc}.mean"), in_pair, false);
                self.expr(inv_scale, &format!("{loc}.scale"), in_pair, true);
            }
            Cmd::If(g, a, b) => {
                self.expr(g, &format!("{loc}.guard"), in_pair, false);
                self.cmd(a, &format!("{loc}.then"), in_pair);
                self.cmd(b, &format!("{loc}.else"), in_pair);
            }
            Cmd::For(_, lo, hi, b) => {
                self.expr(lo, &format!("{loc}.lo"), in_pair, false);
                self.expr(hi, &format!("{loc}.hi"), in_pair, false);
                self.cmd(b, &format!("{loc}.body"), in_pair);
            }
            Cmd::PairCmd(a, b) => {
                if in_pair {
                    self.push("pair-nesting", loc.to_string(), "pair command nested inside a pair".into());
                }
                self.cmd(a, &format!("{loc}.left"), true);
                self.cmd(b, &format!("{loc}.right"), true);
            }
        }
    }

    fn expr(&mut self, e: &Expr, loc: &str, in_pair: bool, scale: bool) {
        match e {
            Expr::IntLit(_) | Expr::Len(_) => {}
            Expr::Var(x) => {
                if x == EPS && !scale {
                    self.push("eps-in-scale", loc.to_string(), "`eps` may only appear in a sampling scale".into());
                }
            }
            Expr::ArrIdx(_, i) => self.expr(i, loc, in_pair, false),
            Expr::BinOp(_, a, b) => {
                self.expr(a, loc, in_pair, scale);
                self.expr(b, loc, in_pair, scale);
            }
            Expr::Pair(a, b) => {
                if in_pair {
                    self.push("pair-nesting", loc.to_string(), "pair expression nested inside a pair".into());
                }
                self.expr(a, loc, true, scale);
                self.expr(b, loc, true, scale);
            }
            Expr::Query { name, index, .. } => {
                let Some(q) = self.p.query(name) else {
                    self.push("query-declared", loc.to_string(), format!("query `{name}` is not declared"));
                    return;
                };
                match (index, &q.len) {
                    (None, Some(_)) => self.push(
                        "query-declared",
                        loc.to_string(),
                        format!("query `{name}` is indexed and needs `{name}[i](d)`"),
                    ),
                    (Some(_), None) => self.push(
                        "query-declared",
                        loc.to_string(),
                        format!("query `{name}` is scalar and takes no index"),
                    ),
                    (Some(i), Some(_)) => {
                        if let (Some(k), Some(n)) = (self.p.static_int(i), self.p.query_len(q)) {
                            if k < 1 || k > n {
                                self.push(
                                    "query-declared",
                                    loc.to_string(),
                                    format!("query `{name}[{k}]` is outside the declared range 1..{n}"),
                                );
                            }
                        }
                        self.expr(i, loc, in_pair, false);
                    }
                    (None, None) => {}
                }
            }
        }
    }
}

fn flatten<'a>(c: &'a Cmd, out: &mut Vec<&'a Cmd>) {
    match c {
        Cmd::Seq(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        c => out.push(c),
    }
}

/// Whether `x` is definitely written on every syntactic path of `c`.
fn assigns(c: &Cmd, x: &str, p: &Program) -> bool {
    match c {
        Cmd::Skip => false,
        Cmd::Assign(y, _) | Cmd::ArrInit(y, _, _) | Cmd::ArrAssign(y, _, _) => y == x,
        Cmd::LapSample { var, .. } => var == x,
        Cmd::Seq(a, b) => assigns(a, x, p) || assigns(b, x, p),
        Cmd::If(_, a, b) | Cmd::PairCmd(a, b) => assigns(a, x, p) && assigns(b, x, p),
        Cmd::For(_, lo, hi, b) => {
            let nonempty = matches!((p.static_int(lo), p.static_int(hi)), (Some(l), Some(h)) if l <= h);
            nonempty && assigns(b, x, p)
        }
    }
}

/// Names written anywhere in `c`.
pub fn written_vars(c: &Cmd) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn go(c: &Cmd, out: &mut BTreeSet<String>) {
        match c {
            Cmd::Skip => {}
            Cmd::Assign(y, _) | Cmd::ArrInit(y, _, _) | Cmd::ArrAssign(y, _, _) => {
                out.insert(y.clone());
            }
            Cmd::LapSample { var, .. } => {
                out.insert(var.clone());
            }
            Cmd::For(i, _, _, b) => {
                out.insert(i.clone());
                go(b, out);
            }
            Cmd::Seq(a, b) | Cmd::If(_, a, b) | Cmd::PairCmd(a, b) => {
                go(a, out);
                go(b, out);
            }
        }
    }
    go(c, &mut out);
    out
}

//! The source language: AST, concrete syntax, projections and well-formedness.

pub mod ast;
mod lexer;
mod parser;
pub mod pretty;
pub mod wf;

pub use ast::*;
pub use parser::parse_program;
pub use pretty::{print_assertion, print_cmd, print_expr, print_program};
pub use wf::{check_wellformed, Diagnostic};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    /// 1-based; 0 when the error is not tied to a single token.
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl ParseError {
    pub fn at(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
        ParseError { line, col, msg: msg.into() }
    }
}

/// Call `f` on every expression that occurs directly in a command (guards, right-hand sides,
/// indices, bounds, sampling arguments), recursing through sub-commands.
pub fn visit_exprs(c: &Cmd, f: &mut impl FnMut(&Expr)) {
    match c {
        Cmd::Skip => {}
        Cmd::Assign(_, e) => f(e),
        Cmd::ArrAssign(_, i, e) | Cmd::ArrInit(_, i, e) => {
            f(i);
            f(e);
        }
        Cmd::LapSample { mean, inv_scale, .. } => {
            f(mean);
            f(inv_scale);
        }
        Cmd::If(g, a, b) => {
            f(g);
            visit_exprs(a, f);
            visit_exprs(b, f);
        }
        Cmd::For(_, lo, hi, b) => {
            f(lo);
            f(hi);
            visit_exprs(b, f);
        }
        Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => {
            visit_exprs(a, f);
            visit_exprs(b, f);
        }
    }
}

/// Left or right projection of a relational expression.
pub fn project_expr(side: Side, e: &Expr) -> Expr {
    let p = |x: &Expr| Box::new(project_expr(side, x));
    match e {
        Expr::Pair(a, b) => match side {
            Side::Right => project_expr(side, b),
            _ => project_expr(side, a),
        },
        Expr::IntLit(_) | Expr::Var(_) | Expr::Len(_) => e.clone(),
        Expr::ArrIdx(a, i) => Expr::ArrIdx(a.clone(), p(i)),
        Expr::BinOp(op, a, b) => Expr::BinOp(*op, p(a), p(b)),
        Expr::Query { name, index, db } => Expr::Query {
            name: name.clone(),
            index: index.as_ref().map(|i| p(i)),
            db: db.clone(),
        },
    }
}

/// Left or right projection of a relational command. `Side::Shared` is treated as left.
pub fn project(side: Side, c: &Cmd) -> Cmd {
    let pe = |e: &Expr| project_expr(side, e);
    let pc = |c: &Cmd| Box::new(project(side, c));
    match c {
        Cmd::Skip => Cmd::Skip,
        Cmd::PairCmd(a, b) => match side {
            Side::Right => project(side, b),
            _ => project(side, a),
        },
        Cmd::Seq(a, b) => Cmd::Seq(pc(a), pc(b)),
        Cmd::Assign(x, e) => Cmd::Assign(x.clone(), pe(e)),
        Cmd::ArrAssign(a, i, e) => Cmd::ArrAssign(a.clone(), pe(i), pe(e)),
        Cmd::ArrInit(a, l, e) => Cmd::ArrInit(a.clone(), pe(l), pe(e)),
        Cmd::LapSample { var, mean, inv_scale } => Cmd::LapSample {
            var: var.clone(),
            mean: pe(mean),
            inv_scale: pe(inv_scale),
        },
        Cmd::If(g, a, b) => Cmd::If(pe(g), pc(a), pc(b)),
        Cmd::For(x, lo, hi, b) => Cmd::For(x.clone(), pe(lo), pe(hi), pc(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_examples() {
        let pair = Expr::pair(Expr::int(5), Expr::int(7));
        assert_eq!(project_expr(Side::Left, &pair), Expr::int(5));
        assert_eq!(project_expr(Side::Right, &Expr::int(4)), Expr::int(4));
        let c1 = Cmd::assign("x", Expr::int(1));
        let c2 = Cmd::assign("x", Expr::int(2));
        let c3 = Cmd::assign("y", pair);
        let c = Cmd::seq(Cmd::pair(c1.clone(), c2), c3);
        assert_eq!(project(Side::Left, &c), Cmd::seq(c1, Cmd::assign("y", Expr::int(5))));
    }
}

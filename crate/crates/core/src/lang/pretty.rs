//! Canonical printer. Its output parses back to the same AST.

use std::fmt::Write;

use num_rational::Ratio;

use super::ast::*;

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

fn int_lit(out: &mut String, n: i64) {
    match n {
        BOT => out.push_str("bot"),
        TOP => out.push_str("top"),
        n => write!(out, "{n}").unwrap(),
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::IntLit(n) => int_lit(out, *n),
        Expr::Var(x) => out.push_str(x),
        Expr::ArrIdx(a, i) => {
            out.push_str(a);
            out.push('[');
            expr(out, i);
            out.push(']');
        }
        Expr::Len(a) => write!(out, "len({a})").unwrap(),
        Expr::BinOp(op, a, b) => {
            operand(out, a, op.precedence(), false);
            write!(out, " {} ", op.symbol()).unwrap();
            operand(out, b, op.precedence(), true);
        }
        Expr::Pair(a, b) => {
            out.push('⟨');
            expr(out, a);
            out.push_str(" | ");
            expr(out, b);
            out.push('⟩');
        }
        Expr::Query { name, index, db } => {
            out.push_str(name);
            if let Some(i) = index {
                out.push('[');
                expr(out, i);
                out.push(']');
            }
            write!(out, "({db})").unwrap();
        }
    }
}

fn operand(out: &mut String, e: &Expr, parent: u8, right: bool) {
    let wrap = match e {
        Expr::BinOp(op, ..) => op.precedence() < parent || (right && op.precedence() == parent),
        _ => false,
    };
    if wrap {
        out.push('(');
    }
    expr(out, e);
    if wrap {
        out.push(')');
    }
}

pub fn print_cmd(c: &Cmd) -> String {
    let mut s = String::new();
    cmd(&mut s, c, 0);
    s
}

fn pad(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// Block form, one command per line. The caller has already indented the first line.
fn cmd(out: &mut String, c: &Cmd, depth: usize) {
    match c {
        Cmd::Seq(a, b) => {
            if matches!(**a, Cmd::Seq(..)) {
                out.push_str("(\n");
                pad(out, depth + 1);
                cmd(out, a, depth + 1);
                out.push('\n');
                pad(out, depth);
                out.push(')');
            } else {
                cmd(out, a, depth);
            }
            out.push_str(";\n");
            pad(out, depth);
            cmd(out, b, depth);
        }
        Cmd::If(g, a, b) => {
            out.push_str("if ");
            expr(out, g);
            out.push_str(" then\n");
            pad(out, depth + 1);
            cmd(out, a, depth + 1);
            out.push('\n');
            pad(out, depth);
            out.push_str("else\n");
            pad(out, depth + 1);
            cmd(out, b, depth + 1);
            out.push('\n');
            pad(out, depth);
            out.push_str("end");
        }
        Cmd::For(x, lo, hi, b) => {
            write!(out, "for {x} in ").unwrap();
            expr(out, lo);
            out.push(':');
            expr(out, hi);
            out.push_str(" do\n");
            pad(out, depth + 1);
            cmd(out, b, depth + 1);
            out.push('\n');
            pad(out, depth);
            out.push_str("end");
        }
        Cmd::PairCmd(a, b) => {
            out.push('⟨');
            inline(out, a);
            out.push_str(" | ");
            inline(out, b);
            out.push('⟩');
        }
        simple => atomic(out, simple),
    }
}

/// Single-line form used inside pair commands.
fn inline(out: &mut String, c: &Cmd) {
    match c {
        Cmd::Seq(a, b) => {
            if matches!(**a, Cmd::Seq(..)) {
                out.push('(');
                inline(out, a);
                out.push(')');
            } else {
                inline(out, a);
            }
            out.push_str("; ");
            inline(out, b);
        }
        Cmd::If(g, a, b) => {
            out.push_str("if ");
            expr(out, g);
            out.push_str(" then ");
            inline(out, a);
            out.push_str(" else ");
            inline(out, b);
            out.push_str(" end");
        }
        Cmd::For(x, lo, hi, b) => {
            write!(out, "for {x} in ").unwrap();
            expr(out, lo);
            out.push(':');
            expr(out, hi);
            out.push_str(" do ");
            inline(out, b);
            out.push_str(" end");
        }
        Cmd::PairCmd(a, b) => {
            out.push('⟨');
            inline(out, a);
            out.push_str(" | ");
            inline(out, b);
            out.push('⟩');
        }
        simple => atomic(out, simple),
    }
}

fn atomic(out: &mut String, c: &Cmd) {
    match c {
        Cmd::Skip => out.push_str("skip"),
        Cmd::Assign(x, e) => {
            write!(out, "{x} := ").unwrap();
            expr(out, e);
        }
        Cmd::ArrAssign(a, i, e) => {
            write!(out, "{a}[").unwrap();
            expr(out, i);
            out.push_str("] := ");
            expr(out, e);
        }
        Cmd::ArrInit(a, l, e) => {
            write!(out, "{a} := array(").unwrap();
            expr(out, l);
            out.push_str(", ");
            expr(out, e);
            out.push(')');
        }
        Cmd::LapSample { var, mean, inv_scale } => {
            write!(out, "{var} :~ lap(").unwrap();
            expr(out, mean);
            out.push_str(", ");
            expr(out, inv_scale);
            out.push(')');
        }
        _ => unreachable!("compound command in atomic position"),
    }
}

pub fn print_budget(b: &Ratio<i64>) -> String {
    let (n, d) = (*b.numer(), *b.denom());
    let mut s = String::new();
    if n != 1 {
        write!(s, "{n}*").unwrap();
    }
    s.push_str(EPS);
    if d != 1 {
        write!(s, "/{d}").unwrap();
    }
    s
}

pub fn print_assertion(a: &RelAssertion) -> String {
    let mut s = String::new();
    assertion(&mut s, a);
    s
}

fn assertion(out: &mut String, a: &RelAssertion) {
    match a {
        RelAssertion::Implies(l, r) => {
            assert_operand(out, l, matches!(**l, RelAssertion::Implies(..) | RelAssertion::Forall(..)));
            out.push_str(" => ");
            assertion(out, r);
        }
        RelAssertion::And(parts) if parts.len() >= 2 => {
            for (k, p) in parts.iter().enumerate() {
                if k > 0 {
                    out.push_str(" and ");
                }
                let wrap = matches!(p, RelAssertion::Implies(..) | RelAssertion::Forall(..) | RelAssertion::And(..));
                assert_operand(out, p, wrap);
            }
        }
        RelAssertion::And(parts) => match parts.first() {
            Some(p) => assertion(out, p),
            None => out.push_str("true"),
        },
        RelAssertion::Forall(x, body) => {
            write!(out, "forall {x}. ").unwrap();
            assertion(out, body);
        }
        RelAssertion::Not(inner) => {
            out.push_str("not ");
            let wrap = !matches!(**inner, RelAssertion::True | RelAssertion::Not(_));
            assert_operand(out, inner, wrap);
        }
        RelAssertion::True => out.push_str("true"),
        RelAssertion::Cmp(op, l, r) => {
            term(out, l);
            write!(out, " {} ", op.symbol()).unwrap();
            term(out, r);
        }
    }
}

fn assert_operand(out: &mut String, a: &RelAssertion, wrap: bool) {
    if wrap {
        out.push('(');
    }
    assertion(out, a);
    if wrap {
        out.push(')');
    }
}

pub fn print_term(t: &RelTerm) -> String {
    let mut s = String::new();
    term(&mut s, t);
    s
}

fn term(out: &mut String, t: &RelTerm) {
    match t {
        RelTerm::Int(n) => int_lit(out, *n),
        RelTerm::Logic(x) => out.push_str(x),
        RelTerm::Proj(e, side) => {
            let bare = matches!(e, Expr::Var(_) | Expr::ArrIdx(..) | Expr::Len(_) | Expr::Query { .. });
            if bare {
                expr(out, e);
            } else {
                out.push('(');
                expr(out, e);
                out.push(')');
            }
            write!(out, "<{}>", side.index()).unwrap();
        }
        RelTerm::Abs(inner) => {
            out.push('|');
            term(out, inner);
            out.push('|');
        }
        RelTerm::Bin(op, a, b) => {
            term_operand(out, a, op.precedence(), false);
            write!(out, " {} ", op.symbol()).unwrap();
            term_operand(out, b, op.precedence(), true);
        }
    }
}

fn term_operand(out: &mut String, t: &RelTerm, parent: u8, right: bool) {
    let wrap = match t {
        RelTerm::Bin(op, ..) => op.precedence() < parent || (right && op.precedence() == parent),
        _ => false,
    };
    if wrap {
        out.push('(');
    }
    term(out, t);
    if wrap {
        out.push(')');
    }
}

pub fn print_program(p: &Program) -> String {
    let mut s = String::new();
    writeln!(s, "program {}", p.name).unwrap();
    for (c, v) in &p.consts {
        writeln!(s, "const {c} = {v}").unwrap();
    }
    for prm in &p.params {
        write!(s, "param {} : ", prm.name).unwrap();
        match &prm.ty {
            ParamType::Int => s.push_str("int"),
            ParamType::Db => s.push_str("db"),
            ParamType::Array(len) => {
                s.push_str("array[");
                expr(&mut s, len);
                s.push(']');
            }
        }
        s.push('\n');
    }
    for q in &p.queries {
        write!(s, "query {}", q.name).unwrap();
        if let Some(len) = &q.len {
            s.push('[');
            expr(&mut s, len);
            s.push(']');
        }
        writeln!(s, " sensitivity {}", q.sensitivity).unwrap();
    }
    for r in &p.requires {
        writeln!(s, "requires {}", print_assertion(r)).unwrap();
    }
    for e in &p.ensures {
        writeln!(s, "ensures {}", print_assertion(e)).unwrap();
    }
    writeln!(s, "budget {}", print_budget(&p.budget)).unwrap();
    writeln!(s, "output {}", p.output).unwrap();
    s.push_str("begin\n  ");
    cmd(&mut s, &p.body, 1);
    s.push_str("\nend\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_parens() {
        let e = Expr::bin(
            BinOp::Sub,
            Expr::var("a"),
            Expr::bin(BinOp::Sub, Expr::var("b"), Expr::var("c")),
        );
        assert_eq!(print_expr(&e), "a - (b - c)");
        let e = Expr::bin(
            BinOp::Mul,
            Expr::bin(BinOp::Add, Expr::var("a"), Expr::int(1)),
            Expr::int(-2),
        );
        assert_eq!(print_expr(&e), "(a + 1) * -2");
    }

    #[test]
    fn budgets() {
        assert_eq!(print_budget(&Ratio::from_integer(1)), "eps");
        assert_eq!(print_budget(&Ratio::new(3, 2)), "3*eps/2");
        assert_eq!(print_budget(&Ratio::new(1, 4)), "eps/4");
    }
}

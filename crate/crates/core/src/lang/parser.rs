use std::collections::BTreeSet;

use num_rational::Ratio;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::ParseError;

const KEYWORDS: &[&str] = &[
    "program", "const", "param", "query", "sensitivity", "requires", "ensures", "budget", "output", "begin", "end",
    "skip", "if", "then", "else", "for", "in", "do", "lap", "array", "bot", "top", "len", "int", "db", "and",
    "not", "forall", "true", "abs",
];

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, queries: BTreeSet::new() };
    let prog = p.program()?;
    check_scoping(&prog)?;
    Ok(prog)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    queries: BTreeSet<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError::at(t.line, t.col, msg))
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {:?}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {t:?}")),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let neg = if *self.peek() == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(if neg { -n } else { n })
            }
            t => self.err(format!("expected integer, found {t:?}")),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        self.kw("program")?;
        let name = self.ident()?;
        let mut prog = Program {
            name,
            consts: vec![],
            params: vec![],
            queries: vec![],
            requires: vec![],
            ensures: vec![],
            budget: Ratio::from_integer(1),
            body: Cmd::Skip,
            output: String::new(),
        };
        let mut have_output = false;
        loop {
            match self.peek().clone() {
                Tok::Ident(k) if k == "const" => {
                    self.next();
                    let x = self.ident()?;
                    self.expect(Tok::Eq, "`=`")?;
                    let v = self.int()?;
                    prog.consts.push((x, v));
                }
                Tok::Ident(k) if k == "param" => {
                    self.next();
                    let x = self.ident()?;
                    self.expect(Tok::Colon, "`:`")?;
                    let ty = if self.is_kw("int") {
                        self.next();
                        ParamType::Int
                    } else if self.is_kw("db") {
                        self.next();
                        ParamType::Db
                    } else if self.is_kw("array") {
                        self.next();
                        self.expect(Tok::LBrack, "`[`")?;
                        let e = self.expr()?;
                        self.expect(Tok::RBrack, "`]`")?;
                        ParamType::Array(e)
                    } else {
                        return self.err("expected parameter type `int`, `db` or `array[len]`");
                    };
                    prog.params.push(Param { name: x, ty });
                }
                Tok::Ident(k) if k == "query" => {
                    self.next();
                    let x = self.ident()?;
                    let len = if *self.peek() == Tok::LBrack {
                        self.next();
                        let e = self.expr()?;
                        self.expect(Tok::RBrack, "`]`")?;
                        Some(e)
                    } else {
                        None
                    };
                    self.kw("sensitivity")?;
                    let r = self.int()?;
                    if r < 0 {
                        return self.err("sensitivity must be non-negative");
                    }
                    self.queries.insert(x.clone());
                    prog.queries.push(QueryDecl { name: x, len, sensitivity: r });
                }
                Tok::Ident(k) if k == "requires" => {
                    self.next();
                    prog.requires.push(self.assertion()?);
                }
                Tok::Ident(k) if k == "ensures" => {
                    self.next();
                    prog.ensures.push(self.assertion()?);
                }
                Tok::Ident(k) if k == "budget" => {
                    self.next();
                    prog.budget = self.budget()?;
                }
                Tok::Ident(k) if k == "output" => {
                    self.next();
                    prog.output = self.ident()?;
                    have_output = true;
                }
                Tok::Ident(k) if k == "begin" => {
                    self.next();
                    break;
                }
                t => return self.err(format!("expected a header item or `begin`, found {t:?}")),
            }
        }
        if !have_output {
            return self.err("missing `output` declaration");
        }
        prog.body = self.cmd_seq()?;
        self.kw("end")?;
        if *self.peek() != Tok::Eof {
            return self.err("trailing input after `end`");
        }
        Ok(prog)
    }

    /// `eps`, `2*eps`, `eps/4`, `3*eps/2`
    fn budget(&mut self) -> Result<Ratio<i64>, ParseError> {
        let mut num = 1;
        if let Tok::Int(n) = self.peek().clone() {
            self.next();
            num = n;
            self.expect(Tok::Star, "`*`")?;
        }
        self.kw(EPS)?;
        let mut den = 1;
        if *self.peek() == Tok::Slash {
            self.next();
            den = self.int()?;
        }
        if num <= 0 || den <= 0 {
            return self.err("budget must be a positive multiple of eps");
        }
        Ok(Ratio::new(num, den))
    }

    fn cmd_seq(&mut self) -> Result<Cmd, ParseError> {
        let mut cmds = vec![self.cmd()?];
        while *self.peek() == Tok::Semi {
            self.next();
            cmds.push(self.cmd()?);
        }
        Ok(Cmd::seq_all(cmds))
    }

    fn cmd(&mut self) -> Result<Cmd, ParseError> {
        match self.peek().clone() {
            Tok::Ident(k) if k == "skip" => {
                self.next();
                Ok(Cmd::Skip)
            }
            Tok::Ident(k) if k == "if" => {
                self.next();
                let g = self.expr()?;
                self.kw("then")?;
                let a = self.cmd_seq()?;
                let b = if self.is_kw("else") {
                    self.next();
                    self.cmd_seq()?
                } else {
                    Cmd::Skip
                };
                self.kw("end")?;
                Ok(Cmd::if_(g, a, b))
            }
            Tok::Ident(k) if k == "for" => {
                self.next();
                let x = self.ident()?;
                self.kw("in")?;
                let lo = self.expr()?;
                self.expect(Tok::Colon, "`:`")?;
                let hi = self.expr()?;
                self.kw("do")?;
                let body = self.cmd_seq()?;
                self.kw("end")?;
                Ok(Cmd::For(x, lo, hi, Box::new(body)))
            }
            Tok::LAngle => {
                self.next();
                let a = self.cmd_seq()?;
                self.expect(Tok::Bar, "`|`")?;
                let b = self.cmd_seq()?;
                self.expect(Tok::RAngle, "`⟩`")?;
                if a.contains_pair() || b.contains_pair() {
                    return self.err("nested pair: pair commands may not contain pairs");
                }
                Ok(Cmd::pair(a, b))
            }
            Tok::LParen => {
                self.next();
                let c = self.cmd_seq()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(c)
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                match self.peek().clone() {
                    Tok::Assign => {
                        self.next();
                        if self.is_kw("array") {
                            self.next();
                            self.expect(Tok::LParen, "`(`")?;
                            let len = self.expr()?;
                            self.expect(Tok::Comma, "`,`")?;
                            let fill = self.expr()?;
                            self.expect(Tok::RParen, "`)`")?;
                            Ok(Cmd::ArrInit(x, len, fill))
                        } else {
                            Ok(Cmd::Assign(x, self.expr()?))
                        }
                    }
                    Tok::Sample => {
                        self.next();
                        self.kw("lap")?;
                        self.expect(Tok::LParen, "`(`")?;
                        let mean = self.expr()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let inv_scale = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(Cmd::LapSample { var: x, mean, inv_scale })
                    }
                    Tok::LBrack => {
                        self.next();
                        let i = self.expr()?;
                        self.expect(Tok::RBrack, "`]`")?;
                        self.expect(Tok::Assign, "`:=`")?;
                        let e = self.expr()?;
                        Ok(Cmd::ArrAssign(x, i, e))
                    }
                    t => self.err(format!("expected `:=`, `:~` or `[` after identifier, found {t:?}")),
                }
            }
            t => self.err(format!("expected a command, found {t:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.next();
            if let Tok::Int(n) = self.peek().clone() {
                self.next();
                return Ok(Expr::IntLit(-n));
            }
            let e = self.unary()?;
            return Ok(Expr::bin(BinOp::Sub, Expr::IntLit(0), e));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Expr::IntLit(n))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LAngle => {
                self.next();
                let a = self.expr()?;
                self.expect(Tok::Bar, "`|`")?;
                let b = self.expr()?;
                self.expect(Tok::RAngle, "`⟩`")?;
                if a.contains_pair() || b.contains_pair() {
                    return self.err("nested pair: pair expressions may not contain pairs");
                }
                Ok(Expr::pair(a, b))
            }
            Tok::Ident(k) if k == "bot" => {
                self.next();
                Ok(Expr::IntLit(BOT))
            }
            Tok::Ident(k) if k == "top" => {
                self.next();
                Ok(Expr::IntLit(TOP))
            }
            Tok::Ident(k) if k == EPS => {
                self.next();
                Ok(Expr::Var(k))
            }
            Tok::Ident(k) if k == "len" => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let a = self.ident()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Len(a))
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                let is_query = self.queries.contains(&x);
                let index = if *self.peek() == Tok::LBrack {
                    self.next();
                    let i = self.expr()?;
                    self.expect(Tok::RBrack, "`]`")?;
                    Some(i)
                } else {
                    None
                };
                if *self.peek() == Tok::LParen {
                    if !is_query {
                        return self.err(format!("undeclared query `{x}`"));
                    }
                    self.next();
                    let db = self.ident()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::Query { name: x, index: index.map(Box::new), db });
                }
                if is_query {
                    return self.err(format!("query `{x}` must be applied to a database, as in `{x}(d)`"));
                }
                Ok(match index {
                    Some(i) => Expr::ArrIdx(x, Box::new(i)),
                    None => Expr::Var(x),
                })
            }
            t => self.err(format!("expected an expression, found {t:?}")),
        }
    }

    // Relational assertions.

    fn assertion(&mut self) -> Result<RelAssertion, ParseError> {
        let lhs = self.conj()?;
        if *self.peek() == Tok::Arrow {
            self.next();
            let rhs = self.assertion()?;
            return Ok(RelAssertion::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<RelAssertion, ParseError> {
        let mut parts = vec![self.assert_atom()?];
        while self.is_kw("and") {
            self.next();
            parts.push(self.assert_atom()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { RelAssertion::And(parts) })
    }

    fn assert_atom(&mut self) -> Result<RelAssertion, ParseError> {
        if self.is_kw("true") {
            self.next();
            return Ok(RelAssertion::True);
        }
        if self.is_kw("not") {
            self.next();
            return Ok(RelAssertion::Not(Box::new(self.assert_atom()?)));
        }
        if self.is_kw("forall") {
            self.next();
            let x = self.ident()?;
            self.expect(Tok::Dot, "`.`")?;
            return Ok(RelAssertion::Forall(x, Box::new(self.assertion()?)));
        }
        // A parenthesised assertion, unless the parenthesis opens a term.
        if *self.peek() == Tok::LParen {
            let save = self.pos;
            self.next();
            if let Ok(a) = self.assertion() {
                if *self.peek() == Tok::RParen {
                    self.next();
                    if !matches!(self.peek(), Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::SideTag(_)) {
                        return Ok(a);
                    }
                }
            }
            self.pos = save;
        }
        let lhs = self.rterm()?;
        let op = match self.next() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            t => {
                self.pos -= 1;
                return self.err(format!("expected a comparison, found {t:?}"));
            }
        };
        let rhs = self.rterm()?;
        Ok(RelAssertion::Cmp(op, lhs, rhs))
    }

    fn rterm(&mut self) -> Result<RelTerm, ParseError> {
        let mut lhs = self.rfactor()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.rfactor()?;
            lhs = RelTerm::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn rfactor(&mut self) -> Result<RelTerm, ParseError> {
        let mut lhs = self.ratom()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.ratom()?;
            lhs = RelTerm::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn ratom(&mut self) -> Result<RelTerm, ParseError> {
        match self.peek().clone() {
            Tok::Int(_) | Tok::Minus => Ok(RelTerm::Int(self.int()?)),
            Tok::Ident(k) if k == "bot" => {
                self.next();
                Ok(RelTerm::Int(BOT))
            }
            Tok::Ident(k) if k == "top" => {
                self.next();
                Ok(RelTerm::Int(TOP))
            }
            Tok::Bar => {
                self.next();
                let t = self.rterm()?;
                self.expect(Tok::Bar, "`|`")?;
                Ok(RelTerm::Abs(Box::new(t)))
            }
            Tok::LParen => {
                self.next();
                let save = self.pos;
                // `(e)<1>` projects a whole program expression.
                if let Ok(e) = self.expr() {
                    if *self.peek() == Tok::RParen {
                        if let Tok::SideTag(s) = self.peek_at(1).clone() {
                            self.next();
                            self.next();
                            return Ok(RelTerm::Proj(e, Side::from_index(s).unwrap()));
                        }
                    }
                }
                self.pos = save;
                let t = self.rterm()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            Tok::Ident(_) => {
                let save = self.pos;
                let e = self.atom()?;
                if let Tok::SideTag(s) = self.peek().clone() {
                    self.next();
                    return Ok(RelTerm::Proj(e, Side::from_index(s).unwrap()));
                }
                self.pos = save;
                Ok(RelTerm::Logic(self.ident()?))
            }
            t => self.err(format!("expected a relational term, found {t:?}")),
        }
    }
}

/// Reject reads of identifiers that are never bound anywhere in the program.
fn check_scoping(p: &Program) -> Result<(), ParseError> {
    let mut bound: BTreeSet<String> = BTreeSet::new();
    bound.insert(EPS.to_string());
    for (c, _) in &p.consts {
        bound.insert(c.clone());
    }
    for prm in &p.params {
        bound.insert(prm.name.clone());
    }
    collect_binders(&p.body, &mut bound);
    let mut reads = Vec::new();
    collect_reads(&p.body, &mut reads);
    for q in &p.queries {
        if let Some(e) = &q.len {
            e.reads(&mut reads);
        }
    }
    for x in reads {
        if !bound.contains(&x) {
            return Err(ParseError::at(0, 0, format!("undeclared identifier `{x}`")));
        }
    }
    for db in query_dbs(&p.body) {
        match p.param(&db) {
            Some(Param { ty: ParamType::Db, .. }) => {}
            _ => return Err(ParseError::at(0, 0, format!("undeclared database `{db}`"))),
        }
    }
    Ok(())
}

fn collect_binders(c: &Cmd, out: &mut BTreeSet<String>) {
    match c {
        Cmd::Assign(x, _) | Cmd::ArrInit(x, _, _) | Cmd::ArrAssign(x, _, _) => {
            out.insert(x.clone());
        }
        Cmd::LapSample { var, .. } => {
            out.insert(var.clone());
        }
        Cmd::For(x, _, _, b) => {
            out.insert(x.clone());
            collect_binders(b, out);
        }
        Cmd::Seq(a, b) | Cmd::If(_, a, b) | Cmd::PairCmd(a, b) => {
            collect_binders(a, out);
            collect_binders(b, out);
        }
        Cmd::Skip => {}
    }
}

fn collect_reads(c: &Cmd, out: &mut Vec<String>) {
    match c {
        Cmd::Skip => {}
        Cmd::Assign(_, e) => e.reads(out),
        Cmd::ArrInit(_, a, b) => {
            a.reads(out);
            b.reads(out);
        }
        Cmd::ArrAssign(x, a, b) => {
            out.push(x.clone());
            a.reads(out);
            b.reads(out);
        }
        Cmd::LapSample { mean, inv_scale, .. } => {
            mean.reads(out);
            inv_scale.reads(out);
        }
        Cmd::If(g, a, b) => {
            g.reads(out);
            collect_reads(a, out);
            collect_reads(b, out);
        }
        Cmd::For(_, lo, hi, b) => {
            lo.reads(out);
            hi.reads(out);
            collect_reads(b, out);
        }
        Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => {
            collect_reads(a, out);
            collect_reads(b, out);
        }
    }
}

pub(crate) fn query_dbs(c: &Cmd) -> Vec<String> {
    fn in_expr(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Query { db, index, .. } => {
                out.push(db.clone());
                if let Some(i) = index {
                    in_expr(i, out);
                }
            }
            Expr::ArrIdx(_, i) => in_expr(i, out),
            Expr::BinOp(_, a, b) | Expr::Pair(a, b) => {
                in_expr(a, out);
                in_expr(b, out);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    super::visit_exprs(c, &mut |e| in_expr(e, &mut out));
    out
}

use num_rational::Ratio;
use serde::Serialize;

/// Sentinel used for `bot`, far outside the values the corpus programs compute.
pub const BOT: i64 = -(1 << 40);
/// Sentinel used for `top`.
pub const TOP: i64 = 1 << 40;

/// Name reserved for the privacy parameter; only legal inside sampling scales.
pub const EPS: &str = "eps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Side {
    #[serde(rename = "1")]
    Left,
    #[serde(rename = "2")]
    Right,
    #[serde(rename = "shared")]
    Shared,
}

impl Side {
    pub fn index(self) -> u8 {
        match self {
            Side::Left => 1,
            Side::Right => 2,
            Side::Shared => 0,
        }
    }

    pub fn from_index(i: u8) -> Option<Side> {
        match i {
            1 => Some(Side::Left),
            2 => Some(Side::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    /// Integer semantics shared by every evaluator. Division truncates toward zero.
    pub fn apply(self, a: i64, b: i64) -> Option<i64> {
        match self {
            BinOp::Add => a.checked_add(b),
            BinOp::Sub => a.checked_sub(b),
            BinOp::Mul => a.checked_mul(b),
            BinOp::Div => {
                if b == 0 {
                    None
                } else {
                    a.checked_div(b)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Expr {
    IntLit(i64),
    Var(String),
    ArrIdx(String, Box<Expr>),
    Len(String),
    BinOp(BinOp, Box<Expr>, Box<Expr>),
    Pair(Box<Expr>, Box<Expr>),
    /// `q[i](d)` or `q(d)`: an uninterpreted query applied to a database handle.
    Query {
        name: String,
        index: Option<Box<Expr>>,
        db: String,
    },
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::IntLit(n)
    }

    pub fn var(x: &str) -> Expr {
        Expr::Var(x.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::BinOp(op, Box::new(a), Box::new(b))
    }

    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::Pair(Box::new(a), Box::new(b))
    }

    pub fn contains_pair(&self) -> bool {
        match self {
            Expr::Pair(..) => true,
            Expr::IntLit(_) | Expr::Var(_) | Expr::Len(_) => false,
            Expr::ArrIdx(_, i) => i.contains_pair(),
            Expr::BinOp(_, a, b) => a.contains_pair() || b.contains_pair(),
            Expr::Query { index, .. } => index.as_ref().is_some_and(|i| i.contains_pair()),
        }
    }

    pub fn mentions_var(&self, x: &str) -> bool {
        match self {
            Expr::Var(y) => y == x,
            Expr::IntLit(_) | Expr::Len(_) => false,
            Expr::ArrIdx(_, i) => i.mentions_var(x),
            Expr::BinOp(_, a, b) | Expr::Pair(a, b) => a.mentions_var(x) || b.mentions_var(x),
            Expr::Query { index, .. } => index.as_ref().is_some_and(|i| i.mentions_var(x)),
        }
    }

    /// Every identifier read by the expression: variables, arrays, lengths, and query names.
    pub fn reads(&self, out: &mut Vec<String>) {
        match self {
            Expr::IntLit(_) => {}
            Expr::Var(x) | Expr::Len(x) => out.push(x.clone()),
            Expr::ArrIdx(a, i) => {
                out.push(a.clone());
                i.reads(out);
            }
            Expr::BinOp(_, a, b) | Expr::Pair(a, b) => {
                a.reads(out);
                b.reads(out);
            }
            Expr::Query { index, .. } => {
                if let Some(i) = index {
                    i.reads(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Cmd {
    Skip,
    Seq(Box<Cmd>, Box<Cmd>),
    Assign(String, Expr),
    ArrAssign(String, Expr, Expr),
    /// `a := array(len, fill)`: allocate a fixed-length array.
    ArrInit(String, Expr, Expr),
    LapSample {
        var: String,
        mean: Expr,
        inv_scale: Expr,
    },
    If(Expr, Box<Cmd>, Box<Cmd>),
    For(String, Expr, Expr, Box<Cmd>),
    PairCmd(Box<Cmd>, Box<Cmd>),
}

impl Cmd {
    pub fn seq(a: Cmd, b: Cmd) -> Cmd {
        Cmd::Seq(Box::new(a), Box::new(b))
    }

    /// Right-nested sequence of the given commands; `Skip` when empty.
    pub fn seq_all(mut cmds: Vec<Cmd>) -> Cmd {
        let mut acc = match cmds.pop() {
            Some(c) => c,
            None => return Cmd::Skip,
        };
        while let Some(c) = cmds.pop() {
            acc = Cmd::seq(c, acc);
        }
        acc
    }

    pub fn if_(g: Expr, a: Cmd, b: Cmd) -> Cmd {
        Cmd::If(g, Box::new(a), Box::new(b))
    }

    pub fn for_(x: &str, lo: Expr, hi: Expr, body: Cmd) -> Cmd {
        Cmd::For(x.to_string(), lo, hi, Box::new(body))
    }

    pub fn assign(x: &str, e: Expr) -> Cmd {
        Cmd::Assign(x.to_string(), e)
    }

    pub fn sample(x: &str, mean: Expr, inv_scale: Expr) -> Cmd {
        Cmd::LapSample {
            var: x.to_string(),
            mean,
            inv_scale,
        }
    }

    pub fn pair(a: Cmd, b: Cmd) -> Cmd {
        Cmd::PairCmd(Box::new(a), Box::new(b))
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Cmd::Skip)
    }

    /// The command that executes next, looking through sequences.
    pub fn head(&self) -> &Cmd {
        match self {
            Cmd::Seq(a, b) => {
                if a.is_skip() {
                    b.head()
                } else {
                    a.head()
                }
            }
            c => c,
        }
    }

    pub fn contains_pair(&self) -> bool {
        match self {
            Cmd::PairCmd(..) => true,
            Cmd::Skip => false,
            Cmd::Seq(a, b) => a.contains_pair() || b.contains_pair(),
            Cmd::Assign(_, e) => e.contains_pair(),
            Cmd::ArrAssign(_, i, e) | Cmd::ArrInit(_, i, e) => i.contains_pair() || e.contains_pair(),
            Cmd::LapSample { mean, inv_scale, .. } => mean.contains_pair() || inv_scale.contains_pair(),
            Cmd::If(g, a, b) => g.contains_pair() || a.contains_pair() || b.contains_pair(),
            Cmd::For(_, lo, hi, body) => lo.contains_pair() || hi.contains_pair() || body.contains_pair(),
        }
    }

    pub fn count_ifs(&self) -> usize {
        match self {
            Cmd::If(_, a, b) => 1 + a.count_ifs() + b.count_ifs(),
            Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => a.count_ifs() + b.count_ifs(),
            Cmd::For(_, _, _, b) => b.count_ifs(),
            _ => 0,
        }
    }

    pub fn count_samples(&self) -> usize {
        match self {
            Cmd::LapSample { .. } => 1,
            Cmd::If(_, a, b) | Cmd::Seq(a, b) | Cmd::PairCmd(a, b) => a.count_samples() + b.count_samples(),
            Cmd::For(_, _, _, b) => b.count_samples(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum ParamType {
    Int,
    Db,
    Array(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Param {
    pub name: String,
    pub ty: ParamType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct QueryDecl {
    pub name: String,
    /// `None` for a scalar query `q(d)`; otherwise the table length, a literal or constant.
    pub len: Option<Expr>,
    pub sensitivity: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum RelTerm {
    Int(i64),
    /// A program expression read on one side: `e<1>`.
    Proj(Expr, Side),
    Logic(String),
    Bin(BinOp, Box<RelTerm>, Box<RelTerm>),
    Abs(Box<RelTerm>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum RelAssertion {
    True,
    Cmp(CmpOp, RelTerm, RelTerm),
    And(Vec<RelAssertion>),
    Not(Box<RelAssertion>),
    Implies(Box<RelAssertion>, Box<RelAssertion>),
    Forall(String, Box<RelAssertion>),
}

impl RelAssertion {
    /// `x<1> = x<2>`
    pub fn same(x: &str) -> RelAssertion {
        RelAssertion::Cmp(
            CmpOp::Eq,
            RelTerm::Proj(Expr::var(x), Side::Left),
            RelTerm::Proj(Expr::var(x), Side::Right),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Program {
    pub name: String,
    pub consts: Vec<(String, i64)>,
    pub params: Vec<Param>,
    pub queries: Vec<QueryDecl>,
    /// Conjunction of `requires` lines.
    pub requires: Vec<RelAssertion>,
    /// Conjunction of `ensures` lines; empty means `output<1> = output<2>`.
    pub ensures: Vec<RelAssertion>,
    /// The budget as a multiple of eps.
    #[serde(serialize_with = "ser_ratio")]
    pub budget: Ratio<i64>,
    pub body: Cmd,
    pub output: String,
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}", r))
}

impl Program {
    pub fn const_value(&self, name: &str) -> Option<i64> {
        self.consts.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Replace a constant's value, as `--n 5` does on the command line.
    pub fn with_const(&self, name: &str, value: i64) -> Option<Program> {
        let mut p = self.clone();
        let slot = p.consts.iter_mut().find(|(n, _)| n == name)?;
        slot.1 = value;
        Some(p)
    }

    pub fn query(&self, name: &str) -> Option<&QueryDecl> {
        self.queries.iter().find(|q| q.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Evaluate a declared length (literal or constant).
    pub fn static_int(&self, e: &Expr) -> Option<i64> {
        match e {
            Expr::IntLit(n) => Some(*n),
            Expr::Var(x) => self.const_value(x),
            Expr::BinOp(op, a, b) => op.apply(self.static_int(a)?, self.static_int(b)?),
            _ => None,
        }
    }

    pub fn query_len(&self, q: &QueryDecl) -> Option<i64> {
        match &q.len {
            None => Some(1),
            Some(e) => self.static_int(e),
        }
    }

    /// The effective postcondition.
    pub fn postcondition(&self) -> Vec<RelAssertion> {
        if self.ensures.is_empty() {
            vec![RelAssertion::same(&self.output)]
        } else {
            self.ensures.clone()
        }
    }
}

//! SMT-LIB2 encoding of constraint sets and a pool of external solver processes.

mod cegis;
mod encode;

pub use cegis::*;
pub use encode::*;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::constraints::{
    eval_g, satisfies, CExpr, Constraint, ConstraintSet, GVal, Registry, Role, Sort, Substitution, SymInt,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const SOLVER_ENV: &str = "DPSYM_SOLVER";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolverError {
    #[error("solver executable not found: {0}")]
    Missing(String),
    #[error("solver i/o failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(skip)]
    pub model: Option<Substitution>,
    pub millis: u128,
    /// Why the answer is unknown, or why a model was rejected.
    pub note: Option<String>,
}

impl Verdict {
    fn unknown(note: impl Into<String>, millis: u128) -> Verdict {
        Verdict { status: Status::Unknown, model: None, millis, note: Some(note.into()) }
    }
}

/// Resolve the solver executable: explicit path, then the environment, then `z3` on `PATH`.
pub fn find_solver(explicit: Option<&Path>) -> Result<PathBuf, SolverError> {
    let cand = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(SOLVER_ENV) {
            Some(p) => PathBuf::from(p),
            None => PathBuf::from("z3"),
        },
    };
    if cand.components().count() > 1 {
        return if cand.is_file() { Ok(cand) } else { Err(SolverError::Missing(cand.display().to_string())) };
    }
    let path = std::env::var_os("PATH").unwrap_or_default();
    for dir in std::env::split_paths(&path) {
        let full = dir.join(&cand);
        if full.is_file() {
            return Ok(full);
        }
    }
    Err(SolverError::Missing(cand.display().to_string()))
}

struct Proc {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

const DONE: &str = "@done";

impl Proc {
    fn spawn(path: &Path) -> std::io::Result<Proc> {
        let mut child = Command::new(path)
            .args(["-in", "-smt2"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Proc { child, stdin, stdout })
    }

    fn send(&mut self, text: &str) -> std::io::Result<()> {
        self.stdin.write_all(text.as_bytes())?;
        writeln!(self.stdin, "(echo \"{DONE}\")")?;
        self.stdin.flush()
    }

    /// Lines printed up to the next marker.
    fn read_block(&mut self) -> std::io::Result<Vec<String>> {
        let mut out = Vec::new();
        loop {
            let mut line = String::new();
            if self.stdout.read_line(&mut line)? == 0 {
                return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "solver exited"));
            }
            let l = line.trim();
            if l == DONE {
                return Ok(out);
            }
            out.push(l.to_string());
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub queries: usize,
    pub sat: usize,
    pub unsat: usize,
    pub unknown: usize,
    pub millis: u128,
}

/// Solver front end; processes are reused across queries and `(reset)` between them.
pub struct Solver {
    path: PathBuf,
    pub timeout_ms: u64,
    persist: Option<PathBuf>,
    pool: Mutex<Vec<Proc>>,
    counter: AtomicUsize,
    stats: Mutex<SolverStats>,
}

/// What to read back from a satisfiable query.
struct ModelRequest {
    ints: Vec<SymInt>,
    arrays: Vec<(SymInt, i64)>,
    raw: Vec<String>,
}

struct RawAnswer {
    status: Status,
    ints: BTreeMap<u32, i64>,
    arrays: BTreeMap<u32, Vec<i64>>,
    raw: BTreeMap<String, i64>,
    note: Option<String>,
    millis: u128,
}

impl Solver {
    pub fn new(path: PathBuf) -> Solver {
        Solver {
            path,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            persist: None,
            pool: Mutex::new(Vec::new()),
            counter: AtomicUsize::new(0),
            stats: Mutex::new(SolverStats::default()),
        }
    }

    pub fn locate(explicit: Option<&Path>) -> Result<Solver, SolverError> {
        let path = find_solver(explicit)?;
        let s = Solver::new(path);
        // Fail early when the executable cannot be started.
        let p = Proc::spawn(&s.path).map_err(|e| SolverError::Missing(format!("{}: {e}", s.path.display())))?;
        s.pool.lock().unwrap().push(p);
        Ok(s)
    }

    pub fn with_timeout(mut self, ms: u64) -> Solver {
        self.timeout_ms = ms;
        self
    }

    /// Write every query to `dir` as `query_NNNNN.smt2`.
    pub fn persist_to(mut self, dir: PathBuf) -> Solver {
        self.persist = Some(dir);
        self
    }

    pub fn stats(&self) -> SolverStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn take_proc(&self) -> std::io::Result<Proc> {
        if let Some(p) = self.pool.lock().unwrap().pop() {
            return Ok(p);
        }
        Proc::spawn(&self.path)
    }

    fn run(&self, script: &str, want: &ModelRequest) -> RawAnswer {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        if let Some(dir) = &self.persist {
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join(format!("query_{n:05}.smt2")), format!("{script}(check-sat)\n"));
        }
        let start = Instant::now();
        let res = self.run_inner(script, want);
        let millis = start.elapsed().as_millis();
        let mut ans = match res {
            Ok(a) => a,
            Err(e) => RawAnswer {
                status: Status::Unknown,
                ints: BTreeMap::new(),
                arrays: BTreeMap::new(),
                raw: BTreeMap::new(),
                note: Some(format!("solver failure: {e}")),
                millis: 0,
            },
        };
        ans.millis = millis;
        let mut st = self.stats.lock().unwrap();
        st.queries += 1;
        st.millis += millis;
        match ans.status {
            Status::Sat => st.sat += 1,
            Status::Unsat => st.unsat += 1,
            Status::Unknown => st.unknown += 1,
        }
        ans
    }

    fn run_inner(&self, script: &str, want: &ModelRequest) -> std::io::Result<RawAnswer> {
        let mut p = self.take_proc()?;
        let out = (|| {
            p.send(&format!("{script}(check-sat)\n"))?;
            let lines = p.read_block()?;
            let mut status = Status::Unknown;
            let mut note = None;
            for l in &lines {
                match l.as_str() {
                    "sat" => status = Status::Sat,
                    "unsat" => status = Status::Unsat,
                    "unknown" => status = Status::Unknown,
                    _ if l.starts_with("(error") => note = Some(l.clone()),
                    _ => {}
                }
            }
            let mut ans = RawAnswer {
                status,
                ints: BTreeMap::new(),
                arrays: BTreeMap::new(),
                raw: BTreeMap::new(),
                note,
                millis: 0,
            };
            if status == Status::Unknown && ans.note.is_none() {
                p.send("(get-info :reason-unknown)\n")?;
                ans.note = p.read_block()?.into_iter().next();
            }
            if status == Status::Sat {
                let mut terms: Vec<String> = want.ints.iter().map(|s| smt_name(*s)).collect();
                for (a, len) in &want.arrays {
                    for k in 1..=*len {
                        terms.push(format!("(select {} {k})", smt_name(*a)));
                    }
                }
                terms.extend(want.raw.iter().cloned());
                if !terms.is_empty() {
                    p.send(&format!("(get-value ({}))\n", terms.join(" ")))?;
                    let text = p.read_block()?.join(" ");
                    let vals = parse_values(&text);
                    for s in &want.ints {
                        if let Some(v) = vals.get(&smt_name(*s)) {
                            ans.ints.insert(s.id, *v);
                        }
                    }
                    for (a, len) in &want.arrays {
                        let cells: Vec<i64> = (1..=*len)
                            .map(|k| vals.get(&format!("(select {} {k})", smt_name(*a))).copied().unwrap_or(0))
                            .collect();
                        ans.arrays.insert(a.id, cells);
                    }
                    for r in &want.raw {
                        if let Some(v) = vals.get(r) {
                            ans.raw.insert(r.clone(), *v);
                        }
                    }
                }
            }
            p.send("(reset)\n")?;
            p.read_block()?;
            Ok(ans)
        })();
        if out.is_ok() {
            self.pool.lock().unwrap().push(p);
        }
        out
    }

    fn request_for(&self, reg: &Registry, syms: &[SymInt]) -> ModelRequest {
        let mut ints = Vec::new();
        let mut arrays = Vec::new();
        for s in syms {
            match s.sort {
                Sort::Int => ints.push(*s),
                Sort::Array => arrays.push((*s, reg.array_len(*s).unwrap_or(0))),
            }
        }
        ModelRequest { ints, arrays, raw: vec![] }
    }

    /// Raw satisfiability of formulas; the model covers their free symbols.
    pub fn check_formulas(&self, reg: &Registry, asserts: &[Formula], want_model: bool) -> Verdict {
        let script = build_script(reg, asserts, &[], self.timeout_ms, &BTreeMap::new());
        let req = if want_model {
            self.request_for(reg, &script.declared)
        } else {
            ModelRequest { ints: vec![], arrays: vec![], raw: vec![] }
        };
        let ans = self.run(&script.text, &req);
        let model = (ans.status == Status::Sat && want_model).then(|| {
            let mut m = Substitution::new();
            m.ints = ans.ints;
            m.arrays = ans.arrays;
            m
        });
        Verdict { status: ans.status, model, millis: ans.millis, note: ans.note }
    }

    /// Satisfiability of a constraint set. A returned model is re-checked by ground evaluation
    /// and covers every symbol of `s`.
    pub fn check_sat(&self, reg: &Registry, s: &ConstraintSet, want_model: bool) -> Verdict {
        let inl = Inlined::of(s);
        let v = self.check_formulas(reg, &[Formula::and_of(&inl.rest)], want_model);
        if v.status != Status::Sat || !want_model {
            return v;
        }
        let sigma = inl.complete(reg, v.model.clone().unwrap_or_default(), &s.symbols());
        match satisfies(&sigma, s) {
            Ok(true) => Verdict { model: Some(sigma), ..v },
            Ok(false) => Verdict::unknown("model failed ground re-check", v.millis),
            Err(e) => Verdict::unknown(format!("model re-check: {e}"), v.millis),
        }
    }

    /// Is `hyp ⟹ concl` valid, with `universals` quantified inside the negated conclusion?
    /// A counter-model assigns the remaining symbols.
    pub fn check_validity(
        &self,
        reg: &Registry,
        hyp: &ConstraintSet,
        concl: &[Constraint],
        universals: &[SymInt],
    ) -> Validity {
        let inl = Inlined::of(hyp);
        let concl: Vec<Constraint> = concl.iter().map(|c| inl.apply(c)).collect();
        let uni: BTreeSet<SymInt> = universals.iter().copied().filter(|u| !inl.defs.contains_key(&u.id)).collect();
        let touches = |c: &Constraint| c.symbol_set().iter().any(|s| uni.contains(s));
        let (hyp_u, hyp_e): (Vec<Constraint>, Vec<Constraint>) = inl.rest.iter().cloned().partition(|c| touches(c));
        let body = Formula::and_of(&concl);
        let f = if uni.is_empty() {
            Formula::And(vec![Formula::and_of(&hyp_e), Formula::not(body)])
        } else {
            let mut used = BTreeSet::new();
            Formula::implies(Formula::and_of(&hyp_u), Formula::not(body.clone())).free_symbols(&mut used);
            let vars: Vec<SymInt> = uni.iter().copied().filter(|u| used.contains(u)).collect();
            Formula::And(vec![
                Formula::and_of(&hyp_e),
                Formula::forall(vars, Formula::implies(Formula::and_of(&hyp_u), Formula::not(body))),
            ])
        };
        let v = self.check_formulas(reg, &[f], true);
        match v.status {
            Status::Unsat => Validity::Valid,
            Status::Unknown => Validity::Unknown(v.note.unwrap_or_default()),
            Status::Sat => {
                let mut sigma = v.model.unwrap_or_default();
                for (id, e) in &inl.defs {
                    if let Ok(x) = sigma.eval(e) {
                        sigma.ints.insert(*id, x);
                    }
                }
                Validity::Invalid(sigma)
            }
        }
    }

    /// `∃ exist. ∀ rest. hyp ⟹ goal`, where `rest` is every other free symbol.
    pub fn exists_forall(
        &self,
        reg: &Registry,
        hyp: &ConstraintSet,
        goal: &[Constraint],
        exist: &[SymInt],
    ) -> Verdict {
        let inl = Inlined::of(hyp);
        let goal: Vec<Constraint> = goal.iter().map(|c| inl.apply(c)).collect();
        let body = Formula::implies(Formula::and_of(&inl.rest), Formula::and_of(&goal));
        let mut free = BTreeSet::new();
        body.free_symbols(&mut free);
        let uni: Vec<SymInt> = free.into_iter().filter(|s| !exist.contains(s)).collect();
        let mut f = vec![Formula::forall(uni, body)];
        // keep every existential declared so the model mentions it
        for k in exist {
            f.push(Formula::Atom(Constraint::eq(CExpr::sym(*k), CExpr::sym(*k))));
        }
        self.check_formulas(reg, &f, true)
    }

    /// Smallest value of `objective` in `[lo, hi]` for which `feasible(bound)` is sat, by
    /// bisection. `None` when even `hi` is infeasible or unknown.
    pub fn minimize(&self, lo: i64, hi: i64, mut feasible: impl FnMut(i64) -> Status) -> Option<i64> {
        if feasible(hi) != Status::Sat {
            return None;
        }
        let (mut lo, mut hi) = (lo, hi);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match feasible(mid) {
                Status::Sat => hi = mid,
                _ => lo = mid + 1,
            }
        }
        Some(hi)
    }
}

#[derive(Debug, Clone)]
pub enum Validity {
    Valid,
    Invalid(Substitution),
    Unknown(String),
}

fn parse_values(text: &str) -> BTreeMap<String, i64> {
    let mut out = BTreeMap::new();
    if let Some(SExp::List(items)) = parse_sexp(text) {
        for it in items {
            if let SExp::List(pair) = it {
                if pair.len() == 2 {
                    if let Some(v) = sexp_int(&pair[1]) {
                        out.insert(sexp_text(&pair[0]), v);
                    }
                }
            }
        }
    }
    out
}

fn sexp_text(e: &SExp) -> String {
    match e {
        SExp::Atom(a) => a.clone(),
        SExp::List(xs) => format!("({})", xs.iter().map(sexp_text).collect::<Vec<_>>().join(" ")),
    }
}

/// A constraint set with its functional definitions substituted away.
#[derive(Debug, Clone, Default)]
pub struct Inlined {
    pub rest: Vec<Constraint>,
    /// Defined symbol id to its fully inlined definition.
    pub defs: BTreeMap<u32, CExpr>,
}

impl Inlined {
    pub fn of(s: &ConstraintSet) -> Inlined {
        let mut out = Inlined::default();
        for e in s.entries() {
            if let (Role::Def(t), Constraint::Cmp(crate::lang::CmpOp::Eq, CExpr::Sym(lhs), rhs)) = (e.role, &e.c) {
                if *lhs == t && !out.defs.contains_key(&t.id) {
                    let rhs = out.apply_expr(rhs);
                    out.defs.insert(t.id, rhs);
                    continue;
                }
            }
            let c = out.apply(&e.c);
            out.rest.push(c);
        }
        out
    }

    pub fn with_defs(defs: BTreeMap<u32, CExpr>) -> Inlined {
        Inlined { rest: vec![], defs }
    }

    pub fn apply_expr(&self, e: &CExpr) -> CExpr {
        if self.defs.is_empty() {
            return e.clone();
        }
        e.map_syms(&mut |s| self.defs.get(&s.id).cloned().unwrap_or(CExpr::Sym(s)))
    }

    pub fn apply(&self, c: &Constraint) -> Constraint {
        if self.defs.is_empty() {
            return c.clone();
        }
        c.map_exprs(&mut |e| self.apply_expr(e))
    }

    /// Extend a model of the inlined constraints to the defined symbols and to every symbol in
    /// `all` (unconstrained ones default to zero).
    pub fn complete(&self, reg: &Registry, mut sigma: Substitution, all: &BTreeSet<SymInt>) -> Substitution {
        for s in all {
            if self.defs.contains_key(&s.id) || sigma.covers(*s) {
                continue;
            }
            match s.sort {
                Sort::Int => sigma.set(*s, 0),
                Sort::Array => sigma.set_array(*s, vec![0; reg.array_len(*s).unwrap_or(0).max(0) as usize]),
            }
        }
        for (id, e) in &self.defs {
            if let Ok(g) = eval_g(&sigma.apply_expr(e)) {
                match g {
                    GVal::Int(v) => {
                        sigma.ints.insert(*id, v);
                    }
                    GVal::Arr(v) => {
                        sigma.arrays.insert(*id, v);
                    }
                }
            }
        }
        sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Origin;
    use crate::lang::Side;

    fn solver() -> Option<Solver> {
        Solver::locate(None).ok()
    }

    #[test]
    fn basic_verdicts() {
        let Some(z) = solver() else { return };
        let mut r = Registry::new();
        let x = r.fresh(Side::Left, Origin::Input, "X");
        let mut s = ConstraintSet::new();
        assert_eq!(z.check_sat(&r, &s, true).status, Status::Sat);
        s.push(Constraint::gt0(CExpr::sym(x)), Role::Guard);
        s.push(Constraint::le0(CExpr::sym(x)), Role::Guard);
        assert_eq!(z.check_sat(&r, &s, true).status, Status::Unsat);

        let mut h = ConstraintSet::new();
        h.push(Constraint::cmp(crate::lang::CmpOp::Gt, CExpr::sym(x), CExpr::Lit(1)), Role::Guard);
        assert!(matches!(z.check_validity(&r, &h, &[Constraint::gt0(CExpr::sym(x))], &[]), Validity::Valid));
        match z.check_validity(&r, &ConstraintSet::new(), &[Constraint::gt0(CExpr::sym(x))], &[]) {
            Validity::Invalid(m) => assert!(m.get(x).unwrap() <= 0),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn definitions_are_inlined_and_completed() {
        let Some(z) = solver() else { return };
        let mut r = Registry::new();
        let x = r.fresh(Side::Left, Origin::Input, "X");
        let y = r.fresh(Side::Left, Origin::Other, "Y");
        let mut s = ConstraintSet::new();
        s.push(Constraint::eq(CExpr::sym(y), CExpr::add(CExpr::sym(x), CExpr::Lit(1))), Role::Def(y));
        s.push(Constraint::cmp(crate::lang::CmpOp::Eq, CExpr::sym(y), CExpr::Lit(-4)), Role::Guard);
        let v = z.check_sat(&r, &s, true);
        let m = v.model.unwrap();
        assert_eq!(m.get(x), Some(-5));
        assert_eq!(m.get(y), Some(-4));
    }

    #[test]
    fn arrays_read_back() {
        let Some(z) = solver() else { return };
        let mut r = Registry::new();
        let a = r.fresh_array(Side::Left, Origin::Input, "A", 3);
        let mut s = ConstraintSet::new();
        s.push(Constraint::eq(CExpr::select(CExpr::sym(a), CExpr::Lit(2)), CExpr::Lit(9)), Role::Guard);
        let v = z.check_sat(&r, &s, true);
        assert_eq!(v.model.unwrap().arrays[&a.id][1], 9);
    }
}

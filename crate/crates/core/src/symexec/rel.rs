use std::collections::BTreeMap;

use num_integer::Integer;
use num_rational::Ratio;
use serde::Serialize;

use super::{
    sp_eval_expr, sp_scale, sp_step, unroll, Eval, Fork, SArray, SPConfig, SValue, SatOracle, SymCtx,
    SymError, SymMemory, SR,
};
use crate::constraints::{
    omega_decompose, CExpr, Constraint, ConstraintSet, Origin, ProbEntry, ProbTrace, Registry, Role, SampleVar, Scale,
    SymInt,
};
use crate::lang::{project, project_expr, Cmd, Expr, ParamType, Program, Side};

/// How the two runs' samples are related at a synchronizing site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Laplace coupling `X1 + K = X2`, priced by the shift.
    LapGen,
    /// No coupling: both samples become free integers.
    Avoc,
    /// Fork the world and try both.
    Both,
}

/// Pricing of a Laplace coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetRule {
    /// `|K + mean1 - mean2| * scale`.
    Lemma,
    /// `|mean1 - mean2| * K'` with `K <= K'` and `K' = scale`.
    Figure,
}

#[derive(Debug, Clone)]
pub struct RelCtx {
    pub sym: SymCtx,
    pub policy: Policy,
    pub rule: BudgetRule,
    /// Budget units per eps: costs are kept as integers multiplied by this.
    pub units: i64,
    pub max_configs: usize,
}

/// A pair of runs with shared constraints and a shared budget symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SRConfig {
    pub mem1: SymMemory,
    pub mem2: SymMemory,
    pub cmd: Cmd,
    pub p1: ProbTrace,
    pub p2: ProbTrace,
    pub cstrs: ConstraintSet,
    pub hist1: Vec<Fork>,
    pub hist2: Vec<Fork>,
    /// Current value of the budget accumulator, in units of `eps / units`.
    pub budget: SymInt,
    /// Coupling sites along this trace, in order.
    pub sites: Vec<usize>,
    pub unknown_sat: bool,
}

impl SRConfig {
    pub fn is_final(&self) -> bool {
        self.cmd.is_skip()
    }

    pub fn mem(&self, side: Side) -> &SymMemory {
        if side == Side::Right {
            &self.mem2
        } else {
            &self.mem1
        }
    }

    /// Both runs followed the same branches.
    pub fn same_history(&self) -> bool {
        self.hist1.iter().map(|f| f.taken).eq(self.hist2.iter().map(|f| f.taken))
    }
}

/// One synchronizing sampling: the symbols it introduced and how it was priced.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingSite {
    /// Variable bound on the left run.
    pub var: String,
    pub policy: Policy,
    pub x1: SymInt,
    pub x2: SymInt,
    pub shift: Option<SymInt>,
    pub mean1: CExpr,
    pub mean2: CExpr,
    /// Cost multiplier in budget units; 0 when uncoupled.
    pub unit: i64,
    /// False when the scales differed and the samples were left unrelated.
    pub coupled: bool,
    /// Differences of program variables at the site, offered as shift candidates.
    #[serde(skip)]
    pub diffs: Vec<(String, CExpr)>,
}

/// Input symbols of both runs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InputSyms {
    pub ints: BTreeMap<String, (SymInt, SymInt)>,
    pub arrays: BTreeMap<String, (SymInt, SymInt)>,
    /// Per query, one pair per table cell.
    pub queries: BTreeMap<String, Vec<(SymInt, SymInt)>>,
}

impl InputSyms {
    pub fn all(&self, side: Side) -> Vec<SymInt> {
        let pick = |p: &(SymInt, SymInt)| if side == Side::Right { p.1 } else { p.0 };
        let mut v: Vec<SymInt> = self.ints.values().map(pick).collect();
        v.extend(self.arrays.values().map(pick));
        for t in self.queries.values() {
            v.extend(t.iter().map(pick));
        }
        v
    }
}

/// Database handle the queries are applied to, for naming query symbols.
fn db_name(p: &Program) -> String {
    p.params.iter().find(|x| x.ty == ParamType::Db).map(|x| x.name.clone()).unwrap_or_else(|| "d".into())
}

/// Fully symbolic initial memory for one run. Returns the memory and the input symbols by name.
pub fn symbolic_memory(
    reg: &mut Registry,
    p: &Program,
    side: Side,
) -> SR<(SymMemory, BTreeMap<String, SymInt>, BTreeMap<String, SymInt>, BTreeMap<String, Vec<SymInt>>)> {
    let s = side.index();
    let mut m = SymMemory::default();
    let (mut ints, mut arrays, mut queries) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for (c, v) in &p.consts {
        m.vars.insert(c.clone(), SValue::Int(*v));
    }
    for prm in &p.params {
        match &prm.ty {
            ParamType::Db => {}
            ParamType::Int => {
                let x = reg.fresh_named(side, Origin::Input, &format!("{}{s}", prm.name));
                m.vars.insert(prm.name.clone(), SValue::Sym(x));
                ints.insert(prm.name.clone(), x);
            }
            ParamType::Array(len) => {
                let n = p.static_int(len).ok_or_else(|| SymError::SymbolicLength(prm.name.clone()))?;
                let a = reg.fresh_array_named(side, Origin::Input, &format!("{}{s}", prm.name), n);
                m.arrays.insert(prm.name.clone(), SArray { base: Some(a), len: n, cells: BTreeMap::new() });
                arrays.insert(prm.name.clone(), a);
            }
        }
    }
    let d = db_name(p);
    for q in &p.queries {
        let n = p.query_len(q).ok_or_else(|| SymError::SymbolicLength(q.name.clone()))?;
        let mut cells = BTreeMap::new();
        let mut syms = Vec::new();
        for i in 1..=n {
            let name = if q.len.is_some() { format!("{}{i}{d}{s}", q.name) } else { format!("{}{d}{s}", q.name) };
            let x = reg.fresh_named(side, Origin::Input, &name);
            cells.insert(i, SValue::Sym(x));
            syms.push(x);
        }
        m.queries.insert(q.name.clone(), SArray { base: None, len: n, cells });
        queries.insert(q.name.clone(), syms);
    }
    Ok((m, ints, arrays, queries))
}

/// Unary initial configuration over symbolic inputs.
pub fn unary_initial(reg: &mut Registry, p: &Program, side: Side) -> SR<SPConfig> {
    let (mem, ..) = symbolic_memory(reg, p, side)?;
    Ok(SPConfig {
        mem,
        cmd: p.body.clone(),
        ptrace: ProbTrace::new(),
        cstrs: ConstraintSet::new(),
        history: vec![],
        unknown_sat: false,
    })
}

/// Smallest number of budget units per eps making every static scale and the budget integral.
pub fn budget_units(p: &Program) -> i64 {
    let mut l: i64 = *p.budget.denom();
    let mut visit = |c: &Cmd| {
        if let Cmd::LapSample { inv_scale, .. } = c {
            if let Some(r) = super::static_scale(p, inv_scale) {
                l = l.lcm(r.denom());
            }
        }
    };
    walk(&p.body, &mut visit);
    l
}

fn walk(c: &Cmd, f: &mut impl FnMut(&Cmd)) {
    f(c);
    match c {
        Cmd::Seq(a, b) | Cmd::If(_, a, b) | Cmd::PairCmd(a, b) => {
            walk(a, f);
            walk(b, f);
        }
        Cmd::For(_, _, _, b) => walk(b, f),
        _ => {}
    }
}

/// The initial relational configuration: symbolic inputs, adjacency, `requires` and a zero budget.
pub fn relational_initial(reg: &mut Registry, p: &Program) -> SR<(SRConfig, InputSyms)> {
    let (mem1, i1, a1, q1) = symbolic_memory(reg, p, Side::Left)?;
    let (mem2, i2, a2, q2) = symbolic_memory(reg, p, Side::Right)?;
    let mut inputs = InputSyms::default();
    for (k, v) in i1 {
        inputs.ints.insert(k.clone(), (v, i2[&k]));
    }
    for (k, v) in a1 {
        inputs.arrays.insert(k.clone(), (v, a2[&k]));
    }
    let mut cstrs = ConstraintSet::new();
    for (k, v) in q1 {
        let r = p.query(&k).map(|q| q.sensitivity).unwrap_or(0);
        let pairs: Vec<(SymInt, SymInt)> = v.into_iter().zip(q2[&k].iter().copied()).collect();
        for (x, y) in &pairs {
            cstrs.push(Constraint::le(CExpr::abs(CExpr::sub(CExpr::sym(*x), CExpr::sym(*y))), CExpr::Lit(r)), Role::Pre);
        }
        inputs.queries.insert(k, pairs);
    }
    let e0 = reg.fresh_named(Side::Shared, Origin::Budget, "E0");
    cstrs.push(Constraint::eq(CExpr::sym(e0), CExpr::Lit(0)), Role::Def(e0));
    let mut cfg = SRConfig {
        mem1,
        mem2,
        cmd: p.body.clone(),
        p1: ProbTrace::new(),
        p2: ProbTrace::new(),
        cstrs,
        hist1: vec![],
        hist2: vec![],
        budget: e0,
        sites: vec![],
        unknown_sat: false,
    };
    let mut logic = BTreeMap::new();
    for a in &p.requires {
        let (mut m1, mut m2) = (cfg.mem1.clone(), cfg.mem2.clone());
        let c = super::translate(reg, a, &mut m1, &mut m2, &mut logic, &mut cfg.cstrs)?;
        cfg.cstrs.push(c, Role::Pre);
    }
    Ok((cfg, inputs))
}

/// A relational value: one integer when both runs agree on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RValue {
    Unary(SValue),
    Pair(SValue, SValue),
}

impl RValue {
    pub fn side(self, side: Side) -> SValue {
        match (self, side) {
            (RValue::Unary(v), _) => v,
            (RValue::Pair(_, b), Side::Right) => b,
            (RValue::Pair(a, _), _) => a,
        }
    }
}

fn eval_side(reg: &mut Registry, cfg: &mut SRConfig, side: Side, e: &Expr) -> SR<SValue> {
    let e = project_expr(side, e);
    let (mem, p) = if side == Side::Right { (&mut cfg.mem2, &mut cfg.p2) } else { (&mut cfg.mem1, &mut cfg.p1) };
    let mut ev = Eval { reg, side, p, s: &mut cfg.cstrs };
    sp_eval_expr(&mut ev, mem, &e)
}

/// Evaluate a relational expression on both runs.
pub fn srp_eval(reg: &mut Registry, cfg: &mut SRConfig, e: &Expr) -> SR<RValue> {
    let v1 = eval_side(reg, cfg, Side::Left, e)?;
    let v2 = eval_side(reg, cfg, Side::Right, e)?;
    Ok(match (v1, v2) {
        (SValue::Int(a), SValue::Int(b)) if a == b => RValue::Unary(v1),
        _ => RValue::Pair(v1, v2),
    })
}

fn unary_of(cfg: &SRConfig, side: Side, cmd: Cmd) -> SPConfig {
    let (mem, ptrace, history) = if side == Side::Right {
        (cfg.mem2.clone(), cfg.p2.clone(), cfg.hist2.clone())
    } else {
        (cfg.mem1.clone(), cfg.p1.clone(), cfg.hist1.clone())
    };
    SPConfig { mem, cmd, ptrace, cstrs: cfg.cstrs.clone(), history, unknown_sat: cfg.unknown_sat }
}

fn absorb(cfg: &SRConfig, side: Side, u: SPConfig, cmd: Cmd) -> SRConfig {
    let mut c = SRConfig { cmd, cstrs: u.cstrs, unknown_sat: u.unknown_sat, ..cfg.clone() };
    if side == Side::Right {
        c.mem2 = u.mem;
        c.p2 = u.ptrace;
        c.hist2 = u.history;
    } else {
        c.mem1 = u.mem;
        c.p1 = u.ptrace;
        c.hist1 = u.history;
    }
    c
}

/// Where a synchronizing sampling sits in a configuration's command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncHead {
    /// A sampling executed by both runs.
    Unary { var: String, mean: Expr, inv_scale: Expr },
    /// Samplings at the heads of both components of a pair.
    Paired { left: (String, Expr, Expr), right: (String, Expr, Expr) },
}

fn sample_parts(c: &Cmd) -> Option<(String, Expr, Expr)> {
    match c {
        Cmd::LapSample { var, mean, inv_scale } => Some((var.clone(), mean.clone(), inv_scale.clone())),
        _ => None,
    }
}

pub fn sync_head(cmd: &Cmd) -> Option<SyncHead> {
    match cmd.head() {
        Cmd::LapSample { var, mean, inv_scale } => {
            Some(SyncHead::Unary { var: var.clone(), mean: mean.clone(), inv_scale: inv_scale.clone() })
        }
        Cmd::PairCmd(a, b) => {
            Some(SyncHead::Paired { left: sample_parts(a.head())?, right: sample_parts(b.head())? })
        }
        _ => None,
    }
}

/// Remove the head command, descending into both components of a pair head.
fn drop_head(cmd: &Cmd) -> Cmd {
    match cmd {
        Cmd::Seq(a, b) if a.is_skip() => drop_head(b),
        Cmd::Seq(a, b) => {
            let a = drop_head(a);
            if a.is_skip() {
                (**b).clone()
            } else {
                Cmd::Seq(Box::new(a), b.clone())
            }
        }
        Cmd::PairCmd(a, b) => {
            let (a, b) = (drop_head(a), drop_head(b));
            if a.is_skip() && b.is_skip() {
                Cmd::Skip
            } else {
                Cmd::pair(a, b)
            }
        }
        _ => Cmd::Skip,
    }
}

fn guard(c: &mut SRConfig, side: Side, v: SValue, taken: bool) -> bool {
    let hist = if side == Side::Right { &mut c.hist2 } else { &mut c.hist1 };
    match v {
        SValue::Int(n) => (n > 0) == taken,
        SValue::Sym(x) => {
            let e = CExpr::Sym(x);
            c.cstrs.push(if taken { Constraint::gt0(e) } else { Constraint::le0(e) }, Role::Guard);
            hist.push(Fork { prob: false, taken });
            true
        }
        SValue::Prob(y) => {
            let r = crate::constraints::RandExpr::Prob(y);
            let p = if side == Side::Right { &mut c.p2 } else { &mut c.p1 };
            p.push(if taken { ProbEntry::Gt0(r) } else { ProbEntry::Le0(r) });
            hist.push(Fork { prob: true, taken });
            true
        }
    }
}

/// One relational step of a configuration whose head is not synchronizing.
pub fn srp_step_nonsync(reg: &mut Registry, ctx: &SymCtx, cfg: &SRConfig) -> SR<Vec<SRConfig>> {
    let mut out = Vec::new();
    let side_ctx = SymCtx { samples_as_ints: true, ..ctx.clone() };
    match &cfg.cmd {
        Cmd::Skip => out.push(cfg.clone()),
        Cmd::Seq(a, b) if a.is_skip() => out.push(SRConfig { cmd: (**b).clone(), ..cfg.clone() }),
        Cmd::Seq(a, b) => {
            let sub = SRConfig { cmd: (**a).clone(), ..cfg.clone() };
            for s in srp_step_nonsync(reg, ctx, &sub)? {
                let cmd = if s.cmd.is_skip() { (**b).clone() } else { Cmd::Seq(Box::new(s.cmd.clone()), b.clone()) };
                out.push(SRConfig { cmd, ..s });
            }
        }
        Cmd::Assign(..) | Cmd::ArrAssign(..) | Cmd::ArrInit(..) => {
            let mut c = cfg.clone();
            for side in [Side::Left, Side::Right] {
                let u = unary_of(&c, side, project(side, &cfg.cmd));
                let mut next = sp_step(reg, &side_ctx, side, &u)?;
                c = absorb(&c, side, next.remove(0), Cmd::Skip);
            }
            out.push(c);
        }
        Cmd::LapSample { .. } => return Err(SymError::Unsupported("synchronizing sampling reached a non-synchronizing step".into())),
        Cmd::If(g, a, b) => {
            let mut c = cfg.clone();
            let v = srp_eval(reg, &mut c, g)?;
            for b1 in [true, false] {
                for b2 in [true, false] {
                    let mut n = c.clone();
                    if !guard(&mut n, Side::Left, v.side(Side::Left), b1) || !guard(&mut n, Side::Right, v.side(Side::Right), b2) {
                        continue;
                    }
                    let pick = |t: bool| if t { a } else { b };
                    n.cmd = if b1 == b2 {
                        (**pick(b1)).clone()
                    } else {
                        Cmd::pair(project(Side::Left, pick(b1)), project(Side::Right, pick(b2)))
                    };
                    out.push(n);
                }
            }
        }
        Cmd::For(x, lo, hi, body) => {
            let mut c = cfg.clone();
            let l = srp_eval(reg, &mut c, lo)?;
            let h = srp_eval(reg, &mut c, hi)?;
            match (l, h) {
                (RValue::Unary(SValue::Int(l)), RValue::Unary(SValue::Int(h))) => {
                    c.cmd = unroll(x, l, h, body);
                    out.push(c);
                }
                _ => {
                    if ctx.strict_loops {
                        return Err(SymError::SymbolicLoop(x.clone()));
                    }
                    let mut c = cfg.clone();
                    c.cmd = Cmd::pair(project(Side::Left, &cfg.cmd), project(Side::Right, &cfg.cmd));
                    out.push(c);
                }
            }
        }
        Cmd::PairCmd(a, b) => {
            let is_sample = |c: &Cmd| matches!(c.head(), Cmd::LapSample { .. });
            let step_left = if a.is_skip() && b.is_skip() {
                out.push(SRConfig { cmd: Cmd::Skip, ..cfg.clone() });
                return Ok(out);
            } else if !a.is_skip() && !is_sample(a) {
                true
            } else if !b.is_skip() && !is_sample(b) {
                false
            } else if !a.is_skip() && !b.is_skip() {
                return Err(SymError::Unsupported("paired samplings reached a non-synchronizing step".into()));
            } else {
                // one run samples while the other has finished: the sample is free and costs nothing
                !a.is_skip()
            };
            let (side, sub) = if step_left { (Side::Left, a) } else { (Side::Right, b) };
            for s in sp_step(reg, &side_ctx, side, &unary_of(cfg, side, (**sub).clone()))? {
                let rest = s.cmd.clone();
                let cmd = if step_left { Cmd::PairCmd(Box::new(rest), b.clone()) } else { Cmd::PairCmd(a.clone(), Box::new(rest)) };
                out.push(absorb(cfg, side, s, cmd));
            }
        }
    }
    Ok(out)
}

/// One world: a set of relational configurations explored under one vector of policy choices.
#[derive(Debug, Clone, Serialize)]
pub struct World {
    pub id: usize,
    pub configs: Vec<SRConfig>,
    /// Policy applied at each coupling site, in creation order.
    pub choices: Vec<Policy>,
}

impl World {
    pub fn is_final(&self) -> bool {
        self.configs.iter().all(|c| c.is_final())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Exploration {
    pub worlds: Vec<World>,
    pub sites: Vec<CouplingSite>,
    pub inputs: InputSyms,
    pub units: i64,
    /// The program's budget in units.
    pub budget_units: i64,
    pub initial: SRConfig,
    /// Traces that hit a solver unknown during pruning.
    pub unknown_prunes: usize,
}

fn scale_units(scale: &Scale, units: i64) -> Option<i64> {
    match scale {
        Scale::Eps(c) => {
            let u = *c * Ratio::from_integer(units);
            u.is_integer().then(|| u.to_integer())
        }
        _ => None,
    }
}

fn branching_len(s: &ConstraintSet) -> usize {
    s.entries().iter().filter(|e| !matches!(e.role, Role::Def(_))).count()
}

/// Apply a coupling policy to a configuration whose head synchronizes.
pub fn proof_step(
    reg: &mut Registry,
    ctx: &RelCtx,
    cfg: &SRConfig,
    head: &SyncHead,
    policy: Policy,
    sites: &mut Vec<CouplingSite>,
) -> SR<SRConfig> {
    let mut c = cfg.clone();
    let ((v1, m1, b1), (v2, m2, b2)) = match head {
        SyncHead::Unary { var, mean, inv_scale } => (
            (var.clone(), project_expr(Side::Left, mean), project_expr(Side::Left, inv_scale)),
            (var.clone(), project_expr(Side::Right, mean), project_expr(Side::Right, inv_scale)),
        ),
        SyncHead::Paired { left, right } => (left.clone(), right.clone()),
    };
    let mut eval = |c: &mut SRConfig, side: Side, mean: &Expr, scale: &Expr| -> SR<(CExpr, Scale)> {
        let (mem, p) = if side == Side::Right { (&mut c.mem2, &mut c.p2) } else { (&mut c.mem1, &mut c.p1) };
        let mut ev = Eval { reg: &mut *reg, side, p, s: &mut c.cstrs };
        let mu = sp_eval_expr(&mut ev, mem, mean)?.cexpr().ok_or(SymError::StuckSampling)?;
        let sc = sp_scale(&mut ev, mem, scale)?;
        Ok((mu, sc))
    };
    let (mu1, s1) = eval(&mut c, Side::Left, &m1, &b1)?;
    let (mu2, s2) = eval(&mut c, Side::Right, &m2, &b2)?;

    let x1 = reg.fresh(Side::Left, Origin::Sample, &format!("{v1}1"));
    let unit = if s1 == s2 { scale_units(&s1, ctx.units) } else { None };
    let coupled = policy == Policy::LapGen && unit.is_some();
    if policy == Policy::LapGen && s1 == s2 && unit.is_none() {
        return Err(SymError::Unsupported(format!(
            "coupling needs a scale that is a rational multiple of eps, found {}",
            s1.text(reg)
        )));
    }
    let mut diffs = Vec::new();
    for (x, a) in &c.mem1.vars {
        if x.starts_with('#') {
            continue;
        }
        if let (Some(a), Some(b)) = (a.cexpr(), c.mem2.vars.get(x).and_then(|v| v.cexpr())) {
            if a != b {
                diffs.push((format!("{x}1-{x}2"), CExpr::sub(a.clone(), b.clone())));
                diffs.push((format!("{x}2-{x}1"), CExpr::sub(b, a)));
            }
        }
    }
    let (x2, shift) = if coupled {
        let u = unit.unwrap();
        let x2 = reg.fresh(Side::Right, Origin::Sample, &format!("{v2}2"));
        let k = reg.fresh(Side::Shared, Origin::Shift, "K");
        c.cstrs.push(Constraint::eq(CExpr::sym(x2), CExpr::add(CExpr::sym(x1), CExpr::sym(k))), Role::Def(x2));
        let e2 = reg.fresh(Side::Shared, Origin::Budget, "E");
        let cost = match ctx.rule {
            BudgetRule::Lemma => CExpr::mul(
                CExpr::Lit(u),
                CExpr::abs(CExpr::sub(CExpr::add(CExpr::sym(k), mu1.clone()), mu2.clone())),
            ),
            BudgetRule::Figure => {
                let kb = reg.fresh(Side::Shared, Origin::Bound, "Kb");
                c.cstrs.push(Constraint::eq(CExpr::sym(kb), CExpr::Lit(u)), Role::Def(kb));
                c.cstrs.push(Constraint::le(CExpr::sym(k), CExpr::sym(kb)), Role::Choice);
                CExpr::mul(CExpr::abs(CExpr::sub(mu1.clone(), mu2.clone())), CExpr::sym(kb))
            }
        };
        c.cstrs.push(Constraint::eq(CExpr::sym(e2), CExpr::add(CExpr::sym(c.budget), cost)), Role::Def(e2));
        c.budget = e2;
        (x2, Some(k))
    } else {
        (reg.fresh(Side::Right, Origin::Sample, &format!("{v2}2")), None)
    };
    c.p1.push(ProbEntry::LapDecl { var: SampleVar::Int(x1), mean: mu1.clone(), scale: s1 });
    c.p2.push(ProbEntry::LapDecl { var: SampleVar::Int(x2), mean: mu2.clone(), scale: s2 });
    let var = v1.clone();
    c.mem1.vars.insert(v1, SValue::Sym(x1));
    c.mem2.vars.insert(v2, SValue::Sym(x2));
    c.cmd = drop_head(&c.cmd);
    sites.push(CouplingSite {
        var,
        policy: if coupled { Policy::LapGen } else { Policy::Avoc },
        x1,
        x2,
        shift,
        mean1: mu1,
        mean2: mu2,
        unit: if coupled { unit.unwrap() } else { 0 },
        coupled: coupled || policy == Policy::Avoc,
        diffs,
    });
    c.sites.push(sites.len() - 1);
    Ok(c)
}

/// Exhaust the proof semantics from the program's initial configuration.
pub fn explore(reg: &mut Registry, p: &Program, ctx: &RelCtx, sat: &dyn SatOracle) -> SR<Exploration> {
    let (init, inputs) = relational_initial(reg, p)?;
    let mut sites = Vec::new();
    let mut pending = vec![World { id: 0, configs: vec![init.clone()], choices: vec![] }];
    let mut done = Vec::new();
    let mut next_id = 1;
    let mut steps = 0usize;
    let mut unknown_prunes = 0;
    while let Some(mut w) = pending.pop() {
        let Some(i) = w.configs.iter().position(|c| !c.is_final()) else {
            done.push(w);
            continue;
        };
        steps += 1;
        if steps > ctx.max_configs {
            return Err(SymError::Limit(ctx.max_configs));
        }
        let cfg = w.configs.remove(i);
        if let Some(head) = sync_head(&cfg.cmd) {
            let policies = if ctx.policy == Policy::Both { vec![Policy::LapGen, Policy::Avoc] } else { vec![ctx.policy] };
            let mut forks = Vec::new();
            for pol in policies {
                let n = proof_step(reg, ctx, &cfg, &head, pol, &mut sites)?;
                let mut nw = w.clone();
                nw.configs.insert(i, n);
                nw.choices.push(pol);
                forks.push(nw);
            }
            if forks.len() > 1 {
                for f in forks.iter_mut().skip(1) {
                    f.id = next_id;
                    next_id += 1;
                }
            }
            // later forks are explored after earlier ones
            for f in forks.into_iter().rev() {
                pending.push(f);
            }
            continue;
        }
        let before = branching_len(&cfg.cstrs);
        let mut succ = Vec::new();
        for mut n in srp_step_nonsync(reg, &ctx.sym, &cfg)? {
            if branching_len(&n.cstrs) > before {
                match sat.maybe_sat(reg, &n.cstrs) {
                    Some(false) => continue,
                    None => {
                        n.unknown_sat = true;
                        unknown_prunes += 1;
                    }
                    Some(true) => {}
                }
            }
            succ.push(n);
        }
        for (j, n) in succ.into_iter().enumerate() {
            w.configs.insert(i + j, n);
        }
        pending.push(w);
    }
    done.sort_by_key(|w| w.id);
    Ok(Exploration {
        worlds: done,
        sites,
        inputs,
        units: ctx.units,
        budget_units: (p.budget * Ratio::from_integer(ctx.units)).to_integer(),
        initial: init,
        unknown_prunes,
    })
}

/// JSON dump of one final trace.
pub fn trace_json(reg: &Registry, c: &SRConfig) -> serde_json::Value {
    let o = omega_decompose(&c.cstrs);
    let hist = |h: &[Fork]| h.iter().map(|f| if f.taken { "T" } else { "F" }).collect::<String>();
    serde_json::json!({
        "history1": hist(&c.hist1),
        "history2": hist(&c.hist2),
        "p1": c.p1.to_text(reg),
        "p2": c.p2.to_text(reg),
        "s": c.cstrs.to_text(reg),
        "omega": o.to_json(reg),
        "budget": reg.name(c.budget),
        "unknown_sat": c.unknown_sat,
    })
}

/// Run the unary semantics to completion from a symbolic initial memory.
pub fn unary_finals(reg: &mut Registry, p: &Program, side: Side, ctx: &SymCtx, sat: &dyn SatOracle, max_steps: usize) -> SR<Vec<SPConfig>> {
    let init = unary_initial(reg, p, side)?;
    super::sp_run_to_final(reg, ctx, side, sat, vec![init], max_steps)
}

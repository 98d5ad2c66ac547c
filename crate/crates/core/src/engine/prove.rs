use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use super::{choices_json, EngineOpts, Outcome, ProofResult, Report, Slice};
use crate::constraints::{CExpr, Constraint, ConstraintSet, Entry, Registry, Role, SymInt};
use crate::lang::{Program, Side};
use crate::solver::{solve_exists_forall, CegisLimits, EfOutcome, Hole, Obligation, Solver};
use crate::symexec::{
    budget_units, explore, output_point, pointwise_post, translate, unary_finals, Exploration, OutputPoint, Policy,
    RelCtx, SymMemory, World, SR,
};

pub(crate) fn run_explore(
    reg: &mut Registry,
    p: &Program,
    solver: &Solver,
    opts: &EngineOpts,
    policy: Policy,
    strict: bool,
) -> SR<Exploration> {
    let ctx = RelCtx {
        sym: opts.sym_ctx(strict),
        policy,
        rule: opts.rule,
        units: budget_units(p),
        max_configs: opts.max_configs,
    };
    explore(reg, p, &ctx, solver)
}

fn max_sensitivity(p: &Program) -> i64 {
    p.queries.iter().map(|q| q.sensitivity).max().unwrap_or(1).max(1)
}

type Diffs = HashMap<u32, Vec<(String, CExpr)>>;

/// Candidate instantiations for every coupling shift used in a world.
pub(crate) fn world_holes(
    p: &Program,
    x: &Exploration,
    w: &World,
    merged: &HashMap<u32, SymInt>,
    diffs: &Diffs,
) -> Vec<Hole> {
    let r = max_sensitivity(p);
    let ids: BTreeSet<usize> = w.configs.iter().flat_map(|c| c.sites.iter().copied()).collect();
    let mut holes = Vec::new();
    for i in ids {
        let site = &x.sites[i];
        let Some(k) = site.shift else { continue };
        if merged.contains_key(&k.id) {
            continue;
        }
        let d = CExpr::sub(site.mean2.clone(), site.mean1.clone());
        let mut cands = vec![
            ("zero".to_string(), CExpr::Lit(0)),
            ("mean2-mean1".to_string(), d.clone()),
            ("one".to_string(), CExpr::Lit(1)),
            ("minus-one".to_string(), CExpr::Lit(-1)),
            ("mean2-mean1+1".to_string(), CExpr::add(d.clone(), CExpr::Lit(1))),
            ("mean2-mean1-1".to_string(), CExpr::sub(d.clone(), CExpr::Lit(1))),
            ("sensitivity".to_string(), CExpr::Lit(r)),
            ("minus-sensitivity".to_string(), CExpr::Lit(-r)),
            ("mean1-mean2".to_string(), CExpr::sub(site.mean1.clone(), site.mean2.clone())),
        ];
        cands.extend(diffs.get(&k.id).unwrap_or(&site.diffs).iter().cloned());
        let mut seen = std::collections::HashSet::new();
        cands.retain(|(_, e)| seen.insert(e.fold()));
        holes.push(Hole { sym: k, candidates: cands, free_const: true });
    }
    holes
}

/// Shifts of sites at the same position of their traces, sampling the same variable with the
/// same means, mapped onto one representative; and the difference candidates every member
/// of a group offers.
fn shared_shifts(x: &Exploration, w: &World) -> (HashMap<u32, SymInt>, Diffs) {
    let mut reps: HashMap<(String, usize, CExpr, CExpr), SymInt> = HashMap::new();
    let mut merged = HashMap::new();
    let mut diffs: Diffs = HashMap::new();
    for c in &w.configs {
        for (pos, sid) in c.sites.iter().enumerate() {
            let site = &x.sites[*sid];
            let Some(k) = site.shift else { continue };
            let key = (site.var.clone(), pos, site.mean1.clone(), site.mean2.clone());
            let rep = *reps.entry(key).or_insert(k);
            let d = diffs.entry(rep.id).or_insert_with(|| site.diffs.clone());
            d.retain(|x| site.diffs.contains(x));
            if rep != k {
                merged.insert(k.id, rep);
            }
        }
    }
    (merged, diffs)
}

/// Restrict every hole to the one candidate the template names for it.
fn apply_template(holes: &mut [Hole], template: &[String]) -> Result<(), String> {
    if holes.len() != template.len() {
        return Err(format!("shift template has {} entries but the world has {} shifts", template.len(), holes.len()));
    }
    for (h, t) in holes.iter_mut().zip(template) {
        let pick = match t.parse::<i64>() {
            Ok(n) => (t.clone(), CExpr::Lit(n)),
            Err(_) => match h.candidates.iter().find(|(l, _)| l == t) {
                Some(c) => c.clone(),
                None => return Err(format!("no candidate `{t}`")),
            },
        };
        h.candidates = vec![pick];
        h.free_const = false;
    }
    Ok(())
}

fn rename_set(s: &ConstraintSet, m: &HashMap<u32, SymInt>) -> ConstraintSet {
    let mut f = |x: SymInt| CExpr::Sym(m.get(&x.id).copied().unwrap_or(x));
    s.entries()
        .iter()
        .map(|e| Entry {
            c: e.c.map_syms(&mut f),
            role: match e.role {
                Role::Def(x) => Role::Def(m.get(&x.id).copied().unwrap_or(x)),
                r => r,
            },
        })
        .collect()
}

pub(crate) fn trace_label(wid: usize, i: usize, c: &crate::symexec::SRConfig) -> String {
    let h = |v: &[crate::symexec::Fork]| v.iter().map(|f| if f.taken { 'T' } else { 'F' }).collect::<String>();
    format!("w{wid}/t{i} [{}|{}]", h(&c.hist1), h(&c.hist2))
}

type PostFn<'a> = dyn FnMut(&mut Registry, &mut SymMemory, &mut SymMemory, &mut ConstraintSet) -> SR<Constraint> + 'a;

/// Discharge `∃ shifts. ∀ traces. s ⟹ post ∧ budget` for one world.
pub(crate) fn prove_world(
    reg: &mut Registry,
    solver: &Solver,
    x: &Exploration,
    p: &Program,
    w: &World,
    template: Option<&[String]>,
    post: &mut PostFn,
) -> SR<ProofResult> {
    let mut reasons = Vec::new();
    for c in &w.configs {
        for s in &c.sites {
            if !x.sites[*s].coupled {
                reasons.push(format!("samplings of `{}` use different scales and were left uncoupled", x.sites[*s].var));
            }
        }
    }
    if !reasons.is_empty() {
        reasons.sort();
        reasons.dedup();
        return Ok(ProofResult { proved: false, world: Some(w.id), witness: vec![], failing: None, counter_model: None, reasons });
    }
    let mut obs = Vec::new();
    for (i, c) in w.configs.iter().enumerate() {
        let mut hyp = c.cstrs.clone();
        let (mut m1, mut m2) = (c.mem1.clone(), c.mem2.clone());
        let mut defs = ConstraintSet::new();
        let q = post(reg, &mut m1, &mut m2, &mut defs)?;
        hyp.extend(&defs);
        let budget = Constraint::le(CExpr::sym(c.budget), CExpr::Lit(x.budget_units));
        obs.push(Obligation { label: trace_label(w.id, i, c), hyp, goal: vec![q, budget] });
        if c.unknown_sat {
            reasons.push(format!("{}: pruning check was unknown; trace kept", trace_label(w.id, i, c)));
        }
    }
    let (merged, diffs) = shared_shifts(x, w);
    let mut out = None;
    if !merged.is_empty() {
        let shared: Vec<Obligation> = obs
            .iter()
            .map(|o| {
                let mut f = |s: SymInt| CExpr::Sym(merged.get(&s.id).copied().unwrap_or(s));
                Obligation {
                    label: o.label.clone(),
                    hyp: rename_set(&o.hyp, &merged),
                    goal: o.goal.iter().map(|g| g.map_syms(&mut f)).collect(),
                }
            })
            .collect();
        let mut holes = world_holes(p, x, w, &merged, &diffs);
        let r = match template.map(|t| apply_template(&mut holes, t)) {
            Some(Err(e)) => return Ok(unproved(w.id, reasons, e)),
            _ => solve_exists_forall(solver, reg, &holes, &shared, CegisLimits::default()),
        };
        if matches!(r, EfOutcome::Witness(_)) || template.is_some() {
            out = Some(r);
        } else {
            reasons.push("no witness with shifts shared across traces; retried per trace prefix".into());
        }
    }
    let out = match out {
        Some(o) => o,
        None => {
            let mut holes = world_holes(p, x, w, &HashMap::new(), &HashMap::new());
            match template.map(|t| apply_template(&mut holes, t)) {
                Some(Err(e)) => return Ok(unproved(w.id, reasons, e)),
                _ => solve_exists_forall(solver, reg, &holes, &obs, CegisLimits::default()),
            }
        }
    };
    Ok(match out {
        EfOutcome::Witness(ws) => ProofResult {
            proved: true,
            world: Some(w.id),
            witness: choices_json(reg, &x.sites, &ws),
            failing: None,
            counter_model: None,
            reasons,
        },
        EfOutcome::NoWitness { failing, model } => ProofResult {
            proved: false,
            world: Some(w.id),
            witness: vec![],
            failing: Some(failing),
            counter_model: model.map(|m| super::named_model(reg, &m)),
            reasons,
        },
        EfOutcome::Unknown(r) => {
            reasons.push(format!("solver: {r}"));
            ProofResult { proved: false, world: Some(w.id), witness: vec![], failing: None, counter_model: None, reasons }
        }
    })
}

fn unproved(world: usize, mut reasons: Vec<String>, why: String) -> ProofResult {
    reasons.push(why);
    ProofResult { proved: false, world: Some(world), witness: vec![], failing: None, counter_model: None, reasons }
}

fn failed(reason: String) -> ProofResult {
    ProofResult { proved: false, world: None, witness: vec![], failing: None, counter_model: None, reasons: vec![reason] }
}

fn prove_worlds(
    reg: &mut Registry,
    solver: &Solver,
    x: &Exploration,
    p: &Program,
    template: Option<&[String]>,
    post: &mut PostFn,
) -> ProofResult {
    let mut first_failure = None;
    for w in &x.worlds {
        match prove_world(reg, solver, x, p, w, template, post) {
            Ok(r) if r.proved => return r,
            Ok(r) => {
                first_failure.get_or_insert(r);
            }
            Err(e) => {
                first_failure.get_or_insert(failed(e.to_string()));
            }
        }
    }
    first_failure.unwrap_or_else(|| failed("no final world".into()))
}

/// Prove the program's postcondition within its budget.
pub fn prove(p: &Program, solver: &Solver, opts: &EngineOpts) -> Report {
    let start = Instant::now();
    let before = solver.stats();
    let mut rep = Report::new("prove", p);
    let mut reg = Registry::new();
    let policy = if opts.mixed_policy { Policy::Both } else { Policy::LapGen };
    let x = match run_explore(&mut reg, p, solver, opts, policy, true) {
        Ok(x) => x,
        Err(e) => {
            rep.proof = Some(failed(e.to_string()));
            return rep.finish(start, solver, before);
        }
    };
    rep.worlds = x.worlds.len();
    rep.traces = x.worlds.iter().map(|w| w.configs.len()).sum();
    let posts = p.postcondition();
    let mut post = |reg: &mut Registry, m1: &mut SymMemory, m2: &mut SymMemory, defs: &mut ConstraintSet| {
        let mut logic = BTreeMap::new();
        let cs = posts.iter().map(|a| translate(reg, a, m1, m2, &mut logic, defs)).collect::<SR<Vec<_>>>()?;
        Ok(Constraint::and(cs))
    };
    let r = prove_worlds(&mut reg, solver, &x, p, opts.shifts.as_deref(), &mut post);
    rep.verdict = if r.proved { Outcome::Proved } else { Outcome::Inconclusive };
    rep.proof = Some(r);
    rep.finish(start, solver, before)
}

/// Possible outputs read off the unary symbolic executions.
pub fn output_domain(p: &Program, solver: &Solver, opts: &EngineOpts) -> SR<Vec<OutputPoint>> {
    let mut reg = Registry::new();
    let finals = unary_finals(&mut reg, p, Side::Left, &opts.sym_ctx(false), solver, opts.max_configs)?;
    let mut pts: Vec<OutputPoint> = finals.iter().map(|c| output_point(&c.mem, &p.output)).collect::<SR<_>>()?;
    pts.sort();
    pts.dedup();
    Ok(pts)
}

/// Prove `o<1> = point ⟹ o<2> = point` within the budget for every point of the domain.
pub fn prove_pointwise(p: &Program, solver: &Solver, opts: &EngineOpts, domain: Option<Vec<OutputPoint>>) -> Report {
    let start = Instant::now();
    let before = solver.stats();
    let mut rep = Report::new("prove-pointwise", p);
    let domain = match domain {
        Some(d) => d,
        None => match output_domain(p, solver, opts) {
            Ok(d) => d,
            Err(e) => {
                rep.notes.push(format!("output domain: {e}"));
                return rep.finish(start, solver, before);
            }
        },
    };
    if domain.is_empty() {
        rep.vacuous = true;
        rep.verdict = Outcome::Proved;
        rep.notes.push("empty output domain: vacuously proved".into());
        return rep.finish(start, solver, before);
    }
    let mut reg = Registry::new();
    let policy = if opts.mixed_policy { Policy::Both } else { Policy::LapGen };
    let x = match run_explore(&mut reg, p, solver, opts, policy, true) {
        Ok(x) => x,
        Err(e) => {
            rep.notes.push(e.to_string());
            return rep.finish(start, solver, before);
        }
    };
    rep.worlds = x.worlds.len();
    rep.traces = x.worlds.iter().map(|w| w.configs.len()).sum();
    let mut all = true;
    for pt in &domain {
        let mut post = |reg: &mut Registry, m1: &mut SymMemory, m2: &mut SymMemory, defs: &mut ConstraintSet| {
            pointwise_post(reg, pt, m1, m2, &p.output, defs)
        };
        let r = prove_worlds(&mut reg, solver, &x, p, opts.shifts.as_deref(), &mut post);
        all &= r.proved;
        rep.slices.push(Slice { point: pt.text(), result: r });
    }
    rep.verdict = if all { Outcome::Proved } else { Outcome::Inconclusive };
    rep.finish(start, solver, before)
}

/// Parse an output point such as `[bot,top,_,3]` or `5`.
pub fn parse_point(s: &str) -> Option<OutputPoint> {
    let cell = |t: &str| -> Option<Option<i64>> {
        match t.trim() {
            "_" => Some(None),
            "bot" => Some(Some(crate::lang::BOT)),
            "top" => Some(Some(crate::lang::TOP)),
            n => n.parse().ok().map(Some),
        }
    };
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        let cells = inner.split(',').map(cell).collect::<Option<Vec<_>>>()?;
        Some(OutputPoint { cells, array: true })
    } else {
        Some(OutputPoint { cells: vec![cell(s)?], array: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{BOT, TOP};

    #[test]
    fn points_parse() {
        let p = parse_point("[bot, top, _, 3]").unwrap();
        assert_eq!(p.cells, vec![Some(BOT), Some(TOP), None, Some(3)]);
        assert_eq!(p.text(), "[bot,top,_,3]");
        assert_eq!(parse_point("7").unwrap().cells, vec![Some(7)]);
        assert!(parse_point("[x]").is_none());
    }
}

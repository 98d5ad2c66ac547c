//! `∃ holes ∀ rest` by counterexample-guided search over candidate expressions for each hole.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::{build_script, Encoder, Formula, Inlined, ModelRequest, Solver, Status, Validity};
use crate::constraints::{fmt_cexpr, CExpr, Constraint, ConstraintSet, Registry, Role, Substitution, SymInt};

/// An existentially chosen symbol together with the expressions it may be instantiated to.
#[derive(Debug, Clone)]
pub struct Hole {
    pub sym: SymInt,
    pub candidates: Vec<(String, CExpr)>,
    /// Also allow an arbitrary integer constant.
    pub free_const: bool,
}

/// `hyp ⟹ goal` for all values of its symbols other than the holes.
#[derive(Debug, Clone)]
pub struct Obligation {
    pub label: String,
    pub hyp: ConstraintSet,
    pub goal: Vec<Constraint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HoleChoice {
    #[serde(skip)]
    pub sym: SymInt,
    pub name: String,
    /// Which candidate; `const` for a free constant.
    pub label: String,
    pub expr: String,
}

#[derive(Debug, Clone)]
pub enum EfOutcome {
    Witness(Vec<HoleChoice>),
    /// The candidate space is exhausted; the last failing obligation and its counter-model.
    NoWitness { failing: String, model: Option<Substitution> },
    Unknown(String),
}

#[derive(Debug, Clone, Copy)]
pub struct CegisLimits {
    pub max_rounds: usize,
}

impl Default for CegisLimits {
    fn default() -> Self {
        CegisLimits { max_rounds: 80 }
    }
}

struct Prepared {
    rest: Vec<Constraint>,
    goal: Vec<Constraint>,
    /// Indices into the hole list.
    holes: Vec<usize>,
    universals: Vec<SymInt>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Choice {
    sel: usize,
    konst: i64,
}

pub fn solve_exists_forall(
    solver: &Solver,
    reg: &Registry,
    holes: &[Hole],
    obligations: &[Obligation],
    limits: CegisLimits,
) -> EfOutcome {
    let hole_ids: BTreeMap<u32, usize> = holes.iter().enumerate().map(|(i, h)| (h.sym.id, i)).collect();
    let mut defs = BTreeMap::new();
    let inl: Vec<Inlined> = obligations.iter().map(|o| Inlined::of(&o.hyp)).collect();
    for i in &inl {
        defs.extend(i.defs.clone());
    }
    let global = Inlined::with_defs(defs);
    let holes: Vec<Hole> = holes
        .iter()
        .map(|h| Hole {
            sym: h.sym,
            candidates: h.candidates.iter().map(|(l, e)| (l.clone(), global.apply_expr(e))).collect(),
            free_const: h.free_const,
        })
        .collect();

    let mut prepared = Vec::new();
    for (o, i) in obligations.iter().zip(&inl) {
        let goal: Vec<Constraint> = o.goal.iter().map(|c| i.apply(c)).collect();
        let mut syms = BTreeSet::new();
        for c in i.rest.iter().chain(&goal) {
            c.symbols(&mut syms);
        }
        // holes reachable through candidates of mentioned holes
        let mut hs: BTreeSet<usize> = syms.iter().filter_map(|s| hole_ids.get(&s.id).copied()).collect();
        loop {
            let mut more = BTreeSet::new();
            for h in &hs {
                for (_, e) in &holes[*h].candidates {
                    let mut cs = BTreeSet::new();
                    e.symbols(&mut cs);
                    for s in cs {
                        syms.insert(s);
                        if let Some(j) = hole_ids.get(&s.id) {
                            if !hs.contains(j) {
                                more.insert(*j);
                            }
                        }
                    }
                }
            }
            if more.is_empty() {
                break;
            }
            hs.extend(more);
        }
        let universals = syms.into_iter().filter(|s| !hole_ids.contains_key(&s.id)).collect();
        prepared.push(Prepared { rest: i.rest.clone(), goal, holes: hs.into_iter().collect(), universals });
    }

    let mut current: Vec<Choice> = holes.iter().map(|_| Choice { sel: 0, konst: 0 }).collect();
    let mut points: Vec<(usize, Substitution)> = Vec::new();
    let mut verified: HashMap<(usize, Vec<Choice>), bool> = HashMap::new();
    for _ in 0..limits.max_rounds {
        let resolved = resolve(&holes, &current);
        let mut failed = None;
        let mut new_points = 0;
        for (k, p) in prepared.iter().enumerate() {
            let key = (k, p.holes.iter().map(|h| current[*h].clone()).collect::<Vec<_>>());
            if verified.get(&key) == Some(&true) {
                continue;
            }
            let sub = |c: &Constraint| c.map_syms(&mut |s| resolved.get(&s.id).cloned().unwrap_or(CExpr::Sym(s)));
            let hyp: ConstraintSet = p.rest.iter().map(|c| crate::constraints::Entry { c: sub(c), role: Role::Guard }).collect();
            let goal: Vec<Constraint> = p.goal.iter().map(sub).collect();
            match solver.check_validity(reg, &hyp, &goal, &[]) {
                Validity::Valid => {
                    verified.insert(key, true);
                }
                Validity::Invalid(m) => {
                    let mut pt = Substitution::new();
                    for u in &p.universals {
                        match u.sort {
                            crate::constraints::Sort::Int => pt.set(*u, m.get(*u).unwrap_or(0)),
                            crate::constraints::Sort::Array => {
                                let len = reg.array_len(*u).unwrap_or(0).max(0) as usize;
                                pt.set_array(*u, m.arrays.get(&u.id).cloned().unwrap_or_else(|| vec![0; len]))
                            }
                        }
                    }
                    failed.get_or_insert((obligations[k].label.clone(), m));
                    points.push((k, pt));
                    new_points += 1;
                }
                Validity::Unknown(r) => return EfOutcome::Unknown(format!("{}: {r}", obligations[k].label)),
            }
        }
        if new_points == 0 {
            let choices = holes
                .iter()
                .zip(&current)
                .map(|(h, c)| {
                    let (label, expr) = if c.sel < h.candidates.len() {
                        (h.candidates[c.sel].0.clone(), fmt_cexpr(reg, &h.candidates[c.sel].1))
                    } else {
                        ("const".to_string(), c.konst.to_string())
                    };
                    HoleChoice { sym: h.sym, name: reg.name(h.sym).to_string(), label, expr }
                })
                .collect();
            return EfOutcome::Witness(choices);
        }
        match synthesize(solver, reg, &holes, &prepared, &points) {
            Synth::Found(c) => current = c,
            Synth::Exhausted => {
                let (failing, model) = failed.map(|(l, m)| (l, Some(m))).unwrap_or_default();
                return EfOutcome::NoWitness { failing, model };
            }
            Synth::Unknown(r) => return EfOutcome::Unknown(r),
        }
    }
    EfOutcome::Unknown("candidate search did not converge".into())
}

/// Hole values under a selection, with earlier holes substituted into later candidates.
fn resolve(holes: &[Hole], sel: &[Choice]) -> BTreeMap<u32, CExpr> {
    let mut out: BTreeMap<u32, CExpr> = BTreeMap::new();
    for (h, c) in holes.iter().zip(sel) {
        let e = if c.sel < h.candidates.len() { h.candidates[c.sel].1.clone() } else { CExpr::Lit(c.konst) };
        let e = e.map_syms(&mut |s| out.get(&s.id).cloned().unwrap_or(CExpr::Sym(s)));
        out.insert(h.sym.id, e);
    }
    out
}

enum Synth {
    Found(Vec<Choice>),
    Exhausted,
    Unknown(String),
}

fn synthesize(
    solver: &Solver,
    reg: &Registry,
    holes: &[Hole],
    prepared: &[Prepared],
    points: &[(usize, Substitution)],
) -> Synth {
    let mut decls = Vec::new();
    let mut asserts = Vec::new();
    let mut raw = Vec::new();
    for (i, h) in holes.iter().enumerate() {
        let m = h.candidates.len() + usize::from(h.free_const);
        decls.push(format!("(declare-const s{i} Int)"));
        asserts.push(Formula::Raw(format!("(and (<= 0 s{i}) (< s{i} {m}))")));
        raw.push(format!("s{i}"));
        if h.free_const {
            decls.push(format!("(declare-const c{i} Int)"));
            raw.push(format!("c{i}"));
        }
    }
    for (j, (k, pt)) in points.iter().enumerate() {
        let p = &prepared[*k];
        let rename: BTreeMap<u32, String> = p.holes.iter().map(|h| (holes[*h].sym.id, format!("k{h}_{j}"))).collect();
        let enc = Encoder { rename: &rename };
        for h in &p.holes {
            decls.push(format!("(declare-const k{h}_{j} Int)"));
            let hole = &holes[*h];
            let mut e = if hole.free_const { format!("c{h}") } else { "0".to_string() };
            for (n, (_, cand)) in hole.candidates.iter().enumerate().rev() {
                let v = enc.expr(&pt.apply_expr(cand));
                e = format!("(ite (= s{h} {n}) {v} {e})");
            }
            asserts.push(Formula::Raw(format!("(= k{h}_{j} {e})")));
        }
        let rest: Vec<String> = p.rest.iter().map(|c| enc.constraint(&pt.apply(c))).collect();
        let goal: Vec<String> = p.goal.iter().map(|c| enc.constraint(&pt.apply(c))).collect();
        asserts.push(Formula::Raw(format!("(=> (and true {}) (and true {}))", rest.join(" "), goal.join(" "))));
    }
    let mut script = build_script(reg, &asserts, &decls, solver.timeout_ms, &BTreeMap::new());
    // earlier candidates are preferred, so the result is the valid selection of least total rank
    let ranks: Vec<String> = (0..holes.len()).map(|i| format!("s{i}")).collect();
    script.text.push_str(&format!("(minimize (+ 0 {}))\n", ranks.join(" ")));
    let ans = solver.run(&script.text, &ModelRequest { ints: vec![], arrays: vec![], raw: raw.clone() });
    match ans.status {
        Status::Unsat => Synth::Exhausted,
        Status::Unknown => Synth::Unknown(ans.note.unwrap_or_else(|| "synthesis unknown".into())),
        Status::Sat => Synth::Found(
            (0..holes.len())
                .map(|i| Choice {
                    sel: ans.raw.get(&format!("s{i}")).copied().unwrap_or(0).max(0) as usize,
                    konst: ans.raw.get(&format!("c{i}")).copied().unwrap_or(0),
                })
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Origin;
    use crate::lang::{CmpOp, Side};

    #[test]
    fn picks_difference_of_inputs() {
        let Ok(z) = Solver::locate(None) else { return };
        let mut r = Registry::new();
        let q1 = r.fresh(Side::Left, Origin::Input, "Q1");
        let q2 = r.fresh(Side::Right, Origin::Input, "Q2");
        let x1 = r.fresh(Side::Left, Origin::Sample, "X1");
        let x2 = r.fresh(Side::Right, Origin::Sample, "X2");
        let k = r.fresh(Side::Shared, Origin::Shift, "K");
        let mut hyp = ConstraintSet::new();
        hyp.push(
            Constraint::le(CExpr::abs(CExpr::sub(CExpr::sym(q1), CExpr::sym(q2))), CExpr::Lit(1)),
            Role::Pre,
        );
        hyp.push(Constraint::eq(CExpr::sym(x2), CExpr::add(CExpr::sym(x1), CExpr::sym(k))), Role::Def(x2));
        // o1 = q1 + x1 must equal o2 = q2 + x2
        let goal = vec![Constraint::cmp(
            CmpOp::Eq,
            CExpr::add(CExpr::sym(q1), CExpr::sym(x1)),
            CExpr::add(CExpr::sym(q2), CExpr::sym(x2)),
        )];
        let hole = Hole {
            sym: k,
            candidates: vec![
                ("zero".into(), CExpr::Lit(0)),
                ("one".into(), CExpr::Lit(1)),
                ("diff".into(), CExpr::sub(CExpr::sym(q1), CExpr::sym(q2))),
            ],
            free_const: true,
        };
        let ob = Obligation { label: "t".into(), hyp, goal };
        match solve_exists_forall(&z, &r, &[hole], &[ob], CegisLimits::default()) {
            EfOutcome::Witness(w) => assert_eq!(w[0].label, "diff"),
            o => panic!("{o:?}"),
        }
    }
}

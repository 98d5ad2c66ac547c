//! Exact (up to a tail bound) output distributions under the two-sided geometric distribution,
//! the eps-divergence, and confirmation of candidate counterexamples.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::concrete::{final_traces, ConcreteError, Inputs, UConfig, Value};
use crate::constraints::{eval_g, GVal, ProbEntry, ProbSym, RandExpr, Registry, SampleVar};
use crate::lang::{Program, RelAssertion, RelTerm, Side};

pub const DEFAULT_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("inverse scale must be positive, got {0}")]
    BadScale(f64),
    #[error("scale needs a concrete eps")]
    SymbolicScale,
    #[error("mean is not a concrete integer")]
    SymbolicMean,
    #[error("window of {0} values per sample is too large")]
    WindowTooLarge(i64),
    #[error("state space exceeded {0} entries")]
    StateExplosion(usize),
    #[error("division by zero inside a random expression")]
    DivZero,
    #[error("output `{0}` is unbound in a final trace")]
    NoOutput(String),
    #[error("inputs violate the precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Concrete(#[from] ConcreteError),
}

/// Two-sided geometric distribution: pmf(z) proportional to exp(-inv_scale * |z - mean|).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteLaplace {
    pub mean: i64,
    pub inv_scale: f64,
}

impl DiscreteLaplace {
    pub fn new(mean: i64, inv_scale: f64) -> Result<DiscreteLaplace, OracleError> {
        if inv_scale.is_nan() || inv_scale <= 0.0 {
            return Err(OracleError::BadScale(inv_scale));
        }
        Ok(DiscreteLaplace { mean, inv_scale })
    }

    fn alpha(&self) -> f64 {
        (-self.inv_scale).exp()
    }

    pub fn pmf(&self, z: i64) -> f64 {
        let a = self.alpha();
        let d = (z - self.mean).unsigned_abs() as f64;
        (1.0 - a) / (1.0 + a) * (-self.inv_scale * d).exp()
    }

    /// P(Z <= z).
    pub fn cdf(&self, z: i64) -> f64 {
        let a = self.alpha();
        if z >= self.mean {
            1.0 - (-self.inv_scale * (z - self.mean + 1) as f64).exp() / (1.0 + a)
        } else {
            (-self.inv_scale * (self.mean - z) as f64).exp() / (1.0 + a)
        }
    }

    /// Smallest w with P(|Z - mean| > w) <= tail.
    pub fn window(&self, tail: f64) -> i64 {
        let a = self.alpha();
        // P(|Z - mean| > w) = 2 a^(w+1) / (1 + a)
        let w = ((tail * (1.0 + a) / 2.0).ln() / -self.inv_scale - 1.0).ceil();
        (w.max(0.0)) as i64
    }
}

/// Finite-support subdistribution over output vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubDist {
    pub support: BTreeMap<Vec<i64>, f64>,
}

impl SubDist {
    pub fn unit(o: Vec<i64>) -> SubDist {
        SubDist { support: BTreeMap::from([(o, 1.0)]) }
    }

    pub fn mass(&self, o: &[i64]) -> f64 {
        self.support.get(o).copied().unwrap_or(0.0)
    }

    pub fn weight(&self) -> f64 {
        neumaier(self.support.values().copied())
    }

    fn add(&mut self, o: Vec<i64>, m: f64) {
        *self.support.entry(o).or_insert(0.0) += m;
    }
}

fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Options for distribution evaluation.
#[derive(Debug, Clone, Copy)]
pub struct OracleOpts {
    pub eps: f64,
    /// Tail mass dropped per sample.
    pub tail: f64,
    pub max_states: usize,
}

impl OracleOpts {
    pub fn new(eps: f64) -> OracleOpts {
        OracleOpts { eps, tail: DEFAULT_TAIL, max_states: 5_000_000 }
    }
}

/// How an output slot is computed from the trace: a constant or a random symbol.
fn output_of(cfg: &UConfig, out: &str) -> Result<Vec<Value>, OracleError> {
    if let Some(v) = cfg.mem.vars.get(out) {
        return Ok(vec![*v]);
    }
    cfg.mem.arrays.get(out).cloned().ok_or_else(|| OracleError::NoOutput(out.to_string()))
}

fn eval_rand(e: &RandExpr, env: &HashMap<u32, i64>) -> Result<i64, OracleError> {
    match e {
        RandExpr::Int(n) => Ok(*n),
        RandExpr::Prob(y) => Ok(env[&y.id]),
        RandExpr::Sym(_) => Err(OracleError::SymbolicMean),
        RandExpr::Bin(op, a, b) => {
            let (x, y) = (eval_rand(a, env)?, eval_rand(b, env)?);
            if *op == crate::lang::BinOp::Div && y == 0 {
                return Err(OracleError::DivZero);
            }
            Ok(op.apply(x, y).unwrap_or(if x.signum() * y.signum() >= 0 { i64::MAX } else { i64::MIN }))
        }
    }
}

/// Probability of a single final trace, as a subdistribution over outputs.
pub fn trace_dist(cfg: &UConfig, output: &str, opts: &OracleOpts) -> Result<SubDist, OracleError> {
    let entries = cfg.ptrace.entries();
    let outs = output_of(cfg, output)?;
    // Random symbols each entry needs from here on.
    let mut live_after: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); entries.len()];
    let mut live: BTreeSet<u32> =
        outs.iter().filter_map(|v| if let Value::Prob(y) = v { Some(y.id) } else { None }).collect();
    for (k, e) in entries.iter().enumerate().rev() {
        live_after[k] = live.clone();
        let mut used = BTreeSet::new();
        match e {
            ProbEntry::LapDecl { var: SampleVar::Prob(y), .. } => {
                live.remove(&y.id);
            }
            ProbEntry::LapDecl { .. } => {}
            ProbEntry::Eq(y, re) => {
                if live.remove(&y.id) {
                    re.probs(&mut used);
                }
            }
            ProbEntry::Gt0(re) | ProbEntry::Le0(re) => re.probs(&mut used),
        }
        live.extend(used.iter().map(|y: &ProbSym| y.id));
    }

    // State: values of the live random symbols, in a fixed order.
    let mut order: Vec<u32> = Vec::new();
    let mut states: BTreeMap<Vec<i64>, f64> = BTreeMap::from([(vec![], 1.0)]);
    for (k, e) in entries.iter().enumerate() {
        let keep = &live_after[k];
        let mut next_order: Vec<u32> = order.iter().copied().filter(|id| keep.contains(id)).collect();
        let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        let push = |next: &mut BTreeMap<Vec<i64>, f64>, key: Vec<i64>, m: f64| {
            *next.entry(key).or_insert(0.0) += m;
        };
        match e {
            ProbEntry::LapDecl { var, mean, scale } => {
                let mu = match eval_g(mean) {
                    Ok(GVal::Int(n)) => n,
                    _ => return Err(OracleError::SymbolicMean),
                };
                let b = scale.value(opts.eps).ok_or(OracleError::SymbolicScale)?;
                let d = DiscreteLaplace::new(mu, b)?;
                let w = d.window(opts.tail);
                if w > 1_000_000 {
                    return Err(OracleError::WindowTooLarge(w));
                }
                let y = match var {
                    SampleVar::Prob(y) => y.id,
                    SampleVar::Int(_) => return Err(OracleError::SymbolicMean),
                };
                let bind = keep.contains(&y);
                if bind {
                    next_order.push(y);
                }
                let pm: Vec<f64> = (mu - w..=mu + w).map(|z| d.pmf(z)).collect();
                for (key, m) in &states {
                    let base = project_key(&order, key, &next_order);
                    if bind {
                        for (j, z) in (mu - w..=mu + w).enumerate() {
                            let mut kk = base.clone();
                            *kk.last_mut().unwrap() = z;
                            push(&mut next, kk, m * pm[j]);
                        }
                    } else {
                        push(&mut next, base, m * neumaier(pm.iter().copied()));
                    }
                }
            }
            ProbEntry::Eq(y, re) => {
                let bind = keep.contains(&y.id);
                if bind {
                    next_order.push(y.id);
                }
                for (key, m) in &states {
                    let mut base = project_key(&order, key, &next_order);
                    if bind {
                        let env: HashMap<u32, i64> = order.iter().copied().zip(key.iter().copied()).collect();
                        *base.last_mut().unwrap() = eval_rand(re, &env)?;
                    }
                    push(&mut next, base, *m);
                }
            }
            ProbEntry::Gt0(re) | ProbEntry::Le0(re) => {
                let want_pos = matches!(e, ProbEntry::Gt0(_));
                for (key, m) in &states {
                    let env: HashMap<u32, i64> = order.iter().copied().zip(key.iter().copied()).collect();
                    if (eval_rand(re, &env)? > 0) == want_pos {
                        push(&mut next, project_key(&order, key, &next_order), *m);
                    }
                }
            }
        }
        if next.len() > opts.max_states {
            return Err(OracleError::StateExplosion(opts.max_states));
        }
        order = next_order;
        states = next;
    }

    let mut dist = SubDist::default();
    let pos: HashMap<u32, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut items: Vec<_> = states.into_iter().collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    for (key, m) in items {
        let o = outs
            .iter()
            .map(|v| match v {
                Value::Int(n) => *n,
                Value::Prob(y) => key[pos[&y.id]],
            })
            .collect();
        dist.add(o, m);
    }
    Ok(dist)
}

/// Restrict a state key to the symbols that stay live, leaving room for one new slot when the
/// new order is one longer than the kept part.
fn project_key(order: &[u32], key: &[i64], next_order: &[u32]) -> Vec<i64> {
    let mut out = Vec::with_capacity(next_order.len());
    for id in next_order {
        match order.iter().position(|x| x == id) {
            Some(i) => out.push(key[i]),
            None => out.push(0),
        }
    }
    out
}

/// Output distribution of a program on concrete inputs, summed over its final traces.
pub fn denote_output_dist(p: &Program, inputs: &Inputs, opts: &OracleOpts) -> Result<SubDist, OracleError> {
    let mut reg = Registry::new();
    let finals = final_traces(&mut reg, p, inputs, Side::Left)?;
    let mut total = SubDist::default();
    let mut parts: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for f in &finals {
        for (o, m) in trace_dist(f, &p.output, opts)?.support {
            parts.entry(o).or_default().push(m);
        }
    }
    for (o, ms) in parts {
        total.add(o, neumaier(ms.into_iter()));
    }
    Ok(total)
}

/// Number of samples along the longest trace, for error bars.
pub fn max_samples(p: &Program, inputs: &Inputs) -> Result<usize, OracleError> {
    let mut reg = Registry::new();
    Ok(final_traces(&mut reg, p, inputs, Side::Left)?.iter().map(|f| f.ptrace.samples()).max().unwrap_or(0))
}

/// sup over events of mu1(E) - e^eps mu2(E), attained by the set where mu1 > e^eps mu2.
pub fn eps_divergence(mu1: &SubDist, mu2: &SubDist, eps: f64) -> f64 {
    let f = eps.exp();
    let terms = mu1.support.iter().map(|(o, m1)| (m1 - f * mu2.mass(o)).max(0.0));
    neumaier(terms).max(0.0)
}

/// Outcome of comparing the output distributions on two inputs.
#[derive(Debug, Clone, Serialize)]
pub struct Confirmation {
    pub confirmed: bool,
    /// Largest of the divergences in both directions.
    pub divergence: f64,
    /// Direction of that divergence: 1 means left over right.
    pub direction: u8,
    /// Event maximising the pointwise log ratio; `None` when no event has visible mass.
    pub witness: Option<Vec<i64>>,
    pub witness_mass: (f64, f64),
    /// `ln(mu1/mu2)` at the witness; infinite when one side is zero.
    pub max_log_ratio: f64,
    pub max_ratio: f64,
    /// An event with visible mass on one side and none on the other.
    pub zero_one: Option<Vec<i64>>,
    pub error_bar: f64,
    pub weights: (f64, f64),
}

/// Check the precondition on two concrete inputs: query sensitivities and `requires`.
pub fn check_adjacent(p: &Program, in1: &Inputs, in2: &Inputs) -> Result<(), OracleError> {
    for q in &p.queries {
        let n = p.query_len(q).unwrap_or(1) as usize;
        let (t1, t2) = match (in1.queries.get(&q.name), in2.queries.get(&q.name)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(OracleError::Precondition(format!("missing table for query `{}`", q.name))),
        };
        for k in 0..n {
            let (a, b) = (t1.get(k).copied().unwrap_or(0), t2.get(k).copied().unwrap_or(0));
            if (a - b).abs() > q.sensitivity {
                return Err(OracleError::Precondition(format!(
                    "|{}[{}] left - right| = {} exceeds sensitivity {}",
                    q.name,
                    k + 1,
                    (a - b).abs(),
                    q.sensitivity
                )));
            }
        }
    }
    for r in &p.requires {
        match eval_assertion(p, r, in1, in2, &mut BTreeMap::new()) {
            Some(true) => {}
            Some(false) => {
                return Err(OracleError::Precondition(crate::lang::print_assertion(r)));
            }
            None => {
                return Err(OracleError::Precondition(format!(
                    "cannot evaluate `{}` on inputs",
                    crate::lang::print_assertion(r)
                )))
            }
        }
    }
    Ok(())
}

fn eval_term(p: &Program, t: &RelTerm, in1: &Inputs, in2: &Inputs, logic: &BTreeMap<String, i64>) -> Option<i64> {
    match t {
        RelTerm::Int(n) => Some(*n),
        RelTerm::Logic(x) => logic.get(x).copied(),
        RelTerm::Proj(e, side) => {
            let inp = if *side == Side::Right { in2 } else { in1 };
            eval_input_expr(p, e, inp, logic)
        }
        RelTerm::Bin(op, a, b) => op.apply(eval_term(p, a, in1, in2, logic)?, eval_term(p, b, in1, in2, logic)?),
        RelTerm::Abs(a) => eval_term(p, a, in1, in2, logic)?.checked_abs(),
    }
}

fn eval_input_expr(p: &Program, e: &crate::lang::Expr, inp: &Inputs, logic: &BTreeMap<String, i64>) -> Option<i64> {
    use crate::lang::Expr;
    match e {
        Expr::IntLit(n) => Some(*n),
        Expr::Var(x) => inp.ints.get(x).copied().or_else(|| p.const_value(x)).or_else(|| logic.get(x).copied()),
        Expr::ArrIdx(a, i) => {
            let k = eval_input_expr(p, i, inp, logic)?;
            inp.arrays.get(a)?.get(usize::try_from(k - 1).ok()?).copied()
        }
        Expr::Len(a) => inp.arrays.get(a).map(|v| v.len() as i64),
        Expr::BinOp(op, a, b) => op.apply(eval_input_expr(p, a, inp, logic)?, eval_input_expr(p, b, inp, logic)?),
        Expr::Query { name, index, .. } => {
            let k = match index {
                Some(i) => eval_input_expr(p, i, inp, logic)?,
                None => 1,
            };
            inp.queries.get(name)?.get(usize::try_from(k - 1).ok()?).copied()
        }
        Expr::Pair(..) => None,
    }
}

fn eval_assertion(
    p: &Program,
    a: &RelAssertion,
    in1: &Inputs,
    in2: &Inputs,
    logic: &mut BTreeMap<String, i64>,
) -> Option<bool> {
    match a {
        RelAssertion::True => Some(true),
        RelAssertion::Cmp(op, l, r) => Some(op.holds(eval_term(p, l, in1, in2, logic)?, eval_term(p, r, in1, in2, logic)?)),
        RelAssertion::And(xs) => {
            for x in xs {
                if !eval_assertion(p, x, in1, in2, logic)? {
                    return Some(false);
                }
            }
            Some(true)
        }
        RelAssertion::Not(x) => Some(!eval_assertion(p, x, in1, in2, logic)?),
        RelAssertion::Implies(x, y) => {
            Some(!eval_assertion(p, x, in1, in2, logic)? || eval_assertion(p, y, in1, in2, logic)?)
        }
        RelAssertion::Forall(x, body) => {
            // Quantifiers in preconditions range over array indices.
            let n = in1.arrays.values().chain(in2.arrays.values()).map(|v| v.len()).max().unwrap_or(0);
            for k in 1..=n as i64 {
                logic.insert(x.clone(), k);
                let ok = eval_assertion(p, body, in1, in2, logic)?;
                logic.remove(x);
                if !ok {
                    return Some(false);
                }
            }
            Some(true)
        }
    }
}

/// Mass below which an event counts as invisible.
pub const VISIBLE: f64 = 1e-9;

pub fn compare(mu1: &SubDist, mu2: &SubDist, eps: f64, error_bar: f64) -> Confirmation {
    let d12 = eps_divergence(mu1, mu2, eps);
    let d21 = eps_divergence(mu2, mu1, eps);
    let (divergence, direction) = if d12 >= d21 { (d12, 1) } else { (d21, 2) };
    let mut best: Option<(f64, Vec<i64>, f64, f64)> = None;
    let mut zero_one = None;
    let events: BTreeSet<&Vec<i64>> = mu1.support.keys().chain(mu2.support.keys()).collect();
    for o in events {
        let (a, b) = (mu1.mass(o), mu2.mass(o));
        if a.max(b) <= VISIBLE {
            continue;
        }
        let lr = if a <= error_bar || b <= error_bar {
            f64::INFINITY
        } else {
            (a.ln() - b.ln()).abs()
        };
        if zero_one.is_none() && a.min(b) <= error_bar && a.max(b) > VISIBLE {
            zero_one = Some(o.clone());
        }
        if best.as_ref().is_none_or(|(l, ..)| lr > *l) {
            best = Some((lr, o.clone(), a, b));
        }
    }
    let margin = VISIBLE.max(10.0 * error_bar);
    let (max_log_ratio, witness, witness_mass) = match best {
        Some((l, o, a, b)) => (l, Some(o), (a, b)),
        None => (0.0, None, (0.0, 0.0)),
    };
    Confirmation {
        confirmed: divergence > margin,
        divergence,
        direction,
        witness,
        witness_mass,
        max_log_ratio,
        max_ratio: max_log_ratio.exp(),
        zero_one,
        error_bar,
        weights: (mu1.weight(), mu2.weight()),
    }
}

pub fn confirm_counterexample(
    p: &Program,
    in1: &Inputs,
    in2: &Inputs,
    opts: &OracleOpts,
) -> Result<Confirmation, OracleError> {
    check_adjacent(p, in1, in2)?;
    let mu1 = denote_output_dist(p, in1, opts)?;
    let mu2 = denote_output_dist(p, in2, opts)?;
    let k = max_samples(p, in1)?.max(max_samples(p, in2)?);
    Ok(compare(&mu1, &mu2, opts.eps, k.max(1) as f64 * opts.tail))
}

/// Ratio bound a shift coupling pays for: exp(|k + mu1 - mu2| * inv_scale).
pub fn shift_ratio_bound(mu1: i64, mu2: i64, k: i64, inv_scale: f64) -> f64 {
    ((k + mu1 - mu2).abs() as f64 * inv_scale).exp()
}

/// Largest pointwise ratio pmf1(z) / pmf2(z + k) over the window of the first distribution.
pub fn shifted_max_ratio(d1: DiscreteLaplace, d2: DiscreteLaplace, k: i64, tail: f64) -> f64 {
    let w = d1.window(tail).max(d2.window(tail)) + k.abs();
    let mut best: f64 = 0.0;
    for z in d1.mean - w..=d1.mean + w {
        let (a, b) = (d1.pmf(z), d2.pmf(z + k));
        best = best.max(a / b);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    #[test]
    fn pmf_at_mean() {
        let d = DiscreteLaplace::new(0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((d.pmf(0) - (1.0 - e) / (1.0 + e)).abs() < 1e-15);
        assert!((d.pmf(0) - 0.462117).abs() < 1e-6);
        assert_eq!(d.pmf(3), d.pmf(-3));
        assert!(DiscreteLaplace::new(0, 0.0).is_err());
    }

    #[test]
    fn cdf_matches_partial_sums() {
        let d = DiscreteLaplace::new(2, 0.7).unwrap();
        for z in -10..12 {
            let s: f64 = (-200..=z).map(|k| d.pmf(k)).sum();
            assert!((s - d.cdf(z)).abs() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn window_tail_mass() {
        for b in [0.25, 0.5, 1.0, 2.0] {
            let d = DiscreteLaplace::new(0, b).unwrap();
            let w = d.window(1e-12);
            let s = neumaier((-w..=w).map(|z| d.pmf(z)));
            assert!(s >= 1.0 - 1e-12, "b={b} w={w} s={s}");
            assert!(w <= (60.0 / b) as i64);
        }
    }

    #[test]
    fn single_sample_program() {
        let p = parse_program("program p\nbudget eps\noutput o\nbegin x :~ lap(0, 1); o := x end").unwrap();
        let mu = denote_output_dist(&p, &Inputs::default(), &OracleOpts::new(1.0)).unwrap();
        let d = DiscreteLaplace::new(0, 1.0).unwrap();
        for z in -5..=5 {
            assert!((mu.mass(&[z]) - d.pmf(z)).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_examples() {
        let a = SubDist::unit(vec![1]);
        let b = SubDist::unit(vec![2]);
        assert_eq!(eps_divergence(&a, &a, 0.0), 0.0);
        assert_eq!(eps_divergence(&a, &b, 0.0), 1.0);
    }

    #[test]
    fn alg3_zero_one_event() {
        let p = parse_program(include_str!("../../../corpus/alg3_buggy.pfor")).unwrap();
        let opts = OracleOpts::new(10.0);
        let in1 = Inputs::default().with_int("t", 0).with_query("q", vec![0, 1]);
        let in2 = Inputs::default().with_int("t", 0).with_query("q", vec![1, 0]);
        let bt = vec![crate::lang::BOT, crate::lang::TOP];
        let mu1 = denote_output_dist(&p, &in1, &opts).unwrap();
        let mu2 = denote_output_dist(&p, &in2, &opts).unwrap();
        assert!(mu1.mass(&bt) > 0.0);
        assert_eq!(mu2.mass(&bt), 0.0);
        assert!(eps_divergence(&mu1, &mu2, 10.0) > 0.0);
    }

    #[test]
    fn alg2_discrete_ratio_exceeds_e() {
        let p = parse_program(include_str!("../../../corpus/alg2_buggy.pfor")).unwrap();
        let in1 = Inputs::default().with_int("t", 0).with_query("q", vec![0, 0, 0, 0, 1]);
        let in2 = Inputs::default().with_int("t", 0).with_query("q", vec![1, 1, 1, 1, 0]);
        let c = confirm_counterexample(&p, &in1, &in2, &OracleOpts::new(1.0)).unwrap();
        let b = crate::lang::BOT;
        let o = vec![b, b, b, b, 1];
        let mu1 = denote_output_dist(&p, &in1, &OracleOpts::new(1.0)).unwrap();
        let mu2 = denote_output_dist(&p, &in2, &OracleOpts::new(1.0)).unwrap();
        assert!(mu1.mass(&o) / mu2.mass(&o) > std::f64::consts::E + 0.01);
        assert!(c.confirmed && c.max_ratio > std::f64::consts::E + 0.01);
        assert!((mu1.weight() - 1.0).abs() < 1e-9);
    }
}

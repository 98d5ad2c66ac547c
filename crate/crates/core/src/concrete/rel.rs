use serde::Serialize;

use super::{arr_assign, assign, eval_expr_c, eval_scale, int_of, step_c, unroll, ConcreteError, Env, ProbMemory, UConfig, Value, R};
use crate::constraints::{CExpr, ProbEntry, ProbTrace, RandExpr, Registry, SampleVar};
use crate::lang::{project, project_expr, Cmd, Expr, Side};

/// A pair of runs executing one relational command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RConfig {
    pub mem1: ProbMemory,
    pub mem2: ProbMemory,
    pub cmd: Cmd,
    pub ptrace1: ProbTrace,
    pub ptrace2: ProbTrace,
    pub history1: Vec<bool>,
    pub history2: Vec<bool>,
}

/// A relational value: one value when both runs agree on an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RValue {
    Unary(Value),
    Pair(Value, Value),
}

impl RValue {
    pub fn side(self, side: Side) -> Value {
        match (self, side) {
            (RValue::Unary(v), _) => v,
            (RValue::Pair(_, b), Side::Right) => b,
            (RValue::Pair(a, _), _) => a,
        }
    }
}

impl RConfig {
    pub fn new(mem1: ProbMemory, mem2: ProbMemory, cmd: Cmd) -> RConfig {
        RConfig {
            mem1,
            mem2,
            cmd,
            ptrace1: ProbTrace::new(),
            ptrace2: ProbTrace::new(),
            history1: vec![],
            history2: vec![],
        }
    }

    pub fn is_final(&self) -> bool {
        self.cmd.is_skip()
    }

    pub fn side(&self, side: Side) -> UConfig {
        match side {
            Side::Right => UConfig {
                mem: self.mem2.clone(),
                cmd: project(Side::Right, &self.cmd),
                ptrace: self.ptrace2.clone(),
                history: self.history2.clone(),
            },
            _ => UConfig {
                mem: self.mem1.clone(),
                cmd: project(Side::Left, &self.cmd),
                ptrace: self.ptrace1.clone(),
                history: self.history1.clone(),
            },
        }
    }
}

pub fn rel_eval(
    reg: &mut Registry,
    envs: (&Env, &Env),
    cfg: &mut RConfig,
    e: &Expr,
) -> R<RValue> {
    let v1 = eval_expr_c(reg, envs.0, &cfg.mem1, &project_expr(Side::Left, e), &mut cfg.ptrace1)?;
    let v2 = eval_expr_c(reg, envs.1, &cfg.mem2, &project_expr(Side::Right, e), &mut cfg.ptrace2)?;
    Ok(match (v1, v2) {
        (Value::Int(a), Value::Int(b)) if a == b => RValue::Unary(v1),
        _ => RValue::Pair(v1, v2),
    })
}

fn outcomes(v: Value, p: &ProbTrace) -> Vec<(bool, ProbTrace)> {
    match v {
        Value::Int(n) => vec![(n > 0, p.clone())],
        Value::Prob(y) => {
            let mut t = p.clone();
            t.push(ProbEntry::Gt0(RandExpr::Prob(y)));
            let mut f = p.clone();
            f.push(ProbEntry::Le0(RandExpr::Prob(y)));
            vec![(true, t), (false, f)]
        }
    }
}

/// One relational step.
pub fn rel_step_rc(reg: &mut Registry, envs: (&Env, &Env), cfg: &RConfig) -> R<Vec<RConfig>> {
    let mut out = Vec::new();
    match &cfg.cmd {
        Cmd::Skip => out.push(cfg.clone()),
        Cmd::Seq(a, b) if a.is_skip() => out.push(RConfig { cmd: (**b).clone(), ..cfg.clone() }),
        Cmd::Seq(a, b) => {
            let sub = RConfig { cmd: (**a).clone(), ..cfg.clone() };
            for s in rel_step_rc(reg, envs, &sub)? {
                let cmd = if s.cmd.is_skip() { (**b).clone() } else { Cmd::Seq(Box::new(s.cmd), b.clone()) };
                out.push(RConfig { cmd, ..s });
            }
        }
        Cmd::Assign(x, e) => {
            let mut c = cfg.clone();
            let v = rel_eval(reg, envs, &mut c, e)?;
            assign(&mut c.mem1, x, v.side(Side::Left));
            assign(&mut c.mem2, x, v.side(Side::Right));
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::ArrInit(a, len, fill) => {
            let mut c = cfg.clone();
            let n = rel_eval(reg, envs, &mut c, len)?;
            let v = rel_eval(reg, envs, &mut c, fill)?;
            for side in [Side::Left, Side::Right] {
                let k = int_of(n.side(side), "array length")?;
                let m = if side == Side::Left { &mut c.mem1 } else { &mut c.mem2 };
                m.arrays.insert(a.clone(), vec![v.side(side); k.max(0) as usize]);
            }
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::ArrAssign(a, i, e) => {
            let mut c = cfg.clone();
            let k = rel_eval(reg, envs, &mut c, i)?;
            let v = rel_eval(reg, envs, &mut c, e)?;
            arr_assign(&mut c.mem1, a, int_of(k.side(Side::Left), "array index")?, v.side(Side::Left))?;
            arr_assign(&mut c.mem2, a, int_of(k.side(Side::Right), "array index")?, v.side(Side::Right))?;
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::LapSample { var, mean, inv_scale } => {
            let mut c = cfg.clone();
            let mu = rel_eval(reg, envs, &mut c, mean)?;
            for (side, env) in [(Side::Left, envs.0), (Side::Right, envs.1)] {
                let Value::Int(m) = mu.side(side) else {
                    return Err(ConcreteError::StuckSampling);
                };
                let (mem, p) = if side == Side::Left { (&mut c.mem1, &mut c.ptrace1) } else { (&mut c.mem2, &mut c.ptrace2) };
                let scale = eval_scale(mem, &project_expr(side, inv_scale))?;
                let y = reg.fresh_prob(env.side);
                p.push(ProbEntry::LapDecl { var: SampleVar::Prob(y), mean: CExpr::Lit(m), scale });
                assign(mem, var, Value::Prob(y));
            }
            c.cmd = Cmd::Skip;
            out.push(c);
        }
        Cmd::If(g, a, b) => {
            let mut c = cfg.clone();
            let v = rel_eval(reg, envs, &mut c, g)?;
            for (b1, p1) in outcomes(v.side(Side::Left), &c.ptrace1) {
                for (b2, p2) in outcomes(v.side(Side::Right), &c.ptrace2) {
                    let pick = |t: bool| if t { a } else { b };
                    let cmd = if b1 == b2 {
                        (**pick(b1)).clone()
                    } else {
                        Cmd::pair(project(Side::Left, pick(b1)), project(Side::Right, pick(b2)))
                    };
                    let mut h1 = c.history1.clone();
                    let mut h2 = c.history2.clone();
                    if matches!(v.side(Side::Left), Value::Prob(_)) {
                        h1.push(b1);
                    }
                    if matches!(v.side(Side::Right), Value::Prob(_)) {
                        h2.push(b2);
                    }
                    out.push(RConfig {
                        mem1: c.mem1.clone(),
                        mem2: c.mem2.clone(),
                        cmd,
                        ptrace1: p1.clone(),
                        ptrace2: p2,
                        history1: h1,
                        history2: h2,
                    });
                }
            }
        }
        Cmd::For(x, lo, hi, body) => {
            let mut c = cfg.clone();
            let l = rel_eval(reg, envs, &mut c, lo)?;
            let h = rel_eval(reg, envs, &mut c, hi)?;
            match (l, h) {
                (RValue::Unary(l), RValue::Unary(h)) => {
                    c.cmd = unroll(x, int_of(l, "loop bound")?, int_of(h, "loop bound")?, body);
                }
                _ => {
                    c = cfg.clone();
                    c.cmd = Cmd::pair(project(Side::Left, &cfg.cmd), project(Side::Right, &cfg.cmd));
                }
            }
            out.push(c);
        }
        Cmd::PairCmd(a, b) => {
            if a.is_skip() && b.is_skip() {
                out.push(RConfig { cmd: Cmd::Skip, ..cfg.clone() });
            } else if !a.is_skip() {
                let u = UConfig { mem: cfg.mem1.clone(), cmd: (**a).clone(), ptrace: cfg.ptrace1.clone(), history: cfg.history1.clone() };
                for s in step_c(reg, envs.0, &u)? {
                    out.push(RConfig {
                        mem1: s.mem,
                        cmd: Cmd::PairCmd(Box::new(s.cmd), b.clone()),
                        ptrace1: s.ptrace,
                        history1: s.history,
                        ..cfg.clone()
                    });
                }
            } else {
                let u = UConfig { mem: cfg.mem2.clone(), cmd: (**b).clone(), ptrace: cfg.ptrace2.clone(), history: cfg.history2.clone() };
                for s in step_c(reg, envs.1, &u)? {
                    out.push(RConfig {
                        mem2: s.mem,
                        cmd: Cmd::PairCmd(a.clone(), Box::new(s.cmd)),
                        ptrace2: s.ptrace,
                        history2: s.history,
                        ..cfg.clone()
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Run relational configurations to completion, breadth first.
pub fn rel_run_to_final(reg: &mut Registry, envs: (&Env, &Env), start: Vec<RConfig>, max_steps: usize) -> R<Vec<RConfig>> {
    let mut work: std::collections::VecDeque<RConfig> = start.into();
    let mut finals = Vec::new();
    let mut steps = 0;
    while let Some(c) = work.pop_front() {
        if c.is_final() {
            finals.push(c);
            continue;
        }
        steps += 1;
        if steps > max_steps {
            return Err(ConcreteError::StepLimit);
        }
        work.extend(rel_step_rc(reg, envs, &c)?);
    }
    Ok(finals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn relational_examples() {
        let mut reg = Registry::new();
        let q = BTreeMap::new();
        let e1 = Env { queries: &q, side: Side::Left };
        let e2 = Env { queries: &q, side: Side::Right };
        let mut m1 = ProbMemory::default();
        let mut m2 = ProbMemory::default();
        let y1 = reg.fresh_prob(Side::Left);
        let y2 = reg.fresh_prob(Side::Right);
        m1.vars.insert("x".into(), Value::Prob(y1));
        m2.vars.insert("x".into(), Value::Prob(y2));
        let c = Cmd::if_(Expr::var("x"), Cmd::assign("o", Expr::int(1)), Cmd::assign("o", Expr::int(2)));
        let cfg = RConfig::new(m1.clone(), m2.clone(), c);
        let next = rel_step_rc(&mut reg, (&e1, &e2), &cfg).unwrap();
        assert_eq!(next.len(), 4);
        assert!(matches!(next[1].cmd, Cmd::PairCmd(..)));

        let cfg = RConfig::new(m1.clone(), m2.clone(), Cmd::pair(Cmd::Skip, Cmd::Skip));
        let next = rel_step_rc(&mut reg, (&e1, &e2), &cfg).unwrap();
        assert!(next[0].is_final());

        let mut cfg = RConfig::new(m1, m2, Cmd::Skip);
        let v = rel_eval(&mut reg, (&e1, &e2), &mut cfg, &Expr::pair(Expr::int(3), Expr::int(3))).unwrap();
        assert_eq!(v, RValue::Unary(Value::Int(3)));
    }
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;

use dpsym::concrete::Inputs;
use dpsym::constraints::{omega_decompose, Registry};
use dpsym::engine::{self, exit, parse_point, EngineOpts, Report, Strategy};
use dpsym::lang::{parse_program, ParamType, Program, Side};
use dpsym::oracle::{confirm_counterexample, denote_output_dist};
use dpsym::solver::Solver;
use dpsym::symexec::{budget_units, explore, output_point, trace_json, unary_finals, BudgetRule, Policy, RelCtx};

#[derive(Parser, Debug)]
#[command(name = "dpsym", version, about = "Prove or refute differential privacy of small probabilistic programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Concrete eps for the oracle.
    #[arg(long, global = true, default_value_t = 1.0)]
    eps: f64,
    /// Override the program's budget, e.g. `2eps`, `eps/2`.
    #[arg(long, global = true)]
    budget: Option<String>,
    /// SMT solver executable (defaults to $DPSYM_SOLVER, then `z3` on PATH).
    #[arg(long, global = true)]
    solver: Option<PathBuf>,
    /// Per-query solver timeout in milliseconds.
    #[arg(long, global = true)]
    timeout: Option<u64>,
    /// Write every solver query into this directory.
    #[arg(long, global = true)]
    persist_queries: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    /// Oracle tail mass cut off per sampling.
    #[arg(long, global = true, alias = "window")]
    tail: Option<f64>,
    /// Largest iteration count explored for loops with symbolic bounds.
    #[arg(long, global = true)]
    unroll: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Rule::Lemma)]
    budget_rule: Rule,
    /// Fork worlds over both coupling policies at every sampling.
    #[arg(long, global = true)]
    mixed_policy: bool,
    /// Treat the output as identifying the branches taken, for strategy A.
    #[arg(long, global = true)]
    assume_trace_identifiable: bool,
    /// Check this coupling instead of searching: one candidate name or integer per shift, in witness order.
    #[arg(long, global = true, value_delimiter = ',')]
    shifts: Option<Vec<String>>,
    /// `NAME=VALUE` bindings for constants and integer parameters; `--NAME VALUE` also works.
    #[arg(long = "set", global = true, value_name = "NAME=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Lemma,
    Figure,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    A,
    B,
    C,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TraceMode {
    Unary,
    Lapgen,
    Avoc,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Prove the postcondition within the budget.
    Prove { program: String },
    /// Prove output-pointwise equality for every output of the domain.
    ProvePointwise {
        program: String,
        /// Output points separated by `;`, e.g. `[bot,top];[top,bot]`; derived when absent.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Search for a counterexample with strategy A, B, C or all of them.
    Refute {
        #[arg(value_enum, ignore_case = true)]
        strategy: Which,
        program: String,
    },
    /// Compare the output distributions on two inputs.
    Confirm {
        program: String,
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
    },
    /// Print the output distribution on one input.
    Run {
        program: String,
        #[arg(long, default_value = "")]
        inputs: String,
    },
    /// Print the final symbolic traces as JSON.
    DumpTraces {
        program: String,
        #[arg(long, value_enum, default_value_t = TraceMode::Lapgen)]
        mode: TraceMode,
    },
    /// List the bundled example programs.
    ListExamples,
}

/// Rewrite `--NAME VALUE` for names clap does not know into `--set NAME=VALUE`.
fn rewrite_bindings(args: Vec<String>) -> Vec<String> {
    let known: BTreeSet<String> = {
        let c = Cli::command();
        let mut k: BTreeSet<String> = c.get_arguments().filter_map(|a| a.get_long().map(String::from)).collect();
        for s in c.get_subcommands() {
            k.extend(s.get_arguments().filter_map(|a| a.get_long().map(String::from)));
        }
        k.extend(["help".to_string(), "version".to_string(), "window".to_string()]);
        k
    };
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        if let Some(name) = a.strip_prefix("--") {
            let (name, inline) = match name.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (name.to_string(), None),
            };
            if !name.is_empty() && !known.contains(&name) {
                let v = inline.or_else(|| it.next()).unwrap_or_default();
                out.push("--set".into());
                out.push(format!("{name}={v}"));
                continue;
            }
        }
        out.push(a);
    }
    out
}

struct Failure {
    code: i32,
    err: anyhow::Error,
}

fn fail(code: i32) -> impl FnOnce(anyhow::Error) -> Failure {
    move |err| Failure { code, err }
}

fn load(spec: &str) -> Result<Program, Failure> {
    let src = if Path::new(spec).exists() {
        std::fs::read_to_string(spec).with_context(|| format!("reading {spec}")).map_err(fail(exit::FILE))?
    } else if let Some(s) = dpsym::corpus::source(spec) {
        s.to_string()
    } else {
        return Err(Failure { code: exit::FILE, err: anyhow!("no such file or example: {spec}") });
    };
    parse_program(&src).map_err(|e| Failure { code: exit::FILE, err: anyhow!("{spec}: {e}") })
}

/// `eps`, `2eps`, `2*eps`, `eps/2`, `3*eps/4`.
fn parse_budget(s: &str) -> Result<Ratio<i64>> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.to_string(), b.parse::<i64>().context("budget denominator")?),
        None => (t.clone(), 1),
    };
    let coef = num.strip_suffix("eps").ok_or_else(|| anyhow!("budget must be a multiple of eps: {s}"))?;
    let coef = coef.strip_suffix('*').unwrap_or(coef);
    let n = if coef.is_empty() { 1 } else { coef.parse::<i64>().context("budget coefficient")? };
    if n <= 0 || den <= 0 {
        bail!("budget must be positive: {s}");
    }
    Ok(Ratio::new(n, den))
}

/// Split on commas outside brackets.
fn split_top(s: &str) -> Vec<String> {
    let (mut depth, mut cur, mut out) = (0, String::new(), Vec::new());
    for ch in s.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' | ';' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    out.into_iter().map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn parse_value(v: &str) -> Result<Vec<i64>> {
    let v = v.trim();
    match v.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        Some(inner) => inner
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<i64>().with_context(|| format!("bad integer {x}")))
            .collect(),
        None => Ok(vec![v.parse::<i64>().with_context(|| format!("bad integer {v}"))?]),
    }
}

fn bind(p: &Program, inp: &mut Inputs, name: &str, v: &str) -> Result<()> {
    let vals = parse_value(v)?;
    if p.query(name).is_some() {
        inp.queries.insert(name.to_string(), vals);
        return Ok(());
    }
    match p.param(name).map(|x| &x.ty) {
        Some(ParamType::Int) => {
            let [x] = vals[..] else { bail!("{name} takes one integer") };
            inp.ints.insert(name.to_string(), x);
        }
        Some(ParamType::Array(_)) => {
            inp.arrays.insert(name.to_string(), vals);
        }
        Some(ParamType::Db) => bail!("{name} is a database; give query tables instead"),
        None => bail!("{} has no query or parameter {name}", p.name),
    }
    Ok(())
}

fn parse_inputs(p: &Program, s: &str, base: &Inputs) -> Result<Inputs> {
    let mut inp = base.clone();
    for part in split_top(s) {
        let (k, v) = part.split_once('=').ok_or_else(|| anyhow!("expected NAME=VALUE, got {part}"))?;
        bind(p, &mut inp, k.trim(), v)?;
    }
    Ok(inp)
}

/// Apply `--set` bindings: constants change the program, integer parameters become inputs.
fn apply_sets(mut p: Program, sets: &[String]) -> Result<(Program, Inputs)> {
    let mut inp = Inputs::default();
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected NAME=VALUE, got {s}"))?;
        if p.consts.iter().any(|(n, _)| n == k) {
            let n: i64 = v.trim().parse().with_context(|| format!("constant {k}"))?;
            p = p.with_const(k, n).ok_or_else(|| anyhow!("cannot set {k}"))?;
        } else {
            bind(&p, &mut inp, k, v).map_err(|e| anyhow!("unknown option --{k}: {e}"))?;
        }
    }
    Ok((p, inp))
}

fn solver(c: &Common) -> Result<Solver, Failure> {
    let mut s = Solver::locate(c.solver.as_deref()).map_err(|e| Failure { code: exit::NO_SOLVER, err: anyhow!("{e}") })?;
    if let Some(ms) = c.timeout {
        s = s.with_timeout(ms);
    }
    if let Some(d) = &c.persist_queries {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display())).map_err(fail(exit::FILE))?;
        s = s.persist_to(d.clone());
    }
    Ok(s)
}

fn engine_opts(c: &Common) -> EngineOpts {
    let mut o = EngineOpts {
        rule: match c.budget_rule {
            Rule::Lemma => BudgetRule::Lemma,
            Rule::Figure => BudgetRule::Figure,
        },
        mixed_policy: c.mixed_policy,
        assume_identifiable: c.assume_trace_identifiable,
        eps: c.eps,
        shifts: c.shifts.clone(),
        ..EngineOpts::default()
    };
    if let Some(u) = c.unroll {
        o.unroll = u;
    }
    if let Some(t) = c.tail {
        o.tail = t;
    }
    o
}

fn emit(c: &Common, text: &str, json: &serde_json::Value) -> Result<(), Failure> {
    let pretty = serde_json::to_string_pretty(json).expect("json prints");
    if let Some(path) = &c.out {
        std::fs::write(path, format!("{pretty}\n")).with_context(|| format!("writing {}", path.display())).map_err(fail(exit::FILE))?;
    }
    if c.json {
        println!("{pretty}");
    } else {
        println!("{text}");
    }
    Ok(())
}

fn report(c: &Common, r: &Report) -> Result<i32, Failure> {
    emit(c, &r.summary(), &serde_json::to_value(r).expect("report serializes"))?;
    Ok(r.exit_code())
}

fn out_text(o: &[i64]) -> String {
    let cell = |v: &i64| match *v {
        dpsym::lang::BOT => "bot".to_string(),
        dpsym::lang::TOP => "top".to_string(),
        v => v.to_string(),
    };
    if o.len() == 1 {
        cell(&o[0])
    } else {
        format!("[{}]", o.iter().map(cell).collect::<Vec<_>>().join(","))
    }
}

fn real_main(cli: Cli) -> Result<i32, Failure> {
    let c = &cli.common;
    let usage = fail(exit::USAGE);
    if let Cmd::ListExamples = cli.cmd {
        for (name, src) in dpsym::corpus::CORPUS {
            let about = src.lines().next().and_then(|l| l.strip_prefix("//")).unwrap_or("").trim();
            println!("{name:18} {about}");
        }
        return Ok(exit::PROVED);
    }
    let spec = match &cli.cmd {
        Cmd::Prove { program }
        | Cmd::ProvePointwise { program, .. }
        | Cmd::Refute { program, .. }
        | Cmd::Confirm { program, .. }
        | Cmd::Run { program, .. }
        | Cmd::DumpTraces { program, .. } => program.clone(),
        Cmd::ListExamples => unreachable!(),
    };
    let p = load(&spec)?;
    let (mut p, base) = apply_sets(p, &c.set).map_err(fail(exit::USAGE))?;
    if let Some(b) = &c.budget {
        p.budget = parse_budget(b).map_err(fail(exit::USAGE))?;
    }
    if !(c.eps.is_finite() && c.eps > 0.0) {
        return Err(Failure { code: exit::USAGE, err: anyhow!("--eps must be positive") });
    }
    let opts = engine_opts(c);
    match &cli.cmd {
        Cmd::Prove { .. } => report(c, &engine::prove(&p, &solver(c)?, &opts)),
        Cmd::ProvePointwise { domain, .. } => {
            let dom = match domain {
                Some(d) => Some(
                    d.split(';')
                        .map(|x| parse_point(x).ok_or_else(|| anyhow!("bad output point {x}")))
                        .collect::<Result<Vec<_>>>()
                        .map_err(usage)?,
                ),
                None => None,
            };
            report(c, &engine::prove_pointwise(&p, &solver(c)?, &opts, dom))
        }
        Cmd::Refute { strategy, .. } => {
            let s = solver(c)?;
            let r = match strategy {
                Which::A => engine::refute(&p, &s, &opts, Strategy::A),
                Which::B => engine::refute(&p, &s, &opts, Strategy::B),
                Which::C => engine::refute(&p, &s, &opts, Strategy::C),
                Which::All => engine::refute_all(&p, &s, &opts),
            };
            report(c, &r)
        }
        Cmd::Confirm { left, right, .. } => {
            let l = parse_inputs(&p, left, &base).map_err(fail(exit::USAGE))?;
            let r = parse_inputs(&p, right, &base).map_err(fail(exit::USAGE))?;
            let k = confirm_counterexample(&p, &l, &r, &opts.oracle()).map_err(|e| Failure { code: exit::USAGE, err: anyhow!("{e}") })?;
            let text = format!(
                "confirm {}: {}\n  divergence {:.6e} (direction {})\n  max ratio {:.6} at {}\n  masses {:.6e} / {:.6e}{}",
                p.name,
                if k.confirmed { "violation confirmed" } else { "no violation visible" },
                k.divergence,
                k.direction,
                k.max_ratio,
                k.witness.as_deref().map(out_text).unwrap_or_else(|| "-".into()),
                k.witness_mass.0,
                k.witness_mass.1,
                k.zero_one.as_deref().map(|o| format!("\n  zero on one side: {}", out_text(o))).unwrap_or_default(),
            );
            let json = serde_json::json!({"program": p.name, "left": l, "right": r, "confirmation": k});
            emit(c, &text, &json)?;
            Ok(if k.confirmed { exit::REFUTED } else { exit::INCONCLUSIVE })
        }
        Cmd::Run { inputs, .. } => {
            let inp = parse_inputs(&p, inputs, &base).map_err(fail(exit::USAGE))?;
            let d = denote_output_dist(&p, &inp, &opts.oracle()).map_err(|e| Failure { code: exit::USAGE, err: anyhow!("{e}") })?;
            let mut rows: Vec<(&Vec<i64>, &f64)> = d.support.iter().collect();
            rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
            let mut text = format!("{} at eps={}: total mass {:.12}", p.name, c.eps, d.weight());
            for (o, m) in rows.iter().take(40) {
                text.push_str(&format!("\n  {:<24} {:.9}", out_text(o), m));
            }
            if rows.len() > 40 {
                text.push_str(&format!("\n  ... {} more outputs", rows.len() - 40));
            }
            let json = serde_json::json!({
                "program": p.name,
                "inputs": inp,
                "total": d.weight(),
                "support": d.support.iter().map(|(o, m)| serde_json::json!({"output": o, "mass": m})).collect::<Vec<_>>(),
            });
            emit(c, &text, &json)?;
            Ok(exit::PROVED)
        }
        Cmd::DumpTraces { mode, .. } => {
            let s = solver(c)?;
            let mut reg = Registry::new();
            let json = match mode {
                TraceMode::Unary => {
                    let fs = unary_finals(&mut reg, &p, Side::Left, &opts.sym_ctx(false), &s, opts.max_configs)
                        .map_err(|e| Failure { code: exit::INCONCLUSIVE, err: anyhow!("{e}") })?;
                    serde_json::Value::Array(
                        fs.iter()
                            .map(|f| {
                                serde_json::json!({
                                    "history": f.history.iter().map(|h| if h.taken { "T" } else { "F" }).collect::<String>(),
                                    "constraints": f.cstrs.to_text(&reg),
                                    "prob": f.ptrace.to_text(&reg),
                                    "output": output_point(&f.mem, &p.output).map(|o| o.text()).unwrap_or_default(),
                                })
                            })
                            .collect(),
                    )
                }
                TraceMode::Lapgen | TraceMode::Avoc => {
                    let ctx = RelCtx {
                        sym: opts.sym_ctx(false),
                        policy: if matches!(mode, TraceMode::Avoc) { Policy::Avoc } else { Policy::LapGen },
                        rule: opts.rule,
                        units: budget_units(&p),
                        max_configs: opts.max_configs,
                    };
                    let x = explore(&mut reg, &p, &ctx, &s).map_err(|e| Failure { code: exit::INCONCLUSIVE, err: anyhow!("{e}") })?;
                    serde_json::Value::Array(
                        x.worlds
                            .iter()
                            .flat_map(|w| w.configs.iter())
                            .map(|cfg| {
                                let mut t = trace_json(&reg, cfg);
                                t["omega"] = omega_decompose(&cfg.cstrs).to_json(&reg);
                                t
                            })
                            .collect(),
                    )
                }
            };
            let n = json.as_array().map(Vec::len).unwrap_or(0);
            let text = if c.json { String::new() } else { serde_json::to_string_pretty(&json).expect("json prints") };
            emit(c, &text, &json)?;
            if !c.json {
                eprintln!("{n} final traces of {}", p.name);
            }
            Ok(exit::PROVED)
        }
        Cmd::ListExamples => unreachable!(),
    }
}

fn main() -> ExitCode {
    let args = rewrite_bindings(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    match real_main(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("dpsym: {:#}", f.err);
            ExitCode::from(f.code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_parse() {
        assert_eq!(parse_budget("eps").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_budget("1eps").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_budget("2*eps").unwrap(), Ratio::from_integer(2));
        assert_eq!(parse_budget("3*eps/4").unwrap(), Ratio::new(3, 4));
        assert!(parse_budget("2").is_err());
        assert!(parse_budget("0eps").is_err());
    }

    #[test]
    fn unknown_long_flags_become_bindings() {
        let a = rewrite_bindings(["dpsym", "refute", "b", "alg2_buggy", "--n", "5", "--eps", "1", "--t=0"].map(String::from).to_vec());
        assert_eq!(a, ["dpsym", "refute", "b", "alg2_buggy", "--set", "n=5", "--eps", "1", "--set", "t=0"]);
    }

    #[test]
    fn inputs_parse() {
        let p = dpsym::corpus::program("alg3_buggy");
        let i = parse_inputs(&p, "q=[0,1], t=0", &Inputs::default()).unwrap();
        assert_eq!(i.queries["q"], vec![0, 1]);
        assert_eq!(i.ints["t"], 0);
        assert!(parse_inputs(&p, "z=1", &Inputs::default()).is_err());
    }

    #[test]
    fn print_round_trip_of_corpus() {
        for (name, _) in dpsym::corpus::CORPUS {
            let p = dpsym::corpus::program(name);
            assert_eq!(parse_program(&dpsym::lang::print_program(&p)).unwrap(), p);
        }
    }
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn dpsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsym")).args(args).output().expect("binary runs")
}

fn have_solver() -> bool {
    dpsym::solver::find_solver(None).is_ok()
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The command whose report is checked in for each example.
const GOLDEN: &[(&str, &[&str])] = &[
    ("alg1_buggy", &["refute", "C"]),
    ("alg1_safe", &["prove"]),
    ("alg2_buggy", &["refute", "B"]),
    ("alg2_safe_top", &["prove-pointwise"]),
    ("alg2_safe_noised", &["prove-pointwise"]),
    ("alg3_buggy", &["refute", "A"]),
];

fn stable(out: &Output) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json report");
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn reports_match_checked_in_goldens() {
    if !have_solver() {
        return;
    }
    let bless = std::env::var_os("DPSYM_BLESS").is_some();
    for (name, cmd) in GOLDEN {
        let path = root().join("corpus/expected").join(format!("{name}.json"));
        let mut args = cmd.to_vec();
        args.extend([*name, "--json"]);
        let out = dpsym(&args);
        let got = serde_json::to_string_pretty(&stable(&out)).unwrap() + "\n";
        if bless {
            std::fs::write(&path, &got).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert!(got == want, "{name}: report differs from {}", path.display());
    }
}

#[test]
fn same_command_same_report() {
    if !have_solver() {
        return;
    }
    let a = stable(&dpsym(&["refute", "all", "alg3_buggy", "--json"]));
    let b = stable(&dpsym(&["refute", "all", "alg3_buggy", "--json"]));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(dpsym(&["list-examples"]).status.code(), Some(0));
    assert_eq!(dpsym(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(dpsym(&["prove", "no/such/file.pfor"]).status.code(), Some(66));
    assert_eq!(dpsym(&["prove", "alg1_safe", "--solver", "/no/such/z3"]).status.code(), Some(69));
    assert_eq!(dpsym(&["prove", "alg1_safe", "--budget", "lots"]).status.code(), Some(64));
    if !have_solver() {
        return;
    }
    let p = root().join("corpus/alg1_safe.pfor");
    assert_eq!(dpsym(&["prove", p.to_str().unwrap(), "--budget", "1eps"]).status.code(), Some(0));
    assert_eq!(dpsym(&["prove", "alg1_buggy"]).status.code(), Some(20));
    assert_eq!(dpsym(&["refute", "B", "alg2_buggy", "--n", "5", "--eps", "1"]).status.code(), Some(10));
}

#[test]
fn run_prints_a_distribution() {
    let out = dpsym(&["run", "alg3_buggy", "--inputs", "q=[0,1]", "--t", "0", "--eps", "1", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total = v["total"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(v["support"].as_array().unwrap().len(), 3);
}

#[test]
fn confirm_the_threshold_counterexample() {
    let out = dpsym(&["confirm", "alg2_buggy", "--left", "q=[0,0,0,0,1]", "--right", "q=[1,1,1,1,0]", "--t", "0", "--json"]);
    assert_eq!(out.status.code(), Some(10));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["confirmation"]["max_ratio"].as_f64().unwrap() > std::f64::consts::E + 0.01);
    // non-adjacent inputs are a usage error
    let out = dpsym(&["confirm", "alg2_buggy", "--left", "q=[0,0,0,0,0]", "--right", "q=[3,0,0,0,0]", "--t", "0"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn report_written_to_file() {
    if !have_solver() {
        return;
    }
    let dir = std::env::temp_dir().join(format!("dpsym-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("r.json");
    let o = dpsym(&["refute", "A", "alg3_buggy", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&o.stdout).contains("refuted"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["verdict"], "refuted");
    assert_eq!(v["schema_version"], 1);
    std::fs::remove_dir_all(dir).ok();
}

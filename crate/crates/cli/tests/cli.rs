use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pacrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacrl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn generated_model_depends_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "5", "gen-mdp", "--kind", "nonstationary", "--states", "3", "--actions", "2", "--horizon", "4"];
    let a = pacrl(dir.path(), &args);
    let b = pacrl(dir.path(), &args);
    assert_eq!(a.stdout, b.stdout);
    let m = json(&a);
    assert_eq!(m["H"], 4);
    let other = pacrl(dir.path(), &["--seed", "6", "gen-mdp", "--kind", "nonstationary", "--states", "3", "--actions", "2", "--horizon", "4"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn out_flag_leaves_no_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = pacrl(dir.path(), &["--out", "m.json", "gen-mdp", "--kind", "stationary", "--states", "2", "--actions", "2", "--horizon", "inf", "--gamma", "0.5"]);
    assert!(out.status.success());
    assert!(dir.path().join("m.json").exists());
    assert!(!dir.path().join("m.partial").exists());
}

#[test]
fn eval_matches_library_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |out: &str, args: &[&str]| {
        let o = pacrl(p, &[&["--out", out][..], args].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("m.json", &["gen-mdp", "--kind", "nonstationary", "--states", "2", "--actions", "2", "--horizon", "3"]);
    run("s.json", &["solve", "cem-ns", "--mdp", "m.json", "--n", "30"]);
    let solved: Value = serde_json::from_slice(&std::fs::read(p.join("s.json")).unwrap()).unwrap();
    std::fs::write(p.join("pi.json"), solved["policy"].to_string()).unwrap();
    let eval = json(&pacrl(p, &["eval", "--mdp", "m.json", "--policy", "pi.json"]));
    let m = pacrl::MdpSpec::<f64>::from_json(&std::fs::read_to_string(p.join("m.json")).unwrap()).unwrap();
    let pi = pacrl::Policy::from_json(&std::fs::read_to_string(p.join("pi.json")).unwrap()).unwrap();
    let v = pacrl::dp::evaluate_policy(&m, &pi, &pacrl::dp::SolveOptions::default()).unwrap();
    let rows = eval["values"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for (t, row) in rows.iter().enumerate() {
        for (s, x) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(x.as_f64().unwrap(), *v.get(s, t));
        }
    }
}

#[test]
fn exit_codes_separate_failures_from_errors() {
    let dir = tempfile::tempdir().unwrap();
    // The literal likelihood check fails by construction.
    let failed = pacrl(dir.path(), &["verify-all", "--scope", "lower-bound"]);
    assert_eq!(failed.status.code(), Some(1));
    let passed = pacrl(dir.path(), &["verify-all", "--scope", "counting"]);
    assert_eq!(passed.status.code(), Some(0));
    let missing = pacrl(dir.path(), &["eval", "--mdp", "absent.json", "--policy", "absent.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = pacrl(dir.path(), &["bounds", "hoeffding", "--m", "0", "--gap", "0.1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bounds_report_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    let r = json(&pacrl(
        dir.path(),
        &["bounds", "cem-ns", "--eps", "1", "--delta", "0.2", "--v-max", "2", "--states", "2", "--actions", "2", "--horizon", "2"],
    ));
    assert_eq!(r["n"], "41");
}

use std::process::{Command, Output};

use serde_json::Value;

const SCHEMA: &str = include_str!("../schema/measure-record.schema.json");

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magic-mps")).args(args).output().expect("binary runs")
}

fn records(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("JSON line"))
        .collect()
}

fn type_ok(v: &Value, t: &Value) -> bool {
    let one = |t: &str| match t {
        "object" => v.is_object(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "array" => v.is_array(),
        _ => false,
    };
    match t {
        Value::String(s) => one(s),
        Value::Array(a) => a.iter().any(|x| one(x.as_str().unwrap())),
        _ => true,
    }
}

/// Checks the subset of JSON Schema used by the published record schema.
fn validate(v: &Value, schema: &Value) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        if !type_ok(v, t) {
            return Err(format!("{v} is not of type {t}"));
        }
    }
    if let Some(e) = schema.get("enum") {
        if !e.as_array().unwrap().contains(v) {
            return Err(format!("{v} not in {e}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum"), v.as_f64()) {
        if x < min.as_f64().unwrap() {
            return Err(format!("{x} below minimum {min}"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(key.as_str().unwrap()) {
                return Err(format!("missing key {key}"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, x) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => validate(x, sub).map_err(|e| format!("{k}: {e}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    Ok(())
}

fn schema() -> Value {
    serde_json::from_str(SCHEMA).unwrap()
}

fn error_json(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("error JSON on stderr")
}

#[test]
fn sre_of_t_doped_state() {
    let r = records(&run(&["sre", "--t-doped", "N=8,NT=4", "--n", "2"]));
    assert_eq!(r.len(), 1);
    validate(&r[0], &schema()).unwrap();
    let expect = 4.0 * (4.0f64 / 3.0).log2() / 8.0;
    assert!((r[0]["value"]["m_n"].as_f64().unwrap() - expect).abs() < 1e-10);
    assert_eq!(r[0]["config"]["command"], "sre");
}

#[test]
fn nullity_of_doped_clifford_circuit() {
    let args = ["nullity", "--circuit", "random-clifford", "--N", "24", "--NT", "12", "--depth", "6", "--seed", "7"];
    let r = records(&run(&args));
    validate(&r[0], &schema()).unwrap();
    assert_eq!(r[0]["value"]["nu_rounded"], 12);
    assert!(r[0]["value"]["iterations"].as_u64().unwrap() <= 10);
    assert_eq!(r[0]["seed"], 7);
}

#[test]
fn every_measure_validates() {
    let s = schema();
    for args in [
        vec!["bell", "--t-doped", "N=3,NT=2"],
        vec!["gap", "--t-doped", "N=3,NT=1"],
        vec!["strata", "--t-doped", "N=2,NT=1"],
        vec!["sample-m1", "--t-doped", "N=2,NT=2", "--samples", "1000"],
        vec!["dmrg", "--model", "ising", "--N", "6", "--param", "1.5"],
        vec!["circuit-run", "--circuit", "brickwork", "--N", "6", "--steps", "3"],
        vec!["nullity", "--circuit", "t-doped", "--N", "5", "--NT", "2", "--depth", "3", "--group"],
    ] {
        for r in records(&run(&args)) {
            validate(&r, &s).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }
}

#[test]
fn model_sweep_csv_with_derivatives() {
    let out = run(&["sre", "--model", "ising", "--h-grid", "0.5:0.8:0.1", "--N", "8", "--chi", "40", "--trunc", "1e-9", "--derivatives", "2", "--csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,m_n,truncation_error,chi_used,energy,d1,d2");
    assert_eq!(lines.len(), 5);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), 7);
    assert_eq!(first[0], "0.5");
}

fn strip_time(mut v: Vec<Value>) -> Vec<Value> {
    for r in &mut v {
        r.as_object_mut().unwrap().remove("wall_time");
    }
    v
}

#[test]
fn reruns_are_reproducible() {
    let args = ["sample-m1", "--circuit", "random-clifford", "--N", "6", "--NT", "2", "--depth", "3", "--seed", "11", "--samples", "5000"];
    let a = strip_time(records(&run(&args)));
    let b = strip_time(records(&run(&args)));
    assert_eq!(a, b);
}

#[test]
fn exit_codes_and_error_json() {
    let out = run(&["sre", "--N", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "invalid_argument");

    let out = run(&["sre", "--t-doped", "N=3,NT=1", "--n", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["bell", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["exit_code"], 2);

    let out = run(&["sre", "--circuit", "brickwork", "--N", "6", "--steps", "6", "--chi-p", "2", "--abort", "1e-12"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "truncation_abort");

    let out = run(&["dmrg", "--model", "xxz", "--N", "6", "--param", "0.5", "--sweeps", "1", "--energy-tol", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "not_converged");
    // the record is still written before the failure
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);

    let out = Command::new(env!("CARGO_BIN_EXE_magic-mps"))
        .args(["sre", "--t-doped", "N=2,NT=1"])
        .env("MAGIC_MPS_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_files_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let kv = dir.path().join("run.cfg");
    std::fs::write(&kv, "# doped circuit\ncircuit = t-doped\nN = 6\nNT = 2\ndepth = 3\nseed = 3\n").unwrap();
    let r = records(&run(&["nullity", "--config", kv.to_str().unwrap()]));
    assert_eq!(r[0]["value"]["nu_rounded"], 2);
    assert_eq!(r[0]["seed"], 3);
    let r = records(&run(&["nullity", "--config", kv.to_str().unwrap(), "--seed", "5"]));
    assert_eq!(r[0]["seed"], 5);

    let js = dir.path().join("run.json");
    std::fs::write(&js, r#"{"t-doped": "N=4,NT=4", "n": 3}"#).unwrap();
    let r = records(&run(&["sre", "--config", js.to_str().unwrap()]));
    assert_eq!(r[0]["value"]["order"], 3);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "just words\n").unwrap();
    assert_eq!(run(&["sre", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn saved_states_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.mps");
    let circuit = ["--circuit", "t-doped", "--N", "6", "--NT", "2", "--depth", "2", "--seed", "4"];
    let mut args = vec!["circuit-run"];
    args.extend(circuit);
    args.extend(["--save", path.to_str().unwrap()]);
    records(&run(&args));
    let direct = records(&run(&[&["sre"][..], &circuit[..]].concat()));
    let loaded = records(&run(&["sre", "--mps", path.to_str().unwrap()]));
    let a = direct[0]["value"]["M_n"].as_f64().unwrap();
    let b = loaded[0]["value"]["M_n"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn oracle_check_passes_on_small_circuit() {
    let r = records(&run(&["oracle-check", "--circuit", "t-doped", "--N", "4", "--NT", "2", "--depth", "3", "--seed", "2"]));
    assert_eq!(r[0]["value"]["pass"], true, "{}", r[0]["value"]);
    let out = run(&["oracle-check", "--t-doped", "N=11,NT=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    let out = run(&["bell", "--t-doped", "N=2,NT=1", "-o", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(path).unwrap();
    let v: Value = serde_json::from_str(text.trim()).unwrap();
    assert!((v["value"]["b_additive"].as_f64().unwrap() - 1.0).abs() < 1e-8);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oneside"))
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let s = read(&manifest().join("schemas").join(name));
    jsonschema::validator_for(&s).expect("schema compiles")
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errs: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errs.is_empty(), "{schema_name}: {errs:#?}");
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn verify_allgather_push_world_8_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &["verify", "--scenario", "allgather-push", "--seed", "1"],
        d.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read(&d.path().join("verify.json"));
    assert_valid("verify.schema.json", &rep);
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["world_size"], 8);
}

#[test]
fn corrupted_payload_reports_mismatch_and_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "verify",
            "--scenario",
            "reducescatter-inter",
            "--corrupt-rank",
            "2",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 1);
    let rep = read(&d.path().join("verify.json"));
    assert_valid("verify.schema.json", &rep);
    assert_eq!(rep["passed"], false);
    assert!(rep["mismatch_count"].as_u64().unwrap() > 0);
    let m = &rep["mismatches"][0];
    assert_ne!(m["expected"], m["actual"]);
}

#[test]
fn corrupt_rank_outside_world_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "verify",
            "--scenario",
            "allgather-pull",
            "--corrupt-rank",
            "99",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_file_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &["verify", "--config", "/definitely/not/here.json"],
        d.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_and_unknown_fields_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let p = write_scenario(d.path(), "{ not json");
    assert_eq!(
        code(&run(&["verify", "--config", p.to_str().unwrap()], d.path())),
        2
    );
    let p = write_scenario(d.path(), r#"{"name":"x","kind":"ag-ll","worlds":3}"#);
    assert_eq!(
        code(&run(
            &["simulate", "--config", p.to_str().unwrap()],
            d.path()
        )),
        2
    );
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["verify"], d.path())), 2);
    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 2);
    assert_eq!(
        code(&run(
            &[
                "verify",
                "--scenario",
                "allgather-push",
                "--scheduler",
                "fifo"
            ],
            d.path()
        )),
        2
    );
}

#[test]
fn random_scheduler_requires_a_seed() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "verify",
            "--scenario",
            "allgather-push",
            "--scheduler",
            "random",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 2);
    let o = run(
        &[
            "verify",
            "--scenario",
            "allgather-push",
            "--scheduler",
            "random",
            "--seed",
            "5",
        ],
        d.path(),
    );
    assert_eq!(code(&o), 0);
}

#[test]
fn simulate_ag_ll_lands_near_13_5_us() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "ag-ll"], d.path());
    assert_eq!(code(&o), 0);
    let s = read(&d.path().join("summary.json"));
    assert_valid("summary.schema.json", &s);
    let t = s["makespan_us"].as_f64().unwrap();
    assert!((t - 13.5).abs() <= 1.35, "{t}");

    let trace = read(&d.path().join("trace.json"));
    assert_valid("trace.schema.json", &trace);
    let ev = trace["traceEvents"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["ph"] == "X")
        .unwrap();
    for k in ["name", "ph", "ts", "dur", "pid", "tid"] {
        assert!(ev.get(k).is_some(), "missing {k}");
    }
}

#[test]
fn simulate_rs_threshold_prints_474_8() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "rs-threshold"], d.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("474.8 GB/s"));
    let s = read(&d.path().join("summary.json"));
    assert_valid("summary.schema.json", &s);
    assert!(!d.path().join("trace.json").exists());
}

#[test]
fn simulate_partition_has_no_tail() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["simulate", "--scenario", "partition"], d.path())),
        0
    );
    let s = read(&d.path().join("summary.json"));
    assert_valid("summary.schema.json", &s);
    assert_eq!(s["max_tail_us"], 0.0);
    assert_valid("trace.schema.json", &read(&d.path().join("trace.json")));
}

#[test]
fn zero_bandwidth_link_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let mut tm = read(&manifest().join("../core/params/h800.json"));
    tm["params"]["nvlink_bw_gbps"] = 0.0.into();
    let sc = serde_json::json!({"name": "bad", "kind": "ag-ll", "n_nodes": 2, "local_world": 8, "topology": tm});
    let p = write_scenario(d.path(), &sc.to_string());
    let o = run(&["simulate", "--config", p.to_str().unwrap()], d.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nvlink_bw_gbps"));
}

#[test]
fn functional_simulation_verifies_and_traces() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["simulate", "--scenario", "allgather-ll"], d.path())),
        0
    );
    let s = read(&d.path().join("summary.json"));
    assert_valid("summary.schema.json", &s);
    assert_eq!(s["verified"], true);
    assert!(s["makespan_us"].as_f64().unwrap() > 0.0);
    assert_valid("trace.schema.json", &read(&d.path().join("trace.json")));
}

#[test]
fn deterministic_tune_is_byte_stable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "tune",
        "--scenario",
        "ag-gemm",
        "--scheduler",
        "det",
        "--seed",
        "7",
    ];
    assert_eq!(code(&run(&args, a.path())), 0);
    assert_eq!(code(&run(&args, b.path())), 0);
    let ta = std::fs::read(a.path().join("tune_report.json")).unwrap();
    let tb = std::fs::read(b.path().join("tune_report.json")).unwrap();
    assert_eq!(ta, tb);
    let rep: Value = serde_json::from_slice(&ta).unwrap();
    assert_valid("tune_report.schema.json", &rep);
    let chosen = rep["chosen"]["index"].clone();
    assert!(rep["per_rank_choice"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| *c == chosen));
}

#[test]
fn empty_config_space_is_a_tuning_error() {
    let d = tempfile::tempdir().unwrap();
    let p = write_scenario(
        d.path(),
        r#"{"name":"t","kind":"ag-gemm","local_world":2,"shape":{"m":16,"n":16,"k":16},"tune":{"axes":[]}}"#,
    );
    let o = run(&["tune", "--config", p.to_str().unwrap()], d.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tuning error"));
}

#[test]
fn shipped_scenarios_validate_and_run() {
    let dir = manifest().join("scenarios");
    let v = schema("scenario.schema.json");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let doc = read(&path);
        assert!(v.is_valid(&doc), "{}", path.display());
        let d = tempfile::tempdir().unwrap();
        let cmd = if doc.get("tune").is_some() {
            "tune"
        } else if matches!(
            doc["kind"].as_str(),
            Some("ag-ll" | "ag-baseline" | "rs-threshold" | "partition")
        ) {
            "simulate"
        } else {
            "verify"
        };
        let o = run(&[cmd, "--config", path.to_str().unwrap()], d.path());
        assert_eq!(
            code(&o),
            0,
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&o.stderr)
        );
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn shipped_parameter_files_match_their_schema() {
    let s = read(&manifest().join("../core/params/params.schema.json"));
    let v = jsonschema::validator_for(&s).unwrap();
    for f in ["h800.json", "mi308x.json"] {
        assert!(
            v.is_valid(&read(&manifest().join("../core/params").join(f))),
            "{f}"
        );
    }
}

#[test]
fn list_scenarios_names_every_builtin() {
    let o = bin().arg("list-scenarios").output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for n in [
        "allgather-push",
        "alltoall",
        "ag-ll",
        "partition",
        "gemm-rs",
    ] {
        assert!(text.lines().any(|l| l.starts_with(n)), "{n}");
    }
}

#[test]
fn every_builtin_functional_scenario_verifies() {
    let o = bin().arg("list-scenarios").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    for line in text.lines().filter(|l| l.contains("verify")) {
        let name = line.split_whitespace().next().unwrap();
        let d = tempfile::tempdir().unwrap();
        let o = run(
            &[
                "verify",
                "--scenario",
                name,
                "--scheduler",
                "random",
                "--seed",
                "3",
            ],
            d.path(),
        );
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

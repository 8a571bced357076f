use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_laminate-forge"));
    c.env_remove("LAMINATE_FORGE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(schema: &str, instance: &Path) {
    let s = load(&schema_dir().join(schema));
    let v = jsonschema::validator_for(&s).expect("schema compiles");
    let doc = load(instance);
    let errors: Vec<String> = v.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).take(5).collect();
    assert!(errors.is_empty(), "{} violates {schema}: {errors:?}", instance.display());
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn staircase_level_two_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["staircase", "--n", "2", "--m", "2", "--k", "2", "--verify", "--out", &out_arg(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let doc = load(&dir.path().join("measures.json"));
    let nu2 = &doc["measures"][1]["atoms"];
    let mut atoms: Vec<(Value, Value)> =
        nu2.as_array().unwrap().iter().map(|a| (a["matrix"].clone(), a["weight"].clone())).collect();
    atoms.sort_by_key(|a| a.0.to_string());
    let want = serde_json::json!([
        [[["0", "0"], ["0", "1"]], "1/2"],
        [[["2", "0"], ["0", "0"]], "1/4"],
        [[["2", "0"], ["0", "2"]], "1/4"],
    ]);
    let got: Vec<Value> = atoms.into_iter().map(|(m, w)| serde_json::json!([m, w])).collect();
    assert_eq!(Value::Array(got), want);
    assert_schema("staircase_measures.schema.json", &dir.path().join("measures.json"));
    assert_schema("staircase_report.schema.json", &dir.path().join("report.json"));
    assert_eq!(load(&dir.path().join("report.json"))["pass"], true);
}

#[test]
fn tampered_measure_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = run(&["bridge", "--diag", "1/8,1", "--j", "2", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let measure = dir.path().join("measure.json");
    assert_schema("measure.schema.json", &measure);
    assert_schema("bridge_report.schema.json", &dir.path().join("report.json"));
    let o = run(&["verify", "--measure", measure.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let mut doc = load(&measure);
    doc["splits"][0]["lambda"] = Value::String("1/3".into());
    let bad = dir.path().join("tampered.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let report_dir = dir.path().join("verify");
    let o = run(&["verify", "--measure", bad.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("split_barycenter"), "{}", stdout(&o));
    assert_schema("verify_report.schema.json", &report_dir.join("verify.json"));
    let rep = load(&report_dir.join("verify.json"));
    assert_eq!(rep["pass"], false);
    assert!(!rep["measure"]["violations"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["pipeline", "--n", "2", "--m", "2", "--stages", "3", "--seed", "7"];
    let o1 = bin().args(args).args(["--out", &out_arg(a.path())]).output().unwrap();
    let o2 = bin().args(args).args(["--out", &out_arg(b.path()), "--threads", "3"]).output().unwrap();
    assert_eq!(code(&o1), 0, "{}", stdout(&o1));
    assert_eq!(code(&o2), 0);
    assert_eq!(o1.stdout, o2.stdout);
    let mut names: Vec<String> =
        std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let mut expected = vec!["report.json".to_string()];
    for j in 1..=3 {
        expected.extend([format!("stage_{j}.svg"), format!("stage_{j}_map.json"), format!("stage_{j}_tail.csv")]);
    }
    expected.sort();
    assert_eq!(names, expected);
    for n in &names {
        let x = std::fs::read(a.path().join(n)).unwrap();
        let y = std::fs::read(b.path().join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
    assert_schema("pipeline_report.schema.json", &a.path().join("report.json"));
}

#[test]
fn realize_writes_valid_outputs_and_map_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = run(&["realize", "--lambda", "0.5", "--b", "2 0; 0 1", "--c", "1 0; 0 1", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    for f in ["map.json", "report.json", "histogram.csv", "map.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert_schema("map.schema.json", &dir.path().join("map.json"));
    assert_schema("realize_report.schema.json", &dir.path().join("report.json"));
    let csv = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(csv.starts_with("index,matrix,delta,fraction\n"));

    let map = dir.path().join("map.json");
    let o = run(&["verify", "--map", map.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    // Moving one vertex breaks continuity and volume closure.
    let mut doc = load(&map);
    doc["cells"][0]["vertices"][0][0] = serde_json::json!(0.01);
    let bad = dir.path().join("moved.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = run(&["verify", "--map", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
}

#[test]
fn constants_and_lamlem_reports_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = run(&["constants", "--n", "2", "--m", "2", "--j", "2", "--R", "2", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_schema("constants.schema.json", &dir.path().join("constants.json"));
    let c = load(&dir.path().join("constants.json"));
    assert_eq!(c["rho"]["exact"], "3/32");
    assert_eq!(c["r_small"]["exact"], "1/216");

    let o = run(&["lamlem", "--diag", "2.001,2", "--j", "2", "--R", "2", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_schema("lamlem_report.schema.json", &dir.path().join("report.json"));
    assert_schema("measure.schema.json", &dir.path().join("measure.json"));
}

#[test]
fn matrix_file_input_matches_inline() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.json");
    std::fs::write(&f, r#"[["1/8", 0], [0, 1]]"#).unwrap();
    let from_file = run(&["bridge", "--A", f.to_str().unwrap(), "--j", "2"]);
    let inline = run(&["bridge", "--matrix", "0.125 0; 0 1", "--j", "2"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(from_file.stdout, inline.stdout);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["staircase", "--bogus"])), 2);
    assert_eq!(code(&run(&["nonsense"])), 2);
    assert_eq!(code(&run(&["bridge", "--j", "2"])), 2);
    // Input outside the construction's domain.
    assert_eq!(code(&run(&["bridge", "--diag", "2,2", "--j", "2"])), 2);
    assert_eq!(code(&run(&["constants", "--mode", "approx"])), 2);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"k": 2, "typo": 1}"#).unwrap();
    assert_eq!(code(&run(&["staircase", "--config", cfg.to_str().unwrap()])), 2);
    std::fs::write(&cfg, r#"{"k": "two"}"#).unwrap();
    assert_eq!(code(&run(&["staircase", "--config", cfg.to_str().unwrap()])), 2);

    let o = bin().args(["staircase"]).env("LAMINATE_FORGE_THREADS", "many").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("out");
    std::fs::write(&cfg, format!(r#"{{"n": 2, "m": 2, "k": 3, "verify": true, "out": {:?}}}"#, out.to_str().unwrap())).unwrap();
    let o = run(&["staircase", "--config", cfg.to_str().unwrap(), "--k", "2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let doc = load(&out.join("measures.json"));
    assert_eq!(doc["k"], 2);
    assert!(out.join("report.json").exists());
}

#[test]
fn nothing_is_written_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(dir.path())
        .args(["realize", "--lambda", "0.5", "--b", "2 0; 0 1", "--c", "1 0; 0 1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

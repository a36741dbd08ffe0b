use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_geocd"));
    c.env_remove("GEOCD_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn load_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(schema_file: &str, instance: &Value) {
    let manifest = load_json(&schema_dir().join("manifest.schema.json"));
    let schema = load_json(&schema_dir().join(schema_file));
    let validator = jsonschema::options()
        .with_resource(
            "json-schema:///manifest.schema.json",
            jsonschema::Resource::from_contents(manifest).unwrap(),
        )
        .build(&schema)
        .unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_file}: {errors:?}");
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_random_cloud(path: &Path, n: usize, seed: u64) {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let text: String = (0..n).map(|_| format!("{} {} {}\n", next(), next(), next())).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn compute_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.xyz");
    write_random_cloud(&p, 64, 1);
    let p = p.to_str().unwrap();
    let v = stdout_json(&run(&["compute", p, p]));
    assert_valid("compute.schema.json", &v);
    assert_eq!(v["cd"].as_f64(), Some(0.0));
    assert_eq!(v["hd"].as_f64(), Some(0.0));
    assert_eq!(v["f1"].as_f64(), Some(1.0));
    assert!(v["geocd"]["value"].as_f64().unwrap() < 0.0);
}

#[test]
fn compute_k_too_large_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.xyz"), dir.path().join("b.xyz"));
    write_random_cloud(&a, 64, 2);
    write_random_cloud(&b, 64, 3);
    let out = run(&["compute", a.to_str().unwrap(), b.to_str().unwrap(), "--k", "5000"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("5000"), "{err}");
}

#[test]
fn compute_parse_error_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.xyz");
    std::fs::write(&bad, "0 0 0\n1 2\n").unwrap();
    let out = run(&["compute", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("missing.xyz");
    let out = run(&["compute", missing.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compute_l_fixture_hops() {
    let (p, g) = (fixture("l_pred.xyz"), fixture("l_gt.xyz"));
    let at = |hops: &str| {
        let out = run(&[
            "compute",
            p.to_str().unwrap(),
            g.to_str().unwrap(),
            "--no-normalize",
            "--k",
            "1",
            "--mask-threshold",
            "off",
            "--hops",
            hops,
        ]);
        stdout_json(&out)
    };
    let (h1, h2) = (at("1"), at("2"));
    assert_valid("compute.schema.json", &h2);
    let v1 = h1["geocd"]["value"].as_f64().unwrap();
    let v2 = h2["geocd"]["value"].as_f64().unwrap();
    assert_ne!(v1, v2);
    let m1 = h1["geocd"]["mean_cross_distance"].as_f64().unwrap();
    let m2 = h2["geocd"]["mean_cross_distance"].as_f64().unwrap();
    assert!(m2 < m1);
    // p's row goes from [0.4, 1] to [0.4, 0.7]; the gt rows stay at the sentinel
    assert!((m1 - 0.85).abs() < 1e-12 && (m2 - 0.775).abs() < 1e-12);
}

#[test]
fn compute_writes_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    write_random_cloud(&a, 32, 4);
    let out_path = dir.path().join("report.json");
    let out = run(&[
        "compute",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_valid("compute.schema.json", &load_json(&out_path));
}

#[test]
fn verify_default_run_passes() {
    let v = stdout_json(&run(&["verify"]));
    assert_valid("verify.schema.json", &v);
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["trials"].as_u64(), Some(10));
}

#[test]
fn verify_zero_trials() {
    let v = stdout_json(&run(&["verify", "--trials", "0"]));
    assert_valid("verify.schema.json", &v);
    assert_eq!(v["compared"].as_u64(), Some(0));
    assert!(v["worst_offenders"].as_array().unwrap().is_empty());
}

#[test]
fn verify_injected_fault_fails() {
    let out = run(&["verify", "--trials", "2", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("verify.schema.json", &v);
    assert_eq!(v["passed"], Value::Bool(false));
    assert!(!v["worst_offenders"].as_array().unwrap().is_empty());
}

#[test]
fn fit_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "--deterministic",
        "fit",
        "--shape",
        "sphere",
        "--points",
        "64",
        "--steps-cd",
        "5",
        "--steps-geocd",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_valid("fit.schema.json", &v);
    assert_valid("fit.schema.json", &load_json(&out_dir.join("manifest.json")));
    assert_eq!(v["manifest"]["deterministic"], Value::Bool(true));
    for f in ["target.xyz", "initial.xyz", "final.xyz"] {
        let text = std::fs::read_to_string(out_dir.join(f)).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 64, "{f}");
    }
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("phase,step,loss,cd,hd,f1,elapsed_s"));
    assert_eq!(lines.count(), 8);
}

#[test]
fn fit_rejects_bad_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit",
        "--points",
        "16",
        "--lr",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_reports_failures_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--deterministic",
        "sweep",
        "--axis",
        "k",
        "--values",
        "3,abc,100000",
        "--points",
        "64",
        "--steps-cd",
        "5",
        "--steps-geocd",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][2], "ok");
    assert!(rows[1][2].starts_with("error"));
    assert!(rows[2][2].starts_with("error"));
}

#[test]
fn sweep_single_value_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--points", "64", "--steps-cd", "10", "--steps-geocd", "4", "--k", "3"];
    let fit_dir = dir.path().join("fit");
    let mut args = vec!["--deterministic", "fit", "--out-dir", fit_dir.to_str().unwrap()];
    args.extend(common);
    let fit = stdout_json(&run(&args));

    let mut args = vec!["--deterministic", "sweep", "--axis", "k", "--values", "3", "--out-dir"];
    let sweep_dir = dir.path().join("sweep");
    args.push(sweep_dir.to_str().unwrap());
    args.extend(common);
    let out = run(&args);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let col = |name: &str| -> f64 { row[headers.iter().position(|h| h == name).unwrap()].parse().unwrap() };
    let m = &fit["final_metrics"];
    assert_eq!(col("cd"), m["cd"].as_f64().unwrap());
    assert_eq!(col("hd"), m["hd"].as_f64().unwrap());
    assert_eq!(col("f1"), m["f1"].as_f64().unwrap());
}

#[test]
fn convert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    std::fs::write(&a, "0.5 0.25 0.125\n1 2 3\n").unwrap();
    let b = dir.path().join("a.gcpc");
    let c = dir.path().join("c.xyz");
    assert!(run(&["convert", a.to_str().unwrap(), b.to_str().unwrap()])
        .status
        .success());
    assert_eq!(std::fs::metadata(&b).unwrap().len(), 12 + 2 * 12);
    assert!(run(&["convert", b.to_str().unwrap(), c.to_str().unwrap()])
        .status
        .success());
    let text = std::fs::read_to_string(&c).unwrap();
    let nums: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(|t| t.parse::<f64>().unwrap()))
        .collect();
    assert_eq!(nums, vec![0.5, 0.25, 0.125, 1.0, 2.0, 3.0]);
}

#[test]
fn convert_rejects_truncated_binary() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("t.bin");
    let mut bytes = b"GCPC".to_vec();
    bytes.extend(1u32.to_le_bytes());
    bytes.extend(2u32.to_le_bytes());
    bytes.extend(0f32.to_le_bytes());
    std::fs::write(&b, bytes).unwrap();
    let out = run(&[
        "convert",
        b.to_str().unwrap(),
        dir.path().join("o.xyz").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schema_rejects_malformed_report() {
    let p = fixture("l_gt.xyz");
    let mut v = stdout_json(&run(&["compute", p.to_str().unwrap(), p.to_str().unwrap(), "--k", "1"]));
    assert_valid("compute.schema.json", &v);
    v["f1"] = Value::from(1.5);
    v["manifest"].as_object_mut().unwrap().remove("version");
    let manifest = load_json(&schema_dir().join("manifest.schema.json"));
    let validator = jsonschema::options()
        .with_resource(
            "json-schema:///manifest.schema.json",
            jsonschema::Resource::from_contents(manifest).unwrap(),
        )
        .build(&load_json(&schema_dir().join("compute.schema.json")))
        .unwrap();
    assert_eq!(validator.iter_errors(&v).count(), 2);
}

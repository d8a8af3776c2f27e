use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn npe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npe")).args(args).current_dir(cwd).env_remove("NPE_OUTPUT_ROOT").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"));
    rows.iter().map(|r| r[i].clone()).collect()
}

const ZERO: &str = r#"{"schema":"npe-scenario/1","name":"zero","kind":"forward",
  "medium":{"preset":"flat","dim":1,"lo":[0],"hi":[1],"t_final":0.5},"grid":{"nodes":65}}"#;

const BEAM: &str = r#"{"schema":"npe-scenario/1","kind":"beam-diagnostics",
  "medium":{"preset":"flat","dim":2,"lo":[-1,-1],"hi":[1,1],"t_final":1.0}}"#;

const OBS: &str = r#"{"schema":"npe-scenario/1","kind":"observability","seed":7,
  "medium":{"preset":"flat","dim":1,"lo":[0],"hi":[1],"t_final":4.0},"options":{"random":4}}"#;

#[test]
fn zero_forward_has_zero_norms() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "zero.json", ZERO);
    let out = npe(&["run", &f, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = csv_rows(&tmp.path().join("o/results.csv"));
    assert!(!rows.is_empty());
    for col in ["l2", "max_abs", "trace_max"] {
        for v in column(&h, &rows, col) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    for f in ["manifest.json", "diagnostics.json", "results.schema.json"] {
        assert!(tmp.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn flat_beam_invariant_is_constant() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "beam.json", BEAM);
    let out = npe(&["run", &f, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = csv_rows(&tmp.path().join("o/results.csv"));
    assert!(rows.len() > 10);
    for v in column(&h, &rows, "invariant_rel_dev") {
        assert!(v.parse::<f64>().unwrap() <= 1e-6, "{v}");
    }
    for v in column(&h, &rows, "min_imag_h") {
        assert!(v.parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn unknown_kind_is_a_parse_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "bad.json", &ZERO.replace("\"forward\"", "\"euler\""));
    let out = npe(&["run", &f, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[parse]") && err.contains("`kind`"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn malformed_json_and_bad_schema_exit_2() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "a.json", "{not json");
    assert_eq!(npe(&["run", &f], tmp.path()).status.code(), Some(2));
    let f = write(tmp.path(), "b.json", &ZERO.replace("npe-scenario/1", "npe-scenario/9"));
    let out = npe(&["validate", &f], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`schema`"));
    let f = write(tmp.path(), "c.json", &BEAM.replace("\"flat\"", "\"ocean\""));
    let out = npe(&["validate", &f], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`medium.preset`"));
}

#[test]
fn missing_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = npe(&["run", "nope.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));
}

#[test]
fn valid_scenario_passes_validation() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "zero.json", ZERO);
    let out = npe(&["validate", &f], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("all checks passed"));
}

#[test]
fn short_reconstruction_time_is_named() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{"schema":"npe-scenario/1","kind":"reconstruct",
      "medium":{"preset":"flat","dim":2,"lo":[-1,-1],"hi":[1,1],"t_final":1.0},"options":{"points":[[0,0,0]]}}"#;
    let f = write(tmp.path(), "rs.json", text);
    let out = npe(&["validate", &f], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL timing") && stdout.contains("need T >"), "{stdout}");
    assert!(!stdout.contains("all checks passed"));
    let out = npe(&["run", &f, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[precondition]"));
}

#[test]
fn observability_timing_violation_is_refused() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "ob.json", OBS);
    let out = npe(&["validate", &f, "--override", "medium.t_final=1.0", "--override", "options.beta=2.0"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn incompatible_data_lists_order_and_residual() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{"schema":"npe-scenario/1","kind":"forward",
      "medium":{"preset":"flat","dim":1,"lo":[0],"hi":[1],"t_final":0.5},
      "options":{"lateral":{"t0":0.0,"width":0.3,"center":[0,0,0],"sigma":0.2,"amplitude":1}}}"#;
    let f = write(tmp.path(), "inc.json", text);
    let out = npe(&["validate", &f], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL compatibility: order 0 residual"), "{stdout}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "ob.json", OBS);
    for d in ["a", "b"] {
        assert!(npe(&["run", &f, "--out", d], tmp.path()).status.success());
    }
    let a = fs::read(tmp.path().join("a/results.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
    let threaded = npe(&["--threads", "1", "run", &f, "--out", "c"], tmp.path());
    assert!(threaded.status.success());
    assert_eq!(a, fs::read(tmp.path().join("c/results.csv")).unwrap());
}

#[test]
fn manifest_rerun_reproduces_results() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "ob.json", OBS);
    assert!(npe(&["run", &f, "--out", "a", "--override", "grid.nodes=61"], tmp.path()).status.success());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "npe-manifest/1");
    assert_eq!(manifest["scenario"]["grid"]["nodes"], 61);
    assert!(manifest["build"]["git"].is_string() && manifest["wall_time_s"].is_number());
    let m = tmp.path().join("a/manifest.json").to_string_lossy().into_owned();
    assert!(npe(&["run", &m, "--out", "b"], tmp.path()).status.success());
    assert_eq!(fs::read(tmp.path().join("a/results.csv")).unwrap(), fs::read(tmp.path().join("b/results.csv")).unwrap());
}

#[test]
fn overrides_change_the_configuration() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "zero.json", ZERO);
    assert!(npe(&["run", &f, "--out", "o", "--override", "grid.nodes=33"], tmp.path()).status.success());
    let diag: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["nodes"][0], 33);
    let out = npe(&["run", &f, "--override", "grid.nodes"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = npe(&["run", &f, "--override", "grid.nodes=1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "zero.json", ZERO);
    let out = Command::new(env!("CARGO_BIN_EXE_npe"))
        .args(["run", &f])
        .current_dir(tmp.path())
        .env("NPE_OUTPUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("root/zero/results.csv").exists());
    assert!(npe(&["run", &f], tmp.path()).status.success());
    assert!(tmp.path().join("npe-output/zero/results.csv").exists());
}

#[test]
fn schema_file_documents_every_column() {
    let tmp = TempDir::new().unwrap();
    let f = write(tmp.path(), "beam.json", BEAM);
    assert!(npe(&["run", &f, "--out", "o"], tmp.path()).status.success());
    let (h, _) = csv_rows(&tmp.path().join("o/results.csv"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/results.schema.json")).unwrap()).unwrap();
    let cols = schema["columns"].as_array().unwrap();
    assert_eq!(cols.len(), h.len());
    for (c, name) in cols.iter().zip(&h) {
        assert_eq!(c["name"], name.as_str());
        assert!(!c["description"].as_str().unwrap().is_empty(), "{name}");
    }
}

#[test]
fn linearize_reports_second_order_richardson_slope() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{"schema":"npe-scenario/1","kind":"linearize",
      "medium":{"preset":"flat","dim":1,"lo":[0],"hi":[1],"t_final":1.0},
      "options":{"probes":[{"t0":0.1,"width":0.3,"center":[0,0,0],"sigma":0.2,"amplitude":1},
                           {"t0":0.15,"width":0.3,"center":[0,0,0],"sigma":0.2,"amplitude":1}]}}"#;
    let f = write(tmp.path(), "li.json", text);
    let out = npe(&["run", &f, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = csv_rows(&tmp.path().join("o/results.csv"));
    let metrics = column(&h, &rows, "metric");
    let values = column(&h, &rows, "value");
    let get = |m: &str| values[metrics.iter().position(|x| x == m).unwrap()].parse::<f64>().unwrap();
    assert_eq!(get("order"), 2.0);
    assert!(get("direct_trace_max_diff") <= 1e-6 * get("direct_trace_max"));
}

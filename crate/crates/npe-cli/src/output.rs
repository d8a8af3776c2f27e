//! Result tables, column documentation and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::scenario::Kind;
use crate::CliError;

pub const RESULTS_SCHEMA: &str = "npe-results/1";
pub const MANIFEST_SCHEMA: &str = "npe-manifest/1";

/// Fixed-format float so repeated runs write identical bytes.
pub fn num(v: f64) -> String {
    format!("{v:.10e}")
}

pub struct Table {
    pub kind: Kind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: Kind, cols: &[&str]) -> Self {
        let mut header = vec!["schema".to_string(), "kind".to_string()];
        header.extend(cols.iter().map(|c| c.to_string()));
        Self { kind, header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        let mut full = vec![RESULTS_SCHEMA.to_string(), kind_name(self.kind)];
        full.extend(row);
        assert_eq!(full.len(), self.header.len(), "row width does not match header");
        self.rows.push(full);
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn schema(&self) -> Value {
        let cols: Vec<Value> =
            self.header.iter().map(|c| json!({ "name": c, "description": describe(c) })).collect();
        json!({ "schema": RESULTS_SCHEMA, "kind": kind_name(self.kind), "columns": cols })
    }
}

pub fn kind_name(kind: Kind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn describe(col: &str) -> &'static str {
    match col {
        "schema" => "results format version",
        "kind" => "experiment kind",
        "step" => "time step index",
        "t" => "time",
        "l2" => "spatial L2 norm of the solution at this step",
        "max_abs" => "maximum absolute value of the solution at this step",
        "trace_max" => "maximum absolute Neumann trace on the boundary at this step",
        "tau" => "arclength parameter along the null geodesic",
        "invariant" => "transport invariant |a0|^2 sqrt(det Im H)",
        "invariant_rel_dev" => "relative deviation of the invariant from its initial value",
        "min_imag_h" => "smallest eigenvalue of Im H",
        "symmetry_defect" => "max |H - H^T|",
        "a0_abs" => "modulus of the leading beam amplitude",
        "nodes" => "grid nodes per axis",
        "h" => "grid spacing",
        "l1_gap" => "L1 distance between conservation-law and wave-equation solutions",
        "order" => "observed convergence order against the previous row",
        "metric" => "diagnostic name",
        "value" => "diagnostic value",
        "lambda" => "beam frequency",
        "estimate_re" => "real part of the c2 estimate",
        "estimate_im" => "imaginary part of the c2 estimate",
        "pairing_re" => "real part of the boundary pairing",
        "pairing_im" => "imaginary part of the boundary pairing",
        "normalization_re" => "real part of the stationary-phase normalization",
        "normalization_im" => "imaginary part of the stationary-phase normalization",
        "noise" => "estimated quadrature noise of the pairing",
        "reliable" => "whether the pairing exceeds the noise floor",
        "identity_mismatch" => "relative gap between the two sides of the pairing identity",
        "grid_nodes" => "grid nodes per axis used for this frequency",
        "point" => "reconstruction point index",
        "x0" | "x1" | "x2" => "reconstruction point coordinate",
        "truth" => "c2 at the reconstruction point",
        "ray_truth" => "ray-weighted average of c2 that the probes measure",
        "extrapolated" => "estimate extrapolated in 1/lambda to infinite frequency",
        "relative_error" => "relative error of the extrapolated estimate against c2 at the point",
        "top_relative_error" => "relative error of the highest-frequency estimate against c2 at the point",
        "hessian_det_re" => "real part of the product phase Hessian determinant",
        "hessian_det_im" => "imaginary part of the product phase Hessian determinant",
        "im_bound" => "smallest eigenvalue of the imaginary part of the product phase matrix",
        "index" => "initial-data index",
        "energy" => "initial energy",
        "flux" => "observed boundary flux",
        "ratio" => "flux divided by energy",
        "zero_flux" => "whether the flux vanished",
        "consistent" => "whether zero flux coincides with zero energy",
        _ => "",
    }
}

pub struct RunInfo<'a> {
    pub scenario: &'a Value,
    pub wall_time_s: f64,
    pub threads: usize,
}

/// Writes results.csv, results.schema.json, diagnostics.json and manifest.json.
pub fn write_outputs(dir: &Path, table: &Table, diagnostics: &Value, info: &RunInfo) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let results = dir.join("results.csv");
    table.write_csv(&results)?;
    let schema = dir.join("results.schema.json");
    write_json(&schema, &table.schema())?;
    let diag = dir.join("diagnostics.json");
    write_json(&diag, diagnostics)?;
    let manifest = dir.join("manifest.json");
    let mut build = Map::new();
    build.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    build.insert("git".into(), json!(env!("NPE_GIT_HASH")));
    let m = json!({
        "schema": MANIFEST_SCHEMA,
        "scenario": info.scenario,
        "build": build,
        "wall_time_s": info.wall_time_s,
        "threads": info.threads,
        "outputs": ["results.csv", "results.schema.json", "diagnostics.json"],
    });
    write_json(&manifest, &m)?;
    Ok(vec![results, schema, diag, manifest])
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

//! Scenario files: schema, presets, dot-path overrides and medium construction.

use std::path::PathBuf;
use std::sync::Arc;

use npe::beam::AmplitudeLaw;
use npe::forward::{BoundaryData, SpaceFn, SpaceTimeFn};
use npe::inversion::{Gamma1, ReconstructionMode};
use npe::medium::{Domain, Field, MediumSpec, Point};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SCENARIO_SCHEMA: &str = "npe-scenario/1";
pub const KINDS: [&str; 6] = ["forward", "beam-diagnostics", "euler-check", "linearize", "reconstruct", "observability"];
pub const PRESETS: [&str; 4] = ["flat", "linear", "bump-c1", "bump-c2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Forward,
    BeamDiagnostics,
    EulerCheck,
    Linearize,
    Reconstruct,
    Observability,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    pub kind: Kind,
    pub medium: MediumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub options: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub c1: Option<Field>,
    #[serde(default)]
    pub c2: Option<Field>,
    #[serde(default = "default_n")]
    pub n: u32,
    pub t_final: f64,
    #[serde(default = "default_sample_nodes")]
    pub sample_nodes: usize,
}

fn default_n() -> u32 {
    2
}

fn default_sample_nodes() -> usize {
    11
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_nodes() -> usize {
    101
}

fn default_cfl() -> f64 {
    0.5
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nodes: default_nodes(), cfl: default_cfl() }
    }
}

/// Spatial profile for initial data.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    Gaussian { center: Point, width: f64, amplitude: f64 },
}

impl Profile {
    pub fn function(&self) -> SpaceFn {
        match *self {
            Profile::Zero => Arc::new(|_: &Point| 0.0),
            Profile::Gaussian { center, width, amplitude } => Arc::new(move |x: &Point| {
                let r2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }),
        }
    }
}

/// Smooth time pulse on a Gaussian boundary patch.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub t0: f64,
    pub width: f64,
    pub center: Point,
    pub sigma: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

impl Patch {
    pub fn boundary_data(&self) -> BoundaryData {
        let p = *self;
        let h: SpaceTimeFn = Arc::new(move |t, x: &Point| {
            let r2: f64 = (0..3).map(|a| (x[a] - p.center[a]).powi(2)).sum();
            p.amplitude * bump((t - p.t0) / p.width) * (-r2 / (p.sigma * p.sigma)).exp()
        });
        BoundaryData::lateral(h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardOptions {
    #[serde(default)]
    pub initial: Profile,
    #[serde(default)]
    pub velocity: Profile,
    #[serde(default)]
    pub lateral: Option<Patch>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub linear: bool,
    #[serde(default = "default_compat_order")]
    pub compatibility_order: usize,
}

fn default_record_every() -> usize {
    10
}

fn default_compat_order() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamOptions {
    #[serde(default)]
    pub x0: Point,
    #[serde(default = "default_xi")]
    pub xi: Point,
    /// `H0 = (re + i im) I`.
    #[serde(default = "default_h0")]
    pub h0: [f64; 2],
    #[serde(default = "default_beam_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_beam_delta")]
    pub delta: f64,
    #[serde(default = "default_law")]
    pub law: AmplitudeLaw,
    #[serde(default = "default_tau_stride")]
    pub tau_stride: usize,
    #[serde(default)]
    pub residual: bool,
}

fn default_xi() -> Point {
    [1.0, 0.0, 0.0]
}

fn default_h0() -> [f64; 2] {
    [0.0, 2.0]
}

fn default_beam_lambdas() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0]
}

fn default_beam_delta() -> f64 {
    0.4
}

fn default_law() -> AmplitudeLaw {
    AmplitudeLaw::Transport
}

fn default_tau_stride() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EulerOptions {
    #[serde(default = "default_euler_nodes")]
    pub nodes: Vec<usize>,
    #[serde(default = "default_euler_amp")]
    pub amplitude: f64,
    #[serde(default = "default_half")]
    pub center: f64,
    #[serde(default = "default_euler_width")]
    pub width: f64,
}

fn default_euler_nodes() -> Vec<usize> {
    vec![101, 201, 401, 801]
}

fn default_euler_amp() -> f64 {
    0.05
}

fn default_half() -> f64 {
    0.5
}

fn default_euler_width() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizeOptions {
    pub probes: Vec<Patch>,
    #[serde(default)]
    pub dual: Option<Patch>,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructOptions {
    pub points: Vec<Point>,
    #[serde(default = "default_mode")]
    pub mode: ReconstructionMode,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub nodes_per_wavelength: Option<f64>,
    #[serde(default)]
    pub check_identity: bool,
}

fn default_mode() -> ReconstructionMode {
    ReconstructionMode::SyntheticDirect
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityOptions {
    #[serde(default)]
    pub data: Vec<(Profile, Profile)>,
    /// Additional random Gaussian data drawn from the scenario seed.
    #[serde(default)]
    pub random: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma1: Gamma1,
}

fn default_gamma() -> Gamma1 {
    Gamma1::Full
}

fn parse_error(msg: impl Into<String>) -> CliError {
    CliError::Parse(msg.into())
}

/// Parses a scenario, or the scenario echoed inside a manifest, applying overrides.
pub fn load(text: &str, overrides: &[String]) -> Result<(Scenario, Value), CliError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| parse_error(format!("invalid JSON: {e}")))?;
    if value.get("schema").and_then(Value::as_str).is_some_and(|s| s.starts_with("npe-manifest")) {
        value = value.get("scenario").cloned().ok_or_else(|| parse_error("field `scenario`: missing in manifest"))?;
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let obj = value.as_object().ok_or_else(|| parse_error("scenario must be a JSON object"))?;
    match obj.get("schema").and_then(Value::as_str) {
        Some(SCENARIO_SCHEMA) => {}
        Some(other) => return Err(parse_error(format!("field `schema`: unsupported version `{other}`, expected `{SCENARIO_SCHEMA}`"))),
        None => return Err(parse_error("field `schema`: missing")),
    }
    match obj.get("kind") {
        Some(Value::String(k)) if KINDS.contains(&k.as_str()) => {}
        Some(Value::String(k)) => {
            return Err(parse_error(format!("field `kind`: unknown experiment kind `{k}` (expected one of {})", KINDS.join(", "))))
        }
        Some(_) => return Err(parse_error("field `kind`: must be a string")),
        None => return Err(parse_error("field `kind`: missing")),
    }
    if let Some(p) = obj.get("medium").and_then(|m| m.get("preset")).and_then(Value::as_str) {
        if !PRESETS.contains(&p) {
            return Err(parse_error(format!("field `medium.preset`: unknown preset `{p}` (expected one of {})", PRESETS.join(", "))));
        }
    }
    let scenario: Scenario = serde_json::from_value(value.clone()).map_err(|e| parse_error(format!("scenario: {e}")))?;
    if scenario.grid.nodes < 3 {
        return Err(parse_error("field `grid.nodes`: must be at least 3"));
    }
    if !(scenario.grid.cfl > 0.0) {
        return Err(parse_error("field `grid.cfl`: must be positive"));
    }
    Ok((scenario, value))
}

/// `a.b.0.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| parse_error(format!("override `{spec}`: expected key=value")))?;
    if path.is_empty() {
        return Err(parse_error(format!("override `{spec}`: empty key")));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| parse_error(format!("override `{path}`: `{part}` is not an index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| parse_error(format!("override `{path}`: index {idx} out of range ({len})")))?
            }
            Value::Null | Value::Object(_) => {
                if cur.is_null() {
                    *cur = Value::Object(Default::default());
                }
                let map = cur.as_object_mut().expect("object");
                let fill = if last { Value::Null } else { Value::Object(Default::default()) };
                map.entry(part.to_string()).or_insert(fill)
            }
            _ => return Err(parse_error(format!("override `{path}`: `{part}` does not address an object or array"))),
        };
    }
    *cur = new;
    Ok(())
}

pub fn options<T: serde::de::DeserializeOwned>(scenario: &Scenario) -> Result<T, CliError> {
    let v = if scenario.options.is_null() { Value::Object(Default::default()) } else { scenario.options.clone() };
    serde_json::from_value(v).map_err(|e| parse_error(format!("field `options`: {e}")))
}

fn preset_fields(name: &str, dim: usize, lo: &Point, hi: &Point) -> (Field, Field) {
    let mut center = [0.0; 3];
    for a in 0..dim {
        center[a] = 0.5 * (lo[a] + hi[a]);
    }
    let side = (0..dim).map(|a| hi[a] - lo[a]).fold(f64::INFINITY, f64::min);
    match name {
        "linear" => (Field::constant(1.0), Field::constant(0.0)),
        "bump-c1" => (Field::bump(1.0, 0.3, center, 0.15 * side), Field::constant(1.0)),
        "bump-c2" => (Field::constant(1.0), Field::bump(1.0, 0.5, center, 0.3 * side)),
        _ => (Field::constant(1.0), Field::constant(1.0)),
    }
}

pub fn build_medium(cfg: &MediumConfig) -> Result<MediumSpec, CliError> {
    if cfg.lo.len() != cfg.dim || cfg.hi.len() != cfg.dim {
        return Err(parse_error(format!("field `medium.lo`/`medium.hi`: need {} entries", cfg.dim)));
    }
    let domain = Domain::boxed(cfg.dim, &cfg.lo, &cfg.hi, cfg.sample_nodes)?;
    let (p1, p2) = preset_fields(cfg.preset.as_deref().unwrap_or("flat"), cfg.dim, &domain.lo, &domain.hi);
    let c1 = cfg.c1.clone().unwrap_or(p1);
    let c2 = cfg.c2.clone().unwrap_or(p2);
    Ok(MediumSpec::new(domain, c1, c2, cfg.n, cfg.t_final)?)
}

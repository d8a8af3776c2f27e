//! One pipeline per experiment kind, each producing a result table and diagnostics.

use npe::beam::{build_beam_with, min_imag_eigenvalue, residual_report, BeamConfig, CMatrix, ResidualConfig};
use npe::forward::{
    check_compatibility, dtn_trace, energy_norm, l1, l2, solve_conservation_1d, solve_linear_wave, solve_npe, BoundaryData,
    BoundaryInput, DtNTrace, Grid,
};
use npe::geometry::{build_null_geodesic, GeodesicOptions};
use npe::inversion::{
    build_probe_family, check_inversion_medium, observability_experiment, observability_timing, recover_c2_at,
    InitialData, ObservabilityConfig, ReconstructionConfig,
};
use npe::linearize::{
    direct_mixed_trace, dual_field, linear_trace, linear_v_field, mixed_dtn, mixed_linearized_field, pairing_integral,
    EpsilonFamily,
};
use npe::medium::{check_admissibility, MediumSpec};
use npe::stats::observed_order;
use npe::{Complex64, NpeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::output::{num, Table};
use crate::scenario::{
    build_medium, options, BeamOptions, EulerOptions, ForwardOptions, Kind, LinearizeOptions, ObservabilityOptions,
    Profile, ReconstructOptions, Scenario,
};
use crate::CliError;

pub struct Outcome {
    pub table: Table,
    pub diagnostics: Value,
}

/// One dry-run check.
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result<T>(name: &str, r: Result<T, NpeError>, ok: impl FnOnce(T) -> String) -> Self {
        match r {
            Ok(v) => Self::new(name, true, ok(v)),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

pub fn run(scenario: &Scenario) -> Result<Outcome, CliError> {
    let spec = build_medium(&scenario.medium)?;
    match scenario.kind {
        Kind::Forward => forward(scenario, &spec),
        Kind::BeamDiagnostics => beam_diagnostics(scenario, &spec),
        Kind::EulerCheck => euler_check(scenario, &spec),
        Kind::Linearize => linearize(scenario, &spec),
        Kind::Reconstruct => reconstruct(scenario, &spec),
        Kind::Observability => observability(scenario, &spec),
    }
}

fn profile_amplitude(p: &Profile) -> f64 {
    match p {
        Profile::Zero => 0.0,
        Profile::Gaussian { amplitude, .. } => amplitude.abs(),
    }
}

fn forward_data(o: &ForwardOptions) -> (BoundaryData, f64) {
    let bd = BoundaryData {
        h: o.lateral.map(|p| p.boundary_data().h).unwrap_or(BoundaryInput::Zero),
        phi: Some(o.initial.function()),
        psi: Some(o.velocity.function()),
    };
    let amp = profile_amplitude(&o.initial).max(o.lateral.map(|p| p.amplitude.abs()).unwrap_or(0.0));
    (bd, amp)
}

fn trace_row_max(tr: &DtNTrace, k: usize) -> f64 {
    tr.row(k).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn forward(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: ForwardOptions = options(s)?;
    let (bd, amp) = forward_data(&o);
    let grid = Grid::from_cfl(spec, s.grid.nodes, s.grid.cfl, amp)?;
    let compat = check_compatibility(&bd, spec, o.compatibility_order, 1e-6)?;
    let field = if o.linear { solve_linear_wave(spec, None, &bd, &grid)? } else { solve_npe(spec, &bd, &grid)? };
    let trace = dtn_trace(&field, spec)?;
    let mut table = Table::new(s.kind, &["step", "t", "l2", "max_abs", "trace_max"]);
    let every = o.record_every.max(1);
    for k in (0..=grid.nt).filter(|k| k % every == 0 || *k == grid.nt) {
        let u = field.frame(k);
        let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        table.push(vec![k.to_string(), num(grid.time(k)), num(l2(&grid, u)), num(max), num(trace_row_max(&trace, k))]);
    }
    let diagnostics = json!({
        "nodes": grid.n,
        "dt": grid.dt,
        "steps": grid.nt,
        "compatibility": compat,
        "energy_norm_1": energy_norm(&field, 1)?,
    });
    Ok(Outcome { table, diagnostics })
}

fn scalar_h0(dim: usize, h0: [f64; 2]) -> CMatrix {
    CMatrix::identity(dim, dim) * Complex64::new(h0[0], h0[1])
}

fn beam_diagnostics(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: BeamOptions = options(s)?;
    let lambda = *o.lambdas.first().ok_or_else(|| CliError::Parse("field `options.lambdas`: empty".into()))?;
    let ng = build_null_geodesic(spec, &o.x0, &o.xi, 0.5 * spec.t_final, 1, &GeodesicOptions::default())?;
    let cfg = BeamConfig { law: o.law, ..BeamConfig::default() };
    let beam = build_beam_with(spec, &ng, &scalar_h0(spec.dim(), o.h0), lambda, o.delta, 1.0, &cfg)?;
    let r = &beam.riccati;
    let zero = r.taus.iter().position(|t| t.abs() < 0.5 * r.step).unwrap_or(0);
    let c0 = r.invariant[zero];
    let mut table = Table::new(s.kind, &["tau", "invariant", "invariant_rel_dev", "min_imag_h", "symmetry_defect", "a0_abs"]);
    for i in (0..r.taus.len()).step_by(o.tau_stride.max(1)) {
        let h = &r.h[i];
        let sym = (h - h.transpose()).norm();
        table.push(vec![
            num(r.taus[i]),
            num(r.invariant[i]),
            num(((r.invariant[i] - c0) / c0).abs()),
            num(min_imag_eigenvalue(h)),
            num(sym),
            num(beam.a0(r.taus[i])?.norm()),
        ]);
    }
    let residual = if o.residual {
        Some(residual_report(spec, &beam, &o.lambdas, &ResidualConfig::default())?)
    } else {
        None
    };
    let diagnostics = json!({
        "symmetry_defect": r.symmetry_defect,
        "invariant_drift": r.invariant_drift,
        "min_imag_eigenvalue": r.min_imag_eigenvalue,
        "residual": residual.map(|rep| json!({
            "eikonal_slope": rep.eikonal_fit.slope,
            "pde_slope": rep.pde_fit.slope,
            "pde_norms": rep.pde_norms,
        })),
    });
    Ok(Outcome { table, diagnostics })
}

fn euler_check(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: EulerOptions = options(s)?;
    if spec.dim() != 1 {
        return Err(NpeError::Precondition("euler-check needs a one-dimensional medium".into()).into());
    }
    let mut table = Table::new(s.kind, &["nodes", "h", "l1_gap", "order"]);
    let mut prev: Option<(f64, f64)> = None;
    for &nodes in &o.nodes {
        let grid = Grid::from_cfl(spec, nodes, s.grid.cfl, o.amplitude)?;
        let (amp, c, w) = (o.amplitude, o.center, o.width);
        let rho0 = move |x: f64| {
            let u = (x - c) / w;
            if u.abs() < 1.0 {
                amp * (1.0 - u * u).powi(6)
            } else {
                0.0
            }
        };
        let (rho, _) = solve_conservation_1d(spec, &rho0, &|_| 0.0, &grid)?;
        let phi = std::sync::Arc::new(move |x: &npe::medium::Point| rho0(x[0]));
        let u = solve_npe(spec, &BoundaryData::initial(phi, None), &grid)?;
        let diff: Vec<f64> = rho.frame(grid.nt).iter().zip(u.frame(grid.nt)).map(|(a, b)| a - b).collect();
        let gap = l1(&grid, &diff);
        let order = prev.map(|(h, g)| observed_order(g, gap, h / grid.h[0]));
        table.push(vec![nodes.to_string(), num(grid.h[0]), num(gap), order.map(num).unwrap_or_default()]);
        prev = Some((grid.h[0], gap));
    }
    Ok(Outcome { table, diagnostics: json!({ "amplitude": o.amplitude }) })
}

fn max_diff(a: &DtNTrace, b: &DtNTrace) -> f64 {
    a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn linearize(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: LinearizeOptions = options(s)?;
    let grid = Grid::from_cfl(spec, s.grid.nodes, s.grid.cfl, 0.0)?;
    let probes: Vec<BoundaryData> = o.probes.iter().map(|p| p.boundary_data()).collect();
    let family = EpsilonFamily::run(spec, &grid, probes.clone(), o.eps.clone(), false)?;
    let lt = mixed_dtn(spec, &family)?;
    let vs = probes.iter().map(|h| linear_v_field(spec, h, &grid)).collect::<Result<Vec<_>, _>>()?;
    let direct = if vs.len() == 1 {
        linear_trace(spec, &grid, |k| vs[0].frame(k).to_vec())?
    } else {
        direct_mixed_trace(spec, &mixed_linearized_field(spec, &vs, &grid)?, &vs)?
    };
    let mut table = Table::new(s.kind, &["metric", "value"]);
    let mut row = |m: &str, v: f64| table.push(vec![m.to_string(), num(v)]);
    row("order", lt.order as f64);
    row("trace_max", lt.extrapolated.max_abs());
    row("richardson_gap", lt.richardson_gap);
    row("direct_trace_max", direct.max_abs());
    row("direct_trace_max_diff", max_diff(&lt.extrapolated, &direct));
    if let Some(d) = o.dual {
        let g = d.boundary_data();
        let w = dual_field(spec, &g, &grid)?;
        let p = pairing_integral(spec, &w, &g, &lt.extrapolated, Some(&vs))?;
        row("pairing_boundary", p.boundary);
        row("pairing_interior", p.interior);
        row("pairing_mismatch", p.mismatch);
    }
    let diagnostics = json!({ "eps": lt.eps, "nodes": grid.n, "steps": grid.nt, "budget": family.budget });
    Ok(Outcome { table, diagnostics })
}

fn reconstruction_config(o: &ReconstructOptions) -> ReconstructionConfig {
    let mut cfg = ReconstructionConfig { order: o.order, check_identity: o.check_identity, ..Default::default() };
    if let Some(l) = &o.lambdas {
        cfg.probe.lambdas = l.clone();
    }
    if let Some(d) = o.delta {
        cfg.probe.delta = d;
    }
    if let Some(p) = o.nodes_per_wavelength {
        cfg.nodes_per_wavelength = p;
    }
    cfg
}

fn reconstruct(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: ReconstructOptions = options(s)?;
    let cfg = reconstruction_config(&o);
    let mut table = Table::new(
        s.kind,
        &[
            "point", "x0", "x1", "x2", "lambda", "estimate_re", "estimate_im", "pairing_re", "pairing_im", "noise",
            "reliable", "truth", "ray_truth", "extrapolated", "relative_error", "top_relative_error", "hessian_det_re",
            "hessian_det_im", "im_bound", "identity_mismatch",
        ],
    );
    let mut summary = Vec::new();
    for (i, x0) in o.points.iter().enumerate() {
        let r = recover_c2_at(spec, x0, o.mode, &cfg)?;
        for e in &r.per_lambda {
            table.push(vec![
                i.to_string(),
                num(x0[0]),
                num(x0[1]),
                num(x0[2]),
                num(e.lambda),
                num(e.estimate.re),
                num(e.estimate.im),
                num(e.pairing.re),
                num(e.pairing.im),
                num(e.noise),
                e.reliable.to_string(),
                num(r.truth),
                num(r.ray_truth),
                num(r.extrapolated),
                num(r.relative_error),
                num(r.top_relative_error),
                num(r.hessian_det.re),
                num(r.hessian_det.im),
                num(r.im_bound),
                e.identity_mismatch.map(num).unwrap_or_default(),
            ]);
        }
        summary.push(json!({
            "x0": r.x0, "top": r.top, "extrapolated": r.extrapolated, "truth": r.truth,
            "ray_truth": r.ray_truth, "relative_error": r.relative_error, "reduced": r.reduced,
        }));
    }
    Ok(Outcome { table, diagnostics: json!({ "mode": o.mode, "points": summary }) })
}

fn observability_data(s: &Scenario, spec: &MediumSpec, o: &ObservabilityOptions) -> Vec<InitialData> {
    let mut data: Vec<InitialData> =
        o.data.iter().map(|(phi, psi)| InitialData { phi: phi.function(), psi: Some(psi.function()) }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let d = spec.dim();
    for _ in 0..o.random {
        let mut center = [0.0; 3];
        let mut side = f64::INFINITY;
        for a in 0..d {
            let (lo, hi) = (spec.domain.lo[a], spec.domain.hi[a]);
            center[a] = lo + (hi - lo) * rng.random_range(0.3..0.7);
            side = side.min(hi - lo);
        }
        let width = side * rng.random_range(0.08..0.16);
        let amplitude = rng.random_range(0.5..1.5);
        let vel = rng.random_range(-1.0..1.0);
        let phi = Profile::Gaussian { center, width, amplitude };
        let psi = Profile::Gaussian { center, width, amplitude: vel * amplitude };
        data.push(InitialData { phi: phi.function(), psi: Some(psi.function()) });
    }
    data
}

fn observability(s: &Scenario, spec: &MediumSpec) -> Result<Outcome, CliError> {
    let o: ObservabilityOptions = options(s)?;
    let data = observability_data(s, spec, &o);
    if data.is_empty() {
        return Err(CliError::Parse("field `options`: no initial data (set `data` or `random`)".into()));
    }
    let cfg = ObservabilityConfig { nodes: s.grid.nodes, cfl: s.grid.cfl, beta: o.beta, gamma1: o.gamma1, ..Default::default() };
    let r = observability_experiment(spec, &data, &cfg)?;
    let mut table = Table::new(s.kind, &["index", "energy", "flux", "ratio", "zero_flux", "consistent"]);
    for (i, rec) in r.records.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            num(rec.energy),
            num(rec.flux),
            num(rec.ratio),
            rec.zero_flux.to_string(),
            rec.consistent.to_string(),
        ]);
    }
    let diagnostics = json!({ "timing": r.timing, "min_ratio": r.min_ratio, "constant": r.constant, "nodes": r.nodes });
    Ok(Outcome { table, diagnostics })
}

/// Dry-run checks without solving.
pub fn validate(s: &Scenario) -> Result<Vec<Check>, CliError> {
    let spec = build_medium(&s.medium)?;
    let mut checks = Vec::new();
    match check_admissibility(&spec, 1e-8) {
        Ok(r) => {
            checks.push(Check::new("c1 bounds", r.c1_bounded, format!("c1 in [{}, {}]", num(r.c1_min), num(r.c1_max))));
            checks.push(Check::new("c2 bounds", true, format!("c2 in [{}, {}]", num(r.c2_min), num(r.c2_max))));
        }
        Err(e) => checks.push(Check::new("admissibility", false, e.to_string())),
    }
    let amp = match s.kind {
        Kind::Forward => forward_data(&options::<ForwardOptions>(s)?).1,
        Kind::EulerCheck => options::<EulerOptions>(s)?.amplitude,
        _ => 0.0,
    };
    checks.push(Check::from_result(
        "cfl",
        Grid::from_cfl(&spec, s.grid.nodes, s.grid.cfl, amp).and_then(|g| g.check_cfl(&spec, amp, 1.0).map(|_| g)),
        |g| format!("dt = {} with {} steps", num(g.dt), g.nt),
    ));
    match s.kind {
        Kind::Forward => {
            let o: ForwardOptions = options(s)?;
            let (bd, _) = forward_data(&o);
            match check_compatibility(&bd, &spec, o.compatibility_order, 1e-6) {
                Ok(r) => {
                    let detail = if r.passed() {
                        format!("orders 0..={} within {}", o.compatibility_order, r.tol)
                    } else {
                        r.failing_orders
                            .iter()
                            .map(|&k| format!("order {k} residual {}", num(r.residuals[k])))
                            .collect::<Vec<_>>()
                            .join("; ")
                    };
                    checks.push(Check::new("compatibility", r.passed(), detail));
                }
                Err(e) => checks.push(Check::new("compatibility", false, e.to_string())),
            }
        }
        Kind::EulerCheck => {
            checks.push(Check::new("dimension", spec.dim() == 1, format!("dim = {}", spec.dim())));
        }
        Kind::Linearize => {
            let o: LinearizeOptions = options(s)?;
            let k = o.probes.len();
            checks.push(Check::new("order", (1..=spec.n as usize).contains(&k), format!("{k} probes, n = {}", spec.n)));
        }
        Kind::Reconstruct => {
            let o: ReconstructOptions = options(s)?;
            let cfg = reconstruction_config(&o);
            checks.push(Check::from_result("c1 neumann", check_inversion_medium(&spec), |_| "normal derivative vanishes".into()));
            let n = o.order.unwrap_or(spec.n as usize);
            for x0 in &o.points {
                checks.push(Check::from_result(
                    &format!("timing at {x0:?}"),
                    build_probe_family(&spec, x0, n, &cfg.probe),
                    |f| format!("travel times {} / {}", num(f.travel.0), num(f.travel.1)),
                ));
            }
        }
        Kind::Observability => {
            let o: ObservabilityOptions = options(s)?;
            checks.push(Check::from_result("timing", observability_timing(&spec, o.beta), |t| {
                format!("beta T = {} > 4 R sqrt(rho2) = {}", num(t.beta * spec.t_final), num(t.beta * t.required_t))
            }));
        }
        Kind::BeamDiagnostics => {
            let o: BeamOptions = options(s)?;
            checks.push(Check::from_result(
                "geodesic",
                build_null_geodesic(&spec, &o.x0, &o.xi, 0.5 * spec.t_final, 1, &GeodesicOptions::default()),
                |g| format!("exits after {} / {}", num(-g.oriented.s_minus), num(g.oriented.s_plus)),
            ));
        }
    }
    Ok(checks)
}

//! Multi-parameter linearization of the DtN map and direct solves of the linearized systems.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NpeError, Result};
use crate::forward::{
    derivative, laplacian, solve_linear_wave, solve_linear_wave_backward, solve_npe, solve_npe_observed, BoundaryData,
    BoundaryInput, DtNTrace, Grid, SpaceFn, TraceRecorder, WaveField,
};
use crate::medium::{Field, MediumSpec};

/// All `2^k` sign patterns in a fixed order.
pub fn sign_patterns(k: usize) -> Vec<Vec<i8>> {
    (0..1usize << k)
        .map(|m| (0..k).map(|j| if m >> j & 1 == 1 { -1 } else { 1 }).collect())
        .collect()
}

/// `sum_s (prod s_j) value(s) / (2^k prod eps_j)` summed in pattern order.
pub fn stencil_sum(eps: &[f64], value: impl Fn(&[i8]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let k = eps.len();
    let denom = (1u64 << k) as f64 * eps.iter().product::<f64>();
    let mut acc: Option<Vec<f64>> = None;
    for s in sign_patterns(k) {
        let sign: f64 = s.iter().map(|&v| v as f64).product();
        let v = value(&s)?;
        match &mut acc {
            None => acc = Some(v.iter().map(|x| sign * x / denom).collect()),
            Some(a) => {
                if a.len() != v.len() {
                    return Err(NpeError::Mismatch("stencil values differ in length".into()));
                }
                for (o, x) in a.iter_mut().zip(&v) {
                    *o += sign * x / denom;
                }
            }
        }
    }
    Ok(acc.unwrap_or_default())
}

/// Amplitude below which `c1 + n c2 u^(n-1)` stays above `0.9 c1` on the grid.
pub fn stability_amplitude(spec: &MediumSpec, grid: &Grid) -> f64 {
    let n = spec.n as i32;
    let mut amp = f64::INFINITY;
    for i in 0..grid.npts() {
        let x = grid.coords(i);
        let c2 = spec.c2_at(&x).abs();
        if c2 > 0.0 {
            amp = amp.min((0.1 * spec.c1_at(&x) / (n as f64 * c2)).powf(1.0 / (n - 1) as f64));
        }
    }
    amp
}

fn sup_lateral(bd: &BoundaryData, grid: &Grid) -> Result<f64> {
    let mut m = bd.sample_lateral(grid)?.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for f in [&bd.phi, &bd.psi].into_iter().flatten() {
        for i in 0..grid.npts() {
            m = m.max(f(&grid.coords(i)).abs());
        }
    }
    Ok(m)
}

/// `sum_j w_j bd_j` with lateral data pre-sampled on the grid.
pub fn combine_inputs(inputs: &[BoundaryData], weights: &[f64], grid: &Grid) -> Result<BoundaryData> {
    let nb = grid.boundary_nodes().len() * (grid.nt + 1);
    let mut h = vec![0.0; nb];
    for (bd, &w) in inputs.iter().zip(weights) {
        if let BoundaryInput::Zero = bd.h {
            continue;
        }
        for (o, v) in h.iter_mut().zip(bd.sample_lateral(grid)?) {
            *o += w * v;
        }
    }
    let mix = |sel: fn(&BoundaryData) -> &Option<SpaceFn>| -> Option<SpaceFn> {
        let parts: Vec<(SpaceFn, f64)> = inputs
            .iter()
            .zip(weights)
            .filter_map(|(bd, &w)| sel(bd).clone().map(|f| (f, w)))
            .collect();
        if parts.is_empty() {
            None
        } else {
            Some(Arc::new(move |x: &crate::medium::Point| parts.iter().map(|(f, w)| w * f(x)).sum()))
        }
    };
    Ok(BoundaryData { h: BoundaryInput::Sampled(Arc::new(h)), phi: mix(|b| &b.phi), psi: mix(|b| &b.psi) })
}

/// Data of `v = c1 u` for data `bd` of `u`.
pub fn scaled_by_c1(bd: &BoundaryData, spec: &MediumSpec, grid: &Grid) -> Result<BoundaryData> {
    let nodes = grid.boundary_nodes();
    let c1b: Vec<f64> = nodes.iter().map(|&i| spec.c1_at(&grid.coords(i))).collect();
    let mut h = bd.sample_lateral(grid)?;
    for row in h.chunks_mut(nodes.len()) {
        for (v, c) in row.iter_mut().zip(&c1b) {
            *v *= c;
        }
    }
    let scale = |f: &Option<SpaceFn>| -> Option<SpaceFn> {
        f.clone().map(|f| {
            let c1 = spec.c1.clone();
            let d = spec.dim();
            Arc::new(move |x: &crate::medium::Point| c1.value(d, x) * f(x)) as SpaceFn
        })
    };
    Ok(BoundaryData { h: BoundaryInput::Sampled(Arc::new(h)), phi: scale(&bd.phi), psi: scale(&bd.psi) })
}

/// Runs of one epsilon level.
#[derive(Clone, Debug)]
pub struct FamilyLevel {
    pub eps: Vec<f64>,
    pub traces: BTreeMap<Vec<i8>, DtNTrace>,
    pub fields: BTreeMap<Vec<i8>, WaveField>,
}

/// Nonlinear runs with data `sum_j s_j eps_j h^(j)` for every sign pattern, at `eps` and `eps/2`.
#[derive(Clone)]
pub struct EpsilonFamily {
    pub spec: MediumSpec,
    pub grid: Grid,
    pub inputs: Vec<BoundaryData>,
    pub levels: Vec<FamilyLevel>,
    /// Stability amplitude and the largest combined input amplitude used.
    pub budget: f64,
    pub amplitude: f64,
}

/// Fraction of the stability amplitude used by the default epsilon.
pub const DEFAULT_EPS_FRACTION: f64 = 1e-3;

impl EpsilonFamily {
    pub fn order(&self) -> usize {
        self.inputs.len()
    }

    /// Default `eps_j` with `eps_j ||h_j|| = 1e-3` of the stability amplitude (capped at one when `c2 = 0`).
    pub fn default_eps(spec: &MediumSpec, grid: &Grid, inputs: &[BoundaryData]) -> Result<Vec<f64>> {
        let amp = stability_amplitude(spec, grid).min(1.0);
        inputs
            .iter()
            .map(|bd| {
                let s = sup_lateral(bd, grid)?;
                Ok(if s > 0.0 { DEFAULT_EPS_FRACTION * amp / s } else { DEFAULT_EPS_FRACTION })
            })
            .collect()
    }

    pub fn run(
        spec: &MediumSpec,
        grid: &Grid,
        inputs: Vec<BoundaryData>,
        eps: Option<Vec<f64>>,
        keep_fields: bool,
    ) -> Result<Self> {
        let k = inputs.len();
        if k == 0 || k > 4 {
            return Err(NpeError::Argument(format!("family order {k} outside 1..=4")));
        }
        let eps = match eps {
            Some(e) => e,
            None => Self::default_eps(spec, grid, &inputs)?,
        };
        if eps.len() != k || eps.iter().any(|&e| !(e > 0.0)) {
            return Err(NpeError::Argument("one positive epsilon per input required".into()));
        }
        let budget = stability_amplitude(spec, grid);
        let mut amplitude = 0.0;
        for (bd, e) in inputs.iter().zip(&eps) {
            amplitude += e * sup_lateral(bd, grid)?;
        }
        if amplitude > budget {
            return Err(NpeError::Precondition(format!(
                "combined input amplitude {amplitude:.3e} exceeds stability budget {budget:.3e}"
            )));
        }
        grid.check_cfl(spec, amplitude, 1.0)?;
        // pre-sample every input once
        let sampled: Vec<BoundaryData> = inputs
            .iter()
            .map(|bd| combine_inputs(std::slice::from_ref(bd), &[1.0], grid))
            .collect::<Result<_>>()?;
        let mut levels = Vec::new();
        for scale in [1.0, 0.5] {
            let e: Vec<f64> = eps.iter().map(|v| v * scale).collect();
            let patterns = sign_patterns(k);
            let runs: Vec<(Vec<i8>, DtNTrace, Option<WaveField>)> = patterns
                .par_iter()
                .map(|s| {
                    let w: Vec<f64> = (0..k).map(|j| s[j] as f64 * e[j]).collect();
                    let bd = combine_inputs(&sampled, &w, grid)?;
                    let mut rec = TraceRecorder::new(spec, grid, true)?;
                    let mut field = keep_fields.then(|| WaveField::zeros(grid));
                    let np = grid.npts();
                    let mut obs = |lvl: usize, u: &[f64]| -> Result<()> {
                        rec.record(grid.time(lvl), u);
                        if let Some(f) = &mut field {
                            f.data[lvl * np..(lvl + 1) * np].copy_from_slice(u);
                        }
                        Ok(())
                    };
                    solve_npe_observed(spec, &bd, grid, &mut obs)?;
                    Ok((s.clone(), rec.finish(), field))
                })
                .collect::<Result<_>>()?;
            let mut traces = BTreeMap::new();
            let mut fields = BTreeMap::new();
            for (s, t, f) in runs {
                traces.insert(s.clone(), t);
                if let Some(f) = f {
                    fields.insert(s, f);
                }
            }
            levels.push(FamilyLevel { eps: e, traces, fields });
        }
        Ok(Self { spec: spec.clone(), grid: grid.clone(), inputs: sampled, levels, budget, amplitude })
    }

    /// Mixed derivative of `c1 u` over the stored fields of level `level`.
    pub fn mixed_field(&self, level: usize) -> Result<WaveField> {
        let lv = self.levels.get(level).ok_or_else(|| NpeError::Argument(format!("no level {level}")))?;
        let c1: Vec<f64> = (0..self.grid.npts()).map(|i| self.spec.c1_at(&self.grid.coords(i))).collect();
        let np = self.grid.npts();
        let data = stencil_sum(&lv.eps, |s| {
            lv.fields
                .get(s)
                .map(|f| f.data.clone())
                .ok_or_else(|| NpeError::Precondition(format!("field for sign pattern {s:?} not stored")))
        })?;
        let data = data.iter().enumerate().map(|(i, v)| v * c1[i % np]).collect();
        Ok(WaveField { grid: self.grid.clone(), data })
    }
}

/// Mixed DtN derivative with its Richardson companion.
#[derive(Clone, Debug)]
pub struct LinearizedTrace {
    pub order: usize,
    pub eps: Vec<f64>,
    pub trace: DtNTrace,
    /// Same stencil at `eps/2`.
    pub half: DtNTrace,
    /// `(4 half - trace) / 3`.
    pub extrapolated: DtNTrace,
    /// `max |trace - half|`.
    pub richardson_gap: f64,
}

fn mixed_level(family: &EpsilonFamily, level: usize) -> Result<DtNTrace> {
    let lv = &family.levels[level];
    let first = lv
        .traces
        .values()
        .next()
        .ok_or_else(|| NpeError::Precondition("empty family".into()))?;
    let values = stencil_sum(&lv.eps, |s| {
        lv.traces
            .get(s)
            .map(|t| t.values.clone())
            .ok_or_else(|| NpeError::Precondition(format!("missing sign pattern {s:?}")))
    })?;
    Ok(DtNTrace {
        samples: first.samples.clone(),
        times: first.times.clone(),
        values,
        epsilon_index: (1..=family.order()).collect(),
    })
}

pub fn mixed_dtn(spec: &MediumSpec, family: &EpsilonFamily) -> Result<LinearizedTrace> {
    let k = family.order();
    if k > spec.n as usize {
        return Err(NpeError::Unsupported(format!("order {k} exceeds the nonlinearity exponent {}", spec.n)));
    }
    if family.levels.len() < 2 {
        return Err(NpeError::Precondition("Richardson pair missing".into()));
    }
    if family.amplitude > family.budget {
        return Err(NpeError::Precondition("family exceeds its stability budget".into()));
    }
    let trace = mixed_level(family, 0)?;
    let half = mixed_level(family, 1)?;
    let extrapolated = half.combine(4.0 / 3.0, &trace, -1.0 / 3.0)?;
    let richardson_gap = trace.combine(1.0, &half, -1.0)?.max_abs();
    Ok(LinearizedTrace { order: k, eps: family.levels[0].eps.clone(), trace, half, extrapolated, richardson_gap })
}

/// Finite-difference and direct first linearizations of `u`.
#[derive(Clone, Debug)]
pub struct FirstLinearization {
    pub finite_difference: WaveField,
    pub direct: WaveField,
}

pub fn first_linearized_field(spec: &MediumSpec, h1: &BoundaryData, grid: &Grid, eps: f64) -> Result<FirstLinearization> {
    let amp = eps * sup_lateral(h1, grid)?;
    if amp > stability_amplitude(spec, grid) {
        return Err(NpeError::Precondition(format!("eps |h| = {amp:.3e} exceeds the stability budget")));
    }
    let sampled = combine_inputs(std::slice::from_ref(h1), &[1.0], grid)?;
    let runs: Vec<WaveField> = [eps, -eps]
        .par_iter()
        .map(|&e| solve_npe(spec, &combine_inputs(std::slice::from_ref(&sampled), &[e], grid)?, grid))
        .collect::<Result<_>>()?;
    let finite_difference = runs[0].combine(0.5 / eps, &runs[1], -0.5 / eps)?;
    let mut linear = spec.clone();
    linear.c2 = Field::constant(0.0);
    let direct = solve_npe(&linear, &sampled, grid)?;
    Ok(FirstLinearization { finite_difference, direct })
}

/// Direct solve of `v_tt - c1 Lap v = f` for `v = c1 u^(j)` with data `c1 h^(j)`.
pub fn linear_v_field(spec: &MediumSpec, h: &BoundaryData, grid: &Grid) -> Result<WaveField> {
    solve_linear_wave(spec, None, &scaled_by_c1(h, spec, grid)?, grid)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `k! c2 c1^{-n} prod v_j` per level when `k = n`, zero for `k < n`.
fn product_term(spec: &MediumSpec, vs: &[WaveField], k_level: usize, out: &mut [f64], coeff: &[f64]) {
    let np = out.len();
    for i in 0..np {
        let mut p = coeff[i];
        for v in vs {
            p *= v.data[k_level * np + i];
        }
        out[i] = p;
    }
    let _ = spec;
}

fn product_coefficients(spec: &MediumSpec, grid: &Grid, k: usize) -> Vec<f64> {
    let n = spec.n as i32;
    let fac = if k == spec.n as usize { factorial(k) } else { 0.0 };
    (0..grid.npts())
        .map(|i| {
            let x = grid.coords(i);
            fac * spec.c2_at(&x) / spec.c1_at(&x).powi(n)
        })
        .collect()
}

/// `v^(1..k)` from `v_tt - c1 Lap v = c1 Lap(k! c2 c1^{-n} prod v_j)` with zero data.
pub fn mixed_linearized_field(spec: &MediumSpec, vs: &[WaveField], grid: &Grid) -> Result<WaveField> {
    if vs.is_empty() || vs.iter().any(|v| &v.grid != grid) {
        return Err(NpeError::Mismatch("input fields must live on the solver grid".into()));
    }
    let k = vs.len();
    if k > spec.n as usize {
        return Err(NpeError::Unsupported(format!("order {k} exceeds n = {}", spec.n)));
    }
    let coeff = product_coefficients(spec, grid, k);
    if coeff.iter().all(|&c| c == 0.0) {
        return Ok(WaveField::zeros(grid));
    }
    let c1: Vec<f64> = (0..grid.npts()).map(|i| spec.c1_at(&grid.coords(i))).collect();
    let source = |lvl: usize, f: &mut [f64]| {
        let mut q = vec![0.0; f.len()];
        product_term(spec, vs, lvl, &mut q, &coeff);
        laplacian(grid, &q, f);
        for (v, c) in f.iter_mut().zip(&c1) {
            *v *= c;
        }
    };
    solve_linear_wave(spec, Some(&source), &BoundaryData::zero(), grid)
}

pub fn second_linearized_field(spec: &MediumSpec, v1: &WaveField, v2: &WaveField, grid: &Grid) -> Result<WaveField> {
    mixed_linearized_field(spec, &[v1.clone(), v2.clone()], grid)
}

/// `c1 nu . grad q` per level with the solver's one-sided stencil.
pub fn linear_trace(spec: &MediumSpec, grid: &Grid, q: impl Fn(usize) -> Vec<f64>) -> Result<DtNTrace> {
    let samples = grid.trace_samples();
    let c1: Vec<f64> = (0..grid.npts()).map(|i| spec.c1_at(&grid.coords(i))).collect();
    let mut values = Vec::with_capacity(samples.len() * (grid.nt + 1));
    let mut times = Vec::with_capacity(grid.nt + 1);
    for k in 0..=grid.nt {
        let f = q(k);
        for s in &samples {
            let d = (3.0 * f[s.node] - 4.0 * f[s.inner1] + f[s.inner2]) * 0.5 / grid.h[s.axis];
            values.push(c1[s.node] * d);
        }
        times.push(grid.time(k));
    }
    Ok(DtNTrace { samples, times, values, epsilon_index: Vec::new() })
}

/// Trace `c1 nu . [grad v^(1..k) + grad(k! c2 c1^{-n} prod v_j)]` of direct solves.
pub fn direct_mixed_trace(spec: &MediumSpec, mixed: &WaveField, vs: &[WaveField]) -> Result<DtNTrace> {
    let grid = &mixed.grid;
    let coeff = product_coefficients(spec, grid, vs.len());
    let np = grid.npts();
    linear_trace(spec, grid, |k| {
        let mut q = vec![0.0; np];
        product_term(spec, vs, k, &mut q, &coeff);
        for (o, v) in q.iter_mut().zip(mixed.frame(k)) {
            *o += v;
        }
        q
    })
}

/// Dual field `W = c1 w` with `W_tt = c1 Lap W`, `W = c1 g` on the boundary and zero data at `T`.
pub fn dual_field(spec: &MediumSpec, g: &BoundaryData, grid: &Grid) -> Result<WaveField> {
    let nodes = grid.boundary_nodes();
    let nb = nodes.len();
    let scaled = scaled_by_c1(g, spec, grid)?;
    let BoundaryInput::Sampled(h) = &scaled.h else { unreachable!("scaled data is sampled") };
    let mut rev = vec![0.0; h.len()];
    for k in 0..=grid.nt {
        rev[k * nb..(k + 1) * nb].copy_from_slice(&h[(grid.nt - k) * nb..(grid.nt - k + 1) * nb]);
    }
    let bd = BoundaryData { h: BoundaryInput::Sampled(Arc::new(rev)), phi: None, psi: None };
    solve_linear_wave_backward(spec, None, &bd, grid)
}

/// Both sides of the integration-by-parts identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairingReport {
    /// `int_Sigma g Lambda`.
    pub boundary: f64,
    /// `k! int grad W . grad(c2 c1^{-n} prod v_j)`.
    pub interior: f64,
    pub mismatch: f64,
}

/// `int_Sigma g Lambda` with `g` sampled per level on the boundary nodes.
pub fn boundary_pairing(grid: &Grid, g: &[f64], trace: &DtNTrace) -> Result<f64> {
    let nodes = grid.boundary_nodes();
    let nb = nodes.len();
    if trace.times.len() != grid.nt + 1 || trace.samples.len() != grid.trace_samples().len() {
        return Err(NpeError::Mismatch("trace and grid differ".into()));
    }
    if g.len() != nb * (grid.nt + 1) {
        return Err(NpeError::Mismatch("boundary data and grid differ".into()));
    }
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let mut boundary = 0.0;
    for k in 0..=grid.nt {
        let row = trace.row(k);
        let mut s = 0.0;
        for (j, smp) in trace.samples.iter().enumerate() {
            s += smp.weight * g[k * nb + pos[&smp.node]] * row[j];
        }
        boundary += grid.time_weight(k) * s;
    }
    Ok(boundary)
}

/// `(int_Sigma h^2)^{1/2}` of boundary samples with the trace quadrature weights.
pub fn boundary_l2(grid: &Grid, h: &[f64]) -> Result<f64> {
    let nodes = grid.boundary_nodes();
    let nb = nodes.len();
    if h.len() != nb * (grid.nt + 1) {
        return Err(NpeError::Mismatch("boundary data and grid differ".into()));
    }
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let samples = grid.trace_samples();
    let mut acc = 0.0;
    for k in 0..=grid.nt {
        let s: f64 = samples.iter().map(|smp| smp.weight * h[k * nb + pos[&smp.node]].powi(2)).sum();
        acc += grid.time_weight(k) * s;
    }
    Ok(acc.sqrt())
}

/// `k! int grad W . grad(c2 c1^{-n} prod v_j)` over the space-time grid.
pub fn interior_pairing(spec: &MediumSpec, dual: &WaveField, vs: &[WaveField]) -> Result<f64> {
    let grid = &dual.grid;
    if vs.iter().any(|v| &v.grid != grid) {
        return Err(NpeError::Mismatch("linearized fields and dual field grids differ".into()));
    }
    let coeff = product_coefficients(spec, grid, vs.len());
    let w = grid.volume_weights();
    let np = grid.npts();
    let per_level: Vec<f64> = (0..=grid.nt)
        .into_par_iter()
        .map(|k| {
            let mut q = vec![0.0; np];
            product_term(spec, vs, k, &mut q, &coeff);
            let mut dq = vec![0.0; np];
            let mut dw = vec![0.0; np];
            let mut s = 0.0;
            for a in 0..grid.dim {
                derivative(grid, &q, a, &mut dq);
                derivative(grid, dual.frame(k), a, &mut dw);
                s += (0..np).map(|i| w[i] * dq[i] * dw[i]).sum::<f64>();
            }
            grid.time_weight(k) * s
        })
        .collect();
    Ok(per_level.iter().sum())
}

/// Pairs a mixed trace with dual data `g`; the interior side is computed when `vs` is given.
pub fn pairing_integral(
    spec: &MediumSpec,
    dual: &WaveField,
    g: &BoundaryData,
    trace: &DtNTrace,
    vs: Option<&[WaveField]>,
) -> Result<PairingReport> {
    let grid = &dual.grid;
    let boundary = boundary_pairing(grid, &g.sample_lateral(grid)?, trace)?;
    let interior = match vs {
        None => f64::NAN,
        Some(vs) => interior_pairing(spec, dual, vs)?,
    };
    Ok(PairingReport { boundary, interior, mismatch: relative_mismatch(boundary, interior) })
}

pub fn relative_mismatch(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale > 0.0 {
        (a - b).abs() / scale
    } else {
        0.0
    }
}

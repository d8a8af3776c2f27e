//! Recovery of the nonlinearity coefficient from linearized boundary data, and boundary observability.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{stationary_phase_leading, CriticalPointData};
use crate::beam::{build_beam_with, chart_jacobian, AmplitudeLaw, min_imag_eigenvalue, BeamConfig, BeamSection, CMatrix, GaussianBeam};
use crate::error::{NpeError, Result};
use crate::forward::{derivative, solve_linear_wave, BoundaryData, BoundaryInput, DtNTrace, Grid, SpaceFn, WaveField};
use crate::geometry::{build_null_geodesic, FermiChart, GeodesicOptions};
use crate::linearize::{
    boundary_l2, boundary_pairing, dual_field, interior_pairing, linear_trace, linear_v_field, mixed_dtn,
    relative_mismatch, EpsilonFamily,
};
use crate::medium::{check_admissibility, check_assumption_ii, MediumSpec, Point};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Geometry and frequency choices of a probe family.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    /// Common unit spatial direction of all beams.
    pub xi: Point,
    /// Weights, dual first; default `(n, -1, ..., -1)`.
    pub kappa: Option<Vec<f64>>,
    /// Initial Riccati data per beam, dual first.
    pub h0: Option<Vec<CMatrix>>,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    pub beam: BeamConfig,
    pub geodesic: GeodesicOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            xi: [1.0, 0.0, 0.0],
            kappa: None,
            h0: None,
            delta: 2.0,
            lambdas: vec![10.0, 20.0],
            beam: BeamConfig { law: AmplitudeLaw::Transport, ..BeamConfig::default() },
            geodesic: GeodesicOptions::default(),
        }
    }
}

pub fn default_kappa(n: usize) -> Vec<f64> {
    let mut k = vec![-1.0; n + 1];
    k[0] = n as f64;
    k
}

/// Distinct scalar multiples of the identity with positive imaginary part.
pub fn default_h0(dim: usize, count: usize) -> Vec<CMatrix> {
    const TABLE: [(f64, f64); 5] = [(0.0, 0.5), (0.125, 0.5), (-0.125, 0.625), (0.075, 0.375), (-0.075, 0.75)];
    (0..count)
        .map(|k| {
            let (re, im) = TABLE[k % TABLE.len()];
            CMatrix::identity(dim, dim) * Complex64::new(re, im + 0.025 * (k / TABLE.len()) as f64)
        })
        .collect()
}

/// Dual beam and probe beams through one space-time point.
#[derive(Clone, Debug)]
pub struct ProbeFamily {
    pub x0: Point,
    pub t0: f64,
    pub xi: Point,
    pub kappa: Vec<f64>,
    /// Dual beam first.
    pub beams: Vec<GaussianBeam>,
    /// All beams share one direction; the product phase is degenerate along the axis.
    pub reduced: bool,
    /// Hessian of the product phase in `(r, z'')` at the anchor.
    pub hessian: CMatrix,
    pub hessian_det: Complex64,
    /// Smallest eigenvalue of the imaginary part of the product-phase matrix at the anchor.
    pub im_bound: f64,
    /// Travel times from the anchor to the boundary, backward and forward.
    pub travel: (f64, f64),
}

impl ProbeFamily {
    pub fn order(&self) -> usize {
        self.beams.len() - 1
    }

    pub fn chart(&self) -> &FermiChart {
        &self.beams[0].chart
    }

    /// `sum_k kappa_k H_k(tau)` with conjugates for negative weights.
    pub fn phase_matrix(&self, tau: f64) -> Result<CMatrix> {
        let d = self.beams[0].dim;
        let mut m = CMatrix::zeros(d, d);
        for b in &self.beams {
            let h = b.riccati.h_at(&b.chart, tau)?;
            m += if b.conjugated { h.conjugate() * Complex64::from(b.kappa) } else { h * Complex64::from(b.kappa) };
        }
        Ok(m)
    }

    /// Product phase `sum_k kappa_k phi_k` at Fermi coordinates.
    pub fn product_phase(&self, z: &[f64]) -> Result<Complex64> {
        let mut s = Complex64::new(0.0, 0.0);
        for b in &self.beams {
            s += b.signed_phase(b.phase(z)?);
        }
        Ok(s)
    }

    pub fn with_lambda(&self, lambda: f64) -> Vec<GaussianBeam> {
        self.beams.iter().map(|b| b.with_lambda(lambda)).collect()
    }
}

pub fn build_probe_family(spec: &MediumSpec, x0: &Point, n: usize, cfg: &ProbeConfig) -> Result<ProbeFamily> {
    let d = spec.dim();
    if d < 2 {
        return Err(NpeError::Unsupported("probe families need dimension >= 2".into()));
    }
    if !spec.domain.contains_with_margin(x0, -1e-9) {
        return Err(NpeError::OutOfDomain(*x0));
    }
    if n < 2 || n > spec.n as usize {
        return Err(NpeError::Argument(format!("family order {n} outside 2..={}", spec.n)));
    }
    let kappa = cfg.kappa.clone().unwrap_or_else(|| default_kappa(n));
    if kappa.len() != n + 1 || kappa.iter().any(|&k| k == 0.0 || !k.is_finite()) {
        return Err(NpeError::Argument(format!("{} nonzero weights required", n + 1)));
    }
    let sum: f64 = kappa.iter().sum();
    if sum.abs() > 1e-12 * kappa.iter().map(|k| k.abs()).sum::<f64>() {
        return Err(NpeError::Precondition(format!("weighted covector sum {sum:e} is not zero")));
    }
    if cfg.xi[0] == 0.0 {
        return Err(NpeError::Argument("first component of xi must be nonzero".into()));
    }
    let h0 = cfg.h0.clone().unwrap_or_else(|| default_h0(d, n + 1));
    if h0.len() != n + 1 {
        return Err(NpeError::Argument(format!("{} initial Riccati matrices required", n + 1)));
    }
    let t_final = spec.t_final;
    let t0 = 0.5 * t_final;
    let geo = GeodesicOptions { margin: cfg.geodesic.margin.max(1.5 * cfg.delta), ..cfg.geodesic };
    let ng = build_null_geodesic(spec, x0, &cfg.xi, t0, 1, &geo)?;
    let travel = (-ng.oriented.s_minus, ng.oriented.s_plus);
    let clearance = cfg.delta / SQRT_2;
    let need = travel.0.max(travel.1) + clearance;
    if t0 <= need {
        return Err(NpeError::Precondition(format!(
            "final time {t_final} too short for beams through {x0:?}: need T > {:.4}",
            2.0 * need
        )));
    }
    let lambda = *cfg.lambdas.first().ok_or_else(|| NpeError::Argument("empty lambda ladder".into()))?;
    let bc = BeamConfig { anchor: Complex64::new(cfg.xi[0], 0.0), ..cfg.beam };
    let beams = kappa
        .iter()
        .zip(&h0)
        .map(|(&k, h)| build_beam_with(spec, &ng, h, lambda, cfg.delta, k, &bc))
        .collect::<Result<Vec<_>>>()?;
    let mut fam = ProbeFamily {
        x0: *x0,
        t0,
        xi: cfg.xi,
        kappa,
        beams,
        reduced: true,
        hessian: CMatrix::zeros(d, d),
        hessian_det: Complex64::new(0.0, 0.0),
        im_bound: 0.0,
        travel,
    };
    let m = fam.phase_matrix(0.0)?;
    let im_bound = min_imag_eigenvalue(&m);
    if !(im_bound > 0.0) {
        return Err(NpeError::Degenerate(format!(
            "imaginary part of the product-phase Hessian is not positive definite (min eigenvalue {im_bound:e})"
        )));
    }
    fam.hessian = m * Complex64::new(2.0, 0.0);
    fam.hessian_det = fam.hessian.determinant();
    fam.im_bound = im_bound;
    Ok(fam)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructionMode {
    /// Volume integral of the identity's right side with beams in place of solutions.
    SyntheticDirect,
    /// Boundary pairing of mixed DtN traces from nonlinear runs.
    FullDtn,
}

#[derive(Clone, Debug)]
pub struct ReconstructionConfig {
    pub probe: ProbeConfig,
    /// Family order; the medium exponent when unset.
    pub order: Option<usize>,
    /// Grid points per shortest wavelength of the product field in full-dtn mode.
    pub nodes_per_wavelength: f64,
    pub cfl: f64,
    pub tau_step: f64,
    pub transverse_nodes: usize,
    /// Also evaluate the volume side of the pairing identity in full-dtn mode.
    pub check_identity: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            order: None,
            nodes_per_wavelength: 32.0,
            cfl: 0.5,
            tau_step: 0.01,
            transverse_nodes: 33,
            check_identity: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub estimate: Complex64,
    pub pairing: Complex64,
    pub normalization: Complex64,
    /// Richardson-gap bound of the pairing in full-dtn mode.
    pub noise: f64,
    pub reliable: bool,
    pub identity_mismatch: Option<f64>,
    pub grid_nodes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub x0: Point,
    pub mode: ReconstructionMode,
    pub reduced: bool,
    pub per_lambda: Vec<LambdaEstimate>,
    /// Real part at the largest lambda.
    pub top: f64,
    /// Linear extrapolation in `1/lambda` of the two largest lambdas.
    pub extrapolated: f64,
    /// Point value of the preset at `x0`.
    pub truth: f64,
    /// The preset averaged along the axis with the normalization weights.
    pub ray_truth: f64,
    /// Error of the extrapolated estimate against the point value.
    pub relative_error: f64,
    pub top_relative_error: f64,
    pub hessian_det: Complex64,
    pub im_bound: f64,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Per-node axial data shared by the volume and normalization sums.
struct AxisNode {
    tau: f64,
    weight: f64,
    inside: bool,
    sections: Vec<[BeamSection; 3]>,
    /// Normalization weight without the lambda factors.
    norm_weight: Complex64,
    c2: f64,
}

const TAU_FD: f64 = 1e-4;
const Y_FD: f64 = 1e-5;

fn axis_nodes(spec: &MediumSpec, fam: &ProbeFamily, tau_step: f64) -> Result<Vec<AxisNode>> {
    let chart = fam.chart();
    let d = spec.dim();
    let n = fam.order();
    let pad = 4.0 * TAU_FD;
    let (lo, hi) = (chart.tau_min + pad, chart.tau_max - pad);
    let count = ((hi - lo) / tau_step).ceil().max(1.0) as usize;
    let h = (hi - lo) / count as f64;
    let kappa0 = fam.kappa[0];
    let ksum: f64 = fam.kappa[1..].iter().sum();
    (0..=count)
        .into_par_iter()
        .map(|i| {
            let tau = lo + h * i as f64;
            let weight = if i == 0 || i == count { 0.5 * h } else { h };
            let mut z = vec![0.0; d + 1];
            z[0] = tau;
            let st = chart.from_fermi_unbounded(&z)?;
            let inside = spec.domain.contains(&st.x) && st.t >= 0.0 && st.t <= spec.t_final;
            let sections = fam
                .beams
                .iter()
                .map(|b| Ok([b.section(tau - TAU_FD)?, b.section(tau)?, b.section(tau + TAU_FD)?]))
                .collect::<Result<Vec<_>>>()?;
            let mut norm_weight = Complex64::new(0.0, 0.0);
            if inside {
                let j = chart_jacobian(chart, &z)?;
                let jinv = j.clone().try_inverse().ok_or_else(|| NpeError::Degenerate("singular chart".into()))?;
                let grad_r2: f64 = (0..d).map(|a| jinv[(1, a + 1)].powi(2)).sum();
                let c1 = spec.c1_at(&st.x);
                let mut amp = Complex64::new(1.0, 0.0);
                for (b, s) in fam.beams.iter().zip(&sections) {
                    amp *= if b.conjugated { s[1].a0.conj() } else { s[1].a0 };
                }
                let m = fam.phase_matrix(tau)? * Complex64::new(2.0, 0.0);
                let cp = CriticalPointData::from_hessian(vec![0.0; d], Complex64::new(0.0, 0.0), m);
                // lambda-free part of the transverse stationary-phase factor
                let sp = stationary_phase_leading(&cp, amp, 1.0, d)?;
                norm_weight = -factorial(n) * kappa0 * ksum * j.determinant().abs() * grad_r2 * c1.powi(-(n as i32)) * sp;
            }
            Ok(AxisNode { tau, weight, inside, sections, norm_weight, c2: spec.c2_at(&st.x) })
        })
        .collect()
}

/// Normalization `N(lambda)` and the ray-weighted preset.
fn normalization(nodes: &[AxisNode], lambda: f64, dim: usize) -> (Complex64, f64) {
    let mut n = Complex64::new(0.0, 0.0);
    let mut nc = Complex64::new(0.0, 0.0);
    for a in nodes.iter().filter(|a| a.inside) {
        n += a.weight * a.norm_weight;
        nc += a.weight * a.norm_weight * a.c2;
    }
    let scale = lambda * lambda * lambda.powf(-0.5 * dim as f64);
    (n * scale, (nc / n).re)
}

/// Volume integral of `grad W . grad Q` for each lambda, with beams in place of solutions.
fn synthetic_pairings(spec: &MediumSpec, fam: &ProbeFamily, nodes: &[AxisNode], lambdas: &[f64], ny: usize) -> Result<Vec<Complex64>> {
    let chart = fam.chart();
    let d = spec.dim();
    let n = fam.order();
    let nfac = factorial(n);
    let delta = fam.beams[0].delta;
    let lmin = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut im_min = f64::INFINITY;
    for a in nodes.iter().filter(|a| a.inside) {
        im_min = im_min.min(min_imag_eigenvalue(&fam.phase_matrix(a.tau)?));
    }
    if !(im_min > 0.0) {
        return Err(NpeError::Degenerate("product phase loses transverse decay along the axis".into()));
    }
    let half = (0.5 * delta * 0.999).min(6.0 / (lmin * im_min).sqrt());
    let ny = ny.max(3);
    let dy = 2.0 * half / (ny - 1) as f64;
    let total = ny.pow(d as u32);
    let beams: Vec<Vec<GaussianBeam>> = lambdas.iter().map(|&l| fam.with_lambda(l)).collect();
    let per_node: Vec<Vec<Complex64>> = nodes
        .par_iter()
        .map(|a| {
            let mut acc = vec![Complex64::new(0.0, 0.0); lambdas.len()];
            for idx in 0..total {
                let mut z = vec![a.tau];
                let mut rem = idx;
                let mut w = a.weight;
                for _ in 0..d {
                    let k = rem % ny;
                    rem /= ny;
                    z.push(-half + dy * k as f64);
                    w *= if k == 0 || k == ny - 1 { 0.5 * dy } else { dy };
                }
                if z[1..].iter().map(|v| v * v).sum::<f64>().sqrt() >= 0.5 * delta {
                    continue;
                }
                let st = chart.from_fermi_unbounded(&z)?;
                if !spec.domain.contains(&st.x) || st.t < 0.0 || st.t > spec.t_final {
                    continue;
                }
                let j = chart_jacobian(chart, &z)?;
                let det = j.determinant().abs();
                let jinv = j.try_inverse().ok_or_else(|| NpeError::Degenerate("singular chart".into()))?;
                let s1 = spec.c1.sample(d, &st.x);
                let s2 = spec.c2.sample(d, &st.x);
                let g = s2.value * s1.value.powi(-(n as i32));
                let mut dg = [0.0; 3];
                for c in 0..d {
                    dg[c] = s2.gradient[c] * s1.value.powi(-(n as i32))
                        - n as f64 * s2.value * s1.gradient[c] * s1.value.powi(-(n as i32) - 1);
                }
                for (li, bl) in beams.iter().enumerate() {
                    let mut vals = Vec::with_capacity(bl.len());
                    let mut grads = Vec::with_capacity(bl.len());
                    for (b, sec) in bl.iter().zip(&a.sections) {
                        let v = b.evaluate_section(&sec[1], &z);
                        let mut dz = vec![Complex64::new(0.0, 0.0); d + 1];
                        dz[0] = (b.evaluate_section(&sec[2], &z) - b.evaluate_section(&sec[0], &z)) / (2.0 * TAU_FD);
                        for c in 1..=d {
                            let mut zp = z.clone();
                            let mut zm = z.clone();
                            zp[c] += Y_FD;
                            zm[c] -= Y_FD;
                            dz[c] = (b.evaluate_section(&sec[1], &zp) - b.evaluate_section(&sec[1], &zm)) / (2.0 * Y_FD);
                        }
                        let mut gx = [Complex64::new(0.0, 0.0); 3];
                        for c in 0..d {
                            for (bidx, dzb) in dz.iter().enumerate() {
                                gx[c] += dzb * jinv[(bidx, c + 1)];
                            }
                        }
                        vals.push(v);
                        grads.push(gx);
                    }
                    let prod: Complex64 = vals[1..].iter().product();
                    if prod.norm() == 0.0 && vals[0].norm() == 0.0 {
                        continue;
                    }
                    let mut dot = Complex64::new(0.0, 0.0);
                    for c in 0..d {
                        let mut dprod = Complex64::new(0.0, 0.0);
                        for k in 1..vals.len() {
                            let mut term = grads[k][c];
                            for (j2, v) in vals.iter().enumerate().skip(1) {
                                if j2 != k {
                                    term *= v;
                                }
                            }
                            dprod += term;
                        }
                        let dq = nfac * (dg[c] * prod + g * dprod);
                        dot += grads[0][c] * dq;
                    }
                    acc[li] += w * det * dot;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Complex64::new(0.0, 0.0); lambdas.len()];
    for v in &per_node {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    Ok(out)
}

/// Beam values divided by `c1` on the boundary nodes per level, real and imaginary parts.
fn sample_boundary(spec: &MediumSpec, beam: &GaussianBeam, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let nodes = grid.boundary_nodes();
    let nb = nodes.len();
    let xs: Vec<Point> = nodes.iter().map(|&i| grid.coords(i)).collect();
    let c1: Vec<f64> = xs.iter().map(|x| spec.c1_at(x)).collect();
    let mut c1max: f64 = 0.0;
    for i in 0..grid.npts() {
        c1max = c1max.max(spec.c1_at(&grid.coords(i)));
    }
    let reach = 1.5 * beam.delta * c1max.sqrt() + 1e-9;
    let rows: Vec<Vec<Complex64>> = (0..=grid.nt)
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            let axis = beam.chart.ng.point_at(t).ok();
            xs.iter()
                .map(|x| {
                    let near = match axis {
                        Some(p) => (0..grid.dim).map(|a| (x[a] - p[a]).powi(2)).sum::<f64>().sqrt() <= reach,
                        None => true,
                    };
                    if near {
                        beam.evaluate(t, x)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    let mut re = vec![0.0; nb * (grid.nt + 1)];
    let mut im = vec![0.0; nb * (grid.nt + 1)];
    for (k, row) in rows.iter().enumerate() {
        for j in 0..nb {
            re[k * nb + j] = row[j].re / c1[j];
            im[k * nb + j] = row[j].im / c1[j];
        }
    }
    (re, im)
}

fn sampled(v: &[f64]) -> BoundaryData {
    BoundaryData { h: BoundaryInput::Sampled(Arc::new(v.to_vec())), phi: None, psi: None }
}

fn abs_trace(t: &DtNTrace) -> DtNTrace {
    let mut out = t.clone();
    out.values.iter_mut().for_each(|v| *v = v.abs());
    out
}

/// Grid resolving the product field with `ppw` nodes per wavelength.
pub fn reconstruction_grid(spec: &MediumSpec, fam: &ProbeFamily, lambda: f64, ppw: f64, cfl: f64) -> Result<Grid> {
    let d = spec.dim();
    let mut c1min = f64::INFINITY;
    for x in spec.domain.grid_points(0.0) {
        c1min = c1min.min(spec.c1_at(&x));
    }
    let kmax = fam.kappa.iter().map(|k| k.abs()).fold(0.0, f64::max);
    let wavelength = 2.0 * PI * (2.0 * c1min).sqrt() / (lambda * kmax);
    let side = (0..d).map(|a| spec.domain.hi[a] - spec.domain.lo[a]).fold(0.0, f64::max);
    let nodes = (side * ppw / wavelength).ceil() as usize + 1;
    Grid::from_cfl(spec, nodes, cfl, 0.0)
}

struct DtnPairing {
    pairing: Complex64,
    noise: f64,
    mismatch: Option<f64>,
}

/// `int_Sigma g Lambda(h_1, ..., h_n)` by real splitting of the multilinear mixed trace.
fn dtn_pairing(spec: &MediumSpec, fam: &ProbeFamily, lambda: f64, grid: &Grid, check: bool) -> Result<DtnPairing> {
    let beams = fam.with_lambda(lambda);
    let n = fam.order();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = beams.iter().map(|b| sample_boundary(spec, b, grid)).collect();
    let (g_re, g_im) = &parts[0];
    let g_abs: Vec<f64> = g_re.iter().zip(g_im).map(|(a, b)| a.hypot(*b)).collect();
    let mut pairing = Complex64::new(0.0, 0.0);
    let mut noise = 0.0;
    let nonzero = |v: &[f64]| v.iter().any(|x| *x != 0.0);
    for mask in 0..1usize << n {
        let inputs: Vec<&Vec<f64>> =
            (0..n).map(|j| if mask >> j & 1 == 1 { &parts[j + 1].1 } else { &parts[j + 1].0 }).collect();
        if inputs.iter().any(|v| !nonzero(v)) {
            continue;
        }
        let fam_eps = EpsilonFamily::run(spec, grid, inputs.iter().map(|v| sampled(v)).collect(), None, false)?;
        let lt = mixed_dtn(spec, &fam_eps)?;
        let phase = I.powu(mask.count_ones());
        let re = boundary_pairing(grid, g_re, &lt.extrapolated)?;
        let im = boundary_pairing(grid, g_im, &lt.extrapolated)?;
        pairing += phase * Complex64::new(re, im);
        noise += boundary_pairing(grid, &g_abs, &abs_trace(&lt.trace.combine(1.0, &lt.half, -1.0)?))?;
    }
    let mismatch = if check {
        let mut fields: Vec<(WaveField, WaveField)> = Vec::new();
        for (k, (re, im)) in parts.iter().enumerate() {
            let solve = |v: &[f64]| -> Result<WaveField> {
                if k == 0 {
                    dual_field(spec, &sampled(v), grid)
                } else {
                    linear_v_field(spec, &sampled(v), grid)
                }
            };
            fields.push((solve(re)?, solve(im)?));
        }
        let mut interior = Complex64::new(0.0, 0.0);
        for mask in 0..1usize << (n + 1) {
            let pick = |j: usize| if mask >> j & 1 == 1 { fields[j].1.clone() } else { fields[j].0.clone() };
            let vs: Vec<WaveField> = (1..=n).map(pick).collect();
            interior += I.powu(mask.count_ones()) * interior_pairing(spec, &pick(0), &vs)?;
        }
        Some((pairing - interior).norm() / pairing.norm().max(interior.norm()).max(f64::MIN_POSITIVE))
    } else {
        None
    };
    Ok(DtnPairing { pairing, noise, mismatch })
}

/// Refuses media whose `c1` has a nonzero normal derivative on the boundary.
pub fn check_inversion_medium(spec: &MediumSpec) -> Result<()> {
    let r = check_admissibility(spec, 1e-8)?;
    if !r.c1_neumann {
        return Err(NpeError::Precondition(format!(
            "normal derivative of c1 on the boundary is {:.3e}; reconstruction requires it to vanish",
            r.max_normal_derivative_c1
        )));
    }
    if !(r.c1_min > 0.0) {
        return Err(NpeError::InvalidMedium("c1 must be positive".into()));
    }
    Ok(())
}

pub fn recover_c2_at(
    spec: &MediumSpec,
    x0: &Point,
    mode: ReconstructionMode,
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    check_inversion_medium(spec)?;
    let n = cfg.order.unwrap_or(spec.n as usize);
    let fam = build_probe_family(spec, x0, n, &cfg.probe)?;
    let d = spec.dim();
    let mut lambdas = cfg.probe.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    let nodes = axis_nodes(spec, &fam, cfg.tau_step)?;
    let norms: Vec<(Complex64, f64)> = lambdas.iter().map(|&l| normalization(&nodes, l, d)).collect();
    let ray_truth = norms.first().map(|v| v.1).unwrap_or(f64::NAN);
    let mut per_lambda = Vec::new();
    match mode {
        ReconstructionMode::SyntheticDirect => {
            let pairs = synthetic_pairings(spec, &fam, &nodes, &lambdas, cfg.transverse_nodes)?;
            for ((&lambda, p), (nrm, _)) in lambdas.iter().zip(pairs).zip(&norms) {
                per_lambda.push(LambdaEstimate {
                    lambda,
                    estimate: p / nrm,
                    pairing: p,
                    normalization: *nrm,
                    noise: 0.0,
                    reliable: true,
                    identity_mismatch: None,
                    grid_nodes: None,
                });
            }
        }
        ReconstructionMode::FullDtn => {
            for (&lambda, (nrm, _)) in lambdas.iter().zip(&norms) {
                let grid = reconstruction_grid(spec, &fam, lambda, cfg.nodes_per_wavelength, cfg.cfl)?;
                let r = dtn_pairing(spec, &fam, lambda, &grid, cfg.check_identity)?;
                per_lambda.push(LambdaEstimate {
                    lambda,
                    estimate: r.pairing / nrm,
                    pairing: r.pairing,
                    normalization: *nrm,
                    noise: r.noise,
                    reliable: r.pairing.norm() > 10.0 * r.noise,
                    identity_mismatch: r.mismatch,
                    grid_nodes: Some(grid.n[0]),
                });
            }
        }
    }
    let top = per_lambda.last().map(|e| e.estimate.re).unwrap_or(f64::NAN);
    let extrapolated = match per_lambda.len() {
        0 => f64::NAN,
        1 => top,
        m => {
            let (a, b) = (&per_lambda[m - 2], &per_lambda[m - 1]);
            (b.lambda * b.estimate.re - a.lambda * a.estimate.re) / (b.lambda - a.lambda)
        }
    };
    let truth = spec.c2_at(x0);
    let rel = |v: f64| if truth != 0.0 { (v - truth).abs() / truth.abs() } else { v.abs() };
    let (relative_error, top_relative_error) = (rel(extrapolated), rel(top));
    Ok(ReconstructionResult {
        x0: *x0,
        mode,
        reduced: fam.reduced,
        per_lambda,
        top,
        extrapolated,
        truth,
        ray_truth,
        relative_error,
        top_relative_error,
        hessian_det: fam.hessian_det,
        im_bound: fam.im_bound,
    })
}

/// Boundary part on which the flux is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma1 {
    Full,
    /// Faces with `x . nu > 0`.
    Illuminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObservabilityConfig {
    pub nodes: usize,
    pub cfl: f64,
    /// Largest admissible value when unset.
    pub beta: Option<f64>,
    pub gamma1: Gamma1,
    pub zero_flux_tol: f64,
    pub energy_tol: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self { nodes: 101, cfl: 0.5, beta: None, gamma1: Gamma1::Full, zero_flux_tol: 1e-10, energy_tol: 1e-6 }
    }
}

#[derive(Clone)]
pub struct InitialData {
    pub phi: SpaceFn,
    pub psi: Option<SpaceFn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingCheck {
    pub beta: f64,
    pub radius: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub required_t: f64,
}

/// `beta T > 4 R sqrt(rho2)` with `rho = 1/c1`; refuses when violated.
pub fn observability_timing(spec: &MediumSpec, beta: Option<f64>) -> Result<TimingCheck> {
    let beta = match beta {
        Some(b) => {
            if !check_assumption_ii(spec, b)? {
                return Err(NpeError::Precondition(format!("beta = {b} violates the multiplier condition")));
            }
            b
        }
        None => {
            if check_assumption_ii(spec, 2.0)? {
                2.0
            } else {
                let (mut lo, mut hi) = (0.0, 2.0);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if check_assumption_ii(spec, mid)? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo <= 0.0 {
                    return Err(NpeError::Precondition("no admissible beta in (0, 2]".into()));
                }
                lo
            }
        }
    };
    let (mut rho1, mut rho2) = (f64::INFINITY, 0.0f64);
    for x in spec.domain.grid_points(0.0) {
        let r = 1.0 / spec.c1_at(&x);
        rho1 = rho1.min(r);
        rho2 = rho2.max(r);
    }
    let radius = spec.domain.radius();
    let required_t = 4.0 * radius * rho2.sqrt() / beta;
    if !(beta * spec.t_final > 4.0 * radius * rho2.sqrt()) {
        return Err(NpeError::Precondition(format!(
            "observation time T = {} too short: need T > {required_t:.4} (beta = {beta}, R = {radius:.4}, rho2 = {rho2:.4})",
            spec.t_final
        )));
    }
    Ok(TimingCheck { beta, radius, rho1, rho2, required_t })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObservabilityRecord {
    pub energy: f64,
    pub flux: f64,
    /// `flux / energy`, NaN for zero energy.
    pub ratio: f64,
    pub data_scale: f64,
    pub zero_flux: bool,
    /// Zero flux implies energy below `energy_tol * data_scale`.
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservabilityResult {
    pub timing: TimingCheck,
    pub records: Vec<ObservabilityRecord>,
    /// Smallest `flux / energy` over records with positive energy.
    pub min_ratio: f64,
    /// Empirical constant `max energy / flux`.
    pub constant: f64,
    pub nodes: usize,
}

/// `E[u](0) = 1/2 int rho psi^2 + 1/2 int |grad phi|^2` on the grid.
pub fn initial_energy(spec: &MediumSpec, grid: &Grid, phi: &[f64], psi: &[f64]) -> f64 {
    let w = grid.volume_weights();
    let np = grid.npts();
    let mut e = 0.0;
    for i in 0..np {
        if !grid.is_boundary(i) {
            e += 0.5 * w[i] * psi[i] * psi[i] / spec.c1_at(&grid.coords(i));
        }
    }
    let mut g = vec![0.0; np];
    for a in 0..grid.dim {
        derivative(grid, phi, a, &mut g);
        e += 0.5 * g.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
    }
    e
}

/// `int_0^T int_Gamma1 |d_nu u|^2` with the one-sided boundary stencil.
pub fn boundary_flux(field: &WaveField, gamma1: Gamma1) -> f64 {
    let grid = &field.grid;
    let samples: Vec<_> = grid
        .trace_samples()
        .into_iter()
        .filter(|s| match gamma1 {
            Gamma1::Full => true,
            Gamma1::Illuminated => {
                let x = grid.coords(s.node);
                (0..grid.dim).map(|a| x[a] * s.normal[a]).sum::<f64>() > 0.0
            }
        })
        .collect();
    let mut acc = 0.0;
    for k in 0..=grid.nt {
        let u = field.frame(k);
        let s: f64 = samples
            .iter()
            .map(|s| {
                let dn = (3.0 * u[s.node] - 4.0 * u[s.inner1] + u[s.inner2]) * 0.5 / grid.h[s.axis];
                s.weight * dn * dn
            })
            .sum();
        acc += grid.time_weight(k) * s;
    }
    acc
}

pub fn observability_experiment(spec: &MediumSpec, data: &[InitialData], cfg: &ObservabilityConfig) -> Result<ObservabilityResult> {
    let timing = observability_timing(spec, cfg.beta)?;
    let grid = Grid::from_cfl(spec, cfg.nodes, cfg.cfl, 0.0)?;
    let records = data
        .par_iter()
        .map(|d| {
            let bd = BoundaryData { h: BoundaryInput::Zero, phi: Some(d.phi.clone()), psi: d.psi.clone() };
            let field = solve_linear_wave(spec, None, &bd, &grid)?;
            let np = grid.npts();
            let psi: Vec<f64> = (0..np)
                .map(|i| d.psi.as_ref().map(|p| p(&grid.coords(i))).unwrap_or(0.0))
                .collect();
            let energy = initial_energy(spec, &grid, field.frame(0), &psi);
            let flux = boundary_flux(&field, cfg.gamma1);
            let amp = field.frame(0).iter().chain(&psi).fold(0.0f64, |m, v| m.max(v.abs()));
            let data_scale = amp * amp * spec.domain.volume();
            let zero_flux = flux <= cfg.zero_flux_tol * data_scale.max(f64::MIN_POSITIVE);
            let consistent = !zero_flux || energy <= cfg.energy_tol * data_scale;
            Ok(ObservabilityRecord {
                energy,
                flux,
                ratio: if energy > 0.0 { flux / energy } else { f64::NAN },
                data_scale,
                zero_flux,
                consistent,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let positive: Vec<&ObservabilityRecord> = records.iter().filter(|r| r.energy > 0.0).collect();
    let min_ratio = positive.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let constant = positive.iter().map(|r| r.energy / r.flux).fold(0.0, f64::max);
    Ok(ObservabilityResult { timing, records, min_ratio, constant, nodes: cfg.nodes })
}

/// Largest relative difference of first-order traces `c1 nu . grad v` over the probes.
pub fn c1_distinguishability(spec_a: &MediumSpec, spec_b: &MediumSpec, probes: &[BoundaryData], nodes: usize, cfl: f64) -> Result<f64> {
    if spec_a.domain != spec_b.domain || (spec_a.t_final - spec_b.t_final).abs() > 1e-12 {
        return Err(NpeError::Mismatch("media must share domain and final time".into()));
    }
    let ga = Grid::from_cfl(spec_a, nodes, cfl, 0.0)?;
    let gb = Grid::from_cfl(spec_b, nodes, cfl, 0.0)?;
    let grid = if ga.dt <= gb.dt { ga } else { gb };
    let mut sep: f64 = 0.0;
    for h in probes {
        let hs = h.sample_lateral(&grid)?;
        let norm = boundary_l2(&grid, &hs)?;
        if norm == 0.0 {
            continue;
        }
        let ta = {
            let v = linear_v_field(spec_a, h, &grid)?;
            linear_trace(spec_a, &grid, |k| v.frame(k).to_vec())?
        };
        let tb = {
            let v = linear_v_field(spec_b, h, &grid)?;
            linear_trace(spec_b, &grid, |k| v.frame(k).to_vec())?
        };
        let diff = ta.combine(1.0, &tb, -1.0)?;
        sep = sep.max(diff.pair(&diff, grid.dt)?.max(0.0).sqrt() / norm);
    }
    Ok(sep)
}

/// Pairwise helper for external callers: relative mismatch of two pairing values.
pub fn pairing_mismatch(a: Complex64, b: Complex64) -> f64 {
    relative_mismatch(a.norm(), b.norm()).max((a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE))
}

//! Gaussian beams `chi e^{i lambda kappa phi} a0` along null geodesics.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{NpeError, Result};
use crate::geometry::{fermi_chart, Conformal, FermiChart, NullGeodesic};
use crate::medium::{MediumSpec, Point};
use crate::stats::{fit_power, LineFit};

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `(C, D)` of the Riccati system at `tau`; indices run over `(r, transverse)`.
pub fn assemble_cd(chart: &FermiChart, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if tau < chart.tau_min || tau > chart.tau_max {
        return Err(NpeError::OutOfChart(format!("tau = {tau} outside [{}, {}]", chart.tau_min, chart.tau_max)));
    }
    let d = chart.dim;
    let geo = &chart.ng.oriented;
    let st = geo.state(tau / SQRT_2)?;
    let m = Conformal::at(&geo.c1, d, &st.x);
    let v = st.p.map(|p| p * m.c1);
    let mut c = DMatrix::zeros(d, d);
    let mut dm = DMatrix::zeros(d, d);
    for j in 1..d {
        c[(j, j)] = 2.0;
        for k in 1..d {
            dm[(j, k)] = 0.25 * m.curvature_xabx(&v, &st.frame[j - 1], &st.frame[k - 1], d);
        }
    }
    Ok((c, dm))
}

/// Riccati system `Y' = C Z`, `Z' = -D Y` sampled on a uniform tau grid through zero.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub dim: usize,
    pub step: f64,
    pub taus: Vec<f64>,
    pub y: Vec<CMatrix>,
    pub z: Vec<CMatrix>,
    pub h: Vec<CMatrix>,
    /// Continuous argument of `det Y`.
    pub det_arg: Vec<f64>,
    /// `det(Im H) |det Y|^2` per sample.
    pub invariant: Vec<f64>,
    pub symmetry_defect: f64,
    pub min_imag_eigenvalue: f64,
    /// Max relative deviation of the invariant from its value at zero.
    pub invariant_drift: f64,
    pub h0: CMatrix,
}

fn rk4_yz(chart: &FermiChart, tau: f64, y: &CMatrix, z: &CMatrix, h: f64) -> Result<(CMatrix, CMatrix)> {
    let f = |t: f64, y: &CMatrix, z: &CMatrix| -> Result<(CMatrix, CMatrix)> {
        let (c, d) = assemble_cd(chart, t)?;
        let c = c.map(|v| Complex64::new(v, 0.0));
        let d = d.map(|v| Complex64::new(v, 0.0));
        Ok((&c * z, -(&d * y)))
    };
    let c = |v: f64| Complex64::new(v, 0.0);
    let (k1y, k1z) = f(tau, y, z)?;
    let (k2y, k2z) = f(tau + 0.5 * h, &(y + &k1y * c(0.5 * h)), &(z + &k1z * c(0.5 * h)))?;
    let (k3y, k3z) = f(tau + 0.5 * h, &(y + &k2y * c(0.5 * h)), &(z + &k2z * c(0.5 * h)))?;
    let (k4y, k4z) = f(tau + h, &(y + &k3y * c(h)), &(z + &k3z * c(h)))?;
    let w = c(h / 6.0);
    Ok((
        y + (k1y + k2y * c(2.0) + k3y * c(2.0) + k4y) * w,
        z + (k1z + k2z * c(2.0) + k3z * c(2.0) + k4z) * w,
    ))
}

fn condition(y: &CMatrix) -> f64 {
    let sv = y.clone().svd(false, false).singular_values;
    let (mx, mn) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    mx / mn
}

fn imag_part(h: &CMatrix) -> DMatrix<f64> {
    let s = h.map(|v| v.im);
    (&s + s.transpose()) * 0.5
}

pub fn min_imag_eigenvalue(h: &CMatrix) -> f64 {
    SymmetricEigen::new(imag_part(h)).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn unwrap_near(arg: f64, reference: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    arg + tau * ((reference - arg) / tau).round()
}

pub fn solve_riccati(chart: &FermiChart, h0: &CMatrix, step: f64) -> Result<RiccatiSolution> {
    let d = chart.dim;
    if h0.nrows() != d || h0.ncols() != d {
        return Err(NpeError::Argument(format!("H0 must be {d}x{d}")));
    }
    if (h0 - h0.transpose()).norm() > 1e-12 {
        return Err(NpeError::Argument("H0 is not symmetric".into()));
    }
    if !(min_imag_eigenvalue(h0) > 0.0) {
        return Err(NpeError::Argument("Im H0 is not positive definite".into()));
    }
    if !(step > 0.0) {
        return Err(NpeError::Argument("step must be positive".into()));
    }
    if chart.tau_min > 0.0 || chart.tau_max < 0.0 {
        return Err(NpeError::OutOfChart("chart does not contain tau = 0".into()));
    }
    let y0 = CMatrix::identity(d, d);
    let z0 = h0 * &y0;
    let march = |dir: f64| -> Result<Vec<(f64, CMatrix, CMatrix)>> {
        let mut out = Vec::new();
        let (mut y, mut z, mut t) = (y0.clone(), z0.clone(), 0.0);
        let limit = if dir > 0.0 { chart.tau_max } else { chart.tau_min };
        while (limit - t) * dir >= step - 1e-12 {
            let (ny, nz) = rk4_yz(chart, t, &y, &z, dir * step)?;
            t += dir * step;
            if condition(&ny) > 1e12 {
                return Err(NpeError::Degenerate(format!("Y singular at tau = {t}")));
            }
            out.push((t, ny.clone(), nz.clone()));
            y = ny;
            z = nz;
        }
        Ok(out)
    };
    let fwd = march(1.0)?;
    let bwd = march(-1.0)?;
    let mut rows: Vec<(f64, CMatrix, CMatrix)> = bwd.into_iter().rev().collect();
    rows.push((0.0, y0.clone(), z0.clone()));
    rows.extend(fwd);
    let zero_index = rows.iter().position(|r| r.0 == 0.0).unwrap();

    let n = rows.len();
    let mut taus = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    let mut args = vec![0.0; n];
    let mut invariant = Vec::with_capacity(n);
    let (mut sym, mut min_eig) = (0.0f64, f64::INFINITY);
    for (t, y, z) in rows {
        let yi = y.clone().try_inverse().ok_or_else(|| NpeError::Degenerate(format!("Y singular at {t}")))?;
        let h = &z * yi;
        sym = sym.max((&h - h.transpose()).norm());
        min_eig = min_eig.min(min_imag_eigenvalue(&h));
        let dy = y.determinant();
        invariant.push(imag_part(&h).determinant() * dy.norm_sqr());
        taus.push(t);
        ys.push(y);
        zs.push(z);
        hs.push(h);
    }
    args[zero_index] = ys[zero_index].determinant().arg();
    for i in zero_index + 1..n {
        args[i] = unwrap_near(ys[i].determinant().arg(), args[i - 1]);
    }
    for i in (0..zero_index).rev() {
        args[i] = unwrap_near(ys[i].determinant().arg(), args[i + 1]);
    }
    let c0 = invariant[zero_index];
    let drift = invariant.iter().map(|v| ((v - c0) / c0).abs()).fold(0.0, f64::max);
    Ok(RiccatiSolution {
        dim: d,
        step,
        taus,
        y: ys,
        z: zs,
        h: hs,
        det_arg: args,
        invariant,
        symmetry_defect: sym,
        min_imag_eigenvalue: min_eig,
        invariant_drift: drift,
        h0: h0.clone(),
    })
}

impl RiccatiSolution {
    fn lower_index(&self, tau: f64) -> Result<usize> {
        let (a, b) = (self.taus[0], *self.taus.last().unwrap());
        if tau < a - self.step || tau > b + self.step {
            return Err(NpeError::OutOfChart(format!("tau = {tau} outside Riccati grid [{a}, {b}]")));
        }
        let i = ((tau - a) / self.step).floor().max(0.0) as usize;
        Ok(i.min(self.taus.len() - 1))
    }

    /// `(Y, Z)` at `tau` by one RK4 step from the grid.
    pub fn yz(&self, chart: &FermiChart, tau: f64) -> Result<(CMatrix, CMatrix)> {
        let i = self.lower_index(tau)?;
        let dt = tau - self.taus[i];
        if dt.abs() < 1e-15 {
            return Ok((self.y[i].clone(), self.z[i].clone()));
        }
        rk4_yz(chart, self.taus[i], &self.y[i], &self.z[i], dt)
    }

    pub fn h_at(&self, chart: &FermiChart, tau: f64) -> Result<CMatrix> {
        let (y, z) = self.yz(chart, tau)?;
        let yi = y.try_inverse().ok_or_else(|| NpeError::Degenerate(format!("Y singular at {tau}")))?;
        Ok(z * yi)
    }

    /// `det(Y)^{-1/2}` on the continuous branch through the principal root at zero.
    pub fn det_inv_sqrt(&self, chart: &FermiChart, tau: f64) -> Result<Complex64> {
        let (y, _) = self.yz(chart, tau)?;
        let det = y.determinant();
        let i = self.lower_index(tau)?;
        let arg = unwrap_near(det.arg(), self.det_arg[i]);
        Ok(Complex64::from_polar(det.norm().powf(-0.5), -0.5 * arg))
    }
}

/// Exponent `p` in `A = C det(Y)^{-1/2} c1^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeLaw {
    /// `p = -3/(2 sqrt 2)`.
    Verbatim,
    /// `p = -3/4`.
    Alternative,
    /// `p = -(d-2)/4`, the exponent solving the transport equation.
    Transport,
    /// Constant amplitude, transport violated.
    Constant,
}

impl AmplitudeLaw {
    pub fn exponent(&self, dim: usize) -> f64 {
        match self {
            AmplitudeLaw::Verbatim => -3.0 / (2.0 * SQRT_2),
            AmplitudeLaw::Alternative => -0.75,
            AmplitudeLaw::Transport => -(dim as f64 - 2.0) / 4.0,
            AmplitudeLaw::Constant => 0.0,
        }
    }
}

/// Cutoff profile: one below `1/4`, zero above `1/2`.
pub fn cutoff(s: f64) -> f64 {
    if s <= 0.25 {
        1.0
    } else if s >= 0.5 {
        0.0
    } else {
        let u = (s - 0.25) / 0.25;
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Frozen Riccati data of one beam at one `tau`.
#[derive(Clone, Debug)]
pub struct BeamSection {
    pub tau: f64,
    pub h: CMatrix,
    pub a0: Complex64,
}

/// Construction options beyond the geometric data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BeamConfig {
    pub riccati_step: f64,
    /// Requested `a0` at the anchor `tau = 0`.
    pub anchor: Complex64,
    pub law: AmplitudeLaw,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { riccati_step: 0.01, anchor: Complex64::new(1.0, 0.0), law: AmplitudeLaw::Verbatim }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianBeam {
    pub chart: Arc<FermiChart>,
    pub riccati: Arc<RiccatiSolution>,
    pub lambda: f64,
    pub delta: f64,
    pub kappa: f64,
    pub conjugated: bool,
    pub c_tilde: Complex64,
    pub law: AmplitudeLaw,
    pub dim: usize,
}

/// Radius up to which the truncated chart is trusted, from curvature and conformal gradients on the axis.
pub fn chart_validity_radius(chart: &FermiChart) -> f64 {
    let g = &chart.ng.oriented;
    let d = chart.dim;
    let mut worst: f64 = 0.0;
    for st in &g.samples {
        let m = Conformal::at(&g.c1, d, &st.x);
        let mut b = 0.0;
        for i in 0..d {
            for j in 0..d {
                b += (m.hess_f[i][j] - m.df[i] * m.df[j]).powi(2);
            }
        }
        let df2: f64 = (0..d).map(|i| m.df[i] * m.df[i]).sum();
        // Euclidean quantities converted to g-units
        worst = worst.max(m.c1 * (b.sqrt() + df2));
    }
    if worst == 0.0 {
        f64::INFINITY
    } else {
        1.0 / worst.sqrt()
    }
}

pub fn build_beam(
    spec: &MediumSpec,
    ng: &NullGeodesic,
    h0: &CMatrix,
    lambda: f64,
    delta: f64,
    kappa: f64,
) -> Result<GaussianBeam> {
    build_beam_with(spec, ng, h0, lambda, delta, kappa, &BeamConfig::default())
}

pub fn build_beam_with(
    spec: &MediumSpec,
    ng: &NullGeodesic,
    h0: &CMatrix,
    lambda: f64,
    delta: f64,
    kappa: f64,
    cfg: &BeamConfig,
) -> Result<GaussianBeam> {
    if !(lambda > 0.0) {
        return Err(NpeError::Argument(format!("lambda = {lambda} must be positive")));
    }
    if !(delta > 0.0) || kappa == 0.0 || !kappa.is_finite() {
        return Err(NpeError::Argument("delta must be positive and kappa nonzero".into()));
    }
    if spec.dim() != ng.oriented.dim {
        return Err(NpeError::Mismatch("geodesic and medium dimensions differ".into()));
    }
    let chart = fermi_chart(ng, 0.5 * delta)?;
    let valid = chart_validity_radius(&chart);
    if 0.5 * delta > valid {
        return Err(NpeError::Argument(format!("delta/2 = {} exceeds chart validity radius {valid}", 0.5 * delta)));
    }
    let riccati = solve_riccati(&chart, h0, cfg.riccati_step)?;
    let mut beam = GaussianBeam {
        chart: Arc::new(chart),
        riccati: Arc::new(riccati),
        lambda,
        delta,
        kappa,
        conjugated: kappa < 0.0,
        c_tilde: Complex64::new(1.0, 0.0),
        law: cfg.law,
        dim: spec.dim(),
    };
    let raw = beam.axis_amplitude(0.0)?;
    beam.c_tilde = cfg.anchor / raw;
    Ok(beam)
}

/// Phase, amplitude and operator coefficients of a beam at one space-time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalTerms {
    pub phi: Complex64,
    /// Smooth amplitude including the cutoff.
    pub amp: Complex64,
    /// Eikonal residual `-phi_t^2 + c1 |grad phi|^2`.
    pub s_phi: Complex64,
    /// First-order transport coefficient.
    pub l1: Complex64,
    /// `(-d_t^2 + c1 Laplacian)` of the amplitude.
    pub l0: Complex64,
}

impl LocalTerms {
    /// `e^{-i lambda kappa phi} (-d_t^2 + c1 Laplacian) u` for a beam of frequency `lambda kappa`.
    pub fn operator(&self, lk: f64) -> Complex64 {
        -lk * lk * self.s_phi * self.amp + I * lk * self.l1 + self.l0
    }
}

impl GaussianBeam {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self { kappa, conjugated: kappa < 0.0, ..self.clone() }
    }

    /// `A(tau)/sqrt 2` without the normalization constant.
    fn axis_amplitude(&self, tau: f64) -> Result<Complex64> {
        if self.law == AmplitudeLaw::Constant {
            return Ok(Complex64::new(1.0 / SQRT_2, 0.0));
        }
        let root = self.riccati.det_inv_sqrt(&self.chart, tau)?;
        let x = self.chart.ng.oriented.point(tau / SQRT_2)?;
        let c1 = self.chart.ng.oriented.c1.value(self.dim, &x);
        Ok(root * c1.powf(self.law.exponent(self.dim)) / SQRT_2)
    }

    /// `a0(tau)`.
    pub fn a0(&self, tau: f64) -> Result<Complex64> {
        Ok(self.c_tilde * self.axis_amplitude(tau)?)
    }

    /// `phi(z) = r + z'^T H(tau) z'`.
    pub fn phase(&self, z: &[f64]) -> Result<Complex64> {
        let h = self.riccati.h_at(&self.chart, z[0])?;
        Ok(self.phase_with(&h, z))
    }

    fn phase_with(&self, h: &CMatrix, z: &[f64]) -> Complex64 {
        let d = self.dim;
        let mut q = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                q += h[(i, j)] * z[1 + i] * z[1 + j];
            }
        }
        Complex64::new(z[1], 0.0) + q
    }

    fn transverse_norm(&self, z: &[f64]) -> f64 {
        z[1..=self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Beam value at Fermi coordinates, conjugation applied.
    pub fn evaluate_fermi(&self, z: &[f64]) -> Result<Complex64> {
        if cutoff(self.transverse_norm(z) / self.delta) == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        Ok(self.evaluate_section(&self.section(z[0])?, z))
    }

    /// `H` and `a0` at one `tau`.
    pub fn section(&self, tau: f64) -> Result<BeamSection> {
        Ok(BeamSection { tau, h: self.riccati.h_at(&self.chart, tau)?, a0: self.a0(tau)? })
    }

    /// Beam value at `z` with `H` and `a0` frozen at `section.tau`.
    pub fn evaluate_section(&self, section: &BeamSection, z: &[f64]) -> Complex64 {
        let chi = cutoff(self.transverse_norm(z) / self.delta);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let phi = self.phase_with(&section.h, z);
        let v = (I * self.lambda * self.kappa.abs() * phi).exp() * section.a0 * chi;
        if self.conjugated {
            v.conj()
        } else {
            v
        }
    }

    /// Contribution `kappa phi` or `-|kappa| conj(phi)` of this beam to a product phase.
    pub fn signed_phase(&self, phi: Complex64) -> Complex64 {
        if self.conjugated {
            -self.kappa.abs() * phi.conj()
        } else {
            self.kappa.abs() * phi
        }
    }

    /// Total: zero outside the chart or the cutoff support.
    pub fn evaluate(&self, t: f64, x: &Point) -> Complex64 {
        match self.chart.to_fermi(t, x) {
            Ok(z) => self.evaluate_fermi(&z).unwrap_or(Complex64::new(0.0, 0.0)),
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Smooth phase and cutoff amplitude at a space-time point, ignoring the tube bound.
    fn smooth_parts(&self, t: f64, x: &Point) -> Result<(Complex64, Complex64)> {
        let z = self.chart.to_fermi_unbounded(t, x)?;
        let h = self.riccati.h_at(&self.chart, z[0])?;
        let phi = self.phase_with(&h, &z);
        let chi = cutoff(self.transverse_norm(&z) / self.delta);
        Ok((phi, self.a0(z[0])? * chi))
    }

    /// Operator coefficients by fourth-order differences of the smooth parts in `(t, x)`.
    pub fn local_terms(&self, t: f64, x: &Point, c1: f64) -> Result<LocalTerms> {
        let d = self.dim;
        let h = 1e-3;
        let (phi, amp) = self.smooth_parts(t, x)?;
        let mut s_phi = Complex64::new(0.0, 0.0);
        let mut l1 = Complex64::new(0.0, 0.0);
        let mut lap_phi = Complex64::new(0.0, 0.0);
        let mut l0 = Complex64::new(0.0, 0.0);
        for axis in 0..=d {
            let at = |k: f64| -> Result<(Complex64, Complex64)> {
                if axis == 0 {
                    self.smooth_parts(t + k * h, x)
                } else {
                    let mut y = *x;
                    y[axis - 1] += k * h;
                    self.smooth_parts(t, &y)
                }
            };
            let (p2, a2) = at(2.0)?;
            let (p1, a1) = at(1.0)?;
            let (m1, b1) = at(-1.0)?;
            let (m2, b2) = at(-2.0)?;
            let d1 = |f2: Complex64, f1: Complex64, g1: Complex64, g2: Complex64| (-f2 + f1 * 8.0 - g1 * 8.0 + g2) / (12.0 * h);
            let d2 = |f2: Complex64, f1: Complex64, f0: Complex64, g1: Complex64, g2: Complex64| {
                (-f2 + f1 * 16.0 - f0 * 30.0 + g1 * 16.0 - g2) / (12.0 * h * h)
            };
            let sign = if axis == 0 { -1.0 } else { c1 };
            let pd = d1(p2, p1, m1, m2);
            let ad = d1(a2, a1, b1, b2);
            let pdd = d2(p2, p1, phi, m1, m2);
            let add = d2(a2, a1, amp, b1, b2);
            s_phi += pd * pd * sign;
            l1 += pd * ad * (2.0 * sign);
            lap_phi += pdd * sign;
            l0 += add * sign;
        }
        l1 += lap_phi * amp;
        Ok(LocalTerms { phi, amp, s_phi, l1, l0 })
    }
}

/// Eikonal, transport and full-operator diagnostics of one beam.
#[derive(Clone, Debug, Serialize)]
pub struct BeamResidualReport {
    /// Rows `(tau, |z'|, |S phi|)`.
    pub eikonal_samples: Vec<(f64, f64, f64)>,
    pub eikonal_fit: LineFit,
    /// Rows `(tau, |I2|)` on the axis.
    pub transport_axis: Vec<(f64, f64)>,
    /// Rows `(lambda, L2 tube norm)`.
    pub pde_norms: Vec<(f64, f64)>,
    pub pde_fit: LineFit,
}

/// Sampling controls for residual diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualConfig {
    pub taus: Vec<f64>,
    pub radii: Vec<f64>,
    /// Directions per radius in `z'` space.
    pub directions: usize,
    /// Tube quadrature: tau window and nodes per axis.
    pub tau_window: (f64, f64),
    pub tau_nodes: usize,
    pub transverse_nodes: usize,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            taus: vec![-0.3, 0.0, 0.3],
            radii: vec![0.02, 0.04, 0.08, 0.16],
            directions: 6,
            tau_window: (-0.3, 0.3),
            tau_nodes: 9,
            transverse_nodes: 33,
        }
    }
}

fn direction(d: usize, k: usize, count: usize) -> Vec<f64> {
    let a = std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
    if d == 2 {
        vec![a.cos(), a.sin()]
    } else {
        let b = 2.399963229728653 * k as f64;
        vec![a.cos(), a.sin() * b.cos(), a.sin() * b.sin()]
    }
}

pub fn residual_report(spec: &MediumSpec, beam: &GaussianBeam, lambdas: &[f64], cfg: &ResidualConfig) -> Result<BeamResidualReport> {
    if lambdas.is_empty() {
        return Err(NpeError::Argument("empty lambda list".into()));
    }
    if cfg.radii.len() < 4 {
        return Err(NpeError::InsufficientSamples(format!("{} radii, need 4", cfg.radii.len())));
    }
    let d = beam.dim;
    let chart = &beam.chart;
    let c1_at = |x: &Point| spec.c1.value(d, x);

    let mut eikonal_samples = Vec::new();
    let mut worst = vec![0.0f64; cfg.radii.len()];
    for &tau in &cfg.taus {
        for (ri, &rho) in cfg.radii.iter().enumerate() {
            for k in 0..cfg.directions {
                let dir = direction(d, k, cfg.directions);
                let mut z = vec![tau];
                z.extend(dir.iter().map(|v| v * rho));
                let q = chart.from_fermi(&z)?;
                let terms = beam.local_terms(q.t, &q.x, c1_at(&q.x))?;
                let s = terms.s_phi.norm();
                eikonal_samples.push((tau, rho, s));
                worst[ri] = worst[ri].max(s);
            }
        }
    }
    let floor = worst.iter().copied().fold(0.0, f64::max) * 1e-300 + f64::MIN_POSITIVE;
    let eikonal_fit = fit_power(&cfg.radii, &worst.iter().map(|v| v.max(floor)).collect::<Vec<_>>());

    let mut transport_axis = Vec::new();
    for &tau in &cfg.taus {
        let q = chart.axis_point(tau)?;
        let terms = beam.local_terms(q.t, &q.x, c1_at(&q.x))?;
        transport_axis.push((tau, terms.l1.norm()));
    }

    let pde_norms = tube_residual_norms(spec, beam, lambdas, cfg)?;
    let ls: Vec<f64> = pde_norms.iter().map(|r| r.0).collect();
    let ns: Vec<f64> = pde_norms.iter().map(|r| r.1).collect();
    let pde_fit = if ls.len() >= 2 { fit_power(&ls, &ns) } else { LineFit { slope: f64::NAN, intercept: f64::NAN, residual: f64::NAN } };
    Ok(BeamResidualReport { eikonal_samples, eikonal_fit, transport_axis, pde_norms, pde_fit })
}

/// `d(t, x)/dz` of the chart by central differences.
pub fn chart_jacobian(chart: &FermiChart, z: &[f64]) -> Result<DMatrix<f64>> {
    let d = chart.dim;
    let n = d + 1;
    let h = 1e-5;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[b] += h;
        zm[b] -= h;
        let p = chart.from_fermi_unbounded(&zp)?;
        let m = chart.from_fermi_unbounded(&zm)?;
        j[(0, b)] = (p.t - m.t) / (2.0 * h);
        for a in 0..d {
            j[(a + 1, b)] = (p.x[a] - m.x[a]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Space-time Jacobian determinant of the chart.
pub fn chart_jacobian_det(chart: &FermiChart, z: &[f64]) -> Result<f64> {
    Ok(chart_jacobian(chart, z)?.determinant().abs())
}

/// L2 norm of `(-d_t^2 + c1 Laplacian) u_lambda` over the tube section in the tau window.
pub fn tube_residual_norms(spec: &MediumSpec, beam: &GaussianBeam, lambdas: &[f64], cfg: &ResidualConfig) -> Result<Vec<(f64, f64)>> {
    let d = beam.dim;
    let chart = &beam.chart;
    let (ta, tb) = cfg.tau_window;
    let nt = cfg.tau_nodes.max(2);
    let nz = cfg.transverse_nodes.max(3);
    let mut out = Vec::new();
    for &lambda in lambdas {
        let lk = lambda * beam.kappa.abs();
        // transverse window: full cutoff support or eight Gaussian widths, whichever is smaller
        let mut min_im = f64::INFINITY;
        for i in 0..nt {
            let tau = ta + (tb - ta) * i as f64 / (nt - 1) as f64;
            min_im = min_im.min(min_imag_eigenvalue(&beam.riccati.h_at(chart, tau)?));
        }
        let width = (8.0 / (2.0 * lk * min_im)).sqrt().min(0.5 * beam.delta * 0.999);
        let dz = 2.0 * width / (nz - 1) as f64;
        let dtau = (tb - ta) / (nt - 1) as f64;
        let mut acc = 0.0;
        let total = nz.pow(d as u32);
        for i in 0..nt {
            let tau = ta + dtau * i as f64;
            let wt = if i == 0 || i == nt - 1 { 0.5 } else { 1.0 };
            for idx in 0..total {
                let mut z = vec![tau];
                let mut rem = idx;
                let mut w = wt;
                for _ in 0..d {
                    let k = rem % nz;
                    rem /= nz;
                    z.push(-width + dz * k as f64);
                    if k == 0 || k == nz - 1 {
                        w *= 0.5;
                    }
                }
                if beam.transverse_norm(&z) >= 0.5 * beam.delta {
                    continue;
                }
                let q = chart.from_fermi(&z)?;
                let terms = beam.local_terms(q.t, &q.x, spec.c1.value(d, &q.x))?;
                let jac = chart_jacobian_det(chart, &z)?;
                let env = (-2.0 * lk * terms.phi.im).exp();
                acc += w * jac * env * terms.operator(lk).norm_sqr();
            }
        }
        let vol = dtau * dz.powi(d as i32);
        out.push((lambda, (acc * vol).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_plateau_and_support() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(0.25), 1.0);
        assert_eq!(cutoff(0.5), 0.0);
        assert_eq!(cutoff(0.7), 0.0);
        let v = cutoff(0.375);
        assert!(v > 0.0 && v < 1.0);
        let mut prev = 1.0;
        for k in 0..=100 {
            let c = cutoff(0.25 + 0.0025 * k as f64);
            assert!(c <= prev + 1e-15);
            prev = c;
        }
    }

    #[test]
    fn amplitude_exponents() {
        assert!((AmplitudeLaw::Verbatim.exponent(3) + 1.0606601717798212).abs() < 1e-15);
        assert_eq!(AmplitudeLaw::Alternative.exponent(2), -0.75);
        assert_eq!(AmplitudeLaw::Transport.exponent(2), 0.0);
        assert_eq!(AmplitudeLaw::Transport.exponent(3), -0.25);
    }
}

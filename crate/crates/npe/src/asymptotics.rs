//! Oscillatory integrals `int e^{i lambda phi} a`: quadrature oracle and leading stationary-phase term.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NpeError, Result};

pub type PointFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Phase and amplitude on a box with a tensor grid.
#[derive(Clone)]
pub struct OscillatoryIntegrand {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub phase: PointFn,
    pub amplitude: PointFn,
}

impl OscillatoryIntegrand {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: Vec<usize>, phase: PointFn, amplitude: PointFn) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || hi.len() != dim || nodes.len() != dim {
            return Err(NpeError::Argument("box bounds and node counts must share one dimension".into()));
        }
        if (0..dim).any(|a| !(hi[a] > lo[a]) || nodes[a] < 2) {
            return Err(NpeError::Argument("empty box or fewer than two nodes".into()));
        }
        Ok(Self { dim, lo, hi, nodes, phase, amplitude })
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim).map(|a| (self.hi[a] - self.lo[a]) / (self.nodes[a] - 1) as f64).collect()
    }

    fn point(&self, mut idx: usize, h: &[f64]) -> (Vec<f64>, f64) {
        let mut p = vec![0.0; self.dim];
        let mut w = 1.0;
        for a in 0..self.dim {
            let k = idx % self.nodes[a];
            idx /= self.nodes[a];
            p[a] = self.lo[a] + h[a] * k as f64;
            if k == 0 || k == self.nodes[a] - 1 {
                w *= 0.5;
            }
            w *= h[a];
        }
        (p, w)
    }

    fn total(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Gradient of the phase by central differences.
    pub fn gradient(&self, p: &[f64], step: f64) -> Vec<Complex64> {
        (0..self.dim)
            .map(|a| {
                let mut q = p.to_vec();
                q[a] += step;
                let fp = (self.phase)(&q);
                q[a] -= 2.0 * step;
                let fm = (self.phase)(&q);
                (fp - fm) / (2.0 * step)
            })
            .collect()
    }

    /// Hessian of the phase by central differences.
    pub fn hessian(&self, p: &[f64], step: f64) -> DMatrix<Complex64> {
        let n = self.dim;
        let f = |da: &[(usize, f64)]| {
            let mut q = p.to_vec();
            for &(a, s) in da {
                q[a] += s;
            }
            (self.phase)(&q)
        };
        let mut h = DMatrix::zeros(n, n);
        let f0 = f(&[]);
        for a in 0..n {
            h[(a, a)] = (f(&[(a, step)]) - f0 * 2.0 + f(&[(a, -step)])) / (step * step);
            for b in 0..a {
                let v = (f(&[(a, step), (b, step)]) - f(&[(a, step), (b, -step)]) - f(&[(a, -step), (b, step)])
                    + f(&[(a, -step), (b, -step)]))
                    / (4.0 * step * step);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        h
    }

    /// Nodes per local wavelength along each axis, minimized over the amplitude support.
    pub fn resolution(&self, lambda: f64) -> f64 {
        let h = self.spacing();
        let worst = (0..self.total())
            .into_par_iter()
            .map(|i| {
                let (p, _) = self.point(i, &h);
                if (self.amplitude)(&p).norm() == 0.0 {
                    return f64::INFINITY;
                }
                let g = self.gradient(&p, 1e-6);
                (0..self.dim)
                    .map(|a| {
                        let k = lambda * g[a].re.abs();
                        if k == 0.0 {
                            f64::INFINITY
                        } else {
                            2.0 * PI / (k * h[a])
                        }
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min);
        worst
    }
}

/// Minimal nodes per wavelength accepted by `quadrature`.
pub const MIN_NODES_PER_WAVELENGTH: f64 = 8.0;

/// Tensor trapezoid rule for `int e^{i lambda phi} a`.
pub fn quadrature(int: &OscillatoryIntegrand, lambda: f64) -> Result<Complex64> {
    let res = int.resolution(lambda);
    if res < MIN_NODES_PER_WAVELENGTH {
        let factor = MIN_NODES_PER_WAVELENGTH / res;
        let need: Vec<usize> = int.nodes.iter().map(|&n| ((n - 1) as f64 * factor).ceil() as usize + 1).collect();
        return Err(NpeError::Resolution(format!(
            "{res:.2} nodes per wavelength at lambda = {lambda}; need at least {MIN_NODES_PER_WAVELENGTH}, about {need:?} nodes"
        )));
    }
    Ok(quadrature_unchecked(int, lambda))
}

/// Trapezoid sum without the resolution guard; chunks are summed in a fixed order.
pub fn quadrature_unchecked(int: &OscillatoryIntegrand, lambda: f64) -> Complex64 {
    let h = int.spacing();
    let total = int.total();
    let chunk = 4096;
    let partial: Vec<Complex64> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in c * chunk..((c + 1) * chunk).min(total) {
                let (p, w) = int.point(i, &h);
                let a = (int.amplitude)(&p);
                if a.norm() == 0.0 {
                    continue;
                }
                let ph = (int.phase)(&p);
                acc += (Complex64::new(0.0, lambda) * ph).exp() * a * w;
            }
            acc
        })
        .collect();
    partial.into_iter().sum()
}

/// Data at a nondegenerate critical point of the phase.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalPointData {
    pub location: Vec<f64>,
    pub phase_value: Complex64,
    pub gradient_norm: f64,
    pub hessian: DMatrix<Complex64>,
    pub det: Complex64,
    /// Signature of the real part of the Hessian.
    pub signature: i32,
    /// Sampled lower bound of `Im phi(q) / |q - p0|^2`.
    pub c1: f64,
    /// Grid nodes away from `p0` with near-vanishing gradient.
    pub other_candidates: usize,
    pub warnings: Vec<String>,
}

impl CriticalPointData {
    /// Data from a known location and Hessian.
    pub fn from_hessian(location: Vec<f64>, phase_value: Complex64, hessian: DMatrix<Complex64>) -> Self {
        let det = hessian.determinant();
        let re = hessian.map(|v| v.re);
        let eig = SymmetricEigen::new((&re + re.transpose()) * 0.5).eigenvalues;
        let scale = eig.amax().max(1e-300);
        let signature = eig
            .iter()
            .map(|&e| if e > 1e-12 * scale { 1 } else if e < -1e-12 * scale { -1 } else { 0 })
            .sum();
        Self {
            location,
            phase_value,
            gradient_norm: 0.0,
            hessian,
            det,
            signature,
            c1: f64::NAN,
            other_candidates: 0,
            warnings: Vec::new(),
        }
    }
}

/// `det(-i Q)^{-1/2}` continued from the identity along `(1 - s) I - i s Q`.
///
/// Requires `Im Q >= 0`; reduces to `|det Q|^{-1/2} e^{i pi sgn(Q) / 4}` for real `Q`.
pub fn inverse_sqrt_det(q: &DMatrix<Complex64>) -> Result<Complex64> {
    let n = q.nrows();
    let target = q * Complex64::new(0.0, -1.0);
    let id = DMatrix::<Complex64>::identity(n, n);
    let steps = 2000;
    let mut arg = 0.0;
    let mut prev = Complex64::new(1.0, 0.0);
    let mut last = prev;
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let a = &id * Complex64::new(1.0 - s, 0.0) + &target * Complex64::new(s, 0.0);
        let det = a.determinant();
        if det.norm() == 0.0 || !det.is_finite() {
            return Err(NpeError::Degenerate("singular matrix on the branch path".into()));
        }
        let mut dphi = (det / prev).arg();
        if dphi.abs() > 0.5 * PI {
            // refine a fast-turning segment
            let sub = 64;
            dphi = 0.0;
            let mut p = prev;
            for j in 1..=sub {
                let ss = s - (1.0 - j as f64 / sub as f64) / steps as f64;
                let b = &id * Complex64::new(1.0 - ss, 0.0) + &target * Complex64::new(ss, 0.0);
                let d = b.determinant();
                dphi += (d / p).arg();
                p = d;
            }
        }
        arg += dphi;
        prev = det;
        last = det;
    }
    Ok(Complex64::from_polar(last.norm().powf(-0.5), -0.5 * arg))
}

/// `(2 pi / lambda)^{n/2} e^{i lambda phi(p0)} det(-i D^2 phi)^{-1/2} a(p0)`.
pub fn stationary_phase_leading(cp: &CriticalPointData, a_at_p0: Complex64, lambda: f64, n: usize) -> Result<Complex64> {
    if cp.hessian.nrows() != n {
        return Err(NpeError::Mismatch(format!("Hessian is {}x{}, n = {n}", cp.hessian.nrows(), cp.hessian.ncols())));
    }
    let scale = cp.hessian.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if cp.det.norm() <= 1e-14 * scale.powi(n as i32) || cp.det.norm() == 0.0 {
        return Err(NpeError::Degenerate("zero Hessian determinant".into()));
    }
    if a_at_p0.norm() == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let root = inverse_sqrt_det(&cp.hessian)?;
    let pref = (2.0 * PI / lambda).powf(0.5 * n as f64);
    Ok((Complex64::new(0.0, lambda) * cp.phase_value).exp() * root * a_at_p0 * pref)
}

/// Gauss-Newton on the complex gradient from `seed`.
pub fn find_critical_point(int: &OscillatoryIntegrand, seed: &[f64]) -> Result<CriticalPointData> {
    let n = int.dim;
    if seed.len() != n {
        return Err(NpeError::Argument("seed dimension mismatch".into()));
    }
    let inside = |p: &[f64]| (0..n).all(|a| p[a] >= int.lo[a] && p[a] <= int.hi[a]);
    let grad_norm = |g: &[Complex64]| g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let (gs, hs) = (1e-5, 1e-3);
    let mut p = seed.to_vec();
    let mut g = int.gradient(&p, gs);
    let mut converged = grad_norm(&g) < 1e-10;
    for _ in 0..100 {
        if converged {
            break;
        }
        let h = int.hessian(&p, hs);
        let mut a = DMatrix::<f64>::zeros(2 * n, n);
        let mut b = DVector::<f64>::zeros(2 * n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = h[(i, j)].re;
                a[(n + i, j)] = h[(i, j)].im;
            }
            b[i] = -g[i].re;
            b[n + i] = -g[i].im;
        }
        let step = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| NpeError::NotFound(format!("Gauss-Newton solve failed: {e}")))?;
        let g0 = grad_norm(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let q: Vec<f64> = (0..n).map(|i| p[i] + t * step[i]).collect();
            if inside(&q) {
                let gq = int.gradient(&q, gs);
                if grad_norm(&gq) < g0 {
                    p = q;
                    g = gq;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = grad_norm(&g) < 1e-10 || step.norm() * t < 1e-13;
    }
    if !converged {
        return Err(NpeError::NotFound(format!("no critical point from seed {seed:?} (|grad| = {:.3e})", grad_norm(&g))));
    }
    if (int.amplitude)(&p).norm() == 0.0 {
        return Err(NpeError::NotFound(format!("critical point {p:?} lies outside the amplitude support")));
    }
    let hessian = int.hessian(&p, hs);
    let phase_value = (int.phase)(&p);
    let mut cp = CriticalPointData::from_hessian(p.clone(), phase_value, hessian);
    cp.gradient_norm = grad_norm(&g);
    if phase_value.norm() > 1e-8 {
        cp.warnings.push(format!("phase offset {phase_value} at the critical point"));
    }
    // sampled distance bound and uniqueness scan on the quadrature grid
    let h = int.spacing();
    let mut c1 = f64::INFINITY;
    let mut gmax: f64 = 0.0;
    let mut small = Vec::new();
    let stride = (int.total() / 20000).max(1);
    for i in (0..int.total()).step_by(stride) {
        let (q, _) = int.point(i, &h);
        if (int.amplitude)(&q).norm() == 0.0 {
            continue;
        }
        let d2: f64 = (0..n).map(|a| (q[a] - p[a]).powi(2)).sum();
        if d2 > 0.0 {
            c1 = c1.min((int.phase)(&q).im / d2);
        }
        let gq = grad_norm(&int.gradient(&q, gs));
        gmax = gmax.max(gq);
        let far = (0..n).any(|a| (q[a] - p[a]).abs() > 3.0 * h[a] * stride as f64);
        if far {
            small.push(gq);
        }
    }
    cp.c1 = c1;
    cp.other_candidates = small.iter().filter(|&&v| v < 1e-3 * gmax).count();
    if cp.other_candidates > 0 {
        cp.warnings.push(format!("{} sampled nodes with near-critical gradient", cp.other_candidates));
    }
    Ok(cp)
}

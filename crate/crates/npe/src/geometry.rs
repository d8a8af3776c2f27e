//! Geodesics of `g = c1^{-1} ds^2`, null geodesics of `-dt^2 + g` and Fermi charts.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{NpeError, Result};
use crate::medium::{Field, MediumSpec, Point};

fn dot(a: &Point, b: &Point, d: usize) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

/// Metric data at a point: conformal factor and derivatives of `f = -ln(c1)/2`.
#[derive(Clone, Copy, Debug)]
pub struct Conformal {
    pub c1: f64,
    pub grad_c1: Point,
    /// Gradient of `f`.
    pub df: Point,
    /// Hessian of `f`.
    pub hess_f: [[f64; 3]; 3],
}

impl Conformal {
    pub fn at(c1: &Field, dim: usize, x: &Point) -> Self {
        let s = c1.sample(dim, x);
        let mut df = [0.0; 3];
        let mut hess_f = [[0.0; 3]; 3];
        for i in 0..dim {
            df[i] = -0.5 * s.gradient[i] / s.value;
            for j in 0..dim {
                hess_f[i][j] = -0.5 * (s.hessian[i][j] / s.value - s.gradient[i] * s.gradient[j] / (s.value * s.value));
            }
        }
        Self { c1: s.value, grad_c1: s.gradient, df, hess_f }
    }

    /// `Gamma(u, v)^i` for the conformal metric.
    pub fn christoffel(&self, u: &Point, v: &Point, d: usize) -> Point {
        let (fu, fv, uv) = (dot(&self.df, u, d), dot(&self.df, v, d), dot(u, v, d));
        let mut out = [0.0; 3];
        for i in 0..d {
            out[i] = u[i] * fv + v[i] * fu - uv * self.df[i];
        }
        out
    }

    /// `Rm(x, a, b, x)`, sectional sign, for `a, b` Euclidean-orthogonal to `x`.
    pub fn curvature_xabx(&self, x: &Point, a: &Point, b: &Point, d: usize) -> f64 {
        let bform = |u: &Point, v: &Point| -> f64 {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += (self.hess_f[i][j] - self.df[i] * self.df[j]) * u[i] * v[j];
                }
            }
            s
        };
        let xx = dot(x, x, d);
        let ab = dot(a, b, d);
        let df2 = dot(&self.df, &self.df, d);
        -(bform(x, x) * ab + bform(a, b) * xx + df2 * xx * ab) / self.c1
    }
}

/// Integrator state: position, momentum and transverse frame vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeodesicState {
    pub x: Point,
    pub p: Point,
    pub frame: [Point; 2],
}

/// Integration controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeodesicOptions {
    pub step: f64,
    /// Extension beyond both boundary exits.
    pub margin: f64,
    /// Maximal g-length in each direction.
    pub max_length: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { step: 0.005, margin: 0.5, max_length: 100.0 }
    }
}

/// Unit-speed geodesic sampled on a uniform arc-length grid with a parallel frame.
#[derive(Clone, Debug)]
pub struct Geodesic {
    pub dim: usize,
    pub c1: Arc<Field>,
    pub x0: Point,
    pub step: f64,
    /// Arc length of `samples[0]`.
    pub s_start: f64,
    pub samples: Vec<GeodesicState>,
    /// Boundary exit parameters.
    pub s_minus: f64,
    pub s_plus: f64,
    pub margin: f64,
}

fn rhs(c1: &Field, d: usize, y: &GeodesicState) -> GeodesicState {
    let m = Conformal::at(c1, d, &y.x);
    let p2 = dot(&y.p, &y.p, d);
    let mut out = GeodesicState { x: [0.0; 3], p: [0.0; 3], frame: [[0.0; 3]; 2] };
    for i in 0..d {
        out.x[i] = m.c1 * y.p[i];
        out.p[i] = -0.5 * p2 * m.grad_c1[i];
    }
    for k in 0..d - 1 {
        let g = m.christoffel(&out.x, &y.frame[k], d);
        for i in 0..d {
            out.frame[k][i] = -g[i];
        }
    }
    out
}

fn axpy(y: &GeodesicState, a: f64, k: &GeodesicState) -> GeodesicState {
    let mut o = *y;
    for i in 0..3 {
        o.x[i] += a * k.x[i];
        o.p[i] += a * k.p[i];
        o.frame[0][i] += a * k.frame[0][i];
        o.frame[1][i] += a * k.frame[1][i];
    }
    o
}

/// One classical RK4 step of size `h`.
pub fn rk4_step(c1: &Field, d: usize, y: &GeodesicState, h: f64) -> GeodesicState {
    let k1 = rhs(c1, d, y);
    let k2 = rhs(c1, d, &axpy(y, 0.5 * h, &k1));
    let k3 = rhs(c1, d, &axpy(y, 0.5 * h, &k2));
    let k4 = rhs(c1, d, &axpy(y, h, &k3));
    let mut o = *y;
    let comb = |a: f64, b: f64, c: f64, e: f64| h / 6.0 * (a + 2.0 * b + 2.0 * c + e);
    for i in 0..3 {
        o.x[i] += comb(k1.x[i], k2.x[i], k3.x[i], k4.x[i]);
        o.p[i] += comb(k1.p[i], k2.p[i], k3.p[i], k4.p[i]);
        for f in 0..2 {
            o.frame[f][i] += comb(k1.frame[f][i], k2.frame[f][i], k3.frame[f][i], k4.frame[f][i]);
        }
    }
    o
}

/// Initial state from a covector direction: momentum normalized so `c1 |p|^2 = 1`.
pub fn initial_state(c1: &Field, d: usize, x0: &Point, dir: &Point) -> Result<GeodesicState> {
    let norm = dot(dir, dir, d).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(NpeError::Argument("zero direction".into()));
    }
    let c = c1.value(d, x0);
    let mut u = [0.0; 3];
    let mut p = [0.0; 3];
    for i in 0..d {
        u[i] = dir[i] / norm;
        p[i] = u[i] / c.sqrt();
    }
    let sc = c.sqrt();
    let mut frame = [[0.0; 3]; 2];
    if d == 2 {
        frame[0] = [-u[1] * sc, u[0] * sc, 0.0];
    } else if d == 3 {
        let axis = (0..3).min_by(|&a, &b| u[a].abs().partial_cmp(&u[b].abs()).unwrap()).unwrap();
        let mut a = [0.0; 3];
        a[axis] = 1.0;
        let au = dot(&a, &u, 3);
        let mut e2 = [a[0] - au * u[0], a[1] - au * u[1], a[2] - au * u[2]];
        let n2 = dot(&e2, &e2, 3).sqrt();
        e2.iter_mut().for_each(|v| *v /= n2);
        let e3 = [u[1] * e2[2] - u[2] * e2[1], u[2] * e2[0] - u[0] * e2[2], u[0] * e2[1] - u[1] * e2[0]];
        frame[0] = e2.map(|v| v * sc);
        frame[1] = e3.map(|v| v * sc);
    } else {
        return Err(NpeError::Argument(format!("geodesics need dimension 2 or 3, got {d}")));
    }
    Ok(GeodesicState { x: *x0, p, frame })
}

fn integrate_until_exit(
    spec: &MediumSpec,
    y0: GeodesicState,
    h: f64,
    opts: &GeodesicOptions,
) -> Result<(Vec<GeodesicState>, f64)> {
    let d = spec.dim();
    let mut out = vec![y0];
    let mut y = y0;
    let mut s = 0.0;
    let mut exit: Option<f64> = None;
    loop {
        let next = rk4_step(&spec.c1, d, &y, h);
        s += h.abs();
        if exit.is_none() && !spec.domain.contains(&next.x) {
            // bisect on the dense step for the crossing parameter
            let (mut a, mut b) = (0.0, h.abs());
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if spec.domain.contains(&rk4_step(&spec.c1, d, &y, m * h.signum()).x) {
                    a = m;
                } else {
                    b = m;
                }
            }
            exit = Some(s - h.abs() + 0.5 * (a + b));
        }
        out.push(next);
        y = next;
        if let Some(e) = exit {
            if s >= e + opts.margin {
                return Ok((out, e));
            }
        }
        if s > opts.max_length {
            return Err(NpeError::NoExit(opts.max_length));
        }
    }
}

/// Traces the geodesic through `x0` with covector direction `dir` until both exits plus margin.
pub fn trace_geodesic(spec: &MediumSpec, x0: &Point, dir: &Point, opts: &GeodesicOptions) -> Result<Geodesic> {
    let d = spec.dim();
    if !spec.domain.contains(x0) {
        return Err(NpeError::Argument(format!("base point {x0:?} outside the domain")));
    }
    if !(opts.step > 0.0) {
        return Err(NpeError::Argument("step must be positive".into()));
    }
    let y0 = initial_state(&spec.c1, d, x0, dir)?;
    let (fwd, s_plus) = integrate_until_exit(spec, y0, opts.step, opts)?;
    let (bwd, s_back) = integrate_until_exit(spec, y0, -opts.step, opts)?;
    let mut samples: Vec<GeodesicState> = bwd.iter().skip(1).rev().copied().collect();
    let s_start = -((bwd.len() - 1) as f64) * opts.step;
    samples.extend(fwd);
    Ok(Geodesic {
        dim: d,
        c1: Arc::new(spec.c1.clone()),
        x0: *x0,
        step: opts.step,
        s_start,
        samples,
        s_minus: -s_back,
        s_plus,
        margin: opts.margin,
    })
}

impl Geodesic {
    pub fn s_end(&self) -> f64 {
        self.s_start + (self.samples.len() - 1) as f64 * self.step
    }

    /// Dense state by one RK4 step from the nearest sample at or below `s`.
    pub fn state(&self, s: f64) -> Result<GeodesicState> {
        let tol = 1e-12;
        if s < self.s_start - tol || s > self.s_end() + tol {
            return Err(NpeError::OutOfChart(format!("arc length {s} outside [{}, {}]", self.s_start, self.s_end())));
        }
        let f = ((s - self.s_start) / self.step).floor();
        let i = (f.max(0.0) as usize).min(self.samples.len() - 1);
        let ds = s - (self.s_start + i as f64 * self.step);
        if ds == 0.0 {
            return Ok(self.samples[i]);
        }
        Ok(rk4_step(&self.c1, self.dim, &self.samples[i], ds))
    }

    pub fn point(&self, s: f64) -> Result<Point> {
        Ok(self.state(s)?.x)
    }

    /// Unit tangent `c1 p`.
    pub fn velocity(&self, s: f64) -> Result<Point> {
        let y = self.state(s)?;
        let c = self.c1.value(self.dim, &y.x);
        Ok(y.p.map(|v| v * c))
    }

    pub fn length(&self) -> f64 {
        self.s_plus - self.s_minus
    }

    /// Max deviation of `g(gamma', gamma')` from one over the samples.
    pub fn speed_defect(&self) -> f64 {
        self.samples
            .iter()
            .map(|y| (self.c1.value(self.dim, &y.x) * dot(&y.p, &y.p, self.dim) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Max deviation of the Gram matrix of `(gamma', e_2[, e_3])` from the identity.
    pub fn frame_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for y in &self.samples {
            let c = self.c1.value(d, &y.x);
            let v = y.p.map(|q| q * c);
            let mut vecs = vec![v];
            vecs.extend(y.frame.iter().take(d - 1).copied());
            for a in 0..d {
                for b in 0..d {
                    let g = dot(&vecs[a], &vecs[b], d) / c;
                    let target = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((g - target).abs());
                }
            }
        }
        worst
    }

    /// Sampled path as rows `(s, x.., e2.., [e3..])`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let mut r = vec![self.s_start + i as f64 * self.step];
                r.extend_from_slice(&y.x[..self.dim]);
                for k in 0..self.dim - 1 {
                    r.extend_from_slice(&y.frame[k][..self.dim]);
                }
                r
            })
            .collect()
    }
}

/// Sup of sampled geodesic lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiameterEstimate {
    pub value: f64,
    pub rays: usize,
}

/// Lower bound for the diameter from rays through a seed grid with lattice and spiral directions.
pub fn diameter(spec: &MediumSpec, samples: usize, opts: &GeodesicOptions) -> Result<DiameterEstimate> {
    if samples == 0 {
        return Err(NpeError::Argument("at least one sample required".into()));
    }
    let d = spec.dim();
    let mut dirs: Vec<Point> = Vec::new();
    let r = if d == 3 { -1..=1 } else { 0..=0 };
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in r.clone() {
                if (i, j, k) != (0, 0, 0) {
                    dirs.push([i as f64, j as f64, k as f64]);
                }
            }
        }
    }
    for m in 0..samples {
        let frac = (m as f64 + 0.5) / samples as f64;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt()) * m as f64;
        if d == 2 {
            let a = std::f64::consts::PI * frac;
            dirs.push([a.cos(), a.sin(), 0.0]);
        } else {
            let z = 1.0 - 2.0 * frac;
            let rr = (1.0 - z * z).sqrt();
            dirs.push([rr * golden.cos(), rr * golden.sin(), z]);
        }
    }
    let per_axis = samples.clamp(1, 5);
    let mut seeds = Vec::new();
    let total = per_axis.pow(d as u32);
    for idx in 0..total {
        let mut p = [0.0; 3];
        let mut rem = idx;
        for a in 0..d {
            let i = rem % per_axis;
            rem /= per_axis;
            let t = (i as f64 + 0.5) / per_axis as f64;
            p[a] = spec.domain.lo[a] + t * (spec.domain.hi[a] - spec.domain.lo[a]);
        }
        seeds.push(p);
    }
    let mut o = *opts;
    o.margin = 0.0;
    let mut best: f64 = 0.0;
    let mut rays = 0;
    for x in &seeds {
        for dir in &dirs {
            let g = trace_geodesic(spec, x, dir, &o)?;
            best = best.max(g.length());
            rays += 1;
        }
    }
    Ok(DiameterEstimate { value: best, rays })
}

/// Null geodesic `t -> (t, gamma(sigma (t - t0)))`, stored with the spatial curve oriented by `sigma`.
#[derive(Clone, Debug)]
pub struct NullGeodesic {
    /// Spatial geodesic traced along `sigma * xi`; the curve is `(t, oriented(t - t0))`.
    pub oriented: Geodesic,
    pub t0: f64,
    pub sigma: i32,
    pub xi: Point,
}

pub fn build_null_geodesic(
    spec: &MediumSpec,
    x0: &Point,
    xi: &Point,
    t0: f64,
    sigma: i32,
    opts: &GeodesicOptions,
) -> Result<NullGeodesic> {
    let d = spec.dim();
    let n = dot(xi, xi, d).sqrt();
    if (n - 1.0).abs() > 1e-10 {
        return Err(NpeError::Argument(format!("|xi| = {n} is not one")));
    }
    if !(t0 > 0.0 && t0 < spec.t_final) {
        return Err(NpeError::Argument(format!("t0 = {t0} outside (0, T)")));
    }
    if sigma != 1 && sigma != -1 {
        return Err(NpeError::Argument("sigma must be +1 or -1".into()));
    }
    let dir = xi.map(|v| v * sigma as f64);
    let oriented = trace_geodesic(spec, x0, &dir, opts)?;
    Ok(NullGeodesic { oriented, t0, sigma, xi: *xi })
}

impl NullGeodesic {
    pub fn point_at(&self, t: f64) -> Result<Point> {
        self.oriented.point(t - self.t0)
    }

    /// `|tau^2 - c1 |xi(s)|^2|` along the curve with `xi(s) = sqrt(c1(x0)) p(s)`.
    pub fn cotangent_defect(&self) -> f64 {
        let g = &self.oriented;
        let c0 = g.c1.value(g.dim, &g.x0);
        g.samples
            .iter()
            .map(|y| (g.c1.value(g.dim, &y.x) * c0 * dot(&y.p, &y.p, g.dim) - c0).abs())
            .fold(0.0, f64::max)
    }

    /// Cotangent `(sigma sqrt(c1(x0)), xi)` at the anchor.
    pub fn cotangent(&self) -> (f64, Point) {
        let g = &self.oriented;
        (self.sigma as f64 * g.c1.value(g.dim, &g.x0).sqrt(), self.xi)
    }
}

/// Fermi coordinates `z = (tau, r, z'')` along a null geodesic.
#[derive(Clone, Debug)]
pub struct FermiChart {
    pub ng: NullGeodesic,
    pub dim: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tube_radius: f64,
}

/// Chart point in space-time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpaceTime {
    pub t: f64,
    pub x: Point,
}

pub fn fermi_chart(ng: &NullGeodesic, tube_radius: f64) -> Result<FermiChart> {
    let g = &ng.oriented;
    if g.samples.len() < 2 {
        return Err(NpeError::Argument("geodesic has no samples".into()));
    }
    let half = 0.5 * g.margin;
    Ok(FermiChart {
        ng: ng.clone(),
        dim: g.dim,
        tau_min: SQRT_2 * (g.s_minus - half).max(g.s_start),
        tau_max: SQRT_2 * (g.s_plus + half).min(g.s_end()),
        tube_radius,
    })
}

impl FermiChart {
    fn geo(&self) -> &Geodesic {
        &self.ng.oriented
    }

    /// `(s, y) -> gamma(s) + v - Gamma(v, v)/2` with `v = y^k e_k(s)`.
    pub fn spatial_map(&self, s: f64, y: &[f64]) -> Result<Point> {
        let g = self.geo();
        let d = self.dim;
        let st = g.state(s)?;
        let mut v = [0.0; 3];
        for k in 0..d - 1 {
            for i in 0..d {
                v[i] += y[k] * st.frame[k][i];
            }
        }
        let m = Conformal::at(&g.c1, d, &st.x);
        let gam = m.christoffel(&v, &v, d);
        let mut x = [0.0; 3];
        for i in 0..d {
            x[i] = st.x[i] + v[i] - 0.5 * gam[i];
        }
        Ok(x)
    }

    pub fn in_range(&self, z: &[f64]) -> bool {
        let zp: f64 = z[1..=self.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        z[0] >= self.tau_min && z[0] <= self.tau_max && zp <= self.tube_radius
    }

    /// Space-time point of Fermi coordinates `z = (tau, r, z'')`.
    pub fn from_fermi(&self, z: &[f64]) -> Result<SpaceTime> {
        if !self.in_range(z) {
            return Err(NpeError::OutOfChart(format!("z = {z:?}")));
        }
        self.from_fermi_unbounded(z)
    }

    /// `from_fermi` without the tau and tube range checks.
    pub fn from_fermi_unbounded(&self, z: &[f64]) -> Result<SpaceTime> {
        let s = (z[0] + z[1]) / SQRT_2;
        let t = self.ng.t0 + (z[0] - z[1]) / SQRT_2;
        let x = self.spatial_map(s, &z[2..=self.dim])?;
        Ok(SpaceTime { t, x })
    }

    /// Inverse of `from_fermi` by Newton iteration on `(s, y)`.
    pub fn to_fermi(&self, t: f64, x: &Point) -> Result<Vec<f64>> {
        let z = self.to_fermi_unbounded(t, x)?;
        if !self.in_range(&z) {
            return Err(NpeError::OutOfChart(format!("z = {z:?}")));
        }
        Ok(z)
    }

    /// `to_fermi` without the tau and tube range checks.
    pub fn to_fermi_unbounded(&self, t: f64, x: &Point) -> Result<Vec<f64>> {
        let d = self.dim;
        let g = self.geo();
        // coarse-to-fine nearest sample as the initial arc length
        let dist = |i: usize| -> f64 {
            let p = &g.samples[i].x;
            (0..d).map(|a| (p[a] - x[a]).powi(2)).sum()
        };
        let n = g.samples.len();
        let stride = 16;
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for i in (0..n).step_by(stride) {
            let v = dist(i);
            if v < bd {
                bd = v;
                best = i;
            }
        }
        let lo = best.saturating_sub(stride);
        let hi = (best + stride).min(n - 1);
        for i in lo..=hi {
            let v = dist(i);
            if v < bd {
                bd = v;
                best = i;
            }
        }
        let mut s = g.s_start + best as f64 * g.step;
        let st = g.samples[best];
        let c = g.c1.value(d, &st.x);
        let mut y = [0.0; 2];
        for k in 0..d - 1 {
            y[k] = (0..d).map(|a| (x[a] - st.x[a]) * st.frame[k][a]).sum::<f64>() / c;
        }
        let mut converged = false;
        for _ in 0..50 {
            let f0 = self.spatial_map(s, &y[..d - 1])?;
            let res: Vec<f64> = (0..d).map(|a| f0[a] - x[a]).collect();
            let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn < 1e-14 {
                converged = true;
                break;
            }
            // Jacobian columns: d/ds by central difference, d/dy analytic
            let hs = 1e-6;
            let fp = self.spatial_map((s + hs).min(g.s_end()), &y[..d - 1])?;
            let fm = self.spatial_map((s - hs).max(g.s_start), &y[..d - 1])?;
            let span = (s + hs).min(g.s_end()) - (s - hs).max(g.s_start);
            let stt = g.state(s)?;
            let m = Conformal::at(&g.c1, d, &stt.x);
            let mut v = [0.0; 3];
            for k in 0..d - 1 {
                for i in 0..d {
                    v[i] += y[k] * stt.frame[k][i];
                }
            }
            let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
            for a in 0..d {
                jac[(a, 0)] = (fp[a] - fm[a]) / span;
            }
            for k in 0..d - 1 {
                let gv = m.christoffel(&v, &stt.frame[k], d);
                for a in 0..d {
                    jac[(a, k + 1)] = stt.frame[k][a] - gv[a];
                }
            }
            let rhs = nalgebra::DVector::from_vec(res.iter().map(|v| -v).collect());
            let delta = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| NpeError::OutOfChart(format!("singular chart Jacobian at {x:?}")))?;
            s += delta[0];
            for k in 0..d - 1 {
                y[k] += delta[k + 1];
            }
            if s < g.s_start || s > g.s_end() {
                return Err(NpeError::OutOfChart(format!("point {x:?} projects outside the traced path")));
            }
            if delta.norm() < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(NpeError::OutOfChart(format!("Newton inversion failed at {x:?}")));
        }
        let dt = t - self.ng.t0;
        let mut z = vec![(dt + s) / SQRT_2, (s - dt) / SQRT_2];
        z.extend_from_slice(&y[..d - 1]);
        Ok(z)
    }

    /// Axis point at `tau`.
    pub fn axis_point(&self, tau: f64) -> Result<SpaceTime> {
        let mut z = vec![0.0; self.dim + 1];
        z[0] = tau;
        self.from_fermi(&z)
    }

    /// Exact exponential map `exp_{gamma(s)}(y^k e_k)` by geodesic shooting, for accuracy checks.
    pub fn exact_spatial_map(&self, s: f64, y: &[f64], steps: usize) -> Result<Point> {
        let g = self.geo();
        let d = self.dim;
        let st = g.state(s)?;
        let mut v = [0.0; 3];
        for k in 0..d - 1 {
            for i in 0..d {
                v[i] += y[k] * st.frame[k][i];
            }
        }
        let c = g.c1.value(d, &st.x);
        let len = (dot(&v, &v, d) / c).sqrt();
        if len == 0.0 {
            return Ok(st.x);
        }
        let mut state = initial_state(&g.c1, d, &st.x, &v.map(|q| q / c))?;
        let h = len / steps as f64;
        for _ in 0..steps {
            state = rk4_step(&g.c1, d, &state, h);
        }
        Ok(state.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Domain;

    fn flat(dim: usize, c: f64) -> MediumSpec {
        let d = Domain::boxed(dim, &[-1.0; 3], &[1.0; 3], 11).unwrap();
        MediumSpec::new(d, Field::constant(c), Field::constant(1.0), 2, 4.0).unwrap()
    }

    #[test]
    fn flat_geodesic_is_a_straight_line() {
        let spec = flat(3, 1.0);
        let g = trace_geodesic(&spec, &[0.0; 3], &[1.0, 0.0, 0.0], &GeodesicOptions::default()).unwrap();
        for s in [-0.7, 0.0, 0.33, 1.2] {
            let p = g.point(s).unwrap();
            assert!((p[0] - s).abs() < 1e-13 && p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
        }
        assert!((g.s_plus - 1.0).abs() < 1e-12 && (g.s_minus + 1.0).abs() < 1e-12);
        assert!(g.frame_defect() < 1e-14);
    }

    #[test]
    fn constant_speed_squared_four_halves_the_length() {
        let spec = flat(3, 4.0);
        let g = trace_geodesic(&spec, &[0.0; 3], &[1.0, 0.0, 0.0], &GeodesicOptions::default()).unwrap();
        assert!((g.point(0.25).unwrap()[0] - 0.5).abs() < 1e-13);
        assert!((g.s_plus - 0.5).abs() < 1e-12);
        let v = g.velocity(0.1).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn null_geodesic_orientation() {
        let spec = flat(2, 1.0);
        let o = GeodesicOptions::default();
        let x0 = [0.1, 0.2, 0.0];
        let a = build_null_geodesic(&spec, &x0, &[1.0, 0.0, 0.0], 2.0, 1, &o).unwrap();
        let b = build_null_geodesic(&spec, &x0, &[1.0, 0.0, 0.0], 2.0, -1, &o).unwrap();
        let pa = a.point_at(2.5).unwrap();
        let pb = b.point_at(2.5).unwrap();
        assert!((pa[0] - 0.6).abs() < 1e-13 && (pa[1] - 0.2).abs() < 1e-14);
        assert!((pb[0] + 0.4).abs() < 1e-13 && (pb[1] - 0.2).abs() < 1e-14);
        assert!(build_null_geodesic(&spec, &x0, &[2.0, 0.0, 0.0], 2.0, 1, &o).is_err());
    }

    #[test]
    fn flat_fermi_chart_is_affine() {
        let spec = flat(3, 1.0);
        let ng = build_null_geodesic(&spec, &[0.0; 3], &[0.0, 1.0, 0.0], 2.0, 1, &GeodesicOptions::default()).unwrap();
        let chart = fermi_chart(&ng, 0.5).unwrap();
        let p = chart.from_fermi(&[0.0; 4]).unwrap();
        assert_eq!(p.t, 2.0);
        assert!(p.x.iter().all(|v| v.abs() < 1e-15));
        let z = [0.3, -0.1, 0.2, -0.15];
        let q = chart.from_fermi(&z).unwrap();
        let s = (z[0] + z[1]) / SQRT_2;
        assert!((q.t - (2.0 + (z[0] - z[1]) / SQRT_2)).abs() < 1e-15);
        let st = ng.oriented.state(0.0).unwrap();
        for a in 0..3 {
            let expected = s * [0.0, 1.0, 0.0][a] + z[2] * st.frame[0][a] + z[3] * st.frame[1][a];
            assert!((q.x[a] - expected).abs() < 1e-13);
        }
        let back = chart.to_fermi(q.t, &q.x).unwrap();
        for k in 0..4 {
            assert!((back[k] - z[k]).abs() < 1e-12);
        }
        assert!(chart.from_fermi(&[0.0, 0.0, 0.6, 0.0]).is_err());
    }
}

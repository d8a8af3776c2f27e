//! Leapfrog solvers for the NPE and its linear auxiliary problems, DtN traces,
//! compatibility checks, energy norms and the 1D conservation-law oracle.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NpeError, Result};
use crate::medium::{Domain, MediumSpec, Point};

pub type SpaceFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, &Point) -> f64 + Send + Sync>;

const PAR_THRESHOLD: usize = 1 << 12;

/// Space-time sampling of a box domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub dim: usize,
    pub n: [usize; 3],
    pub lo: Point,
    pub h: [f64; 3],
    pub dt: f64,
    pub nt: usize,
    pub cfl: f64,
}

impl Grid {
    /// Grid with `nodes` per axis and an explicit time step adjusted to end exactly at `t_final`.
    pub fn with_dt(domain: &Domain, nodes: usize, t_final: f64, dt: f64) -> Result<Self> {
        if nodes < 3 {
            return Err(NpeError::Argument("at least three nodes per axis required".into()));
        }
        if !(dt > 0.0) || !(t_final > 0.0) {
            return Err(NpeError::Argument("time step and final time must be positive".into()));
        }
        let mut n = [1usize; 3];
        let mut h = [1.0; 3];
        for a in 0..domain.dim {
            n[a] = nodes;
            h[a] = (domain.hi[a] - domain.lo[a]) / (nodes - 1) as f64;
        }
        let nt = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
        let dt = t_final / nt as f64;
        let hmin = (0..domain.dim).map(|a| h[a]).fold(f64::INFINITY, f64::min);
        Ok(Self { dim: domain.dim, n, lo: domain.lo, h, dt, nt, cfl: dt / hmin })
    }

    /// Time step from `dt <= cfl h / sqrt(max(c1 + n c2 amp^(n-1)))`.
    pub fn from_cfl(spec: &MediumSpec, nodes: usize, cfl: f64, amplitude: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(NpeError::Argument(format!("cfl {cfl} outside (0, 1]")));
        }
        let probe = Grid::with_dt(&spec.domain, nodes, spec.t_final, 1.0)?;
        let speed2 = probe.max_speed2(spec, amplitude);
        let hmin = (0..spec.dim()).map(|a| probe.h[a]).fold(f64::INFINITY, f64::min);
        let mut g = Grid::with_dt(&spec.domain, nodes, spec.t_final, cfl * hmin / speed2.sqrt())?;
        g.cfl = g.dt * speed2.sqrt() / hmin;
        Ok(g)
    }

    fn max_speed2(&self, spec: &MediumSpec, amplitude: f64) -> f64 {
        let n = spec.n as i32;
        let mut m: f64 = 0.0;
        for idx in 0..self.npts() {
            let x = self.coords(idx);
            let s = spec.c1_at(&x) + n as f64 * spec.c2_at(&x).abs() * amplitude.abs().powi(n - 1);
            m = m.max(s);
        }
        m
    }

    /// Rejects grids violating the CFL bound for the given amplitude surrogate.
    pub fn check_cfl(&self, spec: &MediumSpec, amplitude: f64, max_cfl: f64) -> Result<()> {
        let hmin = (0..self.dim).map(|a| self.h[a]).fold(f64::INFINITY, f64::min);
        let c = self.dt * self.max_speed2(spec, amplitude).sqrt() / hmin;
        if c > max_cfl * (1.0 + 1e-12) {
            return Err(NpeError::Precondition(format!("CFL number {c:.4} exceeds {max_cfl}")));
        }
        Ok(())
    }

    pub fn npts(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.n[1] * self.n[2], self.n[2], 1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        [idx / (self.n[1] * self.n[2]), (idx / self.n[2]) % self.n[1], idx % self.n[2]]
    }

    pub fn coords(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + m[a] as f64 * self.h[a];
        }
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).any(|a| m[a] == 0 || m[a] == self.n[a] - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    /// Boundary node indices in increasing order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.npts()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Trapezoid weights of the spatial volume integral.
    pub fn volume_weights(&self) -> Vec<f64> {
        (0..self.npts())
            .map(|idx| {
                let m = self.multi_index(idx);
                let mut w = 1.0;
                for a in 0..self.dim {
                    w *= self.h[a];
                    if m[a] == 0 || m[a] == self.n[a] - 1 {
                        w *= 0.5;
                    }
                }
                w
            })
            .collect()
    }

    /// Trapezoid weight of time level `k`.
    pub fn time_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.nt {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// One entry per (boundary node, face) pair with the inward stencil.
    pub fn trace_samples(&self) -> Vec<TraceSample> {
        let st = self.strides();
        let mut out = Vec::new();
        for a in 0..self.dim {
            for (side, sign) in [(0usize, -1.0), (self.n[a] - 1, 1.0)] {
                for idx in 0..self.npts() {
                    let m = self.multi_index(idx);
                    if m[a] != side {
                        continue;
                    }
                    let mut w = 1.0;
                    for b in 0..self.dim {
                        if b == a {
                            continue;
                        }
                        w *= self.h[b];
                        if m[b] == 0 || m[b] == self.n[b] - 1 {
                            w *= 0.5;
                        }
                    }
                    let (i1, i2) = if sign > 0.0 {
                        (idx - st[a], idx - 2 * st[a])
                    } else {
                        (idx + st[a], idx + 2 * st[a])
                    };
                    let mut normal = [0.0; 3];
                    normal[a] = sign;
                    out.push(TraceSample { node: idx, inner1: i1, inner2: i2, axis: a, normal, weight: w });
                }
            }
        }
        out
    }
}

/// Boundary node with its outward normal and one-sided stencil.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceSample {
    pub node: usize,
    pub inner1: usize,
    pub inner2: usize,
    pub axis: usize,
    pub normal: Point,
    pub weight: f64,
}

/// Space-time samples `u(t_k, x_j)`, frames stored consecutively.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl WaveField {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), data: vec![0.0; (grid.nt + 1) * grid.npts()] }
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.grid.npts();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.npts();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Field with frame `k` moved to `nt - k`.
    pub fn time_reversed(&self) -> Self {
        let mut out = Self::zeros(&self.grid);
        for k in 0..=self.grid.nt {
            out.frame_mut(self.grid.nt - k).copy_from_slice(self.frame(k));
        }
        out
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let n = self.grid.npts();
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i % n, v)).collect();
        Self { grid: self.grid.clone(), data }
    }

    /// `a self + b other` on the same grid.
    pub fn combine(&self, a: f64, other: &WaveField, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(NpeError::Mismatch("fields live on different grids".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { grid: self.grid.clone(), data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Space-time L2 norm with trapezoid weights.
    pub fn l2_spacetime(&self) -> f64 {
        let w = self.grid.volume_weights();
        let mut s = 0.0;
        for k in 0..=self.grid.nt {
            let f = self.frame(k);
            s += self.grid.time_weight(k) * f.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
        }
        s.sqrt()
    }

    /// Spatial L2 norm of frame `k`.
    pub fn l2_frame(&self, k: usize) -> f64 {
        l2(&self.grid, self.frame(k))
    }
}

pub fn l2(grid: &Grid, f: &[f64]) -> f64 {
    grid.volume_weights().iter().zip(f).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

pub fn l1(grid: &Grid, f: &[f64]) -> f64 {
    grid.volume_weights().iter().zip(f).map(|(w, v)| w * v.abs()).sum()
}

/// Dirichlet values on the lateral boundary.
#[derive(Clone)]
pub enum BoundaryInput {
    Zero,
    Function(SpaceTimeFn),
    /// Values per time level for `Grid::boundary_nodes`, level-major.
    Sampled(Arc<Vec<f64>>),
}

/// Lateral Dirichlet data and initial data.
#[derive(Clone)]
pub struct BoundaryData {
    pub h: BoundaryInput,
    pub phi: Option<SpaceFn>,
    pub psi: Option<SpaceFn>,
}

impl BoundaryData {
    pub fn zero() -> Self {
        Self { h: BoundaryInput::Zero, phi: None, psi: None }
    }

    pub fn lateral(h: SpaceTimeFn) -> Self {
        Self { h: BoundaryInput::Function(h), phi: None, psi: None }
    }

    pub fn initial(phi: SpaceFn, psi: Option<SpaceFn>) -> Self {
        Self { h: BoundaryInput::Zero, phi: Some(phi), psi }
    }

    /// Samples `h` at the grid boundary nodes for every time level.
    pub fn sample_lateral(&self, grid: &Grid) -> Result<Vec<f64>> {
        let nodes = grid.boundary_nodes();
        match &self.h {
            BoundaryInput::Zero => Ok(vec![0.0; nodes.len() * (grid.nt + 1)]),
            BoundaryInput::Sampled(v) => {
                if v.len() != nodes.len() * (grid.nt + 1) {
                    return Err(NpeError::Mismatch("sampled boundary data does not match grid".into()));
                }
                Ok(v.as_ref().clone())
            }
            BoundaryInput::Function(f) => {
                let xs: Vec<Point> = nodes.iter().map(|&i| grid.coords(i)).collect();
                let mut out = vec![0.0; nodes.len() * (grid.nt + 1)];
                out.par_chunks_mut(nodes.len()).enumerate().for_each(|(k, row)| {
                    let t = grid.time(k);
                    for (r, x) in row.iter_mut().zip(&xs) {
                        *r = f(t, x);
                    }
                });
                Ok(out)
            }
        }
    }
}

/// Right-hand side of the semi-discrete problem.
enum Operator<'a> {
    /// `Lap(c1 u + c2 u^n)`.
    Flux { c1: &'a [f64], c2: &'a [f64], n: i32 },
    /// `c1 Lap(u)`.
    Linear { c1: &'a [f64] },
}

/// Second-order Laplacian at interior nodes; boundary entries are set to zero.
pub fn laplacian(grid: &Grid, w: &[f64], out: &mut [f64]) {
    let st = grid.strides();
    let inv: Vec<f64> = (0..grid.dim).map(|a| 1.0 / (grid.h[a] * grid.h[a])).collect();
    let kernel = |idx: usize| -> f64 {
        let m = grid.multi_index(idx);
        if (0..grid.dim).any(|a| m[a] == 0 || m[a] == grid.n[a] - 1) {
            return 0.0;
        }
        let c = w[idx];
        let mut s = 0.0;
        for a in 0..grid.dim {
            s += (w[idx + st[a]] - 2.0 * c + w[idx - st[a]]) * inv[a];
        }
        s
    };
    if grid.npts() >= PAR_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = kernel(i));
    } else {
        out.iter_mut().enumerate().for_each(|(i, o)| *o = kernel(i));
    }
}

fn apply(grid: &Grid, op: &Operator, u: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    match op {
        Operator::Flux { c1, c2, n } => {
            for i in 0..u.len() {
                scratch[i] = c1[i] * u[i] + c2[i] * u[i].powi(*n);
            }
            laplacian(grid, scratch, out);
        }
        Operator::Linear { c1 } => {
            laplacian(grid, u, out);
            for i in 0..u.len() {
                out[i] *= c1[i];
            }
        }
    }
}

/// Source term callback: writes `f(t_k)` into the buffer.
pub type Source<'a> = &'a (dyn Fn(usize, &mut [f64]) + Sync);

/// Per-step observer; receives every time level in order.
pub type Observer<'a> = &'a mut dyn FnMut(usize, &[f64]) -> Result<()>;

fn coefficient_arrays(spec: &MediumSpec, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let c1 = (0..grid.npts()).map(|i| spec.c1_at(&grid.coords(i))).collect();
    let c2 = (0..grid.npts()).map(|i| spec.c2_at(&grid.coords(i))).collect();
    (c1, c2)
}

fn check_grid(spec: &MediumSpec, grid: &Grid) -> Result<()> {
    if spec.dim() != grid.dim {
        return Err(NpeError::Mismatch("grid and medium dimensions differ".into()));
    }
    if (grid.t_final() - spec.t_final).abs() > 1e-9 * spec.t_final {
        return Err(NpeError::Mismatch(format!(
            "grid final time {} differs from medium final time {}",
            grid.t_final(),
            spec.t_final
        )));
    }
    Ok(())
}

fn march(
    grid: &Grid,
    bd: &BoundaryData,
    op: Operator,
    source: Option<Source>,
    observer: Observer,
) -> Result<()> {
    let np = grid.npts();
    let bnodes = grid.boundary_nodes();
    let hvals = bd.sample_lateral(grid)?;
    let nb = bnodes.len();
    let mut prev = vec![0.0; np];
    let mut cur = vec![0.0; np];
    let mut next = vec![0.0; np];
    let mut acc = vec![0.0; np];
    let mut scratch = vec![0.0; np];
    let mut f = vec![0.0; np];
    let mut psi = vec![0.0; np];
    for i in 0..np {
        let x = grid.coords(i);
        if let Some(phi) = &bd.phi {
            cur[i] = phi(&x);
        }
        if let Some(p) = &bd.psi {
            psi[i] = p(&x);
        }
    }
    let set_boundary = |u: &mut [f64], k: usize| {
        for (j, &b) in bnodes.iter().enumerate() {
            u[b] = hvals[k * nb + j];
        }
    };
    set_boundary(&mut cur, 0);
    let mut scale = cur.iter().chain(hvals.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    scale = scale.max(psi.iter().fold(0.0f64, |m, v| m.max(v.abs())) * grid.t_final());
    observer(0, &cur)?;
    let dt2 = grid.dt * grid.dt;
    for k in 0..grid.nt {
        apply(grid, &op, &cur, &mut scratch, &mut acc);
        if let Some(src) = source {
            f.iter_mut().for_each(|v| *v = 0.0);
            src(k, &mut f);
            let fm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            scale = scale.max(fm * grid.t_final() * grid.t_final());
            for i in 0..np {
                acc[i] += f[i];
            }
        }
        if k == 0 {
            for i in 0..np {
                next[i] = cur[i] + grid.dt * psi[i] + 0.5 * dt2 * acc[i];
            }
        } else {
            for i in 0..np {
                next[i] = 2.0 * cur[i] - prev[i] + dt2 * acc[i];
            }
        }
        set_boundary(&mut next, k + 1);
        let mut max = 0.0f64;
        for v in &next {
            if !v.is_finite() {
                return Err(NpeError::NonFinite(format!("solution at step {}", k + 1)));
            }
            max = max.max(v.abs());
        }
        if scale > 0.0 && max > 1e6 * scale {
            return Err(NpeError::Instability(format!(
                "|u| = {max:.3e} exceeds 1e6 x input scale {scale:.3e} at step {}; reduce CFL ({:.3}) or amplitude",
                k + 1,
                grid.cfl
            )));
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        observer(k + 1, &cur)?;
    }
    Ok(())
}

fn collect(grid: &Grid, run: impl FnOnce(Observer) -> Result<()>) -> Result<WaveField> {
    let mut field = WaveField::zeros(grid);
    let np = grid.npts();
    let mut obs = |k: usize, u: &[f64]| -> Result<()> {
        field.data[k * np..(k + 1) * np].copy_from_slice(u);
        Ok(())
    };
    run(&mut obs)?;
    Ok(field)
}

/// Streams the NPE solution level by level.
pub fn solve_npe_observed(spec: &MediumSpec, bd: &BoundaryData, grid: &Grid, observer: Observer) -> Result<()> {
    check_grid(spec, grid)?;
    let (c1, c2) = coefficient_arrays(spec, grid);
    if c1.iter().any(|&v| !(v > 0.0)) {
        return Err(NpeError::Precondition("c1 must be positive on the grid".into()));
    }
    march(grid, bd, Operator::Flux { c1: &c1, c2: &c2, n: spec.n as i32 }, None, observer)
}

/// Leapfrog solve of `u_tt = Lap(c1 u + c2 u^n)` with strong Dirichlet data.
pub fn solve_npe(spec: &MediumSpec, bd: &BoundaryData, grid: &Grid) -> Result<WaveField> {
    collect(grid, |obs| solve_npe_observed(spec, bd, grid, obs))
}

/// Streams the solution of `v_tt - c1 Lap v = f`.
pub fn solve_linear_wave_observed(
    spec: &MediumSpec,
    source: Option<Source>,
    bd: &BoundaryData,
    grid: &Grid,
    observer: Observer,
) -> Result<()> {
    check_grid(spec, grid)?;
    let (c1, _) = coefficient_arrays(spec, grid);
    if c1.iter().any(|&v| !(v > 0.0)) {
        return Err(NpeError::Precondition("c1 must be positive on the grid".into()));
    }
    march(grid, bd, Operator::Linear { c1: &c1 }, source, observer)
}

/// Leapfrog solve of `v_tt - c1 Lap v = f`.
pub fn solve_linear_wave(spec: &MediumSpec, source: Option<Source>, bd: &BoundaryData, grid: &Grid) -> Result<WaveField> {
    collect(grid, |obs| solve_linear_wave_observed(spec, source, bd, grid, obs))
}

/// Backward problem with data at `t = T`: `bd_reversed` holds the data as a function of `T - t`.
/// Returns the field in forward time.
pub fn solve_linear_wave_backward(
    spec: &MediumSpec,
    source_reversed: Option<Source>,
    bd_reversed: &BoundaryData,
    grid: &Grid,
) -> Result<WaveField> {
    Ok(solve_linear_wave(spec, source_reversed, bd_reversed, grid)?.time_reversed())
}

/// Neumann-side measurement on the lateral boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct DtNTrace {
    pub samples: Vec<TraceSample>,
    pub times: Vec<f64>,
    /// Level-major values, one row per time level.
    pub values: Vec<f64>,
    /// Mixed-derivative multi-index when produced by the linearization harness.
    pub epsilon_index: Vec<usize>,
}

impl DtNTrace {
    pub fn row(&self, k: usize) -> &[f64] {
        let m = self.samples.len();
        &self.values[k * m..(k + 1) * m]
    }

    /// `sum_k sum_j w_k w_j a_kj b_kj` with trapezoid weights in time and along faces.
    pub fn pair(&self, other: &DtNTrace, dt: f64) -> Result<f64> {
        if self.values.len() != other.values.len() || self.samples.len() != other.samples.len() {
            return Err(NpeError::Mismatch("traces have different shapes".into()));
        }
        let nt = self.times.len() - 1;
        let mut s = 0.0;
        for k in 0..=nt {
            let wt = if k == 0 || k == nt { 0.5 * dt } else { dt };
            let (a, b) = (self.row(k), other.row(k));
            s += wt * self.samples.iter().enumerate().map(|(j, smp)| smp.weight * a[j] * b[j]).sum::<f64>();
        }
        Ok(s)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a self + b other`.
    pub fn combine(&self, a: f64, other: &DtNTrace, b: f64) -> Result<DtNTrace> {
        if self.values.len() != other.values.len() {
            return Err(NpeError::Mismatch("traces have different shapes".into()));
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }
}

/// Accumulates `c1 nu . grad(f + c2 c1^{-n} f^n)` level by level.
pub struct TraceRecorder {
    samples: Vec<TraceSample>,
    c1: Vec<f64>,
    q_coeff: Vec<f64>,
    n: i32,
    pre_scale: Option<Vec<f64>>,
    inv_h: [f64; 3],
    times: Vec<f64>,
    values: Vec<f64>,
    scratch: Vec<f64>,
}

impl TraceRecorder {
    /// `scale_by_c1` records the trace of `c1 f` instead of `f`.
    pub fn new(spec: &MediumSpec, grid: &Grid, scale_by_c1: bool) -> Result<Self> {
        for a in 0..grid.dim {
            if grid.n[a] < 3 {
                return Err(NpeError::Argument("degenerate boundary stencil: fewer than 3 nodes".into()));
            }
        }
        let (c1, c2) = coefficient_arrays(spec, grid);
        let n = spec.n as i32;
        let q_coeff = c1.iter().zip(&c2).map(|(a, b)| b / a.powi(n)).collect();
        let mut inv_h = [0.0; 3];
        for a in 0..grid.dim {
            inv_h[a] = 1.0 / grid.h[a];
        }
        Ok(Self {
            samples: grid.trace_samples(),
            pre_scale: scale_by_c1.then(|| c1.clone()),
            c1,
            q_coeff,
            n,
            inv_h,
            times: Vec::with_capacity(grid.nt + 1),
            values: Vec::new(),
            scratch: vec![0.0; grid.npts()],
        })
    }

    pub fn record(&mut self, t: f64, f: &[f64]) {
        let q = &mut self.scratch;
        for i in 0..f.len() {
            let v = match &self.pre_scale {
                Some(c) => c[i] * f[i],
                None => f[i],
            };
            q[i] = v + self.q_coeff[i] * v.powi(self.n);
        }
        for s in &self.samples {
            let d = (3.0 * q[s.node] - 4.0 * q[s.inner1] + q[s.inner2]) * 0.5 * self.inv_h[s.axis];
            self.values.push(self.c1[s.node] * d);
        }
        self.times.push(t);
    }

    pub fn finish(self) -> DtNTrace {
        DtNTrace { samples: self.samples, times: self.times, values: self.values, epsilon_index: Vec::new() }
    }
}

/// Trace `nu . [c1 grad f + c1 grad(c2 c1^{-n} f^n)]` of every stored level.
pub fn dtn_trace(field: &WaveField, spec: &MediumSpec) -> Result<DtNTrace> {
    let mut rec = TraceRecorder::new(spec, &field.grid, false)?;
    for k in 0..=field.grid.nt {
        rec.record(field.grid.time(k), field.frame(k));
    }
    Ok(rec.finish())
}

/// Sup-norm residual per compatibility order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub residuals: Vec<f64>,
    pub tol: f64,
    pub failing_orders: Vec<usize>,
}

impl CompatibilityReport {
    pub fn passed(&self) -> bool {
        self.failing_orders.is_empty()
    }
}

fn laplacian_fn(f: &dyn Fn(&Point) -> f64, x: &Point, dim: usize) -> f64 {
    let h = 1e-3;
    let c = f(x);
    (0..dim)
        .map(|a| {
            let mut p = *x;
            let mut m = *x;
            p[a] += h;
            m[a] -= h;
            (f(&p) - 2.0 * c + f(&m)) / (h * h)
        })
        .sum()
}

/// Corner compatibility of `(h, phi, psi)` up to order `m <= 3` on the domain boundary.
pub fn check_compatibility(bd: &BoundaryData, spec: &MediumSpec, m: usize, tol: f64) -> Result<CompatibilityReport> {
    if m > 3 {
        return Err(NpeError::Unsupported(format!("compatibility order {m} > 3")));
    }
    let h: SpaceTimeFn = match &bd.h {
        BoundaryInput::Zero => Arc::new(|_, _| 0.0),
        BoundaryInput::Function(f) => f.clone(),
        BoundaryInput::Sampled(_) => {
            return Err(NpeError::Unsupported("compatibility of sampled boundary data".into()))
        }
    };
    let zero: SpaceFn = Arc::new(|_| 0.0);
    let phi = bd.phi.clone().unwrap_or_else(|| zero.clone());
    let psi = bd.psi.clone().unwrap_or(zero);
    let dim = spec.dim();
    let n = spec.n as i32;
    let dt = 1e-2;
    let mut residuals = vec![0.0f64; m + 1];
    for b in spec.domain.boundary_samples() {
        let x = b.point;
        let hs: Vec<f64> = (-2..=2).map(|j| h(j as f64 * dt, &x)).collect();
        let ht = (hs[0] - 8.0 * hs[1] + 8.0 * hs[3] - hs[4]) / (12.0 * dt);
        let htt = (-hs[0] + 16.0 * hs[1] - 30.0 * hs[2] + 16.0 * hs[3] - hs[4]) / (12.0 * dt * dt);
        let httt = (-hs[0] + 2.0 * hs[1] - 2.0 * hs[3] + hs[4]) / (2.0 * dt * dt * dt);
        let r = [
            hs[2] - phi(&x),
            ht - psi(&x),
            htt - laplacian_fn(&|y: &Point| spec.c1_at(y) * phi(y) + spec.c2_at(y) * phi(y).powi(n), &x, dim),
            httt - laplacian_fn(
                &|y: &Point| spec.c1_at(y) * psi(y) + n as f64 * spec.c2_at(y) * phi(y).powi(n - 1) * psi(y),
                &x,
                dim,
            ),
        ];
        for (o, res) in residuals.iter_mut().enumerate() {
            *res = res.max(r[o].abs());
        }
    }
    let failing_orders = residuals.iter().enumerate().filter(|(_, &r)| r > tol).map(|(o, _)| o).collect();
    Ok(CompatibilityReport { residuals, tol, failing_orders })
}

/// First derivative along `axis`, central inside and second-order one-sided at the ends.
pub fn derivative(grid: &Grid, f: &[f64], axis: usize, out: &mut [f64]) {
    let st = grid.strides()[axis];
    let n = grid.n[axis];
    let ih = 1.0 / grid.h[axis];
    for idx in 0..grid.npts() {
        let m = grid.multi_index(idx)[axis];
        out[idx] = if m == 0 {
            (-3.0 * f[idx] + 4.0 * f[idx + st] - f[idx + 2 * st]) * 0.5 * ih
        } else if m == n - 1 {
            (3.0 * f[idx] - 4.0 * f[idx - st] + f[idx - 2 * st]) * 0.5 * ih
        } else {
            (f[idx + st] - f[idx - st]) * 0.5 * ih
        };
    }
}

fn sobolev_sq(grid: &Grid, f: &[f64], order: usize) -> f64 {
    let w = grid.volume_weights();
    let sq = |g: &[f64]| g.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
    let mut total = sq(f);
    if order == 0 {
        return total;
    }
    let mut d1 = vec![vec![0.0; f.len()]; grid.dim];
    for a in 0..grid.dim {
        derivative(grid, f, a, &mut d1[a]);
        total += sq(&d1[a]);
    }
    if order >= 2 {
        let mut d2 = vec![0.0; f.len()];
        for a in 0..grid.dim {
            for b in a..grid.dim {
                derivative(grid, &d1[a], b, &mut d2);
                total += sq(&d2);
            }
        }
    }
    total
}

/// `sup_t sum_{k <= m} ||d_t^k u||_{H^{m-k}}` with difference quotients.
pub fn energy_norm(field: &WaveField, m: usize) -> Result<f64> {
    if m > 2 {
        return Err(NpeError::Unsupported(format!("energy order {m} > 2")));
    }
    let g = &field.grid;
    let nt = g.nt;
    if m > 0 && nt < 2 {
        return Err(NpeError::InsufficientSamples("time derivatives need three levels".into()));
    }
    let np = g.npts();
    let dt = g.dt;
    let time_derivative = |k: usize, order: usize| -> Vec<f64> {
        let f = |j: usize| field.frame(j);
        let mut out = vec![0.0; np];
        match order {
            1 => {
                for i in 0..np {
                    out[i] = if k == 0 {
                        (-3.0 * f(0)[i] + 4.0 * f(1)[i] - f(2)[i]) / (2.0 * dt)
                    } else if k == nt {
                        (3.0 * f(nt)[i] - 4.0 * f(nt - 1)[i] + f(nt - 2)[i]) / (2.0 * dt)
                    } else {
                        (f(k + 1)[i] - f(k - 1)[i]) / (2.0 * dt)
                    };
                }
            }
            _ => {
                let c = k.clamp(1, nt - 1);
                for i in 0..np {
                    out[i] = (f(c + 1)[i] - 2.0 * f(c)[i] + f(c - 1)[i]) / (dt * dt);
                }
            }
        }
        out
    };
    let mut sup = 0.0f64;
    for k in 0..=nt {
        let mut s = sobolev_sq(g, field.frame(k), m).sqrt();
        for order in 1..=m {
            s += sobolev_sq(g, &time_derivative(k, order), m - order).sqrt();
        }
        sup = sup.max(s);
    }
    Ok(sup)
}

/// Lax-Friedrichs solution of `rho_t + v_x = 0`, `v_t + p(rho)_x = 0` with `p = c1 rho + c2 rho^n`.
pub fn solve_conservation_1d(
    spec: &MediumSpec,
    rho0: &dyn Fn(f64) -> f64,
    v0: &dyn Fn(f64) -> f64,
    grid: &Grid,
) -> Result<(WaveField, WaveField)> {
    if spec.dim() != 1 || grid.dim != 1 {
        return Err(NpeError::Argument("conservation-law oracle is one-dimensional".into()));
    }
    check_grid(spec, grid)?;
    let np = grid.npts();
    let h = grid.h[0];
    let (c1, c2) = coefficient_arrays(spec, grid);
    let n = spec.n as i32;
    let mut rho: Vec<f64> = (0..np).map(|i| rho0(grid.coords(i)[0])).collect();
    let mut vel: Vec<f64> = (0..np).map(|i| v0(grid.coords(i)[0])).collect();
    let mut out_r = WaveField::zeros(grid);
    let mut out_v = WaveField::zeros(grid);
    out_r.frame_mut(0).copy_from_slice(&rho);
    out_v.frame_mut(0).copy_from_slice(&vel);
    let r = grid.dt / (2.0 * h);
    for k in 0..grid.nt {
        let mut smax = 0.0f64;
        for i in 0..np {
            let s = c1[i] + n as f64 * c2[i] * rho[i].powi(n - 1);
            if s <= 0.0 {
                return Err(NpeError::Instability(format!("loss of hyperbolicity at step {k}")));
            }
            smax = smax.max(s.sqrt());
        }
        if smax * grid.dt > h * (1.0 + 1e-12) {
            return Err(NpeError::Precondition(format!(
                "Lax-Friedrichs CFL violated: {:.4} > 1",
                smax * grid.dt / h
            )));
        }
        let p: Vec<f64> = (0..np).map(|i| c1[i] * rho[i] + c2[i] * rho[i].powi(n)).collect();
        let mut nr = rho.clone();
        let mut nv = vel.clone();
        for i in 1..np - 1 {
            nr[i] = 0.5 * (rho[i + 1] + rho[i - 1]) - r * (vel[i + 1] - vel[i - 1]);
            nv[i] = 0.5 * (vel[i + 1] + vel[i - 1]) - r * (p[i + 1] - p[i - 1]);
        }
        nr[0] = 0.0;
        nr[np - 1] = 0.0;
        nv[0] = nv[1];
        nv[np - 1] = nv[np - 2];
        if nr.iter().chain(&nv).any(|v| !v.is_finite()) {
            return Err(NpeError::NonFinite(format!("conservation solve at step {}", k + 1)));
        }
        rho = nr;
        vel = nv;
        out_r.frame_mut(k + 1).copy_from_slice(&rho);
        out_v.frame_mut(k + 1).copy_from_slice(&vel);
    }
    Ok((out_r, out_v))
}

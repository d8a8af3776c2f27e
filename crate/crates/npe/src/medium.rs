//! Spatial domain, coefficient fields and admissibility checks.

use serde::{Deserialize, Serialize};

use crate::error::{NpeError, Result};

/// Spatial point; components beyond the domain dimension are ignored.
pub type Point = [f64; 3];

/// Value, gradient and Hessian of a coefficient at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

/// Coefficient on a rectangular node grid, extended by constant continuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    /// Nodes per axis; unused axes have one node.
    pub shape: [usize; 3],
    pub origin: Point,
    pub spacing: Point,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(shape: [usize; 3], origin: Point, spacing: Point, values: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != values.len() || shape.iter().any(|&s| s == 0) {
            return Err(NpeError::InvalidMedium(format!(
                "grid shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if spacing.iter().zip(shape.iter()).any(|(&h, &s)| s > 1 && !(h > 0.0)) {
            return Err(NpeError::InvalidMedium("grid spacing must be positive".into()));
        }
        Ok(Self { shape, origin, spacing, values })
    }

    /// Samples a closed-form field on a grid covering `lo..=hi`.
    pub fn from_field(field: &Field, dim: usize, lo: Point, hi: Point, nodes: usize) -> Result<Self> {
        let mut shape = [1usize; 3];
        let mut spacing = [1.0; 3];
        for a in 0..dim {
            shape[a] = nodes;
            spacing[a] = (hi[a] - lo[a]) / (nodes - 1) as f64;
        }
        let mut values = Vec::with_capacity(shape.iter().product());
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let x = [
                        lo[0] + i as f64 * spacing[0],
                        lo[1] + j as f64 * spacing[1],
                        lo[2] + k as f64 * spacing[2],
                    ];
                    values.push(field.value(dim, &x));
                }
            }
        }
        Self::new(shape, lo, spacing, values)
    }

    fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Multilinear interpolation with clamping outside the grid.
    pub fn interpolate(&self, x: &Point) -> f64 {
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if self.shape[a] == 1 {
                continue;
            }
            let s = ((x[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.shape[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.shape[a] - 2);
            idx[a] = i;
            frac[a] = s - i as f64;
        }
        let mut acc = 0.0;
        for di in 0..2usize {
            for dj in 0..2usize {
                for dk in 0..2usize {
                    let d = [di, dj, dk];
                    let mut w = 1.0;
                    let mut n = [0usize; 3];
                    let mut skip = false;
                    for a in 0..3 {
                        if self.shape[a] == 1 {
                            if d[a] == 1 {
                                skip = true;
                            }
                            continue;
                        }
                        w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                        n[a] = idx[a] + d[a];
                    }
                    if !skip && w != 0.0 {
                        acc += w * self.node(n[0], n[1], n[2]);
                    }
                }
            }
        }
        acc
    }
}

/// Coefficient field: named closed-form presets or a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Field {
    Constant { value: f64 },
    /// `base + amplitude * exp(-|x - center|^2 / sigma^2)`.
    GaussianBump { base: f64, amplitude: f64, center: Point, sigma: f64 },
    /// `scale * (1 + coeff |x|^2)^power`.
    RadialPower { scale: f64, coeff: f64, power: f64 },
    /// `base + gradient.(x - center) + (x - center)^T hessian (x - center) / 2`.
    Quadratic { base: f64, gradient: Point, hessian: [[f64; 3]; 3], center: Point },
    Grid(GridField),
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Field::Constant { value }
    }

    pub fn bump(base: f64, amplitude: f64, center: Point, sigma: f64) -> Self {
        Field::GaussianBump { base, amplitude, center, sigma }
    }

    pub fn value(&self, dim: usize, x: &Point) -> f64 {
        match self {
            Field::Constant { value } => *value,
            Field::Grid(g) => g.interpolate(x),
            _ => self.sample_closed(dim, x).value,
        }
    }

    /// Value and derivatives; exact for presets, central differences for grids.
    pub fn sample(&self, dim: usize, x: &Point) -> FieldSample {
        match self {
            Field::Grid(g) => {
                let mut out = FieldSample { value: g.interpolate(x), gradient: [0.0; 3], hessian: [[0.0; 3]; 3] };
                let f0 = out.value;
                for a in 0..dim {
                    let h = g.spacing[a];
                    let xp = shifted(x, a, h);
                    let xm = shifted(x, a, -h);
                    let (fp, fm) = (g.interpolate(&xp), g.interpolate(&xm));
                    out.gradient[a] = (fp - fm) / (2.0 * h);
                    out.hessian[a][a] = (fp - 2.0 * f0 + fm) / (h * h);
                    for b in 0..a {
                        let k = g.spacing[b];
                        let fpp = g.interpolate(&shifted(&xp, b, k));
                        let fpm = g.interpolate(&shifted(&xp, b, -k));
                        let fmp = g.interpolate(&shifted(&xm, b, k));
                        let fmm = g.interpolate(&shifted(&xm, b, -k));
                        let v = (fpp - fpm - fmp + fmm) / (4.0 * h * k);
                        out.hessian[a][b] = v;
                        out.hessian[b][a] = v;
                    }
                }
                out
            }
            _ => self.sample_closed(dim, x),
        }
    }

    fn sample_closed(&self, dim: usize, x: &Point) -> FieldSample {
        let mut s = FieldSample { value: 0.0, gradient: [0.0; 3], hessian: [[0.0; 3]; 3] };
        match self {
            Field::Constant { value } => s.value = *value,
            Field::GaussianBump { base, amplitude, center, sigma } => {
                let s2 = sigma * sigma;
                let mut d = [0.0; 3];
                let mut r2 = 0.0;
                for a in 0..dim {
                    d[a] = x[a] - center[a];
                    r2 += d[a] * d[a];
                }
                let e = amplitude * (-r2 / s2).exp();
                s.value = base + e;
                for a in 0..dim {
                    s.gradient[a] = -2.0 * e * d[a] / s2;
                    for b in 0..dim {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        s.hessian[a][b] = e * (4.0 * d[a] * d[b] / (s2 * s2) - 2.0 * delta / s2);
                    }
                }
            }
            Field::RadialPower { scale, coeff, power } => {
                let r2: f64 = (0..dim).map(|a| x[a] * x[a]).sum();
                let q = 1.0 + coeff * r2;
                s.value = scale * q.powf(*power);
                let g1 = scale * power * q.powf(power - 1.0);
                let g2 = scale * power * (power - 1.0) * q.powf(power - 2.0);
                for a in 0..dim {
                    s.gradient[a] = g1 * 2.0 * coeff * x[a];
                    for b in 0..dim {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        s.hessian[a][b] =
                            g2 * 4.0 * coeff * coeff * x[a] * x[b] + g1 * 2.0 * coeff * delta;
                    }
                }
            }
            Field::Quadratic { base, gradient, hessian, center } => {
                let mut d = [0.0; 3];
                for a in 0..dim {
                    d[a] = x[a] - center[a];
                }
                let mut v = *base;
                for a in 0..dim {
                    v += gradient[a] * d[a];
                    let mut hd = 0.0;
                    for b in 0..dim {
                        hd += hessian[a][b] * d[b];
                        s.hessian[a][b] = hessian[a][b];
                    }
                    v += 0.5 * d[a] * hd;
                    s.gradient[a] = gradient[a] + hd;
                }
                s.value = v;
            }
            Field::Grid(_) => unreachable!("grid fields are sampled by differences"),
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Field::Constant { value } => *value == 0.0,
            Field::GaussianBump { base, amplitude, .. } => *base == 0.0 && *amplitude == 0.0,
            Field::RadialPower { scale, .. } => *scale == 0.0,
            Field::Grid(g) => g.values.iter().all(|&v| v == 0.0),
            Field::Quadratic { base, gradient, hessian, .. } => {
                *base == 0.0 && gradient.iter().all(|&g| g == 0.0) && hessian.iter().flatten().all(|&h| h == 0.0)
            }
        }
    }

    /// Multiplies the field by `s`.
    pub fn scaled(&self, s: f64) -> Field {
        match self.clone() {
            Field::Constant { value } => Field::Constant { value: s * value },
            Field::GaussianBump { base, amplitude, center, sigma } => {
                Field::GaussianBump { base: s * base, amplitude: s * amplitude, center, sigma }
            }
            Field::RadialPower { scale, coeff, power } => Field::RadialPower { scale: s * scale, coeff, power },
            Field::Quadratic { base, gradient, hessian, center } => Field::Quadratic {
                base: s * base,
                gradient: gradient.map(|g| s * g),
                hessian: hessian.map(|r| r.map(|h| s * h)),
                center,
            },
            Field::Grid(mut g) => {
                g.values.iter_mut().for_each(|v| *v *= s);
                Field::Grid(g)
            }
        }
    }
}

fn shifted(x: &Point, axis: usize, h: f64) -> Point {
    let mut y = *x;
    y[axis] += h;
    y
}

/// Boundary point with outward unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub point: Point,
    pub normal: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Boundary {
    Box,
    Sampled { samples: Vec<BoundarySample> },
}

/// Bounding box, boundary description and sampling resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
    pub spacing: Point,
    pub boundary: Boundary,
}

impl Domain {
    /// Box `[lo, hi]` with `nodes` samples per axis. Dimension 1 is allowed for solver runs.
    pub fn boxed(dim: usize, lo: &[f64], hi: &[f64], nodes: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) || lo.len() < dim || hi.len() < dim || nodes < 2 {
            return Err(NpeError::Argument(format!("bad box: dim {dim}, nodes {nodes}")));
        }
        let mut d = Domain { dim, lo: [0.0; 3], hi: [0.0; 3], spacing: [1.0; 3], boundary: Boundary::Box };
        for a in 0..dim {
            d.lo[a] = lo[a];
            d.hi[a] = hi[a];
            d.spacing[a] = (hi[a] - lo[a]) / (nodes - 1) as f64;
        }
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(NpeError::Argument(format!("dimension {} not supported", self.dim)));
        }
        for a in 0..self.dim {
            if !(self.spacing[a] > 0.0) || !(self.hi[a] > self.lo[a]) {
                return Err(NpeError::Argument(format!("axis {a}: empty box or non-positive spacing")));
            }
        }
        if let Boundary::Sampled { samples } = &self.boundary {
            for s in samples {
                let n: f64 = s.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-12 {
                    return Err(NpeError::Argument(format!("boundary normal at {:?} is not unit", s.point)));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.contains_with_margin(x, 0.0)
    }

    pub fn contains_with_margin(&self, x: &Point, margin: f64) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] - margin && x[a] <= self.hi[a] + margin)
    }

    /// Nodes per axis implied by the spacing.
    pub fn nodes(&self) -> [usize; 3] {
        let mut n = [1usize; 3];
        for a in 0..self.dim {
            n[a] = ((self.hi[a] - self.lo[a]) / self.spacing[a]).round() as usize + 1;
        }
        n
    }

    /// All sample nodes of the box, optionally widened by `margin`.
    pub fn grid_points(&self, margin: f64) -> Vec<Point> {
        let n = self.nodes();
        let mut pts = Vec::with_capacity(n.iter().product());
        let mut lo = self.lo;
        let mut h = [0.0; 3];
        let mut m = [1usize; 3];
        for a in 0..self.dim {
            lo[a] -= margin;
            m[a] = n[a] + 2 * (margin / self.spacing[a]).ceil() as usize;
            h[a] = (self.hi[a] - self.lo[a] + 2.0 * margin) / (m[a] - 1) as f64;
        }
        for i in 0..m[0] {
            for j in 0..m[1] {
                for k in 0..m[2] {
                    pts.push([lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1], lo[2] + k as f64 * h[2]]);
                }
            }
        }
        pts
    }

    /// Boundary samples; box faces are sampled at the grid nodes.
    pub fn boundary_samples(&self) -> Vec<BoundarySample> {
        match &self.boundary {
            Boundary::Sampled { samples } => samples.clone(),
            Boundary::Box => {
                let n = self.nodes();
                let mut out = Vec::new();
                for a in 0..self.dim {
                    for (side, sign) in [(self.lo[a], -1.0), (self.hi[a], 1.0)] {
                        let others: Vec<usize> = (0..self.dim).filter(|&b| b != a).collect();
                        let counts: Vec<usize> = others.iter().map(|&b| n[b]).collect();
                        let total: usize = counts.iter().product();
                        for idx in 0..total {
                            let mut p = [0.0; 3];
                            p[a] = side;
                            let mut rem = idx;
                            for (o, &b) in others.iter().enumerate().rev() {
                                let i = rem % counts[o];
                                rem /= counts[o];
                                p[b] = self.lo[b] + i as f64 * self.spacing[b];
                            }
                            let mut normal = [0.0; 3];
                            normal[a] = sign;
                            out.push(BoundarySample { point: p, normal });
                        }
                    }
                }
                out
            }
        }
    }

    /// Largest Euclidean norm over the box corners.
    pub fn radius(&self) -> f64 {
        let mut r2 = 0.0;
        for a in 0..self.dim {
            r2 += self.lo[a].abs().max(self.hi[a].abs()).powi(2);
        }
        r2.sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }
}

/// Coefficient fields on the extended domain plus nonlinearity degree and final time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub domain: Domain,
    pub c1: Field,
    pub c2: Field,
    pub n: u32,
    pub t_final: f64,
    /// Width of the extension region around the domain.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    C1,
    C2,
}

impl MediumSpec {
    pub fn new(domain: Domain, c1: Field, c2: Field, n: u32, t_final: f64) -> Result<Self> {
        if n < 2 {
            return Err(NpeError::InvalidMedium(format!("nonlinearity degree {n} < 2")));
        }
        if !(t_final > 0.0) {
            return Err(NpeError::InvalidMedium("final time must be positive".into()));
        }
        domain.validate()?;
        Ok(Self { domain, c1, c2, n, t_final, margin: default_margin() })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn field(&self, which: Which) -> &Field {
        match which {
            Which::C1 => &self.c1,
            Which::C2 => &self.c2,
        }
    }

    pub fn c1_at(&self, x: &Point) -> f64 {
        self.c1.value(self.dim(), x)
    }

    pub fn c2_at(&self, x: &Point) -> f64 {
        self.c2.value(self.dim(), x)
    }
}

/// Value and derivatives of `c1` or `c2` at a point of the extended domain.
pub fn sample(spec: &MediumSpec, which: Which, point: &Point) -> Result<FieldSample> {
    if !spec.domain.contains_with_margin(point, spec.margin) {
        return Err(NpeError::OutOfDomain(*point));
    }
    Ok(spec.field(which).sample(spec.dim(), point))
}

/// Summary of the coefficient conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub c1_min: f64,
    pub c1_max: f64,
    pub c2_min: f64,
    pub c2_max: f64,
    pub max_normal_derivative_c1: f64,
    pub tol: f64,
    /// Bounds `0 < c1` with finite values.
    pub c1_bounded: bool,
    /// Bounds `0 < c2` with finite values.
    pub c2_bounded: bool,
    /// `|nu . grad c1| <= tol` on the boundary.
    pub c1_neumann: bool,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.c1_bounded && self.c2_bounded && self.c1_neumann
    }
}

pub fn check_admissibility(spec: &MediumSpec, tol: f64) -> Result<AdmissibilityReport> {
    let dim = spec.dim();
    let mut r = AdmissibilityReport {
        c1_min: f64::INFINITY,
        c1_max: f64::NEG_INFINITY,
        c2_min: f64::INFINITY,
        c2_max: f64::NEG_INFINITY,
        max_normal_derivative_c1: 0.0,
        tol,
        c1_bounded: false,
        c2_bounded: false,
        c1_neumann: false,
    };
    let boundary = spec.domain.boundary_samples();
    let points = spec.domain.grid_points(0.0);
    for x in points.iter().chain(boundary.iter().map(|b| &b.point)) {
        let (a, b) = (spec.c1.value(dim, x), spec.c2.value(dim, x));
        if !a.is_finite() || !b.is_finite() {
            return Err(NpeError::InvalidMedium(format!("non-finite coefficient at {x:?}")));
        }
        r.c1_min = r.c1_min.min(a);
        r.c1_max = r.c1_max.max(a);
        r.c2_min = r.c2_min.min(b);
        r.c2_max = r.c2_max.max(b);
    }
    for b in &boundary {
        let s = spec.c1.sample(dim, &b.point);
        let d: f64 = (0..dim).map(|a| s.gradient[a] * b.normal[a]).sum();
        if !d.is_finite() {
            return Err(NpeError::InvalidMedium(format!("non-finite gradient at {:?}", b.point)));
        }
        r.max_normal_derivative_c1 = r.max_normal_derivative_c1.max(d.abs());
    }
    r.c1_bounded = r.c1_min > 0.0;
    r.c2_bounded = r.c2_min > 0.0;
    r.c1_neumann = r.max_normal_derivative_c1 <= tol;
    Ok(r)
}

/// Pointwise test of `x . grad(1/c1) + (2 - beta)/c1 >= 0` on the extended grid.
pub fn check_assumption_ii(spec: &MediumSpec, beta: f64) -> Result<bool> {
    if !(beta > 0.0 && beta <= 2.0) {
        return Err(NpeError::Argument(format!("beta = {beta} outside (0, 2]")));
    }
    let dim = spec.dim();
    let tol = 1e-12;
    for x in spec.domain.grid_points(spec.margin) {
        let s = spec.c1.sample(dim, &x);
        let inv = 1.0 / s.value;
        let dot: f64 = (0..dim).map(|a| -x[a] * s.gradient[a] * inv * inv).sum();
        if dot + (2.0 - beta) * inv < -tol * (1.0 + inv) {
            return Ok(false);
        }
    }
    Ok(true)
}

//! Discretized model domains.
//!
//! Every geometry stores its Laplacian as `Δ_h = -W⁻¹ K`, where `W` is the
//! diagonal of positive quadrature weights and `K` is a symmetric positive
//! semi-definite stiffness assembled from face couplings. The weighted inner
//! product `Σ w_i u_i v_i` therefore makes `Δ_h` self-adjoint, and the
//! discrete Dirichlet energy `-Σ w_i u_i (Δ_h u)_i` equals the face sum
//! `Σ_faces c (u_i - u_j)² + Σ_i d_i u_i²` up to rounding.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// The supported model domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    /// `(0, L)` with homogeneous Dirichlet data; unknowns at interior nodes `x_i = i h`.
    IntervalDirichlet,
    /// Periodic `[0, L)`; unknowns at `x_i = i h`.
    Circle,
    /// `(0, Lx) × (0, Ly)` with homogeneous Dirichlet data.
    RectangleDirichlet,
    /// Flat periodic torus `[0, Lx) × [0, Ly)`.
    Torus2D,
    /// Ball of radius `R` in `ℝⁿ`, radially symmetric fields, cell-centred
    /// nodes `r_i = (i + 1/2) h` and Dirichlet data on the outer face `r = R`.
    RadialBallDirichlet,
}

impl GeometryKind {
    pub fn is_periodic(self) -> bool {
        matches!(self, GeometryKind::Circle | GeometryKind::Torus2D)
    }

    pub fn is_dirichlet(self) -> bool {
        !self.is_periodic()
    }

    /// Grid dimension of the stored array (radial grids are 1D).
    pub fn grid_dim(self) -> usize {
        match self {
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::IntervalDirichlet => "interval_dirichlet",
            GeometryKind::Circle => "circle",
            GeometryKind::RectangleDirichlet => "rectangle_dirichlet",
            GeometryKind::Torus2D => "torus2d",
            GeometryKind::RadialBallDirichlet => "radial_ball_dirichlet",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "interval_dirichlet" | "interval" => GeometryKind::IntervalDirichlet,
            "circle" => GeometryKind::Circle,
            "rectangle_dirichlet" | "rectangle" => GeometryKind::RectangleDirichlet,
            "torus2d" | "torus" => GeometryKind::Torus2D,
            "radial_ball_dirichlet" | "radial_ball" | "ball" => GeometryKind::RadialBallDirichlet,
            _ => return None,
        };
        Some(kind)
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A symmetric coupling `c (u_i - u_j)` between two stored nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Face {
    i: usize,
    j: usize,
    c: f64,
}

/// Real samples over a geometry's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Field { values: vec![value; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index and value of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// Index and value of the first entry not strictly above `floor`.
    pub fn first_at_or_below(&self, floor: f64) -> Option<(usize, f64)> {
        self.values.iter().copied().enumerate().find(|&(_, v)| !(v > floor))
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Field::new(values)
    }
}

/// A discretized model domain. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Geometry {
    kind: GeometryKind,
    extents: Vec<f64>,
    dimension: usize,
    resolution: usize,
    spacing: Vec<f64>,
    /// Grid shape of the stored unknowns (`[n, 1]` for 1D kinds).
    shape: [usize; 2],
    coords: Vec<[f64; 2]>,
    weights: Vec<f64>,
    faces: Vec<Face>,
    boundary: Vec<f64>,
}

/// Area of the unit sphere `S^{n-1}` in `ℝⁿ`.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(n - 2) / (n - 2) as f64,
    }
}

/// Volume of the ball of radius `r` in `ℝⁿ`.
pub fn ball_volume(n: usize, r: f64) -> f64 {
    unit_sphere_area(n) * r.powi(n as i32) / n as f64
}

impl Geometry {
    /// Builds a geometry.
    ///
    /// `extents` holds one length for the 1D and radial kinds, and one (square)
    /// or two side lengths for the 2D kinds. `resolution` is the number of
    /// cells per axis.
    pub fn build(kind: GeometryKind, extents: &[f64], dimension: usize, resolution: usize) -> Result<Self> {
        if resolution < 3 {
            return Err(Error::InvalidResolution(resolution));
        }
        if extents.is_empty() || extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::InvalidExtent(format!("extents must be positive and finite, got {extents:?}")));
        }
        match kind {
            GeometryKind::IntervalDirichlet | GeometryKind::Circle => {
                if dimension != 1 {
                    return Err(Error::InconsistentDimension(format!(
                        "{kind} lives in dimension 1, got {dimension}"
                    )));
                }
                if extents.len() != 1 {
                    return Err(Error::InvalidExtent(format!("{kind} takes one length")));
                }
            }
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => {
                if dimension != 2 {
                    return Err(Error::InconsistentDimension(format!(
                        "{kind} lives in dimension 2, got {dimension}"
                    )));
                }
                if extents.len() > 2 {
                    return Err(Error::InvalidExtent(format!("{kind} takes one or two side lengths")));
                }
            }
            GeometryKind::RadialBallDirichlet => {
                if dimension == 0 {
                    return Err(Error::InconsistentDimension("radial ball needs n >= 1".into()));
                }
                if extents.len() != 1 {
                    return Err(Error::InvalidExtent("radial ball takes one radius".into()));
                }
            }
        }
        let g = match kind {
            GeometryKind::IntervalDirichlet => Self::build_interval(extents[0], resolution),
            GeometryKind::Circle => Self::build_circle(extents[0], resolution),
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => {
                let lx = extents[0];
                let ly = *extents.get(1).unwrap_or(&lx);
                Self::build_grid2d(kind, lx, ly, resolution)
            }
            GeometryKind::RadialBallDirichlet => Self::build_ball(dimension, extents[0], resolution),
        };
        Ok(g)
    }

    pub fn interval(length: f64, resolution: usize) -> Result<Self> {
        Self::build(GeometryKind::IntervalDirichlet, &[length], 1, resolution)
    }

    pub fn circle(length: f64, resolution: usize) -> Result<Self> {
        Self::build(GeometryKind::Circle, &[length], 1, resolution)
    }

    pub fn rectangle(lx: f64, ly: f64, resolution: usize) -> Result<Self> {
        Self::build(GeometryKind::RectangleDirichlet, &[lx, ly], 2, resolution)
    }

    pub fn torus(lx: f64, ly: f64, resolution: usize) -> Result<Self> {
        Self::build(GeometryKind::Torus2D, &[lx, ly], 2, resolution)
    }

    pub fn radial_ball(dimension: usize, radius: f64, resolution: usize) -> Result<Self> {
        Self::build(GeometryKind::RadialBallDirichlet, &[radius], dimension, resolution)
    }

    fn build_interval(length: f64, resolution: usize) -> Self {
        let h = length / resolution as f64;
        let m = resolution - 1;
        let coords = (1..=m).map(|i| [i as f64 * h, 0.0]).collect();
        let faces = (0..m - 1).map(|i| Face { i, j: i + 1, c: 1.0 / h }).collect();
        let mut boundary = vec![0.0; m];
        boundary[0] += 1.0 / h;
        boundary[m - 1] += 1.0 / h;
        Geometry {
            kind: GeometryKind::IntervalDirichlet,
            extents: vec![length],
            dimension: 1,
            resolution,
            spacing: vec![h],
            shape: [m, 1],
            coords,
            weights: vec![h; m],
            faces,
            boundary,
        }
    }

    fn build_circle(length: f64, resolution: usize) -> Self {
        let h = length / resolution as f64;
        let m = resolution;
        let coords = (0..m).map(|i| [i as f64 * h, 0.0]).collect();
        let faces = (0..m).map(|i| Face { i, j: (i + 1) % m, c: 1.0 / h }).collect();
        Geometry {
            kind: GeometryKind::Circle,
            extents: vec![length],
            dimension: 1,
            resolution,
            spacing: vec![h],
            shape: [m, 1],
            coords,
            weights: vec![h; m],
            faces,
            boundary: vec![0.0; m],
        }
    }

    fn build_grid2d(kind: GeometryKind, lx: f64, ly: f64, resolution: usize) -> Self {
        let hx = lx / resolution as f64;
        let hy = ly / resolution as f64;
        let periodic = kind.is_periodic();
        let (m, offset) = if periodic { (resolution, 0) } else { (resolution - 1, 1) };
        let idx = |i: usize, j: usize| j * m + i;
        let cx = hy / hx;
        let cy = hx / hy;
        let mut coords = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                coords.push([(i + offset) as f64 * hx, (j + offset) as f64 * hy]);
            }
        }
        let mut faces = Vec::new();
        let mut boundary = vec![0.0; m * m];
        for j in 0..m {
            for i in 0..m {
                if i + 1 < m {
                    faces.push(Face { i: idx(i, j), j: idx(i + 1, j), c: cx });
                } else if periodic {
                    faces.push(Face { i: idx(i, j), j: idx(0, j), c: cx });
                }
                if j + 1 < m {
                    faces.push(Face { i: idx(i, j), j: idx(i, j + 1), c: cy });
                } else if periodic {
                    faces.push(Face { i: idx(i, j), j: idx(i, 0), c: cy });
                }
                if !periodic {
                    let k = idx(i, j);
                    if i == 0 {
                        boundary[k] += cx;
                    }
                    if i + 1 == m {
                        boundary[k] += cx;
                    }
                    if j == 0 {
                        boundary[k] += cy;
                    }
                    if j + 1 == m {
                        boundary[k] += cy;
                    }
                }
            }
        }
        Geometry {
            kind,
            extents: vec![lx, ly],
            dimension: 2,
            resolution,
            spacing: vec![hx, hy],
            shape: [m, m],
            coords,
            weights: vec![hx * hy; m * m],
            faces,
            boundary,
        }
    }

    fn build_ball(n: usize, radius: f64, resolution: usize) -> Self {
        let h = radius / resolution as f64;
        let m = resolution;
        let omega = unit_sphere_area(n);
        let e = n as i32;
        // Finite-volume cells [i h, (i+1) h]; the origin face has zero area.
        let weights = (0..m)
            .map(|i| omega / n as f64 * (((i + 1) as f64).powi(e) - (i as f64).powi(e)) * h.powi(e))
            .collect();
        let coords = (0..m).map(|i| [(i as f64 + 0.5) * h, 0.0]).collect();
        let face_area = |r: f64| omega * r.powi(e - 1);
        let faces = (0..m - 1)
            .map(|i| Face { i, j: i + 1, c: face_area((i + 1) as f64 * h) / h })
            .collect();
        let mut boundary = vec![0.0; m];
        // Ghost value -u at r = R + h/2 puts the zero exactly on the face r = R.
        boundary[m - 1] = 2.0 * face_area(radius) / h;
        Geometry {
            kind: GeometryKind::RadialBallDirichlet,
            extents: vec![radius],
            dimension: n,
            resolution,
            spacing: vec![h],
            shape: [m, 1],
            coords,
            weights,
            faces,
            boundary,
        }
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    /// Ambient dimension `n`.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node coordinates; `[x, 0]` for 1D kinds, `[r, 0]` for the radial kind.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn is_periodic(&self) -> bool {
        self.kind.is_periodic()
    }

    /// Sum of the quadrature weights.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Exact measure of the continuous domain.
    pub fn domain_measure(&self) -> f64 {
        match self.kind {
            GeometryKind::IntervalDirichlet | GeometryKind::Circle => self.extents[0],
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => self.extents[0] * self.extents[1],
            GeometryKind::RadialBallDirichlet => ball_volume(self.dimension, self.extents[0]),
        }
    }

    /// Evaluates `f` at every node, passing `(x, y)` (or `(r, 0)` radially).
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::new(self.coords.iter().map(|c| f(c[0], c[1])).collect())
    }

    pub fn check(&self, u: &Field) -> Result<()> {
        if u.len() != self.node_count() {
            return Err(Error::GeometryMismatch { expected: self.node_count(), found: u.len() });
        }
        Ok(())
    }

    /// `K u`, the stiffness applied to `u` (no geometry check).
    pub(crate) fn stiffness_apply(&self, u: &[f64], out: &mut [f64]) {
        for (o, (&d, &x)) in out.iter_mut().zip(self.boundary.iter().zip(u)) {
            *o = d * x;
        }
        for f in &self.faces {
            let flux = f.c * (u[f.i] - u[f.j]);
            out[f.i] += flux;
            out[f.j] -= flux;
        }
    }

    /// Row sums of `|K|` including the diagonal, per node.
    fn stiffness_diag(&self) -> Vec<f64> {
        let mut d = self.boundary.clone();
        for f in &self.faces {
            d[f.i] += f.c;
            d[f.j] += f.c;
        }
        d
    }

    /// Gershgorin bound on the spectral radius of `-Δ_h`.
    pub fn spectral_radius_bound(&self) -> f64 {
        self.stiffness_diag()
            .iter()
            .zip(&self.boundary)
            .zip(&self.weights)
            .map(|((&diag, &b), &w)| (2.0 * diag - b) / w)
            .fold(0.0, f64::max)
    }

    /// Second-order discrete Laplacian `Δ_h u`.
    pub fn laplacian(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        let mut out = vec![0.0; u.len()];
        self.stiffness_apply(u.values(), &mut out);
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = -*o / w;
        }
        Ok(Field::new(out))
    }

    /// Quadrature `Σ_i w_i f_i`.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(self.weights.iter().zip(f.values()).map(|(w, v)| w * v).sum())
    }

    /// Weighted inner product `Σ_i w_i u_i v_i`.
    pub fn inner(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self
            .weights
            .iter()
            .zip(u.values().iter().zip(v.values()))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    /// Quadrature-weighted L² norm.
    pub fn l2_norm(&self, u: &Field) -> Result<f64> {
        Ok(self.inner(u, u)?.sqrt())
    }

    /// `Σ_i w_i u_i^q`, with `u^q` taken as `|u|^q`.
    pub fn integrate_power(&self, u: &Field, q: f64) -> Result<f64> {
        self.check(u)?;
        Ok(self.weights.iter().zip(u.values()).map(|(w, v)| w * v.abs().powf(q)).sum())
    }

    /// Discrete Dirichlet energy `∫|∇u|²`, computed as `-∫ u Δ_h u`.
    pub fn dirichlet_energy(&self, u: &Field) -> Result<f64> {
        let lap = self.laplacian(u)?;
        Ok(-self.inner(u, &lap)?)
    }

    /// `∫ u^m |∇u|²` through `4/(m+2)² ∫|∇(u^{(m+2)/2})|²`.
    pub fn weighted_gradient_energy(&self, u: &Field, m: f64) -> Result<f64> {
        self.check(u)?;
        if !(m >= 0.0) {
            return Err(Error::InvalidFlowSpec(format!("weight exponent must be >= 0, got {m}")));
        }
        if m == 0.0 {
            return self.dirichlet_energy(u);
        }
        let even_integer = m.fract() == 0.0 && (m as i64) % 2 == 0;
        let e = 0.5 * (m + 2.0);
        let transformed = if even_integer {
            // u^{(m+2)/2} with an odd integer exponent keeps the sign of u.
            u.map(|v| v.powi(e as i32))
        } else {
            if let Some((index, value)) = u.first_at_or_below(0.0) {
                return Err(Error::NonPositiveField { index, value });
            }
            u.map(|v| v.powf(e))
        };
        Ok(4.0 / ((m + 2.0) * (m + 2.0)) * self.dirichlet_energy(&transformed)?)
    }

    /// Solves `(diag(mass) + beta K) x = rhs` with the solver suited to the
    /// grid: Thomas for Dirichlet 1D/radial, Sherman-Morrison for the circle,
    /// conjugate gradients in 2D.
    pub fn solve_shifted(&self, mass: &[f64], beta: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.node_count();
        if mass.len() != n || rhs.len() != n {
            return Err(Error::GeometryMismatch { expected: n, found: rhs.len() });
        }
        match self.kind {
            GeometryKind::IntervalDirichlet | GeometryKind::RadialBallDirichlet | GeometryKind::Circle => {
                let mut lower = vec![0.0; n];
                let mut upper = vec![0.0; n];
                let mut diag: Vec<f64> = mass.iter().zip(&self.boundary).map(|(m, b)| m + beta * b).collect();
                for f in &self.faces {
                    diag[f.i] += beta * f.c;
                    diag[f.j] += beta * f.c;
                    if f.j == f.i + 1 {
                        upper[f.i] = -beta * f.c;
                        lower[f.j] = -beta * f.c;
                    } else {
                        // periodic wrap face (n-1, 0)
                        upper[f.i] = -beta * f.c;
                        lower[f.j] = -beta * f.c;
                    }
                }
                if self.kind == GeometryKind::Circle {
                    linalg::solve_cyclic_tridiagonal(&lower, &diag, &upper, rhs)
                } else {
                    linalg::solve_tridiagonal(&lower, &diag, &upper, rhs)
                }
            }
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => {
                let kd = self.stiffness_diag();
                let inv_diag: Vec<f64> = mass.iter().zip(&kd).map(|(m, k)| 1.0 / (m + beta * k)).collect();
                if inv_diag.iter().any(|d| !d.is_finite()) {
                    return Err(Error::LinearSolve("singular diagonal".into()));
                }
                let apply = |x: &[f64], y: &mut [f64]| {
                    self.stiffness_apply(x, y);
                    for ((yi, xi), mi) in y.iter_mut().zip(x).zip(mass) {
                        *yi = mi * xi + beta * *yi;
                    }
                };
                linalg::conjugate_gradient(apply, &inv_diag, rhs, None, 1e-12, 20 * n + 100)
            }
        }
    }

    /// Radial coordinate of node `i` measured from the domain's centre of
    /// symmetry (interval midpoint or ball origin).
    pub fn radius_of(&self, i: usize) -> f64 {
        match self.kind {
            GeometryKind::RadialBallDirichlet => self.coords[i][0],
            GeometryKind::IntervalDirichlet | GeometryKind::Circle => (self.coords[i][0] - 0.5 * self.extents[0]).abs(),
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => {
                let dx = self.coords[i][0] - 0.5 * self.extents[0];
                let dy = self.coords[i][1] - 0.5 * self.extents[1];
                dx.hypot(dy)
            }
        }
    }
}

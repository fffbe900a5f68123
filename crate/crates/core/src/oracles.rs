//! Independent steady-state solvers: discrete principal eigenpairs by
//! inverse iteration, and radial Lane–Emden profiles by shooting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::pow;
use crate::geometry::{Field, Geometry, GeometryKind};

pub const EIGEN_TOL: f64 = 1e-12;
pub const EIGEN_MAX_ITER: usize = 2000;
/// Radius at which a still-positive normalized profile is declared global.
pub const SHOOT_HORIZON: f64 = 1e3;
pub const SHOOT_TOL: f64 = 1e-13;

/// Smallest nonzero eigenvalue of `−Δ_h` and its eigenvector, normalized in
/// the weighted L² norm. Dirichlet kinds give the positive ground state;
/// periodic kinds deflate the constants.
pub fn principal_eigenpair(geom: &Geometry) -> Result<(f64, Field)> {
    let w = geom.weights().to_vec();
    let n = w.len();
    let periodic = geom.is_periodic();
    let total: f64 = w.iter().sum();
    let deflate = |x: &mut [f64]| {
        if periodic {
            let mean = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
            x.iter_mut().for_each(|v| *v -= mean);
        }
    };
    // shift of the order of the first nonzero eigenvalue keeps periodic solves regular
    let shift = if periodic {
        let longest = geom.extents().iter().cloned().fold(0.0, f64::max);
        (2.0 * std::f64::consts::PI / longest).powi(2)
    } else {
        0.0
    };
    let mass: Vec<f64> = w.iter().map(|wi| shift * wi).collect();

    let mut x: Vec<f64> = if periodic {
        (0..n).map(|i| (0.7 * i as f64).sin() + 0.5 * (0.13 * (i * i) as f64).cos()).collect()
    } else {
        vec![1.0; n]
    };
    deflate(&mut x);
    let normalize = |x: &mut Vec<f64>| {
        let norm = x.iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
    };
    normalize(&mut x);
    let mut kx = vec![0.0; n];
    // Rayleigh quotient and weighted residual ‖W⁻¹Kx − μx‖_W / ‖x‖_W
    let measure = |x: &[f64], kx: &mut [f64]| -> (f64, f64) {
        geom.stiffness_apply(x, kx);
        let num: f64 = x.iter().zip(kx.iter()).map(|(a, b)| a * b).sum();
        let den: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
        let mu = num / den;
        let res: f64 = (0..x.len()).map(|i| (kx[i] / w[i] - mu * x[i]).powi(2) * w[i]).sum();
        (mu, (res / den).sqrt())
    };
    let (mut mu, _) = measure(&x, &mut kx);
    let mut stagnant = 0;
    for _ in 0..EIGEN_MAX_ITER {
        let rhs: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        let mut y = geom.solve_shifted(&mass, 1.0, &rhs)?;
        deflate(&mut y);
        normalize(&mut y);
        x = y;
        let (next, residual) = measure(&x, &mut kx);
        let settled = (next - mu).abs() <= EIGEN_TOL * next.abs();
        mu = next;
        stagnant = if settled { stagnant + 1 } else { 0 };
        // the residual floor is set by roundoff in K; stop once it is reached
        // or the eigenvalue has been stationary for a while
        if residual <= EIGEN_TOL * mu.max(1.0) || stagnant >= 50 {
            if !periodic && x.iter().sum::<f64>() < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok((mu, Field::new(x)));
        }
    }
    Err(Error::NoConvergence(EIGEN_MAX_ITER))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShootStatus {
    /// The profile was rescaled so that its first zero lands at this radius.
    HitZeroAt(f64),
    /// The normalized solution stayed positive and decreasing up to the horizon.
    StayedPositive,
}

impl fmt::Display for ShootStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShootStatus::HitZeroAt(r) => write!(f, "HitZeroAt({r})"),
            ShootStatus::StayedPositive => f.write_str("StayedPositive"),
        }
    }
}

/// A solution of `v'' + (n−1)/r v' + sign(v)|v|^p = 0`, `v'(0) = 0`, stored
/// with first and second derivatives for quintic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub dimension: usize,
    pub p: f64,
    pub status: ShootStatus,
    radii: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    curvatures: Vec<f64>,
    /// Even power series `Σ c_j r^{2j}` used on `[0, radii[1]]`.
    series: [f64; 4],
}

impl RadialProfile {
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn central_value(&self) -> f64 {
        self.values[0]
    }

    /// Last radius covered by the stored solution (or the zero).
    pub fn extent(&self) -> f64 {
        match self.status {
            ShootStatus::HitZeroAt(r) => r,
            ShootStatus::StayedPositive => *self.radii.last().unwrap(),
        }
    }

    /// `(v, v', v'')` at `r`; zero beyond the first zero of a
    /// [`ShootStatus::HitZeroAt`] profile.
    pub fn eval_derivatives(&self, r: f64) -> Result<(f64, f64, f64)> {
        let r = r.abs();
        let end = self.extent();
        // a few ulps past the last node still count as the end point
        if r > end * (1.0 + 8.0 * f64::EPSILON) {
            return match self.status {
                ShootStatus::HitZeroAt(_) => Ok((0.0, 0.0, 0.0)),
                ShootStatus::StayedPositive => {
                    Err(Error::ProfileMismatch(format!("r = {r} beyond the integrated range {end}")))
                }
            };
        }
        if r <= self.radii[1] {
            let c = self.series;
            let r2 = r * r;
            let v = c[0] + r2 * (c[1] + r2 * (c[2] + r2 * c[3]));
            let dv = r * (2.0 * c[1] + r2 * (4.0 * c[2] + r2 * 6.0 * c[3]));
            let d2v = 2.0 * c[1] + r2 * (12.0 * c[2] + r2 * 30.0 * c[3]);
            return Ok((v, dv, d2v));
        }
        let i = match self.radii.partition_point(|&x| x <= r) {
            0 => 0,
            k if k >= self.radii.len() => self.radii.len() - 2,
            k => k - 1,
        };
        let h = self.radii[i + 1] - self.radii[i];
        let s = (r - self.radii[i]) / h;
        Ok(hermite(
            s,
            h,
            [self.values[i], self.slopes[i], self.curvatures[i]],
            [self.values[i + 1], self.slopes[i + 1], self.curvatures[i + 1]],
        ))
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        Ok(self.eval_derivatives(r)?.0)
    }

    /// Largest `|v'' + (n−1)/r v' + sign(v)|v|^p|` over `samples` points per
    /// stored interval (dense output), excluding `r = 0`, in units of the
    /// equation's natural scale `v(0)^p` (the residual of the normalized
    /// profile, since the equation is scale invariant).
    pub fn ode_residual(&self, samples: usize) -> f64 {
        let unit = pow(self.values[0], self.p);
        let n1 = self.dimension as f64 - 1.0;
        let mut worst: f64 = 0.0;
        let end = self.extent();
        for i in 0..self.radii.len() - 1 {
            let (a, b) = (self.radii[i], self.radii[i + 1].min(end));
            if b <= a {
                break;
            }
            for k in 1..=samples {
                let r = a + (b - a) * k as f64 / (samples + 1) as f64;
                let (v, dv, d2v) = self.eval_derivatives(r).expect("inside range");
                let res = d2v + n1 / r * dv + signed_pow(v, self.p);
                worst = worst.max(res.abs() / unit);
            }
        }
        worst
    }

    /// Samples the profile on the nodes of a matching interval or ball.
    pub fn sample_on(&self, geom: &Geometry) -> Result<Field> {
        let radius = match self.status {
            ShootStatus::HitZeroAt(r) => r,
            ShootStatus::StayedPositive => {
                return Err(Error::ProfileMismatch("profile has no zero; no Dirichlet steady state".into()))
            }
        };
        let (expected_dim, expected_radius, center) = match geom.kind() {
            GeometryKind::IntervalDirichlet => (1, 0.5 * geom.extents()[0], 0.5 * geom.extents()[0]),
            GeometryKind::RadialBallDirichlet => (geom.dimension(), geom.extents()[0], 0.0),
            other => return Err(Error::ProfileMismatch(format!("no radial profile oracle for {other}"))),
        };
        if expected_dim != self.dimension {
            return Err(Error::ProfileMismatch(format!(
                "profile dimension {} vs geometry dimension {expected_dim}",
                self.dimension
            )));
        }
        if (expected_radius - radius).abs() > 1e-12 * radius.max(1.0) {
            return Err(Error::ProfileMismatch(format!(
                "profile zero at {radius} vs geometry radius {expected_radius}"
            )));
        }
        let values = geom
            .coords()
            .iter()
            .map(|c| self.eval(c[0] - center))
            .collect::<Result<Vec<_>>>()?;
        Ok(Field::new(values))
    }
}

fn signed_pow(v: f64, p: f64) -> f64 {
    if v >= 0.0 {
        pow(v, p)
    } else {
        -pow(-v, p)
    }
}

/// Quintic Hermite interpolant on `[0, 1]` in the local variable `s`, with
/// end data `(v, v', v'')` in the physical variable (`dr = h ds`).
fn hermite(s: f64, h: f64, left: [f64; 3], right: [f64; 3]) -> (f64, f64, f64) {
    // coefficients of s^0..s^5
    const BASIS: [[f64; 6]; 6] = [
        [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
        [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
        [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
        [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
        [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
        [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    ];
    let weights = [left[0], h * left[1], h * h * left[2], right[0], h * right[1], h * h * right[2]];
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (coef, wgt) in BASIS.iter().zip(weights) {
        let mut sp = 1.0; // s^k
        let mut sp1 = 0.0; // s^(k-1)
        let mut sp2 = 0.0; // s^(k-2)
        for (k, c) in coef.iter().enumerate() {
            let kf = k as f64;
            v += wgt * c * sp;
            d1 += wgt * c * kf * sp1;
            d2 += wgt * c * kf * (kf - 1.0) * sp2;
            sp2 = sp1;
            sp1 = sp;
            sp *= s;
        }
    }
    (v, d1 / h, d2 / (h * h))
}

struct Shooter {
    n1: f64,
    p: f64,
}

impl Shooter {
    fn curvature(&self, r: f64, v: f64, w: f64) -> f64 {
        if r == 0.0 {
            -signed_pow(v, self.p) / (self.n1 + 1.0)
        } else {
            -self.n1 / r * w - signed_pow(v, self.p)
        }
    }

    fn deriv(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        [y[1], self.curvature(r, y[0], y[1])]
    }

    /// One Dormand–Prince 5(4) step; returns the 5th-order solution and the
    /// embedded error estimate.
    fn dopri(&self, r: f64, y: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B4: [f64; 7] = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        let mut k = [[0.0; 2]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                ys[0] += h * A[s][j] * kj[0];
                ys[1] += h * A[s][j] * kj[1];
            }
            k[s] = self.deriv(r + C[s] * h, ys);
        }
        let mut y5 = y;
        let mut err = [0.0; 2];
        for s in 0..7 {
            let b5 = if s < 6 { A[6][s] } else { 0.0 };
            for d in 0..2 {
                y5[d] += h * b5 * k[s][d];
                err[d] += h * (b5 - B4[s]) * k[s][d];
            }
        }
        (y5, err)
    }
}

struct Trajectory {
    radii: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    curvatures: Vec<f64>,
    series: [f64; 4],
    zero: Option<f64>,
}

/// Integrates from `v(0) = alpha`, `v'(0) = 0` up to `r_end`, stopping at the
/// first zero when `stop_at_zero` is set.
fn integrate(n: usize, p: f64, alpha: f64, r_end: f64, stop_at_zero: bool, tol: f64) -> Result<Trajectory> {
    let sh = Shooter { n1: n as f64 - 1.0, p };
    let nf = n as f64;
    // series start: v = α + c₁r² + c₂r⁴ + c₃r⁶
    let scale = pow(alpha, -(p - 1.0) / 2.0);
    let r0 = 1e-2 * scale;
    let ap = pow(alpha, p);
    let c1 = -ap / (2.0 * nf);
    let c2 = p * pow(alpha, p - 1.0) * ap / (8.0 * nf * (nf + 2.0));
    let c3 = -ap * (p * c2 / alpha + 0.5 * p * (p - 1.0) * (c1 / alpha).powi(2)) / (6.0 * (nf + 4.0));
    let series = [alpha, c1, c2, c3];
    let r2 = r0 * r0;
    let v0 = alpha + r2 * (c1 + r2 * (c2 + r2 * c3));
    let w0 = r0 * (2.0 * c1 + r2 * (4.0 * c2 + r2 * 6.0 * c3));
    let mut tr = Trajectory {
        radii: vec![0.0, r0],
        values: vec![alpha, v0],
        slopes: vec![0.0, w0],
        curvatures: vec![sh.curvature(0.0, alpha, 0.0), sh.curvature(r0, v0, w0)],
        series,
        zero: None,
    };

    let mut r = r0;
    let mut y = [tr.values[1], tr.slopes[1]];
    let mut h = 1e-2 * scale;
    let h_min = 1e-14 * scale;
    while r < r_end {
        let h_max = 1e-2 * r.max(scale);
        h = h.min(h_max).min(r_end - r);
        let (y5, e) = sh.dopri(r, y, h);
        let err = (0..2)
            .map(|d| e[d].abs() / (tol + tol * y[d].abs().max(y5[d].abs())))
            .fold(0.0, f64::max);
        if !y5[0].is_finite() || !y5[1].is_finite() || y5[0].abs() > 1e12 * alpha {
            return Err(Error::Diverged(r + h));
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            if h < h_min {
                return Err(Error::Diverged(r));
            }
            continue;
        }
        let r_new = r + h;
        let a_new = sh.curvature(r_new, y5[0], y5[1]);
        if stop_at_zero && y5[0] <= 0.0 {
            // locate the zero on the dense output, then land on it exactly
            let last = tr.radii.len() - 1;
            let left = [y[0], y[1], tr.curvatures[last]];
            let right = [y5[0], y5[1], a_new];
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if hermite(mid, h, left, right).0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            tr.radii.push(r_new);
            tr.values.push(y5[0]);
            tr.slopes.push(y5[1]);
            tr.curvatures.push(a_new);
            tr.zero = Some(r + lo * h);
            return Ok(tr);
        }
        tr.radii.push(r_new);
        tr.values.push(y5[0]);
        tr.slopes.push(y5[1]);
        tr.curvatures.push(a_new);
        r = r_new;
        y = y5;
        h *= (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
    }
    Ok(tr)
}

/// Shoots `v'' + (n−1)/r v' + v^p = 0` from the normalized centre value 1.
/// If the solution has a first zero `ρ₀`, the profile is rescaled by the
/// scaling symmetry `v_α(r) = α v_1(α^{(p−1)/2} r)` so the zero lands at `R`;
/// if it stays positive and decreasing up to [`SHOOT_HORIZON`], the
/// normalized profile is returned as [`ShootStatus::StayedPositive`].
pub fn lane_emden_shoot(n: usize, p: f64, radius: f64, tol: f64) -> Result<RadialProfile> {
    if n == 0 {
        return Err(Error::InvalidFlowSpec("dimension must be at least 1".into()));
    }
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidFlowSpec(format!("exponent must exceed 1, got {p}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidExtent(format!("radius must be positive, got {radius}")));
    }
    let tr = integrate(n, p, 1.0, SHOOT_HORIZON, true, tol)?;
    match tr.zero {
        Some(rho) => {
            let k = rho / radius; // r_target = r / k
            let alpha = pow(k, 2.0 / (p - 1.0));
            let mut series = tr.series;
            let mut factor = alpha;
            for c in series.iter_mut() {
                *c *= factor;
                factor *= k * k;
            }
            Ok(RadialProfile {
                dimension: n,
                p,
                status: ShootStatus::HitZeroAt(radius),
                radii: tr.radii.iter().map(|r| r / k).collect(),
                values: tr.values.iter().map(|v| alpha * v).collect(),
                slopes: tr.slopes.iter().map(|w| alpha * k * w).collect(),
                curvatures: tr.curvatures.iter().map(|a| alpha * k * k * a).collect(),
                series,
            })
        }
        None => {
            if tr.slopes.iter().skip(1).any(|&w| w >= 0.0) {
                return Err(Error::ProfileMismatch(
                    "solution stayed positive without decreasing monotonically".into(),
                ));
            }
            Ok(RadialProfile {
                dimension: n,
                p,
                status: ShootStatus::StayedPositive,
                radii: tr.radii,
                values: tr.values,
                slopes: tr.slopes,
                curvatures: tr.curvatures,
                series: tr.series,
            })
        }
    }
}

/// Integrates from an arbitrary centre value without rescaling, up to
/// `r_end` (through zeros, with odd extension of the nonlinearity).
pub fn shoot_from_center(n: usize, p: f64, alpha: f64, r_end: f64, tol: f64) -> Result<RadialProfile> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidFlowSpec(format!("centre value must be positive, got {alpha}")));
    }
    let tr = integrate(n, p, alpha, r_end, false, tol)?;
    Ok(RadialProfile {
        dimension: n,
        p,
        status: ShootStatus::StayedPositive,
        radii: tr.radii,
        values: tr.values,
        slopes: tr.slopes,
        curvatures: tr.curvatures,
        series: tr.series,
    })
}

/// Turns a profile with a zero at the domain radius into a normalized
/// discrete steady state: `u = c v`, `c = (∫v^q)^{−1/q}`, `λ = κ c^{−(p−1)}`,
/// where `κ = −n v''(0)/v(0)^p` is the profile's own nonlinearity
/// coefficient (1 for a shot profile), which makes the result invariant
/// under rescaling of `v`.
pub fn steady_state_from_profile(profile: &RadialProfile, geom: &Geometry, q: f64) -> Result<(Field, f64)> {
    let v = profile.sample_on(geom)?;
    let integral = geom.integrate_power(&v, q)?;
    if !(integral > 0.0) {
        return Err(Error::DegenerateField);
    }
    let c = integral.powf(-1.0 / q);
    let kappa = -(profile.dimension as f64) * profile.curvatures[0] / pow(profile.values[0], profile.p);
    Ok((v.scaled(c), kappa * c.powf(-(profile.p - 1.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::steady_residual;
    use crate::flows::{FlowSpec, FlowVariant};
    use std::f64::consts::PI;

    #[test]
    fn hermite_reproduces_quintics() {
        let f = |x: f64| (1.0 - 2.0 * x + 0.5 * x.powi(3) - x.powi(5), -2.0 + 1.5 * x * x - 5.0 * x.powi(4), 3.0 * x - 20.0 * x.powi(3));
        let (a, b) = (0.3, 1.1);
        let (fa, fb) = (f(a), f(b));
        for k in 0..=10 {
            let x = a + (b - a) * k as f64 / 10.0;
            let (v, d1, d2) = hermite((x - a) / (b - a), b - a, [fa.0, fa.1, fa.2], [fb.0, fb.1, fb.2]);
            let e = f(x);
            assert!((v - e.0).abs() < 1e-13 && (d1 - e.1).abs() < 1e-12 && (d2 - e.2).abs() < 1e-11);
        }
    }

    #[test]
    fn interval_eigenvalue_closed_form() {
        let g = Geometry::interval(1.0, 4).unwrap();
        let (mu, phi) = principal_eigenpair(&g).unwrap();
        let h = 0.25;
        let exact = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        assert!((mu - exact).abs() < 1e-10 * exact);
        assert!((mu - 9.3726).abs() < 1e-4);
        assert!(phi.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eigenvalue_converges_at_second_order() {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| (principal_eigenpair(&Geometry::interval(1.0, n).unwrap()).unwrap().0 - PI * PI).abs())
            .collect();
        assert!(errs[0] / errs[1] > 3.8 && errs[1] / errs[2] > 3.8, "{errs:?}");

        let c = Geometry::circle(2.0 * PI, 64).unwrap();
        let (mu, phi) = principal_eigenpair(&c).unwrap();
        let h = 2.0 * PI / 64.0;
        assert!((mu - 2.0 / (h * h) * (1.0 - h.cos())).abs() < 1e-10);
        let mean: f64 = c.integrate(&phi).unwrap();
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn eigen_residual_on_all_dirichlet_kinds() {
        for g in [
            Geometry::interval(2.0, 40).unwrap(),
            Geometry::rectangle(1.0, 2.0, 12).unwrap(),
            Geometry::radial_ball(3, 1.0, 40).unwrap(),
            Geometry::torus(1.0, 1.0, 12).unwrap(),
        ] {
            let (mu, phi) = principal_eigenpair(&g).unwrap();
            let lap = g.laplacian(&phi).unwrap();
            let r = lap.zip_map(&phi, |l, v| -l - mu * v);
            assert!(g.l2_norm(&r).unwrap() < 1e-10 * g.l2_norm(&phi).unwrap(), "{:?}", g.kind());
            if !g.is_periodic() {
                assert!(phi.min() > 0.0);
            }
        }
        // unit ball: μ₁ → π²
        let (mu, _) = principal_eigenpair(&Geometry::radial_ball(3, 1.0, 200).unwrap()).unwrap();
        assert!((mu - PI * PI).abs() < 1e-3 * PI * PI, "{mu}");
    }

    #[test]
    fn shooter_examples() {
        let prof = lane_emden_shoot(1, 3.0, 1.0, SHOOT_TOL).unwrap();
        assert_eq!(prof.status, ShootStatus::HitZeroAt(1.0));
        assert!(prof.values().windows(2).all(|w| w[1] <= w[0]));
        assert!(prof.ode_residual(4) < 1e-8, "{}", prof.ode_residual(4));
        assert!(prof.eval(1.0).unwrap().abs() < 1e-14);
        assert_eq!(prof.eval(1.5).unwrap(), 0.0);

        assert_eq!(lane_emden_shoot(3, 5.0, 1.0, SHOOT_TOL).unwrap().status, ShootStatus::StayedPositive);
        let sub = lane_emden_shoot(3, 3.0, 1.0, SHOOT_TOL).unwrap();
        assert_eq!(sub.status, ShootStatus::HitZeroAt(1.0));
        assert!(sub.ode_residual(4) < 1e-8, "{}", sub.ode_residual(4));
    }

    #[test]
    fn criticality_boundary_in_three_dimensions() {
        for p in [2.0, 3.0, 4.0, 5.0, 6.0, 7.0] {
            let prof = lane_emden_shoot(3, p, 1.0, SHOOT_TOL).unwrap();
            let expected = if p < 5.0 { ShootStatus::HitZeroAt(1.0) } else { ShootStatus::StayedPositive };
            assert_eq!(prof.status, expected, "p = {p}");
            assert!(prof.ode_residual(4) < 1e-8, "p = {p}: {}", prof.ode_residual(4));
        }
    }

    #[test]
    fn critical_profile_matches_closed_form() {
        // n = 3, p = 5: v = (1 + r²/3)^{-1/2}
        let prof = lane_emden_shoot(3, 5.0, 1.0, SHOOT_TOL).unwrap();
        for r in [0.5f64, 2.0, 10.0, 100.0, 900.0] {
            let exact = (1.0f64 + r * r / 3.0).powf(-0.5);
            assert!((prof.eval(r).unwrap() - exact).abs() < 1e-9 * exact.max(1e-3), "r = {r}");
        }
    }

    #[test]
    fn invalid_shoot_arguments() {
        assert!(lane_emden_shoot(0, 3.0, 1.0, SHOOT_TOL).is_err());
        assert!(lane_emden_shoot(3, 1.0, 1.0, SHOOT_TOL).is_err());
        assert!(lane_emden_shoot(3, 3.0, -1.0, SHOOT_TOL).is_err());
    }

    #[test]
    fn composed_oracle_on_interval() {
        let prof = lane_emden_shoot(1, 3.0, 0.5, SHOOT_TOL).unwrap();
        let spec = FlowSpec::new(FlowVariant::B, 3.0, 1).unwrap();
        let residuals: Vec<f64> = [128, 256, 512]
            .iter()
            .map(|&res| {
                let g = Geometry::interval(1.0, res).unwrap();
                let (u, lambda) = steady_state_from_profile(&prof, &g, 2.0).unwrap();
                assert!((g.integrate_power(&u, 2.0).unwrap() - 1.0).abs() < 1e-13);
                steady_residual(&spec, &g, &u, lambda).unwrap()
            })
            .collect();
        // the sampled continuum profile carries the O(h²) truncation error of Δ_h
        for w in residuals.windows(2) {
            assert!((w[0] / w[1] - 4.0).abs() < 0.1, "{residuals:?}");
        }
        assert!(residuals[2] < 2e-4, "{residuals:?}");
    }

    #[test]
    fn steady_state_is_projective() {
        let prof = lane_emden_shoot(3, 3.0, 1.0, SHOOT_TOL).unwrap();
        let g = Geometry::radial_ball(3, 1.0, 100).unwrap();
        let (u, lam) = steady_state_from_profile(&prof, &g, 4.0).unwrap();
        let mut doubled = prof.clone();
        for arr in [&mut doubled.values, &mut doubled.slopes, &mut doubled.curvatures] {
            arr.iter_mut().for_each(|v| *v *= 2.0);
        }
        doubled.series.iter_mut().for_each(|v| *v *= 2.0);
        let (u2, lam2) = steady_state_from_profile(&doubled, &g, 4.0).unwrap();
        assert!((lam - lam2).abs() < 1e-12 * lam);
        for (a, b) in u.values().iter().zip(u2.values()) {
            assert!((a - b).abs() < 1e-13);
        }

        // a profile already normalized gives c = 1, λ = 1
        let mut unit = prof.clone();
        let c = g.integrate_power(&prof.sample_on(&g).unwrap(), 4.0).unwrap().powf(-0.25);
        for arr in [&mut unit.values, &mut unit.slopes, &mut unit.curvatures] {
            arr.iter_mut().for_each(|v| *v *= c);
        }
        unit.series.iter_mut().for_each(|v| *v *= c);
        let (_, lam1) = steady_state_from_profile(&unit, &g, 4.0).unwrap();
        // λ = κ, the rescaled profile's own coefficient c^{1−p}
        assert!((lam1 - c.powf(1.0 - 3.0)).abs() < 1e-12 * lam1);

        // a true solution with ∫v^q = 1 gives c = 1 and λ = 1; by scaling,
        // ∫v_R^4 = R^{-1} ∫v_1^4 on the ball of radius R (n = 3, p = 3)
        let i1 = g.integrate_power(&prof.sample_on(&g).unwrap(), 4.0).unwrap();
        let fitted = lane_emden_shoot(3, 3.0, i1, SHOOT_TOL).unwrap();
        let gr = Geometry::radial_ball(3, i1, 100).unwrap();
        let (_, lam_unit) = steady_state_from_profile(&fitted, &gr, 4.0).unwrap();
        assert!((lam_unit - 1.0).abs() < 1e-9, "{lam_unit}");

        let wrong = Geometry::radial_ball(3, 2.0, 50).unwrap();
        assert!(matches!(steady_state_from_profile(&prof, &wrong, 4.0), Err(Error::ProfileMismatch(_))));
        let positive = lane_emden_shoot(3, 7.0, 1.0, SHOOT_TOL).unwrap();
        assert!(matches!(steady_state_from_profile(&positive, &g, 8.0), Err(Error::ProfileMismatch(_))));
    }
}

//! The three norm-preserving flows as pure functions of a field.
//!
//! | variant | equation                                   | conserved      |
//! |---------|--------------------------------------------|----------------|
//! | A       | `u^{p-2} u_t = Δu + λ u^{p-1}` (periodic)  | `∫ u^p`        |
//! | B       | `u_t = Δu + λ u^p` (Dirichlet)             | `∫ u^2`        |
//! | C       | `u_t = Δu + λ u^p` (Dirichlet)             | `∫ u^{p+1}`    |
//!
//! Each multiplier is built from the same discrete Laplacian and quadrature
//! as the time derivative, so `d/dt ∫ u^q` vanishes exactly for the
//! semi-discrete system.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Field, Geometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowVariant {
    /// `L^p`-preserving Yamabe-type flow on a closed (periodic) domain.
    A,
    /// `L^2`-preserving semilinear flow, subcritical exponent.
    B,
    /// `L^{p+1}`-preserving semilinear flow, critical or supercritical exponent.
    C,
}

impl FlowVariant {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_uppercase().as_str() {
            "A" | "A_YAMABETYPE" | "YAMABE" => Some(FlowVariant::A),
            "B" | "B_L2PRESERVING" | "L2" => Some(FlowVariant::B),
            "C" | "C_LPPLUS1PRESERVING" | "LP+1" => Some(FlowVariant::C),
            _ => None,
        }
    }
}

impl fmt::Display for FlowVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FlowVariant::A => "A",
            FlowVariant::B => "B",
            FlowVariant::C => "C",
        };
        f.write_str(s)
    }
}

/// Sobolev-critical exponent `(n+2)/(n-2)`; infinite for `n ≤ 2`.
pub fn critical_exponent(n: usize) -> f64 {
    if n <= 2 {
        f64::INFINITY
    } else {
        (n as f64 + 2.0) / (n as f64 - 2.0)
    }
}

/// Which flow, with which exponent, in which ambient dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub variant: FlowVariant,
    pub p: f64,
    pub n: usize,
    /// Lifts the exponent restrictions tied to criticality (flow C below the
    /// critical exponent, flow B at or above it or at `p = 1`).
    pub allow_override: bool,
}

impl FlowSpec {
    pub fn new(variant: FlowVariant, p: f64, n: usize) -> Result<Self> {
        Self::build(variant, p, n, false)
    }

    /// Same as [`FlowSpec::new`] but accepts exponents outside the range the
    /// flow is meant for (contrast experiments).
    pub fn with_override(variant: FlowVariant, p: f64, n: usize) -> Result<Self> {
        Self::build(variant, p, n, true)
    }

    fn build(variant: FlowVariant, p: f64, n: usize, allow_override: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidFlowSpec("dimension n must be >= 1".into()));
        }
        if !p.is_finite() {
            return Err(Error::InvalidFlowSpec(format!("p must be finite, got {p}")));
        }
        let crit = critical_exponent(n);
        match variant {
            FlowVariant::A => {
                if !(p > 1.0) {
                    return Err(Error::InvalidFlowSpec(format!("flow A requires p > 1, got {p}")));
                }
            }
            FlowVariant::B => {
                let linear_ok = allow_override && p == 1.0;
                if !(p > 1.0) && !linear_ok {
                    return Err(Error::InvalidFlowSpec(format!("flow B requires p > 1, got {p}")));
                }
                if p >= crit && !allow_override {
                    return Err(Error::InvalidFlowSpec(format!(
                        "flow B requires p < (n+2)/(n-2) = {crit} for n = {n}, got {p}"
                    )));
                }
            }
            FlowVariant::C => {
                if !(p > 1.0) {
                    return Err(Error::InvalidFlowSpec(format!("flow C requires p > 1, got {p}")));
                }
                if !allow_override {
                    if n < 3 {
                        return Err(Error::InvalidFlowSpec(format!(
                            "flow C requires n >= 3 (critical exponent), got n = {n}; set the override flag for contrast runs"
                        )));
                    }
                    if p < crit {
                        return Err(Error::InvalidFlowSpec(format!(
                            "flow C requires p >= (n+2)/(n-2) = {crit} for n = {n}, got {p}; set the override flag for contrast runs"
                        )));
                    }
                }
            }
        }
        Ok(FlowSpec { variant, p, n, allow_override })
    }

    /// Exponent of the conserved integral `∫ u^q`.
    pub fn q(&self) -> f64 {
        match self.variant {
            FlowVariant::A => self.p,
            FlowVariant::B => 2.0,
            FlowVariant::C => self.p + 1.0,
        }
    }

    /// Power of `u` multiplying `λ` in the right-hand side.
    pub fn reaction_power(&self) -> f64 {
        match self.variant {
            FlowVariant::A => self.p - 1.0,
            FlowVariant::B | FlowVariant::C => self.p,
        }
    }

    /// Checks that the geometry matches the flow's boundary setting and dimension.
    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        if geom.dimension() != self.n {
            return Err(Error::InvalidFlowSpec(format!(
                "flow declared for n = {} but geometry has n = {}",
                self.n,
                geom.dimension()
            )));
        }
        match self.variant {
            FlowVariant::A if !geom.is_periodic() => Err(Error::InvalidFlowSpec(
                "flow A is posed on a closed manifold: use a periodic geometry".into(),
            )),
            FlowVariant::B | FlowVariant::C if geom.is_periodic() => Err(Error::InvalidFlowSpec(format!(
                "flow {} is posed with Dirichlet data: use a Dirichlet geometry",
                self.variant
            ))),
            _ => Ok(()),
        }
    }

    /// `u^{2-p}` for flow A, `1` otherwise.
    pub fn mobility(&self, u: &Field) -> Field {
        match self.variant {
            FlowVariant::A => u.map(|v| pow(v, 2.0 - self.p)),
            _ => Field::constant(u.len(), 1.0),
        }
    }

    /// Weight in the dissipation `∫ weight · (u_t)²`: `u^{p-2}` for A, `1` otherwise.
    pub fn dissipation_weight(&self, u: &Field) -> Field {
        match self.variant {
            FlowVariant::A => u.map(|v| pow(v, self.p - 2.0)),
            _ => Field::constant(u.len(), 1.0),
        }
    }

    fn check_sign(&self, u: &Field) -> Result<()> {
        let bad = match self.variant {
            FlowVariant::A => u.first_at_or_below(0.0),
            _ => u.values().iter().copied().enumerate().find(|&(_, v)| !(v >= 0.0)),
        };
        match bad {
            Some((index, value)) => Err(Error::NonPositiveField { index, value }),
            None => Ok(()),
        }
    }

    /// Multiplier `λ(u)` that keeps `∫ u^q` fixed.
    ///
    /// * A: `∫|∇u|²` (data normalized so `∫u^p = 1`)
    /// * B: `∫|∇u|² / ∫u^{p+1}`
    /// * C: `-∫ u^p Δ_h u / ∫ u^{2p}`, the discrete form of `p ∫u^{p-1}|∇u|² / ∫u^{2p}`
    pub fn lambda(&self, geom: &Geometry, u: &Field) -> Result<f64> {
        geom.check(u)?;
        self.check_sign(u)?;
        let lambda = match self.variant {
            FlowVariant::A => geom.dirichlet_energy(u)?,
            FlowVariant::B => {
                let den = geom.integrate_power(u, self.p + 1.0)?;
                if !(den > 0.0) {
                    return Err(Error::DegenerateField);
                }
                geom.dirichlet_energy(u)? / den
            }
            FlowVariant::C => {
                let den = geom.integrate_power(u, 2.0 * self.p)?;
                if !(den > 0.0) {
                    return Err(Error::DegenerateField);
                }
                let lap = geom.laplacian(u)?;
                let up = u.map(|v| pow(v, self.p));
                -geom.inner(&up, &lap)? / den
            }
        };
        Ok(lambda)
    }

    /// `λ` for flow C through the power-transformed Dirichlet energy
    /// `p ∫u^{p-1}|∇u|² / ∫u^{2p}`; agrees with [`FlowSpec::lambda`] to O(h²).
    pub fn lambda_gradient_form(&self, geom: &Geometry, u: &Field) -> Result<f64> {
        geom.check(u)?;
        let den = geom.integrate_power(u, 2.0 * self.p)?;
        if !(den > 0.0) {
            return Err(Error::DegenerateField);
        }
        Ok(self.p * geom.weighted_gradient_energy(u, self.p - 1.0)? / den)
    }

    /// Time derivative `u_t` for a given multiplier.
    pub fn rhs(&self, geom: &Geometry, u: &Field, lambda: f64) -> Result<Field> {
        geom.check(u)?;
        self.check_sign(u)?;
        let lap = geom.laplacian(u)?;
        let s = self.reaction_power();
        let out = match self.variant {
            FlowVariant::A => {
                let p = self.p;
                Field::new(
                    u.values()
                        .iter()
                        .zip(lap.values())
                        .map(|(&v, &l)| pow(v, 2.0 - p) * (l + lambda * pow(v, s)))
                        .collect(),
                )
            }
            _ => lap.zip_map(u, |l, v| l + lambda * pow(v, s)),
        };
        Ok(out)
    }

    /// Scales `u` onto the unit sphere `∫ u^q = 1`.
    pub fn normalize(&self, geom: &Geometry, u: &Field) -> Result<Field> {
        let norm = self.conserved_norm(geom, u)?;
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateField);
        }
        Ok(u.scaled(norm.powf(-1.0 / self.q())))
    }

    /// `∫ u^q`.
    pub fn conserved_norm(&self, geom: &Geometry, u: &Field) -> Result<f64> {
        geom.integrate_power(u, self.q())
    }
}

/// `v^e` with integer exponents routed through `powi`.
pub(crate) fn pow(v: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        v
    } else if e.fract() == 0.0 && e.abs() < 64.0 {
        v.powi(e as i32)
    } else {
        v.powf(e)
    }
}

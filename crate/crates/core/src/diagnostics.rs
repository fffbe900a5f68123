//! Executable versions of the a priori identities and estimates: each check
//! is a pure function of a trace (or a field) and an explicit tolerance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{pow, FlowSpec, FlowVariant};
use crate::geometry::{Field, Geometry};
use crate::integrator::{linear_fit, Trace};

/// Default tolerance of the monotonicity checks, relative to the initial value.
pub const DEFAULT_MONOTONE_TOL: f64 = 1e-6;
/// Default tolerance of the dissipation balance, relative to the initial energy.
pub const DEFAULT_BALANCE_TOL: f64 = 1e-4;
/// A run is Cauchy in `∫λ` when the last quarter adds less than this fraction.
pub const CAUCHY_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Worst violation found, `>= 0`.
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub violation: f64,
    pub tolerance: f64,
    /// Trace index where the worst violation occurred.
    pub time_index: Option<usize>,
    #[serde(default)]
    pub context: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(name: &str, violation: f64, tolerance: f64, time_index: Option<usize>) -> Self {
        let violation = violation.max(0.0);
        CheckReport {
            name: name.to_string(),
            passed: violation <= tolerance,
            violation,
            tolerance,
            time_index,
            context: BTreeMap::new(),
        }
    }

    fn failed(name: &str, tolerance: f64, time_index: Option<usize>) -> Self {
        CheckReport {
            name: name.to_string(),
            passed: false,
            violation: f64::INFINITY,
            tolerance,
            time_index,
            context: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.context.insert(key.to_string(), value);
        self
    }
}

fn require_variant(trace: &Trace, variant: FlowVariant, check: &str) -> Result<()> {
    if trace.spec.variant != variant {
        return Err(Error::InvalidTrace(format!(
            "{check} applies to flow {variant}, trace is from flow {}",
            trace.spec.variant
        )));
    }
    if trace.samples.is_empty() {
        return Err(Error::InvalidTrace("empty trace".into()));
    }
    Ok(())
}

/// Largest upward step of `values`, measured against `scale`.
fn worst_increase(values: impl Iterator<Item = f64>) -> (f64, Option<usize>) {
    let mut worst = (0.0, None);
    let mut prev: Option<f64> = None;
    for (k, v) in values.enumerate() {
        if let Some(p) = prev {
            let rise = if v.is_finite() { v - p } else { f64::INFINITY };
            if rise > worst.0 {
                worst = (rise, Some(k));
            }
        }
        prev = Some(v);
    }
    worst
}

/// `λ(t_{k+1}) ≤ λ(t_k) + tol·λ(t_0)` for every k.
pub fn check_lambda_monotone(trace: &Trace, tol: f64) -> Result<CheckReport> {
    require_variant(trace, FlowVariant::A, "lambda_monotone")?;
    let lambda0 = trace.samples[0].lambda;
    let (rise, at) = worst_increase(trace.samples.iter().map(|s| s.lambda));
    let scale = lambda0.abs();
    let allowed = tol * scale;
    let mut report = CheckReport::new("lambda_monotone", rise, allowed, at).with("lambda0", lambda0);
    report.passed = rise <= allowed;
    Ok(report.with("relative_tol", tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `-d log λ / dt`; `+∞` when λ reached exactly zero.
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub rate: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares exponential decay rate of λ over the final `tail_fraction`
/// of the trace.
pub fn fit_lambda_decay(trace: &Trace, tail_fraction: f64) -> Result<DecayFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidTrace(format!("tail fraction {tail_fraction} not in (0, 1]")));
    }
    let n = trace.samples.len();
    let count = ((n as f64 * tail_fraction).ceil() as usize).min(n);
    if count < 3 {
        return Err(Error::InvalidTrace(format!("decay fit needs at least 3 samples, have {count}")));
    }
    let tail = &trace.samples[n - count..];
    if tail.iter().any(|s| s.lambda == 0.0) {
        return Ok(DecayFit { rate: f64::INFINITY, r_squared: 1.0, samples: count });
    }
    if tail.iter().any(|s| !(s.lambda > 0.0)) {
        return Err(Error::InvalidTrace("λ must be positive on the fit window".into()));
    }
    let xs: Vec<f64> = tail.iter().map(|s| s.t).collect();
    let ys: Vec<f64> = tail.iter().map(|s| s.lambda.ln()).collect();
    let (slope, _, r2, _) = linear_fit(&xs, &ys);
    Ok(DecayFit { rate: -slope, r_squared: r2, samples: count })
}

/// Empirical Harnack constant `sup u_max/u_min`. Passes when the ratio is
/// finite, does not grow (`end ≤ start·(1+tol)`) and `u_min` never drops
/// below `u_min(0)·(1−tol)` (the minimum is non-decreasing for flow A).
pub fn check_harnack(trace: &Trace, tol: f64) -> Result<CheckReport> {
    require_variant(trace, FlowVariant::A, "harnack")?;
    let first = &trace.samples[0];
    if !(first.umin > 0.0) {
        return Ok(CheckReport::failed("harnack", tol, Some(0)));
    }
    let floor = first.umin * (1.0 - tol);
    let mut sup: f64 = 0.0;
    let mut worst_floor = (0.0, None);
    let mut monotone = true;
    let mut prev_ratio = f64::INFINITY;
    for (k, s) in trace.samples.iter().enumerate() {
        if !(s.umin > 0.0) || !s.umax.is_finite() {
            return Ok(CheckReport::failed("harnack", tol, Some(k)).with("u_min", s.umin));
        }
        let ratio = s.umax / s.umin;
        sup = sup.max(ratio);
        if ratio > prev_ratio * (1.0 + tol) {
            monotone = false;
        }
        prev_ratio = ratio;
        let deficit = (floor - s.umin) / first.umin;
        if deficit > worst_floor.0 {
            worst_floor = (deficit, Some(k));
        }
    }
    let start = first.umax / first.umin;
    let last = trace.samples.last().unwrap();
    let end = last.umax / last.umin;
    let growth = (end / start - 1.0).max(0.0);
    let (violation, at) = if growth >= worst_floor.0 {
        (growth, Some(trace.samples.len() - 1))
    } else {
        worst_floor
    };
    Ok(CheckReport::new("harnack", violation, tol, at)
        .with("harnack_constant", sup)
        .with("ratio_start", start)
        .with("ratio_end", end)
        .with("ratio_monotone", if monotone { 1.0 } else { 0.0 })
        .with("u_min_floor", floor))
}

/// `log(u_max(t)/u_max(0)) ≤ ∫_0^t λ + tol` along the trace.
pub fn check_max_growth(trace: &Trace, tol: f64) -> Result<CheckReport> {
    require_variant(trace, FlowVariant::A, "max_growth")?;
    let umax0 = trace.samples[0].umax;
    let mut integral = 0.0;
    let mut worst = (0.0, None);
    for k in 0..trace.samples.len() {
        if k > 0 {
            let (a, b) = (&trace.samples[k - 1], &trace.samples[k]);
            integral += 0.5 * (a.lambda + b.lambda) * (b.t - a.t);
        }
        let excess = (trace.samples[k].umax / umax0).ln() - integral;
        if excess > worst.0 {
            worst = (excess, Some(k));
        }
    }
    Ok(CheckReport::new("max_growth", worst.0, tol, worst.1))
}

/// Trapezoidal `∫ λ dt` over the whole trace.
pub fn lambda_integral(trace: &Trace) -> f64 {
    trace
        .samples
        .windows(2)
        .map(|w| 0.5 * (w[0].lambda + w[1].lambda) * (w[1].t - w[0].t))
        .sum()
}

/// Cauchy criterion for `∫_0^∞ λ dt`: the increment over the last quarter of
/// the run is below 1% of the total.
pub fn check_lambda_integrable(trace: &Trace) -> Result<CheckReport> {
    require_variant(trace, FlowVariant::A, "lambda_integrable")?;
    let s = &trace.samples;
    let (t0, t1) = (s[0].t, s[s.len() - 1].t);
    let cut = t0 + 0.75 * (t1 - t0);
    let total = lambda_integral(trace);
    let tail: f64 = s
        .windows(2)
        .filter(|w| w[0].t >= cut)
        .map(|w| 0.5 * (w[0].lambda + w[1].lambda) * (w[1].t - w[0].t))
        .sum();
    let relative = if total > 0.0 { tail / total } else if tail == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(CheckReport::new("lambda_integrable", relative, CAUCHY_FRACTION, None)
        .with("integral", total)
        .with("tail_increment", tail))
}

/// Lyapunov quantity `λ B^{(p−1)/(p+1)}` non-increasing up to
/// `tol·(initial value)`, and `B ≥ |Ω|^{−(p−1)/2}(1 − tol)` (Hölder on the
/// unit L² sphere, with `|Ω|` the discrete measure).
pub fn check_lyapunov_b(trace: &Trace, tol: f64) -> Result<CheckReport> {
    require_variant(trace, FlowVariant::B, "lyapunov_B")?;
    let p = trace.spec.p;
    let e = (p - 1.0) / (p + 1.0);
    let mut values = Vec::with_capacity(trace.samples.len());
    for (k, s) in trace.samples.iter().enumerate() {
        let b = s.b.ok_or_else(|| Error::InvalidTrace(format!("sample {k} carries no B value")))?;
        values.push((s.lambda * pow(b, e), b));
    }
    let l0 = values[0].0;
    let (rise, rise_at) = worst_increase(values.iter().map(|v| v.0));
    let rise_rel = if l0.abs() > 0.0 { rise / l0.abs() } else { rise };
    let floor = trace.measure.powf(-(p - 1.0) / 2.0);
    let mut worst_floor = (0.0, None);
    for (k, &(_, b)) in values.iter().enumerate() {
        let deficit = (floor * (1.0 - tol) - b) / floor;
        if deficit > worst_floor.0 {
            worst_floor = (deficit, Some(k));
        }
    }
    let (violation, at) = if rise_rel >= worst_floor.0 { (rise_rel, rise_at) } else { worst_floor };
    let b_min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    Ok(CheckReport::new("lyapunov_B", violation, tol, at)
        .with("lyapunov_start", l0)
        .with("lyapunov_end", values.last().unwrap().0)
        .with("B_floor", floor)
        .with("B_min", b_min))
}

/// `‖Δ_h u + λ u^s‖ / ‖u‖` in the weighted L² norm, with `s = p − 1` for
/// flow A and `s = p` otherwise.
pub fn steady_residual(spec: &FlowSpec, geom: &Geometry, u: &Field, lambda: f64) -> Result<f64> {
    let lap = geom.laplacian(u)?;
    let s = spec.reaction_power();
    let r = lap.zip_map(u, |l, v| l + lambda * pow(v, s));
    let denom = geom.l2_norm(u)?;
    if denom == 0.0 {
        return Err(Error::DegenerateField);
    }
    Ok(geom.l2_norm(&r)? / denom)
}

/// Energy balance along the trace, in integrated form over each sample
/// interval (E = Dirichlet energy, D = dissipation):
///
/// * flows A and C: `½ΔE + ∫D dt ≈ 0` cumulatively, and `½ΔE ≤ tol·E(0)` per interval;
/// * flow B: `½ΔE + ∫D dt − λ̄/(p+1) ΔB ≈ 0` cumulatively.
///
/// Violations are relative to `E(0)`.
pub fn check_dissipation_balance(trace: &Trace, tol: f64) -> Result<CheckReport> {
    let s = &trace.samples;
    if s.len() < 2 {
        return Err(Error::InvalidTrace("dissipation balance needs at least 2 samples".into()));
    }
    let variant = trace.spec.variant;
    let p = trace.spec.p;
    let e0 = s[0].energy;
    let scale = if e0 > 0.0 { e0 } else { 1.0 };
    let mut cumulative = 0.0;
    let mut worst_cum = (0.0, None);
    let mut worst_rise = (0.0, None);
    for k in 1..s.len() {
        let (a, b) = (&s[k - 1], &s[k]);
        let dt = b.t - a.t;
        let half_de = 0.5 * (b.energy - a.energy);
        let dissipated = 0.5 * (a.dissipation + b.dissipation) * dt;
        let mut imbalance = half_de + dissipated;
        if variant == FlowVariant::B {
            let (ba, bb) = match (a.b, b.b) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::InvalidTrace(format!("sample {k} carries no B value"))),
            };
            imbalance -= 0.5 * (a.lambda + b.lambda) / (p + 1.0) * (bb - ba);
        } else if half_de / scale > worst_rise.0 {
            worst_rise = (half_de / scale, Some(k));
        }
        if !imbalance.is_finite() {
            return Ok(CheckReport::failed("dissipation_balance", tol, Some(k)));
        }
        cumulative += imbalance;
        if cumulative.abs() / scale > worst_cum.0 {
            worst_cum = (cumulative.abs() / scale, Some(k));
        }
    }
    let (violation, at) = if worst_cum.0 >= worst_rise.0 { worst_cum } else { worst_rise };
    Ok(CheckReport::new("dissipation_balance", violation, tol, at)
        .with("final_imbalance", cumulative / scale)
        .with("max_energy_rise", worst_rise.0))
}

/// λ and the Dirichlet energy stay finite, and their maxima over the second
/// half of the trace do not exceed those of the first half by more than `tol`.
pub fn check_bounded(trace: &Trace, tol: f64) -> Result<CheckReport> {
    let s = &trace.samples;
    if s.is_empty() {
        return Err(Error::InvalidTrace("empty trace".into()));
    }
    if let Some(k) = s.iter().position(|x| !x.lambda.is_finite() || !x.energy.is_finite()) {
        return Ok(CheckReport::failed("bounded", tol, Some(k)));
    }
    let mid = s.len().div_ceil(2);
    let max_of = |range: &[crate::integrator::TraceSample], f: fn(&crate::integrator::TraceSample) -> f64| {
        range.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let mut violation: f64 = 0.0;
    for f in [|x: &crate::integrator::TraceSample| x.lambda.abs(), |x: &crate::integrator::TraceSample| x.energy] {
        let early = max_of(&s[..mid], f);
        let late = max_of(&s[mid..], f);
        if late.is_finite() && early > 0.0 {
            violation = violation.max(late / early - 1.0);
        }
    }
    Ok(CheckReport::new("bounded", violation, tol, None)
        .with("lambda_max", max_of(s, |x| x.lambda.abs()))
        .with("energy_max", max_of(s, |x| x.energy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::TraceSample;
    use std::f64::consts::PI;

    fn sample(t: f64, lambda: f64) -> TraceSample {
        TraceSample {
            t,
            lambda,
            norm_q: 1.0,
            umax: 1.0,
            umin: 1.0,
            energy: 1.0,
            b: Some(1.0),
            dt: 0.1,
            dissipation: 0.0,
            drift: 0.0,
        }
    }

    fn trace_a(samples: Vec<TraceSample>) -> Trace {
        Trace { spec: FlowSpec::new(FlowVariant::A, 2.0, 1).unwrap(), measure: 1.0, samples }
    }

    fn trace_b(samples: Vec<TraceSample>) -> Trace {
        Trace { spec: FlowSpec::new(FlowVariant::B, 3.0, 1).unwrap(), measure: 1.0, samples }
    }

    #[test]
    fn lambda_monotone_examples() {
        let up = trace_a(vec![sample(0.0, 1.0), sample(1.0, 1.1)]);
        let r = check_lambda_monotone(&up, 1e-6).unwrap();
        assert!(!r.passed);
        assert!((r.violation - 0.1).abs() < 1e-12);
        assert_eq!(r.time_index, Some(1));

        let flat = trace_a((0..10).map(|k| sample(k as f64, 0.7)).collect());
        assert!(check_lambda_monotone(&flat, 0.0).unwrap().passed);

        let b = trace_b(vec![sample(0.0, 1.0)]);
        assert!(matches!(check_lambda_monotone(&b, 1e-6), Err(Error::InvalidTrace(_))));
    }

    #[test]
    fn decay_fit_examples() {
        let tr = trace_a((0..100).map(|k| {
            let t = k as f64 * 0.05;
            sample(t, 5.0 * (-3.0 * t).exp())
        }).collect());
        let fit = fit_lambda_decay(&tr, 1.0).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);

        let two = trace_a(vec![sample(0.0, 1.0), sample(1.0, 0.5)]);
        assert!(fit_lambda_decay(&two, 1.0).is_err());

        let zero = trace_a(vec![sample(0.0, 1.0), sample(1.0, 0.5), sample(2.0, 0.0)]);
        assert_eq!(fit_lambda_decay(&zero, 1.0).unwrap().rate, f64::INFINITY);
    }

    #[test]
    fn harnack_examples() {
        let flat = trace_a((0..5).map(|k| sample(k as f64, 0.0)).collect());
        let r = check_harnack(&flat, 1e-6).unwrap();
        assert!(r.passed);
        assert_eq!(r.context["harnack_constant"], 1.0);

        let mut collapsing = flat.clone();
        for (k, s) in collapsing.samples.iter_mut().enumerate() {
            s.umin = 1.0 / (1.0 + k as f64 * 10.0);
        }
        collapsing.samples.last_mut().unwrap().umin = 0.0;
        assert!(!check_harnack(&collapsing, 1e-6).unwrap().passed);
    }

    #[test]
    fn lambda_integral_examples() {
        let n = 20_001;
        let decay = trace_a((0..n).map(|k| {
            let t = 20.0 * k as f64 / (n - 1) as f64;
            sample(t, (-t).exp())
        }).collect());
        let r = check_lambda_integrable(&decay).unwrap();
        assert!((r.context["integral"] - (1.0 - (-20f64).exp())).abs() < 1e-6);
        assert!(r.passed);

        let flat = trace_a((0..100).map(|k| sample(k as f64 * 0.2, 1.0)).collect());
        assert!(!check_lambda_integrable(&flat).unwrap().passed);
    }

    #[test]
    fn lyapunov_examples() {
        let up = trace_b(vec![sample(0.0, 1.0), sample(1.0, 1.2)]);
        assert!(!check_lyapunov_b(&up, 1e-6).unwrap().passed);
        let flat = trace_b((0..5).map(|k| sample(k as f64, 2.0)).collect());
        let r = check_lyapunov_b(&flat, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        let mut low = flat.clone();
        low.samples[2].b = Some(0.5);
        assert!(!check_lyapunov_b(&low, 1e-6).unwrap().passed);
    }

    #[test]
    fn steady_residual_examples() {
        let g = Geometry::circle(2.0 * PI, 32).unwrap();
        let a = FlowSpec::new(FlowVariant::A, 3.0, 1).unwrap();
        let u = a.normalize(&g, &Field::constant(32, 1.0)).unwrap();
        assert!(steady_residual(&a, &g, &u, 0.0).unwrap() < 1e-14);

        let res = 16;
        let gi = Geometry::interval(1.0, res).unwrap();
        let h = 1.0 / res as f64;
        let mu = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        let b1 = FlowSpec::with_override(FlowVariant::B, 1.0, 1).unwrap();
        let phi = gi.sample(|x, _| (PI * x).sin());
        assert!(steady_residual(&b1, &gi, &phi, mu).unwrap() < 1e-12);
        // continuum eigenvalue leaves the O(h²) gap
        let gap = steady_residual(&b1, &gi, &phi, PI * PI).unwrap();
        assert!((gap - (PI * PI - mu)).abs() < 1e-9);
    }

    #[test]
    fn dissipation_examples() {
        let steady = trace_a((0..5).map(|k| sample(k as f64, 0.0)).collect());
        let r = check_dissipation_balance(&steady, 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.violation, 0.0);

        let mut rising = steady.clone();
        for (k, s) in rising.samples.iter_mut().enumerate() {
            s.energy = 1.0 + k as f64;
        }
        assert!(!check_dissipation_balance(&rising, 1e-4).unwrap().passed);

        // exact balance: E = e^{-2t}, D = e^{-2t}
        let mut exact = trace_a((0..2001).map(|k| sample(k as f64 * 1e-3, 0.0)).collect());
        for s in exact.samples.iter_mut() {
            s.energy = (-2.0 * s.t).exp();
            s.dissipation = (-2.0 * s.t).exp();
        }
        let r = check_dissipation_balance(&exact, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn checks_are_pure() {
        let tr = trace_a((0..50).map(|k| sample(k as f64 * 0.1, (-(k as f64) * 0.1).exp())).collect());
        assert_eq!(check_lambda_integrable(&tr).unwrap(), check_lambda_integrable(&tr).unwrap());
        assert_eq!(check_harnack(&tr, 1e-6).unwrap(), check_harnack(&tr, 1e-6).unwrap());
    }
}

//! Time integration with norm projection, adaptive step control,
//! positivity enforcement and blow-up detection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diagnostics::steady_residual;
use crate::error::{Error, Result};
use crate::flows::{pow, FlowSpec, FlowVariant};
use crate::geometry::{Field, Geometry};

/// Step rejection threshold on `|∫u^q − 1|` before projection.
pub const MAX_STEP_DRIFT: f64 = 1e-3;
/// Accepted steps between step-size increases.
pub const GROWTH_INTERVAL: usize = 20;
pub const GROWTH_FACTOR: f64 = 1.2;
/// Safety factor applied to the explicit parabolic stability bound.
const EXPLICIT_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    ExplicitEuler,
    /// Crank–Nicolson on `W Δ_h`, explicit reaction term, mobility `W`
    /// frozen at the start of the step.
    ImexCn,
}

impl Scheme {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "explicit_euler" | "explicit" | "euler" => Some(Scheme::ExplicitEuler),
            "imex_cn" | "imex" | "crank_nicolson" => Some(Scheme::ImexCn),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ExplicitEuler => "explicit_euler",
            Scheme::ImexCn => "imex_cn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_max: f64,
    /// Blow-up when `u_max(t) > factor · u_max(0)`.
    pub blowup_umax_factor: f64,
    /// Converged when the relative steady residual drops below this.
    pub steady_residual_tol: f64,
    pub positivity_floor: f64,
    /// Accepted steps between trace samples.
    pub record_every: usize,
    /// Hard cap on accepted steps.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::ImexCn,
            dt_initial: 1e-4,
            dt_min: 1e-12,
            dt_max: 1e-3,
            t_max: 100.0,
            blowup_umax_factor: 100.0,
            steady_residual_tol: 1e-8,
            positivity_floor: 1e-12,
            record_every: 10,
            max_steps: 50_000_000,
        }
    }
}

impl SolverConfig {
    /// A run with a fixed step `dt` (no adaptation), sampled every step.
    pub fn fixed_step(scheme: Scheme, dt: f64, t_max: f64) -> Self {
        SolverConfig {
            scheme,
            dt_initial: dt,
            dt_min: dt,
            dt_max: dt,
            t_max,
            record_every: 1,
            steady_residual_tol: 0.0,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.dt_initial) || !positive(self.dt_min) || !positive(self.dt_max) {
            return Err(Error::InvalidSolverConfig("time steps must be positive and finite".into()));
        }
        if !(self.dt_min <= self.dt_initial && self.dt_initial <= self.dt_max) {
            return Err(Error::InvalidSolverConfig(format!(
                "need dt_min <= dt_initial <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_initial, self.dt_max
            )));
        }
        if !positive(self.t_max) {
            return Err(Error::InvalidSolverConfig("t_max must be positive".into()));
        }
        if !(self.blowup_umax_factor > 1.0) {
            return Err(Error::InvalidSolverConfig("blowup_umax_factor must exceed 1".into()));
        }
        if !(self.steady_residual_tol >= 0.0) || !(self.positivity_floor >= 0.0) {
            return Err(Error::InvalidSolverConfig("tolerances must be non-negative".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidSolverConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }

    fn is_adaptive(&self) -> bool {
        self.dt_min < self.dt_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// `|∫ u_new^q − 1|` before projection.
    pub drift: f64,
    /// `max |u_t|` at the start of the step.
    pub max_rate: f64,
    pub lambda: f64,
}

/// One row of the trace. `norm_q` is the conserved integral of the recorded
/// (projected) state, `drift` the pre-projection drift of the step that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub lambda: f64,
    pub norm_q: f64,
    pub umax: f64,
    pub umin: f64,
    pub energy: f64,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub dt: f64,
    pub dissipation: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub spec: FlowSpec,
    /// Sum of the geometry's quadrature weights.
    pub measure: f64,
    pub samples: Vec<TraceSample>,
}

impl Trace {
    pub fn new(spec: FlowSpec, measure: f64) -> Self {
        Trace { spec, measure, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    BlowUp,
    HorizonReached,
    PositivityLost,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "Converged",
            RunStatus::BlowUp => "BlowUp",
            RunStatus::HorizonReached => "HorizonReached",
            RunStatus::PositivityLost => "PositivityLost",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowupCriterion {
    Threshold,
    StepCollapse,
}

/// Least-squares fit of `log u_max = a + exponent · log(T_est − t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub t_est: f64,
    pub r_squared: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub criterion: BlowupCriterion,
    /// Trace index of the first sample meeting the criterion.
    pub index: usize,
    pub t_detect: f64,
    pub umax_ratio: f64,
    pub fit: Option<GrowthFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub steady_residual: f64,
    pub blowup: Option<BlowupReport>,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub final_field: Field,
    pub final_lambda: f64,
    pub final_time: f64,
    pub steps: usize,
    pub evidence: Evidence,
}

/// Advances `u` by one step of size `dt`. The result is not projected.
pub fn step(spec: &FlowSpec, geom: &Geometry, u: &Field, dt: f64, scheme: Scheme) -> Result<(Field, StepStats)> {
    let lambda = spec.lambda(geom, u)?;
    let rate = spec.rhs(geom, u, lambda)?;
    advance(spec, geom, u, lambda, &rate, dt, scheme)
}

fn advance(
    spec: &FlowSpec,
    geom: &Geometry,
    u: &Field,
    lambda: f64,
    rate: &Field,
    dt: f64,
    scheme: Scheme,
) -> Result<(Field, StepStats)> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidSolverConfig(format!("dt must be non-negative, got {dt}")));
    }
    let next = match scheme {
        Scheme::ExplicitEuler => u.zip_map(rate, |v, f| v + dt * f),
        Scheme::ImexCn => {
            let w = geom.weights();
            let mobility = spec.mobility(u);
            let s = spec.reaction_power();
            let mass: Vec<f64> = w.iter().zip(mobility.values()).map(|(wi, m)| wi / m).collect();
            let mut ku = vec![0.0; u.len()];
            geom.stiffness_apply(u.values(), &mut ku);
            let rhs: Vec<f64> = (0..u.len())
                .map(|i| {
                    let v = u.values()[i];
                    mass[i] * v - 0.5 * dt * ku[i] + dt * w[i] * lambda * pow(v, s)
                })
                .collect();
            Field::new(geom.solve_shifted(&mass, 0.5 * dt, &rhs)?)
        }
    };
    if let Some(i) = next.first_non_finite() {
        return Err(Error::NonFinite(i));
    }
    let drift = (spec.conserved_norm(geom, &next)? - 1.0).abs();
    let max_rate = rate.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok((next, StepStats { drift, max_rate, lambda }))
}

/// Projects onto the unit sphere of the conserved norm.
pub fn project(spec: &FlowSpec, geom: &Geometry, u: &Field) -> Result<Field> {
    spec.normalize(geom, u)
}

/// Largest stable explicit step for the current state.
pub fn explicit_step_bound(spec: &FlowSpec, geom: &Geometry, u: &Field) -> f64 {
    let mob_max = spec.mobility(u).max();
    EXPLICIT_SAFETY * 2.0 / (geom.spectral_radius_bound() * mob_max)
}

fn validate_initial(spec: &FlowSpec, geom: &Geometry, g: &Field) -> Result<()> {
    geom.check(g)?;
    if let Some(i) = g.first_non_finite() {
        return Err(Error::InvalidInitialData(format!("non-finite value at node {i}")));
    }
    if let Some((i, v)) = g.values().iter().copied().enumerate().find(|&(_, v)| v < 0.0) {
        return Err(Error::InvalidInitialData(format!("negative value {v} at node {i}")));
    }
    if g.values().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInitialData("identically zero".into()));
    }
    if spec.variant == FlowVariant::A {
        if let Some((i, v)) = g.first_at_or_below(0.0) {
            return Err(Error::InvalidInitialData(format!(
                "flow A needs strictly positive data: {v} at node {i}"
            )));
        }
    }
    Ok(())
}

/// Runs a flow from initial data `g` until convergence, blow-up, loss of
/// positivity or the horizon.
pub fn run(spec: &FlowSpec, geom: &Geometry, g: &Field, config: &SolverConfig) -> Result<(RunOutcome, Trace)> {
    run_observed(spec, geom, g, config, |_, _| {})
}

/// [`run`] with a callback receiving every recorded state.
pub fn run_observed<F>(
    spec: &FlowSpec,
    geom: &Geometry,
    g: &Field,
    config: &SolverConfig,
    mut observe: F,
) -> Result<(RunOutcome, Trace)>
where
    F: FnMut(f64, &Field),
{
    config.validate()?;
    spec.check_geometry(geom)?;
    validate_initial(spec, geom, g)?;

    let mut u = project(spec, geom, g)?;
    let umax0 = u.max();
    let mut trace = Trace::new(*spec, geom.measure());
    let mut t = 0.0;
    let mut dt = config.dt_initial;
    let mut steps = 0usize;
    let mut since_growth = 0usize;
    let mut rejected = 0usize;
    let mut last_drift = 0.0;
    let mut last_dt = 0.0;
    let mut prev_umax = umax0;
    let mut recorded_at: Option<usize> = None;

    loop {
        let lambda = spec.lambda(geom, &u)?;
        let rate = spec.rhs(geom, &u, lambda)?;
        let residual = steady_residual(spec, geom, &u, lambda)?;

        let mut record = |trace: &mut Trace, u: &Field| -> Result<()> {
            trace.samples.push(sample(spec, geom, u, t, lambda, &rate, last_dt, last_drift)?);
            observe(t, u);
            Ok(())
        };
        if steps.is_multiple_of(config.record_every) {
            record(&mut trace, &u)?;
            recorded_at = Some(steps);
        }

        let status = if residual < config.steady_residual_tol {
            Some(RunStatus::Converged)
        } else if steps > 0 && u.max() > config.blowup_umax_factor * umax0 {
            Some(RunStatus::BlowUp)
        } else if t >= config.t_max || steps >= config.max_steps {
            Some(RunStatus::HorizonReached)
        } else {
            None
        };
        if let Some(status) = status {
            if recorded_at != Some(steps) {
                record(&mut trace, &u)?;
            }
            let outcome = finish(status, u, lambda, t, steps, residual, rejected, &trace, config);
            return Ok((outcome, trace));
        }

        // Attempt a step, halving on rejection.
        let (next, stats, dt_used) = loop {
            let mut h = dt.min(config.t_max - t);
            if config.scheme == Scheme::ExplicitEuler {
                h = h.min(explicit_step_bound(spec, geom, &u));
            }
            let attempt = advance(spec, geom, &u, lambda, &rate, h, config.scheme);
            let accepted = match attempt {
                Ok((next, stats)) => {
                    let sign_ok = match spec.variant {
                        FlowVariant::A => next.min() > 0.0,
                        _ => next.min() >= 0.0,
                    };
                    if sign_ok && stats.drift <= MAX_STEP_DRIFT {
                        Some((next, stats))
                    } else {
                        None
                    }
                }
                Err(Error::NonFinite(_)) | Err(Error::LinearSolve(_)) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some((next, stats)) => break (next, stats, h),
                None => {
                    rejected += 1;
                    since_growth = 0;
                    dt = 0.5 * h;
                    if dt < config.dt_min {
                        if u.max() > prev_umax {
                            if recorded_at != Some(steps) {
                                record(&mut trace, &u)?;
                            }
                            let mut outcome =
                                finish(RunStatus::BlowUp, u, lambda, t, steps, residual, rejected, &trace, config);
                            if let Some(report) = outcome.evidence.blowup.as_mut() {
                                report.criterion = BlowupCriterion::StepCollapse;
                            } else {
                                let last = trace.samples.len() - 1;
                                outcome.evidence.blowup = Some(BlowupReport {
                                    criterion: BlowupCriterion::StepCollapse,
                                    index: last,
                                    t_detect: t,
                                    umax_ratio: outcome.final_field.max() / umax0,
                                    fit: growth_fit(&trace),
                                });
                            }
                            return Ok((outcome, trace));
                        }
                        return Err(Error::StepCollapse { t, dt_min: config.dt_min });
                    }
                }
            }
        };

        let projected = project(spec, geom, &next)?;
        prev_umax = u.max();
        t += dt_used;
        steps += 1;
        last_drift = stats.drift;
        last_dt = dt_used;
        u = projected;

        let floor_applies = spec.variant == FlowVariant::A || steps > 1;
        if floor_applies {
            if let Some((_, _)) = u.first_at_or_below(config.positivity_floor) {
                let lambda = spec.lambda(geom, &u).unwrap_or(f64::NAN);
                let rate = spec.rhs(geom, &u, lambda).unwrap_or_else(|_| Field::constant(u.len(), f64::NAN));
                trace.samples.push(sample(spec, geom, &u, t, lambda, &rate, last_dt, last_drift)?);
                observe(t, &u);
                let residual = steady_residual(spec, geom, &u, lambda).unwrap_or(f64::NAN);
                let outcome = finish(RunStatus::PositivityLost, u, lambda, t, steps, residual, rejected, &trace, config);
                return Ok((outcome, trace));
            }
        }

        if config.is_adaptive() {
            since_growth += 1;
            if since_growth >= GROWTH_INTERVAL {
                dt = (dt * GROWTH_FACTOR).min(config.dt_max);
                since_growth = 0;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    status: RunStatus,
    u: Field,
    lambda: f64,
    t: f64,
    steps: usize,
    residual: f64,
    rejected: usize,
    trace: &Trace,
    config: &SolverConfig,
) -> RunOutcome {
    let blowup = if status == RunStatus::BlowUp { detect_blowup(trace, config) } else { None };
    RunOutcome {
        status,
        final_field: u,
        final_lambda: lambda,
        final_time: t,
        steps,
        evidence: Evidence { steady_residual: residual, blowup, rejected_steps: rejected },
    }
}

#[allow(clippy::too_many_arguments)]
fn sample(
    spec: &FlowSpec,
    geom: &Geometry,
    u: &Field,
    t: f64,
    lambda: f64,
    rate: &Field,
    dt: f64,
    drift: f64,
) -> Result<TraceSample> {
    let weight = spec.dissipation_weight(u);
    let dissipation: f64 = geom
        .weights()
        .iter()
        .zip(weight.values().iter().zip(rate.values()))
        .map(|(w, (a, f))| w * a * f * f)
        .sum();
    let b = match spec.variant {
        FlowVariant::B => Some(geom.integrate_power(u, spec.p + 1.0)?),
        _ => None,
    };
    Ok(TraceSample {
        t,
        lambda,
        norm_q: spec.conserved_norm(geom, u)?,
        umax: u.max(),
        umin: u.min(),
        energy: geom.dirichlet_energy(u)?,
        b,
        dt,
        dissipation,
        drift,
    })
}

/// Looks for blow-up evidence in a trace: the first sample with
/// `u_max > factor · u_max(0)`, or a final step size at `dt_min` while `u_max`
/// was still increasing. A growth-rate fit over the final decade of `u_max`
/// is attached as descriptive evidence.
pub fn detect_blowup(trace: &Trace, config: &SolverConfig) -> Option<BlowupReport> {
    let first = trace.samples.first()?;
    let umax0 = first.umax;
    let threshold = config.blowup_umax_factor * umax0;
    if let Some((index, s)) = trace.samples.iter().enumerate().find(|(_, s)| s.umax > threshold) {
        return Some(BlowupReport {
            criterion: BlowupCriterion::Threshold,
            index,
            t_detect: s.t,
            umax_ratio: s.umax / umax0,
            fit: growth_fit(trace),
        });
    }
    let n = trace.samples.len();
    if n >= 2 {
        let last = &trace.samples[n - 1];
        let prev = &trace.samples[n - 2];
        if last.dt > 0.0 && last.dt <= config.dt_min && config.dt_min < config.dt_max && last.umax > prev.umax {
            return Some(BlowupReport {
                criterion: BlowupCriterion::StepCollapse,
                index: n - 1,
                t_detect: last.t,
                umax_ratio: last.umax / umax0,
                fit: growth_fit(trace),
            });
        }
    }
    None
}

/// Fits `log u_max` against `log(T − t)` over the trailing samples whose
/// `u_max` lies within a factor 10 of the final value, choosing `T > t_last`
/// to minimize the squared residual.
pub fn growth_fit(trace: &Trace) -> Option<GrowthFit> {
    let samples = &trace.samples;
    let last = samples.last()?;
    let floor = last.umax / 10.0;
    let start = samples.iter().rposition(|s| s.umax < floor).map_or(0, |i| i + 1);
    let window: Vec<(f64, f64)> = samples[start..]
        .iter()
        .filter(|s| s.umax > 0.0)
        .map(|s| (s.t, s.umax.ln()))
        .collect();
    if window.len() < 3 {
        return None;
    }
    let t_last = window.last().unwrap().0;
    let span = (t_last - window[0].0).max(f64::EPSILON * t_last.abs().max(1.0));
    let eval = |log_delta: f64| -> (f64, f64, f64) {
        let tt = t_last + log_delta.exp();
        let xs: Vec<f64> = window.iter().map(|(t, _)| (tt - t).ln()).collect();
        let ys: Vec<f64> = window.iter().map(|(_, y)| *y).collect();
        let (slope, _, r2, sse) = linear_fit(&xs, &ys);
        (sse, slope, r2)
    };
    let lo = (span * 1e-10).ln();
    let hi = (span * 1e3).ln();
    let grid = 240;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=grid {
        let s = lo + (hi - lo) * k as f64 / grid as f64;
        let (sse, _, _) = eval(s);
        if sse < best.0 {
            best = (sse, s);
        }
    }
    // golden-section refinement around the best grid point
    let step = (hi - lo) / grid as f64;
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if eval(c).0 < eval(d).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let s = 0.5 * (a + b);
    let (_, exponent, r_squared) = eval(s);
    Some(GrowthFit { exponent, t_est: t_last + s.exp(), r_squared, samples: window.len() })
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, r², sse)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ybar - slope * xbar;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, intercept, r2, sse)
}

//! Single experiments and suites: build the initial data, run the flow,
//! apply the configured checks and write `trace.csv`, `snapshots/` and
//! `summary.json` into the experiment's own directory.
//!
//! Every number in the summary that describes the run is a function of
//! `trace.csv`: the final λ is the last trace row, the checks and fits are the
//! `diagnostics` functions applied to the parsed trace. The oracle comparison
//! uses the final snapshot.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, CheckKind, ExperimentConfig, Preset};
use crate::diagnostics::{self, CheckReport, DecayFit};
use crate::error::{Error, Result};
use crate::flows::{critical_exponent, FlowSpec, FlowVariant};
use crate::geometry::{Field, Geometry, GeometryKind};
use crate::integrator::{self, BlowupReport, RunStatus, Trace};
use crate::io;
use crate::oracles;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "NORMFLOW_OUT";
/// Output root when neither the config nor the environment names one.
pub const DEFAULT_OUT: &str = "normflow_out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BLOWUP: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub kind: GeometryKind,
    pub extents: Vec<f64>,
    pub dimension: usize,
    pub resolution: usize,
}

/// Exponential decay fit of λ with its linearized prediction
/// `2 μ₁ u∞^{2−p}` (`u∞` the normalized constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    /// Fitted rate `−d log λ/dt`.
    #[serde(deserialize_with = "io::nullable_f64")]
    pub c_fit: f64,
    pub r_squared: f64,
    pub samples: usize,
    pub tail_fraction: f64,
    pub mu1: f64,
    pub predicted_rate: f64,
    #[serde(deserialize_with = "io::nullable_f64")]
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fits {
    pub decay: Option<DecaySummary>,
    pub blowup: Option<BlowupReport>,
}

/// Final state against the steady state built from the shooting oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub lambda_oracle: f64,
    pub lambda_final: f64,
    pub lambda_rel_error: f64,
    /// Weighted L² norm of `u_final − u_oracle`.
    pub l2_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub flow: FlowSpec,
    pub geometry: GeometrySummary,
    pub initial: String,
    pub seed: u64,
    /// `None` when the solver failed; see `error`.
    pub status: Option<RunStatus>,
    pub expected_status: Option<RunStatus>,
    #[serde(deserialize_with = "io::nullable_f64")]
    pub final_lambda: f64,
    pub final_time: f64,
    pub steps: usize,
    pub rejected_steps: usize,
    #[serde(deserialize_with = "io::nullable_f64")]
    pub steady_residual: f64,
    /// `(u_max − u_min)/u_max` of the final state.
    #[serde(deserialize_with = "io::nullable_f64")]
    pub final_spread: f64,
    /// `name → "pass" | "fail"`.
    pub checks: BTreeMap<String, String>,
    pub check_reports: Vec<CheckReport>,
    pub fits: Fits,
    pub oracle: Option<OracleComparison>,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl Summary {
    pub fn checks_passed(&self) -> bool {
        self.checks.values().all(|v| v == "pass")
    }
}

/// Result of [`run_experiment`]: the summary plus the in-memory trace and
/// final field (when the solver produced them).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: Summary,
    pub trace: Option<Trace>,
    pub final_field: Option<Field>,
    pub dir: PathBuf,
}

/// Output directory: `output_dir` when the config sets it, otherwise
/// `<root>/<name>` with `root` from [`OUT_ENV`] or [`DEFAULT_OUT`].
pub fn output_dir(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    };
    root.join(&cfg.name)
}

/// Initial data from the config's preset, with the seeded multiplicative
/// noise applied, normalized to the flow's constraint.
pub fn initial_field(cfg: &ExperimentConfig, geom: &Geometry) -> Result<Field> {
    let ext = geom.extents();
    let (lx, ly) = (ext[0], ext.get(1).copied().unwrap_or(ext[0]));
    let two_d = matches!(geom.kind(), GeometryKind::RectangleDirichlet | GeometryKind::Torus2D);
    let mut g = match &cfg.preset {
        Preset::ConstantPlusSine { amplitude, mode } => {
            let k = *mode as f64 * std::f64::consts::TAU / lx;
            geom.sample(|x, _| 1.0 + amplitude * (k * x).sin())
        }
        Preset::Parabola => match geom.kind() {
            GeometryKind::RadialBallDirichlet => geom.sample(|r, _| lx * lx - r * r),
            _ if two_d => geom.sample(|x, y| x * (lx - x) * y * (ly - y)),
            _ => geom.sample(|x, _| x * (lx - x)),
        },
        Preset::GaussianBump { width, center } => {
            let s = 2.0 * width * width;
            if two_d {
                geom.sample(|x, y| (-((x - center).powi(2) + (y - center).powi(2)) / s).exp())
            } else {
                geom.sample(|x, _| (-(x - center).powi(2) / s).exp())
            }
        }
        Preset::File(path) => io::read_field(&cfg.resolve(path), geom)?,
    };
    if cfg.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in g.values_mut() {
            *v *= 1.0 + cfg.noise * rng.gen_range(-1.0..1.0);
        }
    }
    cfg.spec.normalize(geom, &g)
}

/// Applies one check to a trace.
pub fn apply_check(kind: CheckKind, trace: &Trace, cfg: &ExperimentConfig) -> Result<CheckReport> {
    let d = &cfg.diagnostics;
    match kind {
        CheckKind::LambdaMonotone => diagnostics::check_lambda_monotone(trace, d.monotone_tol),
        CheckKind::Harnack => diagnostics::check_harnack(trace, d.monotone_tol),
        CheckKind::MaxGrowth => diagnostics::check_max_growth(trace, d.monotone_tol),
        CheckKind::LambdaIntegrable => diagnostics::check_lambda_integrable(trace),
        CheckKind::LyapunovB => diagnostics::check_lyapunov_b(trace, d.monotone_tol),
        CheckKind::DissipationBalance => diagnostics::check_dissipation_balance(trace, d.balance_tol),
        CheckKind::Bounded => diagnostics::check_bounded(trace, d.balance_tol),
    }
}

/// Decay fit of λ against `2 μ₁ u∞^{2−p}`; flow A only.
pub fn decay_summary(trace: &Trace, geom: &Geometry, tail_fraction: f64) -> Result<DecaySummary> {
    let DecayFit { rate, r_squared, samples } = diagnostics::fit_lambda_decay(trace, tail_fraction)?;
    let (mu1, _) = oracles::principal_eigenpair(geom)?;
    let p = trace.spec.p;
    let u_inf = trace.measure.powf(-1.0 / p);
    let predicted_rate = 2.0 * mu1 * u_inf.powf(2.0 - p);
    Ok(DecaySummary {
        c_fit: rate,
        r_squared,
        samples,
        tail_fraction,
        mu1,
        predicted_rate,
        relative_error: (rate - predicted_rate).abs() / predicted_rate,
    })
}

/// Compares a converged state with the composed shooting oracle. Available for
/// Dirichlet intervals and balls below the critical exponent (above it the
/// shot profile has no zero).
pub fn oracle_comparison(spec: &FlowSpec, geom: &Geometry, u: &Field, lambda: f64) -> Result<OracleComparison> {
    let (n, radius) = match geom.kind() {
        GeometryKind::IntervalDirichlet => (1, 0.5 * geom.extents()[0]),
        GeometryKind::RadialBallDirichlet => (geom.dimension(), geom.extents()[0]),
        other => return Err(Error::ProfileMismatch(format!("no radial oracle for {other}"))),
    };
    let profile = oracles::lane_emden_shoot(n, spec.p, radius, oracles::SHOOT_TOL)?;
    let (u_oracle, lambda_oracle) = oracles::steady_state_from_profile(&profile, geom, spec.q())?;
    let diff = u.zip_map(&u_oracle, |a, b| a - b);
    Ok(OracleComparison {
        lambda_oracle,
        lambda_final: lambda,
        lambda_rel_error: (lambda - lambda_oracle).abs() / lambda_oracle.abs(),
        l2_distance: geom.l2_norm(&diff)?,
    })
}

fn exit_code(status: Option<RunStatus>, checks_passed: bool) -> i32 {
    match status {
        Some(RunStatus::BlowUp) => EXIT_BLOWUP,
        Some(RunStatus::Converged | RunStatus::HorizonReached) if checks_passed => EXIT_OK,
        _ => EXIT_FAILURE,
    }
}

fn base_summary(cfg: &ExperimentConfig) -> Summary {
    Summary {
        name: cfg.name.clone(),
        flow: cfg.spec,
        geometry: GeometrySummary {
            kind: cfg.geometry.kind,
            extents: cfg.geometry.extents.clone(),
            dimension: cfg.geometry.dimension,
            resolution: cfg.geometry.resolution,
        },
        initial: cfg.preset.to_string(),
        seed: cfg.seed,
        status: None,
        expected_status: cfg.expect,
        final_lambda: f64::NAN,
        final_time: 0.0,
        steps: 0,
        rejected_steps: 0,
        steady_residual: f64::NAN,
        final_spread: f64::NAN,
        checks: BTreeMap::new(),
        check_reports: Vec::new(),
        fits: Fits::default(),
        oracle: None,
        exit_code: EXIT_FAILURE,
        error: None,
    }
}

/// Runs one experiment into `dir`. Solver and check failures are recorded in
/// the summary (and its exit code); only I/O failures are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentResult> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = base_summary(cfg);
    let mut result = ExperimentResult { summary: summary.clone(), trace: None, final_field: None, dir: dir.to_path_buf() };

    let prepared = cfg.geometry.build().and_then(|geom| initial_field(cfg, &geom).map(|g| (geom, g)));
    let (geom, g) = match prepared {
        Ok(v) => v,
        Err(e) => {
            summary.error = Some(e.to_string());
            write_summary(dir, &summary)?;
            result.summary = summary;
            return Ok(result);
        }
    };

    // Snapshots are written as states are recorded; the first I/O error wins.
    let mut io_error: Option<Error> = None;
    let mut next_snapshot = 0.0;
    let every = cfg.snapshot_every;
    let observed = integrator::run_observed(&cfg.spec, &geom, &g, &cfg.solver, |t, u| {
        if io_error.is_some() || every == 0.0 && t > 0.0 || t < next_snapshot {
            return;
        }
        if every > 0.0 {
            while next_snapshot <= t {
                next_snapshot += every;
            }
        }
        if let Err(e) = io::field_to_csv(&geom, u).and_then(|text| io::write_text(&io::snapshot_path(dir, t), &text)) {
            io_error = Some(e);
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }

    let (outcome, trace) = match observed {
        Ok(v) => v,
        Err(e) => {
            summary.error = Some(e.to_string());
            write_summary(dir, &summary)?;
            result.summary = summary;
            return Ok(result);
        }
    };
    let final_text = io::field_to_csv(&geom, &outcome.final_field)?;
    io::write_text(&io::snapshot_path(dir, outcome.final_time), &final_text)?;
    io::write_text(&dir.join("trace.csv"), &io::trace_to_csv(&trace.samples)?)?;

    let last = trace.samples.last().expect("a run records at least one sample");
    summary.status = Some(outcome.status);
    summary.final_lambda = last.lambda;
    summary.final_time = outcome.final_time;
    summary.steps = outcome.steps;
    summary.rejected_steps = outcome.evidence.rejected_steps;
    summary.steady_residual = outcome.evidence.steady_residual;
    summary.final_spread = (last.umax - last.umin) / last.umax;
    summary.fits.blowup = outcome.evidence.blowup;

    let mut problems = Vec::new();
    for &kind in &cfg.diagnostics.checks {
        match apply_check(kind, &trace, cfg) {
            Ok(report) => summary.check_reports.push(report),
            Err(e) => problems.push(format!("{}: {e}", kind.name())),
        }
    }
    summary.checks = summary
        .check_reports
        .iter()
        .map(|r| (r.name.clone(), if r.passed { "pass" } else { "fail" }.to_string()))
        .collect();
    for name in problems.iter().filter_map(|p| p.split(':').next()) {
        summary.checks.insert(name.to_string(), "fail".into());
    }

    if cfg.spec.variant == FlowVariant::A && geom.is_periodic() {
        match decay_summary(&trace, &geom, cfg.diagnostics.decay_tail) {
            Ok(d) => summary.fits.decay = Some(d),
            Err(e) => problems.push(format!("decay fit: {e}")),
        }
    }
    let oracle_applies = outcome.status == RunStatus::Converged
        && cfg.spec.variant != FlowVariant::A
        && cfg.spec.p < critical_exponent(geom.dimension())
        && matches!(geom.kind(), GeometryKind::IntervalDirichlet | GeometryKind::RadialBallDirichlet);
    if oracle_applies {
        match oracle_comparison(&cfg.spec, &geom, &outcome.final_field, last.lambda) {
            Ok(c) => summary.oracle = Some(c),
            Err(e) => problems.push(format!("oracle: {e}")),
        }
    }
    if !problems.is_empty() {
        summary.error = Some(problems.join("; "));
    }
    summary.exit_code = exit_code(summary.status, summary.checks_passed());
    write_summary(dir, &summary)?;

    result.summary = summary;
    result.final_field = Some(outcome.final_field);
    result.trace = Some(trace);
    Ok(result)
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::io(dir, e))?;
    io::write_text(&dir.join("summary.json"), &(text + "\n"))
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { what: "summary json", message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub config: String,
    pub name: Option<String>,
    pub status: Option<RunStatus>,
    pub expected_status: Option<RunStatus>,
    pub exit_code: i32,
    pub checks_passed: bool,
    /// Ran, reached the expected status (Converged or HorizonReached when
    /// none is given) and passed every check.
    pub as_expected: bool,
    pub output_dir: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub experiments: Vec<SuiteEntry>,
    pub unexpected: usize,
}

impl SuiteReport {
    pub fn exit_code(&self) -> i32 {
        if self.unexpected == 0 {
            EXIT_OK
        } else {
            EXIT_FAILURE
        }
    }
}

fn failed_entry(config: &Path, name: Option<String>, error: String) -> SuiteEntry {
    SuiteEntry {
        config: config.display().to_string(),
        name,
        status: None,
        expected_status: None,
        exit_code: EXIT_FAILURE,
        checks_passed: false,
        as_expected: false,
        output_dir: None,
        error: Some(error),
    }
}

/// Runs every `*.toml` config in `dir` (in parallel) and writes
/// `suite_report.json` into `root`. Malformed configs are reported without
/// stopping the others.
pub fn run_suite(dir: &Path, root: &Path) -> Result<SuiteReport> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!("no *.toml configs in {}", dir.display())));
    }

    let loaded: Vec<(PathBuf, Result<ExperimentConfig>)> = paths.into_iter().map(|p| {
        let cfg = load_config(&p);
        (p, cfg)
    }).collect();
    let mut seen: HashMap<PathBuf, usize> = HashMap::new();
    for (_, cfg) in &loaded {
        if let Ok(cfg) = cfg {
            *seen.entry(output_dir(cfg, Some(root))).or_default() += 1;
        }
    }

    let experiments: Vec<SuiteEntry> = loaded
        .par_iter()
        .map(|(path, cfg)| {
            let cfg = match cfg {
                Ok(cfg) => cfg,
                Err(e) => return failed_entry(path, None, e.to_string()),
            };
            let out = output_dir(cfg, Some(root));
            if seen[&out] > 1 {
                return failed_entry(path, Some(cfg.name.clone()), format!("output directory {} is shared with another config", out.display()));
            }
            match run_experiment(cfg, &out) {
                Ok(res) => {
                    let s = &res.summary;
                    let reached = match cfg.expect {
                        Some(want) => s.status == Some(want),
                        None => matches!(s.status, Some(RunStatus::Converged | RunStatus::HorizonReached)),
                    };
                    SuiteEntry {
                        config: path.display().to_string(),
                        name: Some(s.name.clone()),
                        status: s.status,
                        expected_status: cfg.expect,
                        exit_code: s.exit_code,
                        checks_passed: s.checks_passed(),
                        as_expected: reached && s.checks_passed() && s.error.is_none(),
                        output_dir: Some(out.display().to_string()),
                        error: s.error.clone(),
                    }
                }
                Err(e) => failed_entry(path, Some(cfg.name.clone()), e.to_string()),
            }
        })
        .collect();

    let unexpected = experiments.iter().filter(|e| !e.as_expected).count();
    let report = SuiteReport { experiments, unexpected };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::io(root, e))?;
    io::write_text(&root.join("suite_report.json"), &(text + "\n"))?;
    Ok(report)
}

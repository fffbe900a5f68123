//! Experiment configuration files.
//!
//! The format is TOML: one `key = value` per line, `#` comments and
//! `[section]` headers. Strings are quoted.
//!
//! ```toml
//! name = "flow_b_interval"          # default: file stem
//! output_dir = "out/flow_b"         # default: $NORMFLOW_OUT/<name>
//! seed = 7                          # default 0; drives `noise`
//! expect = "Converged"              # optional expected status (suites)
//!
//! [flow]
//! variant = "B"                     # A | B | C
//! p = 3.0
//! allow_override = false
//!
//! [geometry]
//! kind = "interval_dirichlet"       # circle | rectangle_dirichlet | torus2d | radial_ball_dirichlet
//! extents = [1.0]                   # length(s) or radius
//! resolution = 512
//! dimension = 1                     # ambient n; required only for the radial ball
//!
//! [initial]
//! preset = "parabola"               # constant_plus_sine(a, k) | gaussian_bump(w, c) | file:<path>
//! noise = 0.0                       # multiplicative uniform perturbation amplitude
//!
//! [solver]                          # every key optional
//! scheme = "imex_cn"                # or "explicit_euler"
//! dt_initial = 1e-4
//! dt_min = 1e-12
//! dt_max = 1e-3
//! t_max = 100.0
//! blowup_umax_factor = 100.0
//! steady_residual_tol = 1e-8
//! positivity_floor = 1e-12
//! record_every = 10
//! max_steps = 50000000
//!
//! [output]
//! snapshot_every = 1.0              # simulated time between snapshots; 0 = first and last only
//!
//! [diagnostics]
//! checks = ["lyapunov_B", "dissipation_balance"]   # default: every check that applies
//! monotone_tol = 1e-6
//! balance_tol = 1e-4
//! decay_tail = 0.5
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::flows::{FlowSpec, FlowVariant};
use crate::geometry::{Geometry, GeometryKind};
use crate::integrator::{RunStatus, Scheme, SolverConfig};

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every problem found in one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl From<ConfigErrors> for Error {
    fn from(e: ConfigErrors) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    /// `1 + a sin(2π k x / L_x)`.
    ConstantPlusSine { amplitude: f64, mode: u32 },
    /// Product of `x(L − x)` factors (`R² − r²` on the ball).
    Parabola,
    /// `exp(−|x − c|² / (2 w²))`, centred at `c` on every axis (radius on the ball).
    GaussianBump { width: f64, center: f64 },
    /// Field CSV in the snapshot format.
    File(PathBuf),
}

impl Preset {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let text = text.trim();
        if let Some(path) = text.strip_prefix("file:") {
            let path = path.trim();
            if path.is_empty() {
                return Err("file: preset needs a path".into());
            }
            return Ok(Preset::File(PathBuf::from(path)));
        }
        let (name, args) = match text.find('(') {
            Some(open) => {
                let close = text
                    .rfind(')')
                    .filter(|&c| c == text.len() - 1 && c > open)
                    .ok_or_else(|| format!("unbalanced parentheses in preset `{text}`"))?;
                let args = text[open + 1..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .map(|a| a.parse::<f64>().map_err(|_| format!("preset argument `{a}` is not a number")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (text[..open].trim(), args)
            }
            None => (text, Vec::new()),
        };
        let arity = |n: usize| -> std::result::Result<(), String> {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("preset `{name}` takes {n} argument(s), got {}", args.len()))
            }
        };
        match name {
            "constant_plus_sine" => {
                arity(2)?;
                let (amplitude, mode) = (args[0], args[1]);
                if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
                    return Err(format!("constant_plus_sine amplitude must satisfy |a| < 1, got {amplitude}"));
                }
                if !(mode >= 0.0 && mode.fract() == 0.0 && mode <= 1e6) {
                    return Err(format!("constant_plus_sine mode must be a non-negative integer, got {mode}"));
                }
                Ok(Preset::ConstantPlusSine { amplitude, mode: mode as u32 })
            }
            "parabola" => {
                arity(0)?;
                Ok(Preset::Parabola)
            }
            "gaussian_bump" => {
                arity(2)?;
                let (width, center) = (args[0], args[1]);
                if !(width.is_finite() && width > 0.0) || !center.is_finite() {
                    return Err(format!("gaussian_bump needs width > 0 and a finite centre, got ({width}, {center})"));
                }
                Ok(Preset::GaussianBump { width, center })
            }
            other => Err(format!(
                "unknown preset `{other}`; expected constant_plus_sine(a, k), parabola, gaussian_bump(w, c) or file:<path>"
            )),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::ConstantPlusSine { amplitude, mode } => write!(f, "constant_plus_sine({amplitude}, {mode})"),
            Preset::Parabola => f.write_str("parabola"),
            Preset::GaussianBump { width, center } => write!(f, "gaussian_bump({width}, {center})"),
            Preset::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckKind {
    LambdaMonotone,
    Harnack,
    MaxGrowth,
    LambdaIntegrable,
    LyapunovB,
    DissipationBalance,
    Bounded,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::LambdaMonotone,
        CheckKind::Harnack,
        CheckKind::MaxGrowth,
        CheckKind::LambdaIntegrable,
        CheckKind::LyapunovB,
        CheckKind::DissipationBalance,
        CheckKind::Bounded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::LambdaMonotone => "lambda_monotone",
            CheckKind::Harnack => "harnack",
            CheckKind::MaxGrowth => "max_growth",
            CheckKind::LambdaIntegrable => "lambda_integrable",
            CheckKind::LyapunovB => "lyapunov_B",
            CheckKind::DissipationBalance => "dissipation_balance",
            CheckKind::Bounded => "bounded",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        CheckKind::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name))
    }

    pub fn applies_to(self, variant: FlowVariant) -> bool {
        match self {
            CheckKind::LambdaMonotone | CheckKind::Harnack | CheckKind::MaxGrowth | CheckKind::LambdaIntegrable => {
                variant == FlowVariant::A
            }
            CheckKind::LyapunovB => variant == FlowVariant::B,
            CheckKind::DissipationBalance => true,
            CheckKind::Bounded => variant != FlowVariant::C,
        }
    }

    pub fn defaults_for(variant: FlowVariant) -> Vec<CheckKind> {
        CheckKind::ALL.into_iter().filter(|c| c.applies_to(variant)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    pub extents: Vec<f64>,
    pub dimension: usize,
    pub resolution: usize,
}

impl GeometrySpec {
    pub fn build(&self) -> Result<Geometry> {
        Geometry::build(self.kind, &self.extents, self.dimension, self.resolution)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub checks: Vec<CheckKind>,
    pub monotone_tol: f64,
    pub balance_tol: f64,
    pub decay_tail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub spec: FlowSpec,
    pub geometry: GeometrySpec,
    pub preset: Preset,
    pub noise: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    pub snapshot_every: f64,
    pub diagnostics: DiagnosticsConfig,
    pub output_dir: Option<PathBuf>,
    pub expect: Option<RunStatus>,
    /// Directory that relative `file:` presets and `output_dir` resolve against.
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The `file:` preset path, resolved against the config's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    output_dir: Option<String>,
    seed: Option<u64>,
    expect: Option<String>,
    flow: RawFlow,
    geometry: RawGeometry,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    diagnostics: RawDiagnostics,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    variant: String,
    p: f64,
    #[serde(default)]
    allow_override: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    kind: String,
    extents: Vec<f64>,
    resolution: usize,
    dimension: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    preset: Option<String>,
    noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    scheme: Option<String>,
    dt_initial: Option<f64>,
    dt_min: Option<f64>,
    dt_max: Option<f64>,
    t_max: Option<f64>,
    blowup_umax_factor: Option<f64>,
    steady_residual_tol: Option<f64>,
    positivity_floor: Option<f64>,
    record_every: Option<usize>,
    max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    snapshot_every: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    checks: Option<Vec<String>>,
    monotone_tol: Option<f64>,
    balance_tol: Option<f64>,
    decay_tail: Option<f64>,
}

/// 1-based line of `key` inside `[section]` (top level when `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('[') {
            if let Some(name) = rest.split(']').next() {
                current = name.trim().to_string();
            }
            if key.is_empty() && current == section {
                return Some(k + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some((lhs, _)) = trimmed.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a configuration. `name_hint` (the file stem) names
/// the experiment when the file does not.
pub fn parse_config(text: &str, name_hint: Option<&str>) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        ConfigErrors(vec![ConfigIssue { line, message: e.message().trim().to_string() }])
    })?;
    let mut issues = Vec::new();
    let mut issue = |section: &str, key: &str, message: String| {
        // keys left at their default point at their section header
        let line = locate(text, section, key).or_else(|| locate(text, section, ""));
        issues.push(ConfigIssue { line, message });
    };

    let variant = FlowVariant::from_name(&raw.flow.variant);
    if variant.is_none() {
        issue("flow", "variant", format!("unknown flow variant `{}`; expected A, B or C", raw.flow.variant));
    }
    let kind = GeometryKind::from_name(&raw.geometry.kind);
    if kind.is_none() {
        issue(
            "geometry",
            "kind",
            format!(
                "unknown geometry kind `{}`; expected interval_dirichlet, circle, rectangle_dirichlet, torus2d or radial_ball_dirichlet",
                raw.geometry.kind
            ),
        );
    }
    if !(raw.flow.p > 1.0) && !(raw.flow.allow_override && raw.flow.p == 1.0) {
        issue("flow", "p", format!("p must satisfy p > 1, got {}", raw.flow.p));
    }

    let mut geometry = None;
    if let Some(kind) = kind {
        let dimension = match (kind, raw.geometry.dimension) {
            (GeometryKind::RadialBallDirichlet, Some(n)) => Some(n),
            (GeometryKind::RadialBallDirichlet, None) => {
                issue("geometry", "", "radial_ball_dirichlet needs `dimension`".into());
                None
            }
            (_, Some(n)) if n != kind.grid_dim() => {
                issue("geometry", "dimension", format!("{kind} has dimension {}, got {n}", kind.grid_dim()));
                None
            }
            _ => Some(kind.grid_dim()),
        };
        if let Some(dimension) = dimension {
            let gs = GeometrySpec {
                kind,
                extents: raw.geometry.extents.clone(),
                dimension,
                resolution: raw.geometry.resolution,
            };
            match gs.build() {
                Ok(_) => geometry = Some(gs),
                Err(e @ Error::InvalidResolution(_)) => issue("geometry", "resolution", e.to_string()),
                Err(e @ Error::InvalidExtent(_)) => issue("geometry", "extents", e.to_string()),
                Err(e) => issue("geometry", "dimension", e.to_string()),
            }
        }
    }

    let mut spec = None;
    if let (Some(variant), Some(gs)) = (variant, geometry.as_ref()) {
        let built = if raw.flow.allow_override {
            FlowSpec::with_override(variant, raw.flow.p, gs.dimension)
        } else {
            FlowSpec::new(variant, raw.flow.p, gs.dimension)
        };
        match built {
            Ok(s) => match gs.build().and_then(|g| s.check_geometry(&g)) {
                Ok(()) => spec = Some(s),
                Err(e) => issue("geometry", "kind", e.to_string()),
            },
            Err(e) if raw.flow.p > 1.0 || raw.flow.allow_override => issue("flow", "p", e.to_string()),
            Err(_) => {} // already reported as p <= 1
        }
    }

    let preset = match &raw.initial.preset {
        Some(text_preset) => match Preset::parse(text_preset) {
            Ok(p) => Some(p),
            Err(msg) => {
                issue("initial", "preset", msg);
                None
            }
        },
        None => Some(match variant {
            Some(FlowVariant::A) => Preset::ConstantPlusSine { amplitude: 0.3, mode: 1 },
            _ => Preset::Parabola,
        }),
    };
    let noise = raw.initial.noise.unwrap_or(0.0);
    if !(noise.is_finite() && (0.0..1.0).contains(&noise)) {
        issue("initial", "noise", format!("noise must lie in [0, 1), got {noise}"));
    }

    let defaults = SolverConfig::default();
    let s = &raw.solver;
    let scheme = match &s.scheme {
        Some(name) => match Scheme::from_name(name) {
            Some(sc) => sc,
            None => {
                issue("solver", "scheme", format!("unknown scheme `{name}`; expected imex_cn or explicit_euler"));
                defaults.scheme
            }
        },
        None => defaults.scheme,
    };
    let solver = SolverConfig {
        scheme,
        dt_initial: s.dt_initial.unwrap_or(defaults.dt_initial),
        dt_min: s.dt_min.unwrap_or(defaults.dt_min),
        dt_max: s.dt_max.unwrap_or(defaults.dt_max),
        t_max: s.t_max.unwrap_or(defaults.t_max),
        blowup_umax_factor: s.blowup_umax_factor.unwrap_or(defaults.blowup_umax_factor),
        steady_residual_tol: s.steady_residual_tol.unwrap_or(defaults.steady_residual_tol),
        positivity_floor: s.positivity_floor.unwrap_or(defaults.positivity_floor),
        record_every: s.record_every.unwrap_or(defaults.record_every),
        max_steps: s.max_steps.unwrap_or(defaults.max_steps),
    };
    if let Err(e) = solver.validate() {
        let msg = e.to_string();
        let key = ["dt_initial", "dt_min", "dt_max", "t_max", "blowup_umax_factor", "record_every"]
            .into_iter()
            .find(|k| msg.contains(k))
            .unwrap_or("");
        issue("solver", key, msg);
    }

    let snapshot_every = raw.output.snapshot_every.unwrap_or(0.0);
    if !(snapshot_every.is_finite() && snapshot_every >= 0.0) {
        issue("output", "snapshot_every", format!("snapshot_every must be >= 0, got {snapshot_every}"));
    }

    let d = &raw.diagnostics;
    let mut checks = Vec::new();
    match (&d.checks, variant) {
        (Some(names), Some(v)) => {
            for name in names {
                match CheckKind::from_name(name) {
                    Some(c) if c.applies_to(v) => checks.push(c),
                    Some(c) => issue("diagnostics", "checks", format!("check `{}` does not apply to flow {v}", c.name())),
                    None => issue("diagnostics", "checks", format!("unknown check `{name}`")),
                }
            }
        }
        (None, Some(v)) => checks = CheckKind::defaults_for(v),
        _ => {}
    }
    let monotone_tol = d.monotone_tol.unwrap_or(crate::diagnostics::DEFAULT_MONOTONE_TOL);
    let balance_tol = d.balance_tol.unwrap_or(crate::diagnostics::DEFAULT_BALANCE_TOL);
    let decay_tail = d.decay_tail.unwrap_or(0.5);
    for (key, v) in [("monotone_tol", monotone_tol), ("balance_tol", balance_tol)] {
        if !(v.is_finite() && v >= 0.0) {
            issue("diagnostics", key, format!("{key} must be >= 0, got {v}"));
        }
    }
    if !(decay_tail > 0.0 && decay_tail <= 1.0) {
        issue("diagnostics", "decay_tail", format!("decay_tail must lie in (0, 1], got {decay_tail}"));
    }

    let expect = match raw.expect.as_deref() {
        None => None,
        Some(s) => match s {
            "Converged" => Some(RunStatus::Converged),
            "BlowUp" => Some(RunStatus::BlowUp),
            "HorizonReached" => Some(RunStatus::HorizonReached),
            "PositivityLost" => Some(RunStatus::PositivityLost),
            other => {
                issue("", "expect", format!("unknown status `{other}`; expected Converged, BlowUp, HorizonReached or PositivityLost"));
                None
            }
        },
    };

    let name = raw.name.clone().or_else(|| name_hint.map(str::to_string)).unwrap_or_else(|| "experiment".into());
    if name.is_empty() || name.contains(['/', '\\']) {
        issue("", "name", format!("name `{name}` must be non-empty and contain no path separators"));
    }

    if !issues.is_empty() {
        issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        return Err(ConfigErrors(issues));
    }
    Ok(ExperimentConfig {
        name,
        spec: spec.expect("validated"),
        geometry: geometry.expect("validated"),
        preset: preset.expect("validated"),
        noise,
        seed: raw.seed.unwrap_or(0),
        solver,
        snapshot_every,
        diagnostics: DiagnosticsConfig { checks, monotone_tol, balance_tol, decay_tail },
        output_dir: raw.output_dir.map(PathBuf::from),
        expect,
        base_dir: None,
    })
}

/// Reads and parses a configuration file; the file stem is the default name.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str());
    let mut cfg = parse_config(&text, stem)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid resolution {0}: at least 3 is required")]
    InvalidResolution(usize),

    #[error("inconsistent dimension: {0}")]
    InconsistentDimension(String),

    #[error("invalid extent: {0}")]
    InvalidExtent(String),

    #[error("field has {found} values but the geometry has {expected} nodes")]
    GeometryMismatch { expected: usize, found: usize },

    #[error("field must be strictly positive: found {value} at node {index}")]
    NonPositiveField { index: usize, value: f64 },

    #[error("field is identically zero or its conserved integral vanishes")]
    DegenerateField,

    #[error("invalid flow specification: {0}")]
    InvalidFlowSpec(String),

    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),

    #[error("invalid solver configuration: {0}")]
    InvalidSolverConfig(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("non-finite value produced at node {0}")]
    NonFinite(usize),

    #[error("time step collapsed below dt_min = {dt_min:e} at t = {t:e} without growth")]
    StepCollapse { t: f64, dt_min: f64 },

    #[error("iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("trace is not usable for this check: {0}")]
    InvalidTrace(String),

    #[error("profile unusable: {0}")]
    ProfileMismatch(String),

    #[error("ODE integration diverged at r = {0:e}")]
    Diverged(f64),

    #[error("invalid configuration:\n{0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.display().to_string(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

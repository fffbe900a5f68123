// `!(x > 0.0)` is the idiom used throughout to reject NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod flows;
pub mod geometry;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod oracles;

pub use error::{Error, Result};
pub use geometry::{Field, Geometry, GeometryKind};
pub use flows::{FlowSpec, FlowVariant};

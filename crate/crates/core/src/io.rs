//! CSV formats for traces and field snapshots.
//!
//! Floats are written in shortest round-trip form, so a write/parse cycle is
//! exact. The trace header is fixed:
//! `t,lambda,norm_q,umax,umin,energy,B,dt,dissipation,drift` (`B` is empty
//! for flows without that functional). Field files carry `x,u`, `r,u` or
//! `x,y,u` depending on the geometry.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Field, Geometry, GeometryKind};
use crate::integrator::TraceSample;

pub const TRACE_HEADER: [&str; 10] = ["t", "lambda", "norm_q", "umax", "umin", "energy", "B", "dt", "dissipation", "drift"];

/// Relative tolerance when matching field coordinates against a grid.
const COORD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldLayout {
    /// `x,u`
    Line,
    /// `r,u`
    Radial,
    /// `x,y,u`
    Plane,
}

impl FieldLayout {
    pub fn for_kind(kind: GeometryKind) -> Self {
        match kind {
            GeometryKind::IntervalDirichlet | GeometryKind::Circle => FieldLayout::Line,
            GeometryKind::RadialBallDirichlet => FieldLayout::Radial,
            GeometryKind::RectangleDirichlet | GeometryKind::Torus2D => FieldLayout::Plane,
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            FieldLayout::Line => &["x", "u"],
            FieldLayout::Radial => &["r", "u"],
            FieldLayout::Plane => &["x", "y", "u"],
        }
    }

    fn coord_count(self) -> usize {
        self.header().len() - 1
    }
}

/// A parsed field file: node coordinates (`[x, 0]` for one coordinate) and values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub layout: FieldLayout,
    pub coords: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

fn parse_err(what: &'static str, message: impl Into<String>) -> Error {
    Error::Parse { what, message: message.into() }
}

fn to_bytes(writer: csv::Writer<Vec<u8>>, what: &'static str) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| parse_err(what, e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| parse_err(what, e.to_string()))
}

pub fn trace_to_csv(samples: &[TraceSample]) -> Result<String> {
    const WHAT: &str = "trace csv";
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TRACE_HEADER).map_err(|e| parse_err(WHAT, e.to_string()))?;
    for s in samples {
        w.serialize(s).map_err(|e| parse_err(WHAT, e.to_string()))?;
    }
    to_bytes(w, WHAT)
}

/// Parses a trace CSV. The header must match [`TRACE_HEADER`] exactly.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceSample>> {
    const WHAT: &str = "trace csv";
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(WHAT, e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(parse_err(WHAT, format!("expected header `{}`, found `{}`", TRACE_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| parse_err(WHAT, format!("row {}: {e}", k + 2))))
        .collect()
}

pub fn field_to_csv(geom: &Geometry, u: &Field) -> Result<String> {
    const WHAT: &str = "field csv";
    geom.check(u).or_else(|e| match e {
        // snapshots of a failing run may legitimately hold non-positive values
        Error::NonPositiveField { .. } => Ok(()),
        e => Err(e),
    })?;
    let layout = FieldLayout::for_kind(geom.kind());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(layout.header()).map_err(|e| parse_err(WHAT, e.to_string()))?;
    for (c, &v) in geom.coords().iter().zip(u.values()) {
        let res = match layout {
            FieldLayout::Plane => w.serialize((c[0], c[1], v)),
            _ => w.serialize((c[0], v)),
        };
        res.map_err(|e| parse_err(WHAT, e.to_string()))?;
    }
    to_bytes(w, WHAT)
}

/// Two-column `r,u` (or `x,u`) CSV of arbitrary samples, e.g. a shooting profile.
pub fn columns_to_csv(names: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<String> {
    const WHAT: &str = "profile csv";
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(names).map_err(|e| parse_err(WHAT, e.to_string()))?;
    for (x, y) in xs.iter().zip(ys) {
        w.serialize((x, y)).map_err(|e| parse_err(WHAT, e.to_string()))?;
    }
    to_bytes(w, WHAT)
}

pub fn parse_field_csv(text: &str) -> Result<FieldTable> {
    const WHAT: &str = "field csv";
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(WHAT, e.to_string()))?.clone();
    let layout = [FieldLayout::Line, FieldLayout::Radial, FieldLayout::Plane]
        .into_iter()
        .find(|l| header.iter().eq(l.header().iter().copied()))
        .ok_or_else(|| parse_err(WHAT, format!("unrecognized header `{}`; expected x,u / r,u / x,y,u", header.iter().collect::<Vec<_>>().join(","))))?;
    let nc = layout.coord_count();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(WHAT, format!("row {}: {e}", k + 2)))?;
        let mut nums = [0.0; 3];
        for (j, cell) in rec.iter().enumerate() {
            nums[j] = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(WHAT, format!("row {}: `{cell}` is not a number", k + 2)))?;
        }
        coords.push(if nc == 2 { [nums[0], nums[1]] } else { [nums[0], 0.0] });
        values.push(nums[nc]);
    }
    if values.is_empty() {
        return Err(parse_err(WHAT, "no data rows"));
    }
    Ok(FieldTable { layout, coords, values })
}

impl FieldTable {
    /// Checks that the table lists exactly the nodes of `geom`, in order.
    pub fn into_field(self, geom: &Geometry) -> Result<Field> {
        const WHAT: &str = "field csv";
        let expected = FieldLayout::for_kind(geom.kind());
        if self.layout != expected {
            return Err(parse_err(WHAT, format!("{} geometry needs header `{}`", geom.kind(), expected.header().join(","))));
        }
        if self.values.len() != geom.node_count() {
            return Err(Error::GeometryMismatch { expected: geom.node_count(), found: self.values.len() });
        }
        let scale = geom.extents().iter().fold(0.0_f64, |a, &b| a.max(b));
        for (k, (a, b)) in self.coords.iter().zip(geom.coords()).enumerate() {
            if (a[0] - b[0]).abs() > COORD_TOL * scale || (a[1] - b[1]).abs() > COORD_TOL * scale {
                return Err(parse_err(WHAT, format!("row {}: node ({}, {}) is not on the grid (expected ({}, {}))", k + 2, a[0], a[1], b[0], b[1])));
            }
        }
        Ok(Field::new(self.values))
    }
}

pub fn read_field(path: &Path, geom: &Geometry) -> Result<Field> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field_csv(&text)?.into_field(geom)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deserializes an `f64` that JSON may have stored as `null` (serde_json
/// writes non-finite floats that way); `null` reads back as NaN.
pub fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    use serde::Deserialize;
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// `snapshots/u_<t>.csv` with `t` in six-digit scientific notation.
pub fn snapshot_path(dir: &Path, t: f64) -> PathBuf {
    dir.join("snapshots").join(format!("u_{t:.6e}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, b: Option<f64>) -> TraceSample {
        TraceSample {
            t,
            lambda: 1.0 / 3.0,
            norm_q: 1.0 + f64::EPSILON,
            umax: 1e300,
            umin: 5e-324,
            energy: -0.1,
            b,
            dt: 1e-4,
            dissipation: 0.0,
            drift: 2.5e-17,
        }
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let samples = vec![sample(0.0, Some(0.7)), sample(0.1 + 0.2, None)];
        let text = trace_to_csv(&samples).unwrap();
        assert!(text.starts_with("t,lambda,norm_q,umax,umin,energy,B,dt,dissipation,drift\n"));
        assert_eq!(parse_trace_csv(&text).unwrap(), samples);
    }

    #[test]
    fn trace_header_is_enforced() {
        let text = trace_to_csv(&[sample(0.0, None)]).unwrap().replacen("lambda", "lam", 1);
        assert!(matches!(parse_trace_csv(&text), Err(Error::Parse { .. })));
        assert!(parse_trace_csv("t,lambda,norm_q,umax,umin,energy,B,dt,dissipation,drift\n1,2\n").is_err());
    }

    #[test]
    fn field_round_trip() {
        for geom in [
            Geometry::interval(1.0, 16).unwrap(),
            Geometry::radial_ball(3, 1.0, 16).unwrap(),
            Geometry::rectangle(1.0, 2.0, 8).unwrap(),
        ] {
            let u = geom.sample(|x, y| 1.0 + x * 0.3 + y * y);
            let text = field_to_csv(&geom, &u).unwrap();
            let table = parse_field_csv(&text).unwrap();
            assert_eq!(table.layout, FieldLayout::for_kind(geom.kind()));
            assert_eq!(table.into_field(&geom).unwrap(), u);
        }
    }

    #[test]
    fn field_on_wrong_grid_is_rejected() {
        let g16 = Geometry::interval(1.0, 16).unwrap();
        let g32 = Geometry::interval(1.0, 32).unwrap();
        let text = field_to_csv(&g16, &g16.sample(|_, _| 1.0)).unwrap();
        assert!(matches!(parse_field_csv(&text).unwrap().into_field(&g32), Err(Error::GeometryMismatch { .. })));
        let radial = Geometry::radial_ball(3, 1.0, 16).unwrap();
        assert!(parse_field_csv(&text).unwrap().into_field(&radial).is_err());
    }

    #[test]
    fn malformed_fields() {
        assert!(parse_field_csv("").is_err());
        assert!(parse_field_csv("x,u\n").is_err());
        assert!(parse_field_csv("x,v\n0,1\n").is_err());
        assert!(parse_field_csv("x,u\n0,abc\n").is_err());
        assert!(parse_field_csv("x,u\n0,1,2\n").is_err());
    }

    #[test]
    fn snapshot_name() {
        let p = snapshot_path(Path::new("out"), 0.25);
        assert_eq!(p, Path::new("out/snapshots/u_2.500000e-1.csv"));
    }
}

//! File formats: measure files, plan and trajectory CSVs, atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{ParticleMeasure, TransportPlan};

/// Decimal rendering with 17 significant digits; round-trips every f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub dimension: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MeasureFile {
    pub fn into_measure(self) -> Result<ParticleMeasure> {
        ParticleMeasure::new(self.dimension, self.points, self.weights)
    }
}

impl From<&ParticleMeasure> for MeasureFile {
    fn from(mu: &ParticleMeasure) -> Self {
        Self {
            dimension: mu.dim(),
            points: mu.points().to_vec(),
            weights: mu.weights().to_vec(),
        }
    }
}

pub fn parse_measure(text: &str) -> Result<ParticleMeasure> {
    let file: MeasureFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("measure file: {}", e.message())))?;
    file.into_measure()
}

pub fn read_measure(path: &Path) -> Result<ParticleMeasure> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_measure(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn measure_to_toml(mu: &ParticleMeasure) -> String {
    toml::to_string(&MeasureFile::from(mu)).expect("measure serializes")
}

/// `i,j,mass` rows, one per nonzero plan entry.
pub fn plan_csv(plan: &TransportPlan) -> String {
    let mut out = String::from("i,j,mass\n");
    for e in &plan.entries {
        let _ = writeln!(out, "{},{},{}", e.i, e.j, fmt_f64(e.mass));
    }
    out
}

/// Simple CSV table builder that renders floats with [`fmt_f64`].
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(if x { "true" } else { "false" }.into())
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(
            row.into_iter()
                .map(|c| match c {
                    Cell::Num(x) => fmt_f64(x),
                    Cell::Int(i) => i.to_string(),
                    Cell::Text(s) => s,
                })
                .collect(),
        );
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn measure_file_round_trip() {
        let mu = ParticleMeasure::new(2, vec![0.1, 0.2, -3.0, 4.0], vec![0.25, 0.75]).unwrap();
        let back = parse_measure(&measure_to_toml(&mu)).unwrap();
        assert!(back.same_as(&mu));
    }

    #[test]
    fn measure_file_rejects_unknown_fields() {
        let text = "dimension = 1\npoints = [0.0]\nweights = [1.0]\ncolor = 3\n";
        assert!(parse_measure(text).is_err());
    }

    #[test]
    fn measure_file_rejects_bad_weights() {
        let text = "dimension = 1\npoints = [0.0, 1.0]\nweights = [0.5, 0.4]\n";
        assert!(matches!(parse_measure(text), Err(Error::InvalidMeasure(_))));
    }
}

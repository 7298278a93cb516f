//! Finite real-valued series and their text/CSV ingestion.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A finite sequence of finite reals. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Sample { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    /// Skips validation; callers guarantee every value is finite.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Sample { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contiguous sub-series `[start, end)` as a new sample.
    pub fn slice(&self, start: usize, end: usize) -> Sample {
        Sample {
            values: self.values[start..end].to_vec(),
        }
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Sample) -> Sample {
        let mut values = Vec::with_capacity(self.len() + other.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Sample { values }
    }

    pub fn reversed(&self) -> Sample {
        Sample {
            values: self.values.iter().rev().copied().collect(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample::new(values)
    }
}

/// Parses one decimal number per line. Blank lines and lines starting with
/// `#` are skipped. `origin` is only used in error messages.
pub fn parse_text(text: &str, origin: &str) -> Result<Sample> {
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: format!("not a number: {line:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("non-finite value {line:?}"),
            });
        }
        values.push(value);
    }
    Ok(Sample::from_finite(values))
}

pub fn read_text(path: &Path) -> Result<Sample> {
    let text = fs::read_to_string(path)?;
    parse_text(&text, &path.display().to_string())
}

/// Reads the named column of a headed CSV file. Line numbers in errors count
/// the header as line 1.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Sample> {
    let origin = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Parse {
            path: origin.clone(),
            line: 1,
            message: format!("no column named {column:?}"),
        })?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record?;
        let field = record.get(idx).unwrap_or("").trim();
        let value: f64 = field.parse().map_err(|_| Error::Parse {
            path: origin.clone(),
            line,
            message: format!("column {column:?}: not a number: {field:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: origin.clone(),
                line,
                message: format!("column {column:?}: non-finite value {field:?}"),
            });
        }
        values.push(value);
    }
    Ok(Sample::from_finite(values))
}

/// Plain-text reader, or CSV column reader when `column` is given.
pub fn read_sample(path: &Path, column: Option<&str>) -> Result<Sample> {
    match column {
        Some(col) => read_csv_column(path, col),
        None => read_text(path),
    }
}

pub fn write_text<W: Write>(sample: &Sample, mut out: W) -> Result<()> {
    for v in sample.values() {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

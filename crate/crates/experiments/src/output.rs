//! CSV output and pass/fail bookkeeping.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::Result;

/// A measured quantity against its acceptance band.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable band, e.g. `>= 3.2`.
    pub band: String,
    pub pass: bool,
}

impl Check {
    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self { name: name.into(), value, band: format!(">= {min}"), pass: value >= min }
    }

    pub fn below(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self { name: name.into(), value, band: format!("< {max}"), pass: value < max }
    }

    pub fn at_most(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self { name: name.into(), value, band: format!("<= {max}"), pass: value <= max }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, band: format!("in [{lo}, {hi}]"), pass: value >= lo && value <= hi }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(pass)), band: "== 1".into(), pass }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.6e} (band {})", self.name, self.value, self.band)
    }
}

/// Result of one experiment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    /// Informational lines (per-case failures, timings).
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// A CSV table written with a leading config comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, comment: &str, mut out: W) -> Result<()> {
        writeln!(out, "# {comment}")?;
        writeln!(out, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(out, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path, name: &str, comment: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        let f = std::fs::File::create(&path)?;
        self.write_to(comment, std::io::BufWriter::new(f))?;
        Ok(path)
    }
}

/// Shortest round-trip formatting of a float.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

//! Config-file parsing and kernel construction.
//!
//! A config is a flat JSON object whose keys mirror the command-line flags;
//! unknown keys are rejected before any computation starts, and flags win
//! over file values.

use std::path::Path;

use latdiff::{CorrelationKernel, Error, Result};
use serde::Deserialize;

/// File-supplied values. All optional; the per-command resolution decides
/// what is required.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub shape: Option<String>,
    #[serde(rename = "W")]
    pub w: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub table: Option<String>,
    #[serde(rename = "T")]
    pub tunneling: Option<f64>,
    pub dt: Option<f64>,
    pub tmax: Option<f64>,
    pub sites: Option<usize>,
    pub snapshot_interval: Option<f64>,
    pub boundary_mass_limit: Option<f64>,
    pub realizations: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub taus: Option<Vec<f64>>,
    #[serde(rename = "Ws")]
    pub ws: Option<Vec<f64>>,
    pub out: Option<String>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Explicit kernel description after flag/file merging.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub shape: String,
    pub w: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub table: Option<String>,
}

impl KernelSpec {
    /// Build the kernel, rejecting parameters that do not belong to the
    /// requested shape.
    pub fn build(&self) -> Result<CorrelationKernel> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("shape {} requires --{name}", self.shape)))
        };
        let forbid = |present: bool, name: &str| {
            if present {
                Err(Error::Config(format!(
                    "--{name} does not apply to shape {}",
                    self.shape
                )))
            } else {
                Ok(())
            }
        };
        match self.shape.as_str() {
            "triangular" => {
                forbid(self.gamma.is_some(), "gamma")?;
                forbid(self.table.is_some(), "table")?;
                CorrelationKernel::triangular(need(self.w, "W")?, need(self.tau, "tau")?)
            }
            "exponential" => {
                forbid(self.gamma.is_some(), "gamma")?;
                forbid(self.table.is_some(), "table")?;
                CorrelationKernel::exponential(need(self.w, "W")?, need(self.tau, "tau")?)
            }
            "white" => {
                forbid(self.w.is_some(), "W")?;
                forbid(self.tau.is_some(), "tau")?;
                forbid(self.table.is_some(), "table")?;
                CorrelationKernel::white_noise(
                    self.gamma
                        .ok_or_else(|| Error::Config("shape white requires --gamma".into()))?,
                )
            }
            "tabulated" => {
                forbid(self.w.is_some(), "W")?;
                forbid(self.tau.is_some(), "tau")?;
                forbid(self.gamma.is_some(), "gamma")?;
                let path = self
                    .table
                    .as_deref()
                    .ok_or_else(|| Error::Config("shape tabulated requires --table FILE".into()))?;
                CorrelationKernel::tabulated(read_table(Path::new(path))?)
            }
            other => Err(Error::Config(format!(
                "unknown shape '{other}' (expected triangular | exponential | white | tabulated)"
            ))),
        }
    }

    /// `key=value` fragment for provenance comments.
    pub fn provenance(&self) -> String {
        let mut s = format!("shape={}", self.shape);
        if let Some(w) = self.w {
            s.push_str(&format!(" W={w}"));
        }
        if let Some(tau) = self.tau {
            s.push_str(&format!(" tau={tau}"));
        }
        if let Some(g) = self.gamma {
            s.push_str(&format!(" gamma={g}"));
        }
        if let Some(t) = &self.table {
            s.push_str(&format!(" table={t}"));
        }
        s
    }
}

/// Two-column CSV `time,value`, '#' comments and blank lines skipped.
fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let bad = || {
            Error::Config(format!(
                "{}:{}: expected 'time,value'",
                path.display(),
                lineno + 1
            ))
        };
        let t: f64 = parts
            .next()
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        let v: f64 = parts
            .next()
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        rows.push((t, v));
    }
    Ok(rows)
}

/// Positivity guard for resolved physical parameters.
pub fn require_positive(value: f64, name: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Config(format!(
            "{name} must be finite and > 0, got {value}"
        )))
    }
}

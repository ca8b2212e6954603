//! CSV emission.
//!
//! Every file starts with a '#' comment recording the resolved physical
//! config and seed, then a header row. Values use '.' decimals and ','
//! delimiters; floats are written with Rust's shortest round-trip
//! formatting, so identical runs produce identical bytes. Worker count is
//! execution detail, not physics, and never appears in the provenance line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use latdiff::{Error, Result};

pub struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, provenance: &str, header: &str) -> Result<CsvFile> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut csv = CsvFile {
            path,
            out: BufWriter::new(file),
        };
        csv.line(&format!("# {provenance}"))?;
        csv.line(header)?;
        Ok(csv)
    }

    pub fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| io_err(&self.path, e))
    }

    pub fn row(&mut self, fields: &[CsvValue]) -> Result<()> {
        let mut s = String::new();
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            match f {
                CsvValue::Float(v) => s.push_str(&fmt_f64(*v)),
                CsvValue::Int(v) => s.push_str(&v.to_string()),
                // text cells may carry diagnostic messages; keep the column
                // count intact
                CsvValue::Str(v) => s.push_str(&v.replace(',', ";")),
                CsvValue::Empty => {}
            }
        }
        self.line(&s)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| io_err(&self.path, e))?;
        Ok(self.path)
    }
}

pub enum CsvValue {
    Float(f64),
    Int(i64),
    Str(String),
    Empty,
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        CsvValue::Float(v)
    }
}

impl From<Option<f64>> for CsvValue {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(v) => CsvValue::Float(v),
            None => CsvValue::Empty,
        }
    }
}

impl From<&str> for CsvValue {
    fn from(v: &str) -> Self {
        CsvValue::Str(v.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Shortest round-trip decimal for ordinary magnitudes, scientific notation
/// for extreme ones (plain `Display` would expand 1e-154 to 154 digits).
fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;

    #[test]
    fn formatting_is_compact_and_round_trips() {
        for v in [
            0.5,
            -3.25,
            123456.789,
            9.557436538147294e-154,
            1.5e20,
            0.0001,
        ] {
            let s = fmt_f64(v);
            assert!(s.len() < 30, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(0.0), "0");
    }
}

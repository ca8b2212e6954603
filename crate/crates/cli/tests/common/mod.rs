//! Shared helpers for the integration suites: an independent Bessel oracle
//! for the free-lattice solution and a small CSV reader.

#![allow(dead_code)]

use std::path::Path;

/// `J_0(x) .. J_{n_max}(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 sum_k J_{2k} = 1`. Independent of every code path under test.
pub fn bessel_j_row(n_max: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0);
    let base = n_max.max(x.ceil() as usize) + 1;
    let mut start = base + 20 + 4 * (base as f64).sqrt() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut out = vec![0.0_f64; n_max + 1];
    let mut above = 0.0_f64; // J_{j+1} (arbitrary scale)
    let mut here = 1e-30_f64; // J_j
    let mut norm = 0.0_f64;
    for j in (1..=start).rev() {
        let below = (2.0 * j as f64 / x) * here - above;
        above = here;
        here = below;
        if here.abs() > 1e250 {
            here *= 1e-250;
            above *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        let order = j - 1;
        if order <= n_max {
            out[order] = here;
        }
        if order >= 2 && order % 2 == 0 {
            norm += 2.0 * here;
        }
    }
    norm += out[0];
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Parsed CSV: comment lines (with '#'), header fields, and data rows.
pub struct Csv {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn read(path: &Path) -> Csv {
        let text =
            std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut comments = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') {
                comments.push(line.to_string());
            } else if header.is_none() {
                header = Some(line.split(',').map(str::to_string).collect());
            } else {
                rows.push(line.split(',').map(str::to_string).collect());
            }
        }
        Csv {
            comments,
            header: header.expect("missing header"),
            rows,
        }
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("no column '{name}' in {:?}", self.header));
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse()
                    .unwrap_or_else(|_| panic!("bad float '{}'", r[idx]))
            })
            .collect()
    }

    pub fn field(&self, row: usize, name: &str) -> &str {
        let idx = self.header.iter().position(|h| h == name).expect("column");
        &self.rows[row][idx]
    }
}

#[cfg(test)]
mod tests {
    use super::bessel_j_row;

    #[test]
    fn bessel_oracle_matches_reference_values() {
        // mpmath, 30 significant digits
        let j = bessel_j_row(20, 10.0);
        let refs = [
            (0usize, -0.24593576445134834),
            (1, 0.043472746168861437),
            (7, 0.21671091768505151),
            (20, 1.1513369247813398e-5),
        ];
        for (n, expect) in refs {
            let rel = (j[n] - expect).abs() / expect.abs();
            assert!(rel < 1e-12, "J_{n}(10) = {} vs {expect}", j[n]);
        }
        // normalization identity, with enough orders that the tail is gone
        let j = bessel_j_row(40, 10.0);
        let sum: f64 = j[0] + 2.0 * (1..=20).map(|k| j[2 * k]).sum::<f64>();
        assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
    }
}

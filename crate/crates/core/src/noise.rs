//! Synthesis of discrete-time Gaussian noise whose autocorrelation matches a
//! target kernel.
//!
//! Noise is held constant over each integrator step (zero-order hold), which
//! makes the diagonal propagator exact per step and matches the Riemann
//! construction of the dephasing correlation. Each `(realization, site)`
//! pair owns an independent random stream derived by counter-based splitting
//! from the master seed, so generation is deterministic regardless of thread
//! count and streams never overlap.
//!
//! Constructions per shape:
//! * triangular — length-`M` moving average of iid normals with
//!   `M = round(tau/dt)`: the discrete autocovariance is exactly
//!   `W^2 (1 - |m|/M)` at lag `m dt`;
//! * exponential — first-order autoregressive recursion started from the
//!   stationary distribution: autocovariance exactly `W^2 exp(-|m| dt/tau)`;
//! * white — iid normals with variance `gamma/dt`, so the discrete process
//!   integrates to the correct strength.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::CorrelationKernel;

/// Domain separator for noise streams, mixed into every stream key.
const STREAM_TAG: u64 = 0x1d1f_f05e_5eed_0001;

/// Provenance of a sampled path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedInfo {
    pub master_seed: u64,
    pub realization: u64,
}

/// The ChaCha key for one `(master_seed, realization, site)` stream is the
/// counter triple itself plus a domain tag, so distinct streams are distinct
/// by construction.
fn site_rng(master_seed: u64, realization: u64, site: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&realization.to_le_bytes());
    key[16..24].copy_from_slice(&site.to_le_bytes());
    key[24..32].copy_from_slice(&STREAM_TAG.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// SplitMix64 finalizer; used to derive per-point seeds in parameter sweeps.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-site stateful generator, one value per step.
enum SiteGen {
    MovingAverage {
        scale: f64,
        window: Vec<f64>,
        head: usize,
        sum: f64,
        since_resum: u32,
        rng: ChaCha8Rng,
    },
    Ar1 {
        a: f64,
        drive: f64,
        value: f64,
        started: bool,
        rng: ChaCha8Rng,
    },
    White {
        sigma: f64,
        rng: ChaCha8Rng,
    },
}

impl SiteGen {
    fn new(
        kernel: &CorrelationKernel,
        dt: f64,
        master_seed: u64,
        realization: u64,
        site: u64,
    ) -> Result<Self> {
        let mut rng = site_rng(master_seed, realization, site);
        match kernel {
            CorrelationKernel::Triangular {
                magnitude,
                corr_time,
            } => {
                let m = moving_average_window(dt, *corr_time)?;
                let mut window = Vec::with_capacity(m);
                let mut sum = 0.0;
                for _ in 0..m {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    sum += eta;
                    window.push(eta);
                }
                Ok(SiteGen::MovingAverage {
                    scale: magnitude / (m as f64).sqrt(),
                    window,
                    head: 0,
                    sum,
                    since_resum: 0,
                    rng,
                })
            }
            CorrelationKernel::Exponential {
                magnitude,
                corr_time,
            } => {
                check_resolution(dt, *corr_time)?;
                let a = (-dt / corr_time).exp();
                let stationary: f64 = StandardNormal.sample(&mut rng);
                Ok(SiteGen::Ar1 {
                    a,
                    drive: magnitude * (1.0 - a * a).sqrt(),
                    value: magnitude * stationary,
                    started: false,
                    rng,
                })
            }
            CorrelationKernel::WhiteNoise { strength } => Ok(SiteGen::White {
                sigma: (strength / dt).sqrt(),
                rng,
            }),
            CorrelationKernel::Tabulated { .. } => Err(Error::UnsampleableKernel),
        }
    }

    fn next(&mut self) -> f64 {
        match self {
            SiteGen::MovingAverage {
                scale,
                window,
                head,
                sum,
                since_resum,
                rng,
            } => {
                let eta: f64 = StandardNormal.sample(rng);
                *sum += eta - window[*head];
                window[*head] = eta;
                *head = (*head + 1) % window.len();
                *since_resum += 1;
                // keep the incremental sum from drifting on long runs
                if *since_resum == 4096 {
                    *sum = window.iter().sum();
                    *since_resum = 0;
                }
                *scale * *sum
            }
            SiteGen::Ar1 {
                a,
                drive,
                value,
                started,
                rng,
            } => {
                if *started {
                    let eta: f64 = StandardNormal.sample(rng);
                    *value = *a * *value + *drive * eta;
                } else {
                    *started = true; // first step emits the stationary draw
                }
                *value
            }
            SiteGen::White { sigma, rng } => {
                let eta: f64 = StandardNormal.sample(rng);
                *sigma * eta
            }
        }
    }
}

fn check_resolution(dt: f64, tau: f64) -> Result<()> {
    if dt > tau / 4.0 {
        return Err(Error::NoiseResolution { dt, tau });
    }
    Ok(())
}

fn moving_average_window(dt: f64, tau: f64) -> Result<usize> {
    check_resolution(dt, tau)?;
    let m = (tau / dt).round() as usize;
    let err = (m as f64 * dt - tau).abs() / tau;
    if err > 0.05 {
        return Err(Error::WindowMismatch {
            m,
            err_pct: err * 100.0,
        });
    }
    Ok(m)
}

/// Streaming noise for one realization: one column of site values per step.
///
/// Column `k` holds `xi(j, t_k)` for every site `j`, constant over
/// `[t_k, t_k + dt)`. Identical `(master_seed, realization)` always
/// reproduces the identical sequence.
pub struct NoiseGenerator {
    dt: f64,
    n_steps: usize,
    emitted: usize,
    gens: Vec<SiteGen>,
}

impl NoiseGenerator {
    pub fn new(
        kernel: &CorrelationKernel,
        n_sites: usize,
        dt: f64,
        n_steps: usize,
        master_seed: u64,
        realization: u64,
    ) -> Result<Self> {
        if n_sites < 1 || n_steps < 1 {
            return Err(Error::Config(format!(
                "noise needs n_sites >= 1 and n_steps >= 1, got {n_sites} x {n_steps}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!(
                "dt must be finite and > 0, got {dt}"
            )));
        }
        let gens = (0..n_sites)
            .map(|j| SiteGen::new(kernel, dt, master_seed, realization, j as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseGenerator {
            dt,
            n_steps,
            emitted: 0,
            gens,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_sites(&self) -> usize {
        self.gens.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Fill `out` (length `n_sites`) with the next column of values.
    /// Panics if called more than `n_steps` times.
    pub fn next_column(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.gens.len(), "column buffer size mismatch");
        assert!(self.emitted < self.n_steps, "noise stream exhausted");
        for (slot, gen) in out.iter_mut().zip(self.gens.iter_mut()) {
            *slot = gen.next();
        }
        self.emitted += 1;
    }
}

/// A materialized noise path: `sites x steps` values.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub dt: f64,
    pub n_sites: usize,
    pub n_steps: usize,
    pub kernel: CorrelationKernel,
    pub seed: SeedInfo,
    /// Row-major, one row per site.
    values: Vec<f64>,
}

impl NoisePath {
    /// All values of one site, in step order.
    pub fn site(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_steps..(j + 1) * self.n_steps]
    }

    /// Gather the column of site values at step `k` into `out`.
    pub fn column(&self, k: usize, out: &mut [f64]) {
        assert!(k < self.n_steps);
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.values[j * self.n_steps + k];
        }
    }

    /// Debug dump of one site's values as two-column CSV (time, value).
    pub fn write_site_csv<W: std::io::Write>(
        &self,
        site: usize,
        out: &mut W,
    ) -> std::io::Result<()> {
        writeln!(out, "time,value")?;
        for (k, v) in self.site(site).iter().enumerate() {
            writeln!(out, "{},{v}", k as f64 * self.dt)?;
        }
        Ok(())
    }

    /// Re-express the same piecewise-constant xi(t) on a grid `factor` times
    /// finer: every value is repeated `factor` times and `dt` shrinks
    /// accordingly. Used for integrator time-step convergence checks, where
    /// the physical noise realization must stay fixed.
    pub fn refine(&self, factor: usize) -> NoisePath {
        assert!(factor >= 1);
        let mut values = Vec::with_capacity(self.values.len() * factor);
        for row in 0..self.n_sites {
            for &v in self.site(row) {
                values.extend(std::iter::repeat_n(v, factor));
            }
        }
        NoisePath {
            dt: self.dt / factor as f64,
            n_sites: self.n_sites,
            n_steps: self.n_steps * factor,
            kernel: self.kernel.clone(),
            seed: self.seed,
            values,
        }
    }
}

/// Sample a full noise path. Deterministic function of
/// `(master_seed, realization, site)`.
pub fn sample_noise_paths(
    kernel: &CorrelationKernel,
    n_sites: usize,
    dt: f64,
    n_steps: usize,
    master_seed: u64,
    realization: u64,
) -> Result<NoisePath> {
    let mut gen = NoiseGenerator::new(kernel, n_sites, dt, n_steps, master_seed, realization)?;
    // Generate site-by-site; per-site streams are independent, so this is
    // bit-identical to column order.
    let mut values = vec![0.0; n_sites * n_steps];
    for (j, site_gen) in gen.gens.iter_mut().enumerate() {
        for k in 0..n_steps {
            values[j * n_steps + k] = site_gen.next();
        }
    }
    Ok(NoisePath {
        dt,
        n_sites,
        n_steps,
        kernel: kernel.clone(),
        seed: SeedInfo {
            master_seed,
            realization,
        },
        values,
    })
}

/// Biased-normalized empirical autocovariance averaged over sites, at lags
/// `0..=max_lag` (times `m * dt`). No mean subtraction: the process is
/// zero-mean by construction.
pub fn empirical_autocovariance(path: &NoisePath, max_lag: usize) -> Result<Vec<(f64, f64)>> {
    if max_lag >= path.n_steps / 10 {
        return Err(Error::LagTooLarge {
            max_lag,
            n_steps: path.n_steps,
        });
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for m in 0..=max_lag {
        let mut acc = 0.0;
        for j in 0..path.n_sites {
            let row = path.site(j);
            let mut s = 0.0;
            for k in 0..path.n_steps - m {
                s += row[k] * row[k + m];
            }
            acc += s / path.n_steps as f64;
        }
        out.push((m as f64 * path.dt, acc / path.n_sites as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(w: f64, tau: f64) -> CorrelationKernel {
        CorrelationKernel::triangular(w, tau).unwrap()
    }

    #[test]
    fn reproducible_across_construction_paths() {
        let k = tri(20.0, 0.01);
        let a = sample_noise_paths(&k, 3, 0.001, 500, 11, 7).unwrap();
        let b = sample_noise_paths(&k, 3, 0.001, 500, 11, 7).unwrap();
        assert_eq!(a.values, b.values);
        // streaming emits the identical values
        let mut gen = NoiseGenerator::new(&k, 3, 0.001, 500, 11, 7).unwrap();
        let mut col = [0.0; 3];
        for step in 0..500 {
            gen.next_column(&mut col);
            for j in 0..3 {
                assert_eq!(col[j], a.site(j)[step], "site {j} step {step}");
            }
        }
        // different realization, different values
        let c = sample_noise_paths(&k, 3, 0.001, 500, 11, 8).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn resolution_and_window_checks() {
        let k = tri(1.0, 1.0);
        assert!(matches!(
            NoiseGenerator::new(&k, 1, 0.3, 10, 0, 0),
            Err(Error::NoiseResolution { .. })
        ));
        // tau/dt = 4.44 -> M = 4, 10% off tau
        assert!(matches!(
            NoiseGenerator::new(&k, 1, 0.225, 10, 0, 0),
            Err(Error::WindowMismatch { .. })
        ));
        let k = CorrelationKernel::tabulated(vec![(0.0, 1.0), (1.0, 0.0)]).unwrap();
        assert!(matches!(
            NoiseGenerator::new(&k, 1, 0.01, 10, 0, 0),
            Err(Error::UnsampleableKernel)
        ));
    }

    /// Mean and standard error of per-realization autocovariances at one lag.
    fn autocov_over_realizations(
        kernel: &CorrelationKernel,
        dt: f64,
        n_steps: usize,
        n_real: usize,
        lag: usize,
        seed: u64,
    ) -> (f64, f64) {
        let mut vals = Vec::with_capacity(n_real);
        for r in 0..n_real {
            let path = sample_noise_paths(kernel, 1, dt, n_steps, seed, r as u64).unwrap();
            let cov = empirical_autocovariance(&path, lag).unwrap();
            vals.push(cov[lag].1);
        }
        mean_stderr(&vals)
    }

    fn mean_stderr(vals: &[f64]) -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn triangular_variance_matches_w_squared() {
        // 100 realizations x 1e4 steps = 1e6 draws
        let k = tri(20.0, 0.01);
        let (mean, se) = autocov_over_realizations(&k, 0.001, 10_000, 100, 0, 42);
        assert!((mean - 400.0).abs() < 3.0 * se, "var {mean} +- {se}");
    }

    #[test]
    fn triangular_support_ends_at_window_length() {
        // lag M = 10 is exactly the end of the triangular support
        let k = tri(20.0, 0.01);
        let mut vals = Vec::new();
        for r in 0..100u64 {
            let path = sample_noise_paths(&k, 1, 0.001, 10_000, 7, r).unwrap();
            let cov = empirical_autocovariance(&path, 10).unwrap();
            vals.push(cov[10].1);
        }
        let (mean, se) = mean_stderr(&vals);
        assert!(mean.abs() < 3.0 * se, "lag-M cov {mean} +- {se}");
    }

    #[test]
    fn exponential_autocovariance_at_unit_lag() {
        // lag-time 1.0 with dt = 0.01 -> lag 100; 1e7 draws total
        let k = CorrelationKernel::exponential(1.0, 1.0).unwrap();
        let (mean, se) = autocov_over_realizations(&k, 0.01, 100_000, 100, 100, 3);
        let expect = (-1.0f64).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "cov {mean} +- {se} vs {expect}"
        );
    }

    #[test]
    fn sites_are_uncorrelated() {
        let k = tri(20.0, 0.01);
        let mut cross: Vec<Vec<f64>> = vec![Vec::new(); 21];
        for r in 0..100u64 {
            let path = sample_noise_paths(&k, 2, 0.001, 10_000, 5, r).unwrap();
            let (a, b) = (path.site(0), path.site(1));
            for m in 0..=20usize {
                let mut s = 0.0;
                for k in 0..path.n_steps - m {
                    s += a[k] * b[k + m];
                }
                cross[m].push(s / path.n_steps as f64);
            }
        }
        for (m, vals) in cross.iter().enumerate() {
            let (mean, se) = mean_stderr(vals);
            assert!(
                mean.abs() <= 3.0 * se,
                "cross-cov at lag {m}: {mean} +- {se}"
            );
        }
    }

    #[test]
    fn draws_are_gaussian() {
        // excess kurtosis of 1e6 draws within 3 stderr of 0
        let k = CorrelationKernel::white_noise(1.0).unwrap();
        let path = sample_noise_paths(&k, 1, 0.01, 1_000_000, 9, 0).unwrap();
        let xs = path.site(0);
        let n = xs.len() as f64;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2) - 3.0;
        let se = (24.0 / n).sqrt();
        assert!(
            kurt.abs() < 3.0 * se,
            "excess kurtosis {kurt} vs stderr {se}"
        );
    }

    #[test]
    fn white_noise_variance_scales_with_dt() {
        let k = CorrelationKernel::white_noise(4.0).unwrap();
        let path = sample_noise_paths(&k, 1, 0.01, 200_000, 13, 0).unwrap();
        let xs = path.site(0);
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let expect = 4.0 / 0.01;
        let se = expect * (2.0 / xs.len() as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "var {var} vs {expect}");
    }

    #[test]
    fn zero_magnitude_noise_is_identically_zero() {
        let k = tri(0.0, 1.0);
        let path = sample_noise_paths(&k, 2, 0.1, 100, 1, 0).unwrap();
        assert!(path.site(0).iter().chain(path.site(1)).all(|&v| v == 0.0));
        let cov = empirical_autocovariance(&path, 5).unwrap();
        assert!(cov.iter().all(|&(_, c)| c == 0.0));
    }

    #[test]
    fn autocovariance_guards_lag() {
        let k = tri(1.0, 1.0);
        let path = sample_noise_paths(&k, 1, 0.25, 100, 1, 0).unwrap();
        assert!(matches!(
            empirical_autocovariance(&path, 10),
            Err(Error::LagTooLarge { .. })
        ));
        assert!(empirical_autocovariance(&path, 9).is_ok());
    }

    #[test]
    fn site_csv_dump_round_trips() {
        let k = tri(2.0, 0.4);
        let path = sample_noise_paths(&k, 1, 0.1, 5, 3, 0).unwrap();
        let mut buf = Vec::new();
        path.write_site_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,value"));
        for (k, line) in lines.enumerate() {
            let mut cols = line.split(',');
            let t: f64 = cols.next().unwrap().parse().unwrap();
            let v: f64 = cols.next().unwrap().parse().unwrap();
            assert_eq!(t, k as f64 * 0.1);
            assert_eq!(v, path.site(0)[k]);
        }
    }

    #[test]
    fn refine_preserves_the_path() {
        let k = tri(5.0, 0.4);
        let path = sample_noise_paths(&k, 2, 0.1, 50, 21, 3).unwrap();
        let fine = path.refine(2);
        assert_eq!(fine.dt, 0.05);
        assert_eq!(fine.n_steps, 100);
        for j in 0..2 {
            for k in 0..50 {
                assert_eq!(fine.site(j)[2 * k], path.site(j)[k]);
                assert_eq!(fine.site(j)[2 * k + 1], path.site(j)[k]);
            }
        }
    }
}

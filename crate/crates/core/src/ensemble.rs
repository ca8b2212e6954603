//! Ensemble Monte Carlo: many noise realizations, averaged spreading,
//! diffusion-coefficient extraction, and direct Monte Carlo checks of the
//! dephasing theory.
//!
//! Realizations run concurrently, but partial sums are always combined in
//! ascending realization order, so every statistic is a pure function of
//! `(config, n_realizations, master_seed)` — bit-identical across runs and
//! across any degree of parallelism.

use rayon::prelude::*;

use crate::dynamics::{evolve, init_delta, profile_moments, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{CorrelationKernel, KernelShape};
use crate::noise::{mix64, NoiseGenerator};
use crate::theory::{self, TheoryParams};

/// Realizations per parallel batch. Fixed (not tied to worker count) so the
/// reduction order never depends on the execution environment.
const BATCH: usize = 8;

/// Ensemble-averaged observables on the snapshot grid.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// Probability profile averaged over realizations, one row per time.
    pub mean_profile: Vec<Vec<f64>>,
    /// Variance of the ensemble-mean profile — the standard deviation of the
    /// ensemble-averaged distribution, squared, not the average of
    /// per-realization variances.
    pub sigma_squared: Vec<f64>,
    /// Standard error of sigma^2 from the spread of per-realization values.
    pub sigma_sq_stderr: Vec<f64>,
    /// Per-realization sigma^2 curves (one row per realization), kept so a
    /// slope fit can carry an honest realization-spread error bar.
    pub realization_sigma_sq: Vec<Vec<f64>>,
    /// Worst boundary mass over realizations, per time.
    pub boundary_mass_max: Vec<f64>,
    pub n_realizations: usize,
    pub master_seed: u64,
    /// Dephasing time of the kernel (0 when there is no noise); fixes the
    /// fit window.
    pub tau_phi: f64,
    /// Set when some realization tripped the boundary watchdog; the stats
    /// are truncated to the common valid range.
    pub truncated_at: Option<f64>,
}

/// Least-squares estimate of the diffusion coefficient from sigma^2(t).
#[derive(Debug, Clone)]
pub struct DiffusionEstimate {
    /// Sites^2 per unit time, slope/2 of the fitted line.
    pub d: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub quality: QualityFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityFlag {
    Good,
    ShortWindow,
    NonLinear,
}

impl std::fmt::Display for QualityFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QualityFlag::Good => "good",
            QualityFlag::ShortWindow => "short_window",
            QualityFlag::NonLinear => "non_linear",
        };
        f.write_str(s)
    }
}

/// Run `n_realizations` independent evolutions from a center-site start and
/// aggregate them.
pub fn run_ensemble(
    config: &SimConfig,
    n_realizations: usize,
    master_seed: u64,
) -> Result<EnsembleStats> {
    if n_realizations < 1 {
        return Err(Error::Config("need at least one realization".into()));
    }
    let tau_phi = match theory::dephasing_time(&config.kernel) {
        Ok(t) => t,
        Err(Error::BallisticRegime) => 0.0,
        Err(e) => return Err(e),
    };

    let mut acc: Option<Accumulator> = None;
    for batch_start in (0..n_realizations).step_by(BATCH) {
        let batch_end = (batch_start + BATCH).min(n_realizations);
        let trajectories: Vec<Result<Trajectory>> = (batch_start..batch_end)
            .into_par_iter()
            .map(|r| run_one(config, master_seed, r as u64))
            .collect();
        for traj in trajectories {
            let traj = traj?;
            match acc.as_mut() {
                None => acc = Some(Accumulator::new(traj)?),
                Some(a) => a.add(traj)?,
            }
        }
    }
    acc.expect("at least one realization")
        .finish(n_realizations, master_seed, tau_phi)
}

fn run_one(config: &SimConfig, master_seed: u64, realization: u64) -> Result<Trajectory> {
    let mut noise = NoiseGenerator::new(
        &config.kernel,
        config.n_sites,
        config.dt,
        config.n_steps.max(1),
        master_seed,
        realization,
    )?;
    evolve(config, &mut noise, init_delta(config.n_sites)?)
}

struct Accumulator {
    times: Vec<f64>,
    profile_sum: Vec<Vec<f64>>,
    realization_sigma_sq: Vec<Vec<f64>>,
    bm_max: Vec<f64>,
    valid_len: usize,
    earliest_breach: Option<f64>,
}

impl Accumulator {
    fn new(traj: Trajectory) -> Result<Self> {
        let len = traj.times.len();
        let mut acc = Accumulator {
            times: traj.times.clone(),
            profile_sum: vec![vec![0.0; traj.profiles[0].len()]; len],
            realization_sigma_sq: Vec::new(),
            bm_max: vec![0.0; len],
            valid_len: len,
            earliest_breach: None,
        };
        acc.add(traj)?;
        Ok(acc)
    }

    fn add(&mut self, traj: Trajectory) -> Result<()> {
        let len = traj.times.len().min(self.times.len());
        self.valid_len = self.valid_len.min(traj.times.len());
        if let Some(b) = traj.breach_time {
            self.earliest_breach = Some(match self.earliest_breach {
                Some(prev) => prev.min(b),
                None => b,
            });
        }
        let mut sigma_row = Vec::with_capacity(len);
        for i in 0..len {
            for (s, p) in self.profile_sum[i].iter_mut().zip(&traj.profiles[i]) {
                *s += p;
            }
            let (_, var) = profile_moments(&traj.profiles[i])?;
            sigma_row.push(var);
            if traj.boundary_mass[i] > self.bm_max[i] {
                self.bm_max[i] = traj.boundary_mass[i];
            }
        }
        self.realization_sigma_sq.push(sigma_row);
        Ok(())
    }

    fn finish(mut self, n: usize, master_seed: u64, tau_phi: f64) -> Result<EnsembleStats> {
        let len = self.valid_len;
        self.times.truncate(len);
        self.profile_sum.truncate(len);
        for row in &mut self.realization_sigma_sq {
            row.truncate(len);
        }
        let nf = n as f64;
        let mean_profile: Vec<Vec<f64>> = self
            .profile_sum
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / nf).collect())
            .collect();
        let mut sigma_squared = Vec::with_capacity(len);
        let mut sigma_sq_stderr = Vec::with_capacity(len);
        for i in 0..len {
            let (_, var) = profile_moments(&mean_profile[i])?;
            sigma_squared.push(var);
            let mean_i = self
                .realization_sigma_sq
                .iter()
                .map(|row| row[i])
                .sum::<f64>()
                / nf;
            let sample_var = if n > 1 {
                self.realization_sigma_sq
                    .iter()
                    .map(|row| (row[i] - mean_i) * (row[i] - mean_i))
                    .sum::<f64>()
                    / (nf - 1.0)
            } else {
                0.0
            };
            sigma_sq_stderr.push((sample_var / nf).sqrt());
        }
        self.bm_max.truncate(len);
        Ok(EnsembleStats {
            times: self.times,
            mean_profile,
            sigma_squared,
            sigma_sq_stderr,
            realization_sigma_sq: self.realization_sigma_sq,
            boundary_mass_max: self.bm_max,
            n_realizations: n,
            master_seed,
            tau_phi,
            truncated_at: self.earliest_breach,
        })
    }
}

/// Extract D from the linear regime of sigma^2(t).
///
/// The window starts at `max(5 tau_phi, first time sigma >= 2 sites)` and
/// runs to the end of valid data; D is half the fitted slope. The estimate
/// is flagged `NonLinear` when adding a quadratic term improves R^2 by more
/// than 0.02 (residual ballistic contamination) and `ShortWindow` below 10
/// snapshots.
pub fn fit_diffusion(stats: &EnsembleStats) -> Result<DiffusionEstimate> {
    let t_end = *stats
        .times
        .last()
        .ok_or_else(|| Error::Domain("no snapshots to fit".into()))?;
    let needed = 20.0 * stats.tau_phi;
    if t_end < needed {
        return Err(Error::WindowTooShort { needed });
    }
    let t_sigma = stats
        .times
        .iter()
        .zip(&stats.sigma_squared)
        .find(|&(_, &s2)| s2 >= 4.0)
        .map(|(&t, _)| t);
    let Some(t_sigma) = t_sigma else {
        return Err(Error::WindowTooShort {
            needed: (4.0 * t_end).max(needed),
        });
    };
    let t_lo = t_sigma.max(5.0 * stats.tau_phi);
    let first = stats.times.partition_point(|&t| t < t_lo);
    let ts = &stats.times[first..];
    let s2 = &stats.sigma_squared[first..];
    if ts.len() < 2 {
        return Err(Error::WindowTooShort {
            needed: (2.0 * t_end).max(needed),
        });
    }

    let lin = linear_fit(ts, s2);
    let quality = if ts.len() < 10 {
        QualityFlag::ShortWindow
    } else {
        let quad_r2 = quadratic_r_squared(ts, s2);
        if quad_r2 - lin.r_squared > 0.02 || lin.slope <= 0.0 {
            QualityFlag::NonLinear
        } else {
            QualityFlag::Good
        }
    };
    // The OLS slope is linear in the data, so the slope of the mean curve is
    // the mean of per-realization slopes; their spread gives the honest
    // standard error. Residuals of the mean curve are serially correlated
    // and badly understate it, so they are only a fallback for stats without
    // per-realization curves.
    let slope_stderr = if stats.realization_sigma_sq.len() >= 2 {
        let slopes: Vec<f64> = stats
            .realization_sigma_sq
            .iter()
            .map(|row| linear_fit(ts, &row[first..]).slope)
            .collect();
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        let var = slopes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        lin.slope_stderr
    };
    Ok(DiffusionEstimate {
        d: 0.5 * lin.slope,
        stderr: 0.5 * slope_stderr,
        window: (ts[0], t_end),
        r_squared: lin.r_squared,
        quality,
    })
}

/// Ordinary least squares of `y` on `x`.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
        syy += (y - y_mean) * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if xs.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
    }
}

/// R^2 of the best quadratic fit, via the 3x3 normal equations.
fn quadratic_r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    // center x for conditioning
    let x0 = xs.iter().sum::<f64>() / n;
    let mut m = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = x - x0;
        let pows = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += pows[i] * pows[j];
            }
            b[i] += pows[i] * y;
        }
    }
    let Some(c) = solve3(m, b) else { return 0.0 };
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let u = x - x0;
        let r = y - (c[0] + c[1] * u + c[2] * u * u);
        ss_res += r * r;
        syy += (y - y_mean) * (y - y_mean);
    }
    if syy > 0.0 {
        1.0 - ss_res / syy
    } else {
        1.0
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// One grid value of the Monte Carlo dephasing estimate.
#[derive(Debug, Clone, Copy)]
pub struct DephasingPoint {
    pub lag: f64,
    pub mean_re: f64,
    pub mean_im: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

/// Monte Carlo estimate of the dephasing correlation: accumulate the phase
/// `phi(t_k) = sum xi dt` along single-site noise paths and average
/// `exp(-i phi)`.
pub fn mc_dephasing(
    kernel: &CorrelationKernel,
    dt: f64,
    t_max: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DephasingPoint>> {
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    if !(t_max > 0.0) {
        return Err(Error::Config(format!("t_max must be > 0, got {t_max}")));
    }
    let n_steps = (t_max / dt).round().max(1.0) as usize;
    let mut sum_re = vec![0.0; n_steps + 1];
    let mut sum_im = vec![0.0; n_steps + 1];
    let mut sum_re2 = vec![0.0; n_steps + 1];
    let mut sum_im2 = vec![0.0; n_steps + 1];
    let mut col = [0.0];
    for s in 0..n_samples {
        let mut gen = NoiseGenerator::new(kernel, 1, dt, n_steps, seed, s as u64)?;
        let mut phi = 0.0;
        sum_re[0] += 1.0;
        sum_re2[0] += 1.0;
        for k in 1..=n_steps {
            gen.next_column(&mut col);
            phi += col[0] * dt;
            let (sin_phi, cos_phi) = phi.sin_cos();
            sum_re[k] += cos_phi;
            sum_im[k] += -sin_phi;
            sum_re2[k] += cos_phi * cos_phi;
            sum_im2[k] += sin_phi * sin_phi;
        }
    }
    let n = n_samples as f64;
    let stderr = |sum: f64, sum2: f64| {
        let mean = sum / n;
        (((sum2 / n - mean * mean) * n / (n - 1.0)).max(0.0) / n).sqrt()
    };
    Ok((0..=n_steps)
        .map(|k| DephasingPoint {
            lag: k as f64 * dt,
            mean_re: sum_re[k] / n,
            mean_im: sum_im[k] / n,
            stderr_re: stderr(sum_re[k], sum_re2[k]),
            stderr_im: stderr(sum_im[k], sum_im2[k]),
        })
        .collect())
}

/// Monte Carlo estimate of `Q = int_0^inf C_phi^2`.
#[derive(Debug, Clone, Copy)]
pub struct PairFactorEstimate {
    pub q: f64,
    pub stderr: f64,
    /// True when `t_max < 20 tau_phi`, i.e. the truncation is not safely in
    /// the tail.
    pub truncated: bool,
}

/// Estimate Q from pairs of independent sites: per sample, two independent
/// phase paths contribute `Re exp(-i (phi_a + phi_b))`, whose expectation is
/// exactly `C_phi^2(t)`. Each sample's trapezoid integral gets the analytic
/// exponential tail attached beyond `t_max`; the standard error comes from
/// the spread of per-sample integrals.
pub fn mc_pair_factor(
    kernel: &CorrelationKernel,
    dt: f64,
    t_max: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PairFactorEstimate> {
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let tau_phi = theory::dephasing_time(kernel)?;
    let n_steps = (t_max / dt).round().max(1.0) as usize;
    let truncated = t_max < 20.0 * tau_phi;
    let tail_rate = 2.0 * kernel.half_integral();
    let mut col = [0.0; 2];
    let mut q_sum = 0.0;
    let mut q_sq_sum = 0.0;
    for s in 0..n_samples {
        let mut gen = NoiseGenerator::new(kernel, 2, dt, n_steps, seed, s as u64)?;
        let mut phi = 0.0;
        let mut acc = 0.5; // trapezoid half-weight of Re z(0) = 1
        let mut last_re = 1.0;
        for k in 1..=n_steps {
            gen.next_column(&mut col);
            phi += (col[0] + col[1]) * dt;
            last_re = phi.cos();
            acc += if k == n_steps { 0.5 * last_re } else { last_re };
        }
        let q = acc * dt + last_re.max(0.0) / tail_rate;
        q_sum += q;
        q_sq_sum += q * q;
    }
    let n = n_samples as f64;
    let mean = q_sum / n;
    let var = ((q_sq_sum / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(PairFactorEstimate {
        q: mean,
        stderr: (var / n).sqrt(),
        truncated,
    })
}

/// One point of a scaling sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub magnitude: f64,
    pub corr_time: f64,
    /// `x = W tau`.
    pub x: f64,
    /// `predict_diffusion / (T^2 tau)` for the exact kernel.
    pub f_theory: f64,
    pub f_numeric: Option<f64>,
    pub f_numeric_err: Option<f64>,
    pub quality: Option<QualityFlag>,
    /// Warning or failure reason; failed points are flagged, never dropped.
    pub note: Option<String>,
}

/// Sweep a (tau, W) grid, run an ensemble per point, and express both the
/// fitted and the predicted diffusion coefficient in the dimensionless form
/// `f = D / (T^2 tau)`.
pub fn scaling_sweep(
    shape: KernelShape,
    tau_list: &[f64],
    w_list: &[f64],
    tunneling: f64,
    n_realizations: usize,
    master_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if tau_list.is_empty() || w_list.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut points = Vec::with_capacity(tau_list.len() * w_list.len());
    for (pt_index, (&tau, &w)) in tau_list
        .iter()
        .flat_map(|tau| w_list.iter().map(move |w| (tau, w)))
        .enumerate()
    {
        points.push(sweep_point(
            shape,
            w,
            tau,
            tunneling,
            n_realizations,
            mix64(master_seed ^ mix64(pt_index as u64 + 1)),
        )?);
    }
    Ok(points)
}

fn sweep_point(
    shape: KernelShape,
    w: f64,
    tau: f64,
    tunneling: f64,
    n_realizations: usize,
    point_seed: u64,
) -> Result<SweepPoint> {
    let kernel = match shape {
        KernelShape::Triangular => CorrelationKernel::triangular(w, tau)?,
        KernelShape::Exponential => CorrelationKernel::exponential(w, tau)?,
        other => {
            return Err(Error::Config(format!(
                "scaling sweep needs a finite-tau built-in shape, got {other}"
            )));
        }
    };
    let params = TheoryParams::new(tunneling, kernel.clone())?;
    let t2_tau = tunneling * tunneling * tau;
    let d_theory = theory::predict_diffusion(&params)?;
    let mut point = SweepPoint {
        magnitude: w,
        corr_time: tau,
        x: w * tau,
        f_theory: d_theory / t2_tau,
        f_numeric: None,
        f_numeric_err: None,
        quality: None,
        note: if params.perturbative_ok() {
            None
        } else {
            Some(format!(
                "T/W = {:.2} > 0.2: outside the perturbative regime",
                params.validity_ratio()
            ))
        },
    };
    match simulate_point(&kernel, tunneling, d_theory, n_realizations, point_seed) {
        Ok(fit) => {
            point.f_numeric = Some(fit.d / t2_tau);
            point.f_numeric_err = Some(fit.stderr / t2_tau);
            point.quality = Some(fit.quality);
        }
        Err(e) => {
            point.note = Some(match point.note.take() {
                Some(prev) => format!("{prev}; {e}"),
                None => e.to_string(),
            });
        }
    }
    Ok(point)
}

fn simulate_point(
    kernel: &CorrelationKernel,
    tunneling: f64,
    d_theory: f64,
    n_realizations: usize,
    point_seed: u64,
) -> Result<DiffusionEstimate> {
    let tau_phi = theory::dephasing_time(kernel)?;
    let mut dt = SimConfig::max_recommended_dt(tunneling, kernel);
    if let Some(tau) = kernel.corr_time() {
        // snap dt to an exact divisor of tau so the moving-average window
        // reproduces tau exactly
        dt = tau / (tau / dt).ceil();
    }
    let t_lo_est = (5.0 * tau_phi).max(2.0 / d_theory);
    let t_max = (20.0 * tau_phi).max(2.5 * t_lo_est);
    let n_sites = SimConfig::auto_sites(tunneling, kernel, t_max)?;
    let config = SimConfig::new(tunneling, kernel.clone(), n_sites, dt, t_max, t_max / 100.0)?;
    let stats = run_ensemble(&config, n_realizations, point_seed)?;
    fit_diffusion(&stats)
}

/// Log-log slope of `(x, y)` points, for asymptotic-flank checks.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<LinearFit> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    Some(linear_fit(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseSource;

    fn fig2_config(n_sites: usize, t_max: f64) -> SimConfig {
        let kernel = CorrelationKernel::triangular(20.0, 0.01).unwrap();
        SimConfig::new(1.0, kernel, n_sites, 0.001, t_max, t_max / 20.0).unwrap()
    }

    #[test]
    fn single_realization_equals_evolve() {
        let config = fig2_config(41, 2.0);
        let stats = run_ensemble(&config, 1, 99).unwrap();
        let mut gen = NoiseGenerator::new(
            &config.kernel,
            config.n_sites,
            config.dt,
            config.n_steps,
            99,
            0,
        )
        .unwrap();
        let traj = evolve(&config, &mut gen, init_delta(41).unwrap()).unwrap();
        assert_eq!(stats.times, traj.times);
        assert_eq!(stats.mean_profile, traj.profiles);
    }

    #[test]
    fn ensemble_is_deterministic() {
        let config = fig2_config(41, 1.0);
        let a = run_ensemble(&config, 10, 4).unwrap();
        let b = run_ensemble(&config, 10, 4).unwrap();
        assert_eq!(a.mean_profile, b.mean_profile);
        assert_eq!(a.sigma_squared, b.sigma_squared);
        assert_eq!(a.sigma_sq_stderr, b.sigma_sq_stderr);
        // different seed changes the data
        let c = run_ensemble(&config, 10, 5).unwrap();
        assert_ne!(a.sigma_squared, c.sigma_squared);
    }

    #[test]
    fn mean_profile_rows_are_normalized() {
        let config = fig2_config(41, 1.0);
        let stats = run_ensemble(&config, 5, 1).unwrap();
        for row in &stats.mean_profile {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-8, "row sum {sum}");
        }
        assert!(stats.truncated_at.is_none());
        assert!(
            (stats.tau_phi - 0.50333).abs() < 1e-4,
            "tau_phi {}",
            stats.tau_phi
        );
    }

    #[test]
    fn sigma_grows_monotonically_within_noise() {
        let config = fig2_config(61, 5.0);
        let stats = run_ensemble(&config, 20, 2).unwrap();
        for i in 1..stats.times.len() {
            let slack = 2.0 * (stats.sigma_sq_stderr[i] + stats.sigma_sq_stderr[i - 1]);
            assert!(
                stats.sigma_squared[i] >= stats.sigma_squared[i - 1] - slack,
                "sigma^2 dropped at t={}",
                stats.times[i]
            );
        }
    }

    #[test]
    fn ensemble_mean_position_is_centered() {
        // site-symmetric noise statistics give a reflection-symmetric
        // ensemble; test via the mean position over realizations
        let config = fig2_config(61, 5.0);
        let mut means = Vec::new();
        for r in 0..20u64 {
            let mut gen = NoiseGenerator::new(
                &config.kernel,
                config.n_sites,
                config.dt,
                config.n_steps,
                31,
                r,
            )
            .unwrap();
            let traj = evolve(&config, &mut gen, init_delta(61).unwrap()).unwrap();
            let (mean, _) = profile_moments(traj.profiles.last().unwrap()).unwrap();
            means.push(mean);
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean position {mean} +- {se}");
    }

    fn synthetic_stats(times: Vec<f64>, sigma: Vec<f64>, tau_phi: f64) -> EnsembleStats {
        let n = times.len();
        EnsembleStats {
            times,
            mean_profile: vec![Vec::new(); n],
            sigma_squared: sigma,
            sigma_sq_stderr: vec![0.0; n],
            realization_sigma_sq: Vec::new(),
            boundary_mass_max: vec![0.0; n],
            n_realizations: 2,
            master_seed: 0,
            tau_phi,
            truncated_at: None,
        }
    }

    #[test]
    fn fit_recovers_exact_slope() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let sigma: Vec<f64> = times.iter().map(|&t| 1.0 * t).collect();
        let fit = fit_diffusion(&synthetic_stats(times, sigma, 0.1)).unwrap();
        assert!((fit.d - 0.5).abs() < 1e-12, "D = {}", fit.d);
        assert!(fit.stderr < 1e-12);
        assert_eq!(fit.quality, QualityFlag::Good);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.window.1, 100.0);
    }

    #[test]
    fn fit_flags_ballistic_data() {
        let times: Vec<f64> = (0..=100).map(|i| 0.1 * i as f64).collect();
        let sigma: Vec<f64> = times.iter().map(|&t| 2.0 * t * t).collect();
        let fit = fit_diffusion(&synthetic_stats(times, sigma, 0.0)).unwrap();
        assert_eq!(fit.quality, QualityFlag::NonLinear);
    }

    #[test]
    fn fit_flags_short_window() {
        let times: Vec<f64> = (0..=12).map(|i| i as f64).collect();
        let sigma: Vec<f64> = times.iter().map(|&t| t).collect();
        // sigma^2 >= 4 from t = 4 -> 9 points in window
        let fit = fit_diffusion(&synthetic_stats(times, sigma, 0.0)).unwrap();
        assert_eq!(fit.quality, QualityFlag::ShortWindow);
    }

    #[test]
    fn fit_requires_dephasing_separation() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let sigma: Vec<f64> = times.iter().map(|&t| t).collect();
        let err = fit_diffusion(&synthetic_stats(times, sigma, 1.0)).unwrap_err();
        assert!(matches!(err, Error::WindowTooShort { .. }));
    }

    #[test]
    fn dephasing_grid_starts_at_exactly_one() {
        let kernel = CorrelationKernel::triangular(1.0, 1.0).unwrap();
        let points = mc_dephasing(&kernel, 0.05, 2.0, 100, 5).unwrap();
        assert_eq!(points[0].mean_re, 1.0);
        assert_eq!(points[0].mean_im, 0.0);
        assert_eq!(points[0].stderr_re, 0.0);
    }

    #[test]
    fn dephasing_matches_closed_form_at_unit_lag() {
        let kernel = CorrelationKernel::triangular(1.0, 1.0).unwrap();
        let points = mc_dephasing(&kernel, 0.02, 1.0, 10_000, 12).unwrap();
        let p = points.last().unwrap();
        assert_eq!(p.lag, 1.0);
        let expect = kernel.dephasing_correlation(1.0).unwrap();
        assert!(
            (p.mean_re - expect).abs() < 3.0 * p.stderr_re,
            "re {} +- {} vs {expect}",
            p.mean_re,
            p.stderr_re
        );
    }

    #[test]
    fn dephasing_imaginary_part_vanishes() {
        // xi -> -xi symmetry of the Gaussian noise
        let kernel = CorrelationKernel::exponential(2.0, 0.5).unwrap();
        let points = mc_dephasing(&kernel, 0.025, 3.0, 10_000, 4).unwrap();
        for p in &points {
            assert!(
                p.mean_im.abs() <= 3.0 * p.stderr_im.max(1e-12),
                "imag {} +- {} at lag {}",
                p.mean_im,
                p.stderr_im,
                p.lag
            );
        }
    }

    #[test]
    fn pair_factor_white_noise() {
        // C_phi = exp(-gamma t / 2) exactly; Q = 1/gamma
        let kernel = CorrelationKernel::white_noise(4.0).unwrap();
        let est = mc_pair_factor(&kernel, 0.005, 10.0, 4000, 3).unwrap();
        assert!(!est.truncated);
        assert!(
            (est.q - 0.25).abs() < 3.0 * est.stderr,
            "Q {} +- {}",
            est.q,
            est.stderr
        );
    }

    #[test]
    fn pair_factor_matches_quadrature() {
        // 2 T^2 Q_hat must agree with the quadrature for both shapes in
        // both correlation regimes
        for (shape, tau, dt) in [
            (KernelShape::Triangular, 0.05, 0.0025),
            (KernelShape::Triangular, 1.0, 0.05),
            (KernelShape::Exponential, 0.05, 0.0025),
            (KernelShape::Exponential, 1.0, 0.05),
        ] {
            let kernel = match shape {
                KernelShape::Triangular => CorrelationKernel::triangular(5.0, tau).unwrap(),
                _ => CorrelationKernel::exponential(5.0, tau).unwrap(),
            };
            let params = TheoryParams::new(1.0, kernel.clone()).unwrap();
            let d_theory = theory::predict_diffusion(&params).unwrap();
            let tau_phi = theory::dephasing_time(&kernel).unwrap();
            let est = mc_pair_factor(&kernel, dt, 22.0 * tau_phi, 4000, 17).unwrap();
            assert!(!est.truncated);
            let d_mc = 2.0 * est.q;
            let tol = 3.0 * 2.0 * est.stderr;
            assert!(
                (d_mc - d_theory).abs() < tol,
                "{shape:?} tau={tau}: 2T^2Q = {d_mc} +- {tol} vs {d_theory}"
            );
        }
    }

    #[test]
    fn pair_factor_at_crossover_parameters() {
        // triangular W=20, tau=0.01: Q from the frozen quadrature is 0.25332
        let kernel = CorrelationKernel::triangular(20.0, 0.01).unwrap();
        let tau_phi = theory::dephasing_time(&kernel).unwrap();
        let est = mc_pair_factor(&kernel, 0.001, 22.0 * tau_phi, 2000, 6).unwrap();
        assert!(!est.truncated);
        let expect = 0.5066445407 / 2.0;
        assert!(
            (est.q - expect).abs() < 3.0 * est.stderr,
            "Q {} +- {} vs {expect}",
            est.q,
            est.stderr
        );
    }

    #[test]
    fn early_spreading_is_superlinear_and_excluded_from_fit() {
        // residual ballistic transient: sigma^2 grows faster than linear for
        // t << tau_phi, and the fit window starts only after 5 tau_phi
        let kernel = CorrelationKernel::triangular(20.0, 0.01).unwrap();
        let config = SimConfig::new(1.0, kernel, 61, 0.001, 12.0, 0.05).unwrap();
        let stats = run_ensemble(&config, 20, 8).unwrap();
        let s2_at = |t: f64| {
            let i = stats
                .times
                .iter()
                .position(|&u| (u - t).abs() < 1e-9)
                .unwrap();
            stats.sigma_squared[i]
        };
        // tau_phi ~ 0.5; doubling t well inside the transient more than
        // doubles sigma^2 (a pure diffusive law would exactly double it)
        let ratio = s2_at(0.2) / s2_at(0.1);
        assert!(ratio > 2.5, "early growth ratio {ratio} not superlinear");
        let fit = fit_diffusion(&stats).unwrap();
        assert!(
            fit.window.0 >= 5.0 * stats.tau_phi,
            "window starts at {} < 5 tau_phi",
            fit.window.0
        );
    }

    #[test]
    fn pair_factor_stderr_shrinks_with_samples() {
        let kernel = CorrelationKernel::triangular(5.0, 0.5).unwrap();
        let a = mc_pair_factor(&kernel, 0.025, 10.0, 1000, 7).unwrap();
        let b = mc_pair_factor(&kernel, 0.025, 10.0, 4000, 7).unwrap();
        assert!(b.stderr < a.stderr * 0.7, "{} vs {}", a.stderr, b.stderr);
    }

    #[test]
    fn pair_factor_flags_truncation() {
        let kernel = CorrelationKernel::triangular(5.0, 0.5).unwrap();
        let tau_phi = theory::dephasing_time(&kernel).unwrap();
        let est = mc_pair_factor(&kernel, 0.025, 5.0 * tau_phi, 100, 7).unwrap();
        assert!(est.truncated);
    }

    #[test]
    fn noise_source_trait_is_exposed() {
        // NoiseGenerator can drive evolve through the trait object path too
        let kernel = CorrelationKernel::triangular(5.0, 0.5).unwrap();
        let gen = NoiseGenerator::new(&kernel, 3, 0.05, 10, 0, 0).unwrap();
        assert_eq!(NoiseSource::n_sites(&gen), 3);
    }

    #[test]
    fn sweep_reports_failures_without_dropping() {
        // T not << W: the point must carry a warning note but still run
        let points = scaling_sweep(KernelShape::Triangular, &[0.5], &[3.0], 1.0, 3, 9).unwrap();
        assert_eq!(points.len(), 1);
        let p = &points[0];
        assert!(p.note.as_deref().unwrap_or("").contains("perturbative"));
        assert!(p.f_numeric.is_some());
        assert!((p.x - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_empty_grid() {
        assert!(scaling_sweep(KernelShape::Triangular, &[], &[1.0], 1.0, 2, 0).is_err());
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let x = i as f64;
                (x, 5.0 * x.powf(-2.0))
            })
            .collect();
        let fit = loglog_slope(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }
}

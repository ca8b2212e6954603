//! Norm-preserving integration of the stochastic tight-binding Schrödinger
//! equation
//!
//! ```text
//! i dA_j/dt = T (A_{j+1} + A_{j-1}) + xi(j, t) A_j
//! ```
//!
//! for one noise realization, on an open (hard-wall) finite lattice.
//!
//! One step is a Strang splitting: a half-step of the exact diagonal phase
//! `A_j <- exp(-i xi_j dt/2) A_j`, a full hopping step in Cayley form
//! `(I + i dt/2 H) A' = (I - i dt/2 H) A` (unitary for Hermitian `H`,
//! solved by a precomputed tridiagonal factorization), and the second
//! diagonal half-step. The noise is constant across the step, so the
//! diagonal factor is exact; the splitting truncation error is O(dt^3) per
//! step. Long-time diffusion measurement is hypersensitive to norm drift,
//! which this scheme removes by construction rather than by tolerance.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::CorrelationKernel;
use crate::noise::{NoiseGenerator, NoisePath};
use crate::theory;

/// Complex amplitudes on the lattice at one time.
#[derive(Debug, Clone)]
pub struct LatticeState {
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl LatticeState {
    pub fn n_sites(&self) -> usize {
        self.amplitudes.len()
    }

    /// Total probability; 1 up to norm drift for any state produced here.
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|A_1|^2 + |A_N|^2`, the finite-lattice validity watchdog.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.amplitudes.len();
        self.amplitudes[0].norm_sqr() + self.amplitudes[n - 1].norm_sqr()
    }
}

/// Wavefunction confined to the center site at `t = 0`.
pub fn init_delta(n_sites: usize) -> Result<LatticeState> {
    if n_sites < 3 {
        return Err(Error::Config(format!(
            "lattice needs at least 3 sites, got {n_sites}"
        )));
    }
    if n_sites % 2 == 0 {
        return Err(Error::Config(format!(
            "lattice size must be odd so a unique center exists, got {n_sites}"
        )));
    }
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); n_sites];
    amplitudes[n_sites / 2] = Complex64::new(1.0, 0.0);
    Ok(LatticeState {
        amplitudes,
        time: 0.0,
    })
}

/// Simulation parameters for one ensemble member.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub tunneling: f64,
    pub kernel: CorrelationKernel,
    pub n_sites: usize,
    pub dt: f64,
    /// Recorded as an integer number of steps times dt.
    pub t_max: f64,
    pub n_steps: usize,
    /// Recorded as an integer number of steps times dt.
    pub snapshot_interval: f64,
    pub snapshot_every: usize,
    pub boundary_mass_limit: f64,
}

impl SimConfig {
    /// Build a config, enforcing the step-size heuristic
    /// `dt <= min(tau/10, 0.1/W, 0.1/T)` (terms without a finite scale are
    /// skipped). Use [`SimConfig::new_with_dt_override`] to bypass it.
    pub fn new(
        tunneling: f64,
        kernel: CorrelationKernel,
        n_sites: usize,
        dt: f64,
        t_max: f64,
        snapshot_interval: f64,
    ) -> Result<Self> {
        let cap = dt_cap(tunneling, &kernel);
        if dt > cap * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt={dt} exceeds the stability/accuracy heuristic min(tau/10, 0.1/W, 0.1/T) = {cap}; \
                 reduce dt or construct with an explicit override"
            )));
        }
        Self::new_with_dt_override(tunneling, kernel, n_sites, dt, t_max, snapshot_interval)
    }

    /// Same as [`SimConfig::new`] but without the dt heuristic.
    pub fn new_with_dt_override(
        tunneling: f64,
        kernel: CorrelationKernel,
        n_sites: usize,
        dt: f64,
        t_max: f64,
        snapshot_interval: f64,
    ) -> Result<Self> {
        if !(tunneling >= 0.0) || !tunneling.is_finite() {
            return Err(Error::Config(format!(
                "tunneling must be finite and >= 0, got {tunneling}"
            )));
        }
        if n_sites < 3 || n_sites % 2 == 0 {
            return Err(Error::Config(format!(
                "n_sites must be odd and >= 3, got {n_sites}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!(
                "dt must be finite and > 0, got {dt}"
            )));
        }
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::Config(format!(
                "t_max must be finite and >= 0, got {t_max}"
            )));
        }
        if !(snapshot_interval > 0.0) {
            return Err(Error::Config(format!(
                "snapshot_interval must be > 0, got {snapshot_interval}"
            )));
        }
        let n_steps = (t_max / dt).round() as usize;
        let snapshot_every = ((snapshot_interval / dt).round() as usize).max(1);
        Ok(SimConfig {
            tunneling,
            kernel,
            n_sites,
            dt,
            t_max: n_steps as f64 * dt,
            n_steps,
            snapshot_interval: snapshot_every as f64 * dt,
            snapshot_every,
            boundary_mass_limit: 1e-6,
        })
    }

    pub fn with_boundary_mass_limit(mut self, limit: f64) -> Self {
        self.boundary_mass_limit = limit;
        self
    }

    /// Largest dt the accuracy heuristic allows for these parameters.
    pub fn max_recommended_dt(tunneling: f64, kernel: &CorrelationKernel) -> f64 {
        dt_cap(tunneling, kernel)
    }

    /// Default odd lattice size keeping boundary mass negligible over
    /// `[0, t_max]`: 8 diffusive standard deviations plus the early ballistic
    /// excursion, or the full ballistic cone when there is no noise.
    pub fn auto_sites(tunneling: f64, kernel: &CorrelationKernel, t_max: f64) -> Result<usize> {
        let params = theory::TheoryParams::new(tunneling.max(f64::MIN_POSITIVE), kernel.clone())?;
        let half = match theory::predict_diffusion(&params) {
            Ok(d) => {
                let tau_phi = theory::dephasing_time(kernel)?;
                let ballistic = 2.0 * tunneling * t_max.min(5.0 * tau_phi);
                8.0 * (2.0 * d * t_max).sqrt() + ballistic + 8.0
            }
            Err(Error::BallisticRegime) => {
                let reach = 2.0 * tunneling * t_max;
                reach + (8.0 * reach.cbrt()).max(16.0)
            }
            Err(e) => return Err(e),
        };
        Ok(2 * (half.ceil() as usize) + 1)
    }
}

fn dt_cap(tunneling: f64, kernel: &CorrelationKernel) -> f64 {
    let mut cap = f64::INFINITY;
    if let Some(tau) = kernel.corr_time() {
        cap = cap.min(tau / 10.0);
    }
    if let Some(w) = kernel.magnitude() {
        if w > 0.0 {
            cap = cap.min(0.1 / w);
        }
    }
    if tunneling > 0.0 {
        cap = cap.min(0.1 / tunneling);
    }
    cap
}

/// One-step propagator: precomputed Cayley factorization plus scratch
/// buffers. Per-realization object; build one per worker.
pub struct Propagator {
    n: usize,
    dt: f64,
    /// Off-diagonal entry `i dt T / 2` of both Cayley matrices.
    c: Complex64,
    /// Forward-elimination coefficients of `I + i dt/2 H`.
    upper: Vec<Complex64>,
    inv_diag: Vec<Complex64>,
    phase: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Propagator {
    pub fn new(n_sites: usize, dt: f64, tunneling: f64) -> Propagator {
        let c = Complex64::new(0.0, 0.5 * dt * tunneling);
        let mut upper = vec![Complex64::new(0.0, 0.0); n_sites];
        let mut inv_diag = vec![Complex64::new(1.0, 0.0); n_sites];
        upper[0] = c;
        for i in 1..n_sites {
            let inv = (Complex64::new(1.0, 0.0) - c * upper[i - 1]).inv();
            inv_diag[i] = inv;
            upper[i] = c * inv;
        }
        Propagator {
            n: n_sites,
            dt,
            c,
            upper,
            inv_diag,
            phase: vec![Complex64::new(0.0, 0.0); n_sites],
            work: vec![Complex64::new(0.0, 0.0); n_sites],
        }
    }

    /// Advance the state by one step under the given frozen noise column.
    pub fn step(&mut self, state: &mut LatticeState, noise_column: &[f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(noise_column.len(), n, "noise column length mismatch");
        assert_eq!(state.amplitudes.len(), n, "state length mismatch");
        let a = &mut state.amplitudes;

        // diagonal phase factors for this step, used by both half-steps
        for (p, &xi) in self.phase.iter_mut().zip(noise_column) {
            let (s, c) = (-xi * self.dt * 0.5).sin_cos();
            *p = Complex64::new(c, s);
        }
        for (aj, p) in a.iter_mut().zip(&self.phase) {
            *aj *= p;
        }

        // rhs = (I - i dt/2 H) A
        let w = &mut self.work;
        if n == 1 {
            w[0] = a[0];
        } else {
            w[0] = a[0] - self.c * a[1];
            for j in 1..n - 1 {
                w[j] = a[j] - self.c * (a[j + 1] + a[j - 1]);
            }
            w[n - 1] = a[n - 1] - self.c * a[n - 2];
        }

        // Thomas solve of (I + i dt/2 H) A' = rhs with precomputed factors
        for j in 1..n {
            w[j] = (w[j] - self.c * w[j - 1]) * self.inv_diag[j];
        }
        a[n - 1] = w[n - 1];
        for j in (0..n - 1).rev() {
            a[j] = w[j] - self.upper[j] * a[j + 1];
        }

        let mut probe = 0.0;
        for (aj, p) in a.iter_mut().zip(&self.phase) {
            *aj *= p;
            probe += aj.re + aj.im;
        }
        if !probe.is_finite() {
            return Err(Error::NumericalBlowup(state.time));
        }
        state.time += self.dt;
        Ok(())
    }
}

/// Single-step convenience wrapper. For a whole trajectory build one
/// [`Propagator`] instead.
pub fn step(state: &mut LatticeState, noise_column: &[f64], dt: f64, tunneling: f64) -> Result<()> {
    Propagator::new(state.n_sites(), dt, tunneling).step(state, noise_column)
}

/// Abstraction over streamed and materialized noise, so long trajectories
/// never hold the full sites-by-steps matrix.
pub trait NoiseSource {
    fn dt(&self) -> f64;
    fn n_sites(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn next_column(&mut self, out: &mut [f64]);
}

impl NoiseSource for NoiseGenerator {
    fn dt(&self) -> f64 {
        NoiseGenerator::dt(self)
    }
    fn n_sites(&self) -> usize {
        NoiseGenerator::n_sites(self)
    }
    fn n_steps(&self) -> usize {
        NoiseGenerator::n_steps(self)
    }
    fn next_column(&mut self, out: &mut [f64]) {
        NoiseGenerator::next_column(self, out)
    }
}

/// Replay of a materialized [`NoisePath`].
pub struct NoiseReplay<'a> {
    path: &'a NoisePath,
    cursor: usize,
}

impl<'a> NoiseReplay<'a> {
    pub fn new(path: &'a NoisePath) -> Self {
        NoiseReplay { path, cursor: 0 }
    }
}

impl NoiseSource for NoiseReplay<'_> {
    fn dt(&self) -> f64 {
        self.path.dt
    }
    fn n_sites(&self) -> usize {
        self.path.n_sites
    }
    fn n_steps(&self) -> usize {
        self.path.n_steps
    }
    fn next_column(&mut self, out: &mut [f64]) {
        self.path.column(self.cursor, out);
        self.cursor += 1;
    }
}

/// Probability profiles and boundary mass sampled on the snapshot grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<Vec<f64>>,
    pub boundary_mass: Vec<f64>,
    /// Set when the boundary-mass watchdog fired; snapshots at and beyond
    /// this time are invalid for diffusion analysis and were not recorded.
    pub breach_time: Option<f64>,
}

/// Integrate one realization, recording `|A_j|^2` at every snapshot
/// interval. The trajectory is truncated (and flagged) the first time the
/// boundary mass exceeds `config.boundary_mass_limit`.
pub fn evolve<S: NoiseSource>(
    config: &SimConfig,
    noise: &mut S,
    mut state: LatticeState,
) -> Result<Trajectory> {
    let rel_dt = (noise.dt() - config.dt).abs() / config.dt;
    if rel_dt > 1e-9 {
        return Err(Error::Config(format!(
            "noise dt {} does not match config dt {}",
            noise.dt(),
            config.dt
        )));
    }
    if noise.n_sites() != config.n_sites || state.n_sites() != config.n_sites {
        return Err(Error::Config(format!(
            "size mismatch: config {} sites, noise {}, state {}",
            config.n_sites,
            noise.n_sites(),
            state.n_sites()
        )));
    }
    if noise.n_steps() < config.n_steps {
        return Err(Error::Config(format!(
            "noise covers {} steps, need {}",
            noise.n_steps(),
            config.n_steps
        )));
    }

    let mut traj = Trajectory {
        times: Vec::new(),
        profiles: Vec::new(),
        boundary_mass: Vec::new(),
        breach_time: None,
    };
    record(&mut traj, &state);

    let mut propagator = Propagator::new(config.n_sites, config.dt, config.tunneling);
    let mut column = vec![0.0; config.n_sites];
    for k in 1..=config.n_steps {
        noise.next_column(&mut column);
        propagator.step(&mut state, &column)?;
        // pin the clock to the grid instead of accumulating rounding
        state.time = k as f64 * config.dt;
        if k % config.snapshot_every == 0 || k == config.n_steps {
            let bm = state.boundary_mass();
            if bm > config.boundary_mass_limit {
                traj.breach_time = Some(state.time);
                break;
            }
            record(&mut traj, &state);
        }
    }
    Ok(traj)
}

fn record(traj: &mut Trajectory, state: &LatticeState) {
    traj.times.push(state.time);
    traj.profiles.push(state.probabilities());
    traj.boundary_mass.push(state.boundary_mass());
}

/// Mean position and variance of a probability profile, with the origin at
/// the center site (offsets `j = i - (N-1)/2`).
pub fn profile_moments(profile: &[f64]) -> Result<(f64, f64)> {
    let sum: f64 = profile.iter().sum();
    let deficit = (sum - 1.0).abs();
    if deficit > 1e-8 {
        return Err(Error::BadProfile(format!(
            "sum deviates from 1 by {deficit:.3e} (limit 1e-8)"
        )));
    }
    if profile.iter().any(|&p| p < -1e-12) {
        return Err(Error::BadProfile("negative probability entry".into()));
    }
    let center = (profile.len() - 1) as f64 / 2.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (i, &p) in profile.iter().enumerate() {
        let j = i as f64 - center;
        mean += j * p;
        second += j * j * p;
    }
    Ok((mean, second - mean * mean))
}

//! Analytic diffusion coefficient and its asymptotic regimes.
//!
//! The probability distribution of a particle on the noisy lattice diffuses
//! at long times with coefficient
//!
//! ```text
//! D = 2 T^2 Q,   Q = int_0^inf C_phi(t)^2 dt = int_0^inf exp(-2 g(t)) dt,
//! ```
//!
//! where `T` is the tunneling amplitude and `C_phi` the single-site
//! dephasing correlation from [`crate::kernels`]. The quadrature here is the
//! reference value the ensemble Monte Carlo must reproduce with no fitting
//! parameters.
//!
//! Asymptotically, short correlation times give motional narrowing,
//! `D = T^2 / (beta W^2 tau)`, and long correlation times give the
//! shape-independent `D = sqrt(pi) T^2 / W`.

use crate::error::{Error, Result};
use crate::kernels::{CorrelationKernel, KernelShape};
use crate::quad;

/// Inputs of the diffusion prediction.
#[derive(Debug, Clone)]
pub struct TheoryParams {
    /// Nearest-neighbor tunneling amplitude, > 0.
    pub tunneling: f64,
    pub kernel: CorrelationKernel,
}

/// Where a kernel sits relative to the motional-narrowing crossover at
/// `W tau ~ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationRegime {
    ShortCorrelation,
    Crossover,
    LongCorrelation,
}

impl std::fmt::Display for CorrelationRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CorrelationRegime::ShortCorrelation => "short",
            CorrelationRegime::Crossover => "crossover",
            CorrelationRegime::LongCorrelation => "long",
        };
        f.write_str(s)
    }
}

impl TheoryParams {
    pub fn new(tunneling: f64, kernel: CorrelationKernel) -> Result<Self> {
        if !(tunneling > 0.0) || !tunneling.is_finite() {
            return Err(Error::Domain(format!(
                "tunneling amplitude must be finite and > 0, got {tunneling}"
            )));
        }
        Ok(TheoryParams { tunneling, kernel })
    }

    /// `T/W`, the small parameter of the perturbative treatment. Zero for
    /// white noise (the `W -> inf` limit).
    pub fn validity_ratio(&self) -> f64 {
        match self.kernel.magnitude() {
            Some(w) if w > 0.0 => self.tunneling / w,
            Some(_) => f64::INFINITY, // W = 0, ballistic
            None => 0.0,
        }
    }

    /// True when `T/W <= 0.2`; beyond that the prediction should be treated
    /// as qualitative only.
    pub fn perturbative_ok(&self) -> bool {
        self.validity_ratio() <= 0.2
    }
}

/// Threshold below which the truncated tail of `exp(-2g)` is negligible.
const TAIL_CUTOFF: f64 = 1e-14;

/// Diffusion coefficient in sites^2 per unit time, by adaptive quadrature of
/// `2 T^2 int_0^inf exp(-2 g(t)) dt`. White noise evaluates analytically to
/// `2 T^2 / gamma`.
pub fn predict_diffusion(params: &TheoryParams) -> Result<f64> {
    let k = &params.kernel;
    let t2 = params.tunneling * params.tunneling;
    if k.is_ballistic() {
        return Err(Error::BallisticRegime);
    }
    if let CorrelationKernel::WhiteNoise { strength } = k {
        return Ok(2.0 * t2 / strength);
    }
    Ok(2.0 * t2 * pair_correlation_integral(k))
}

/// `Q = int_0^inf exp(-2 g(t)) dt` for a finite-correlation-time kernel with
/// noise present.
fn pair_correlation_integral(k: &CorrelationKernel) -> f64 {
    let g = |t: f64| k.dephasing_exponent(t).expect("g is defined for t >= 0");
    // A-priori truncation point from the two asymptotic regimes
    // (exp(-2g) < 1e-14 needs g > 16.2), floored at the Gaussian-regime
    // bound and then doubled until actually past the cutoff.
    let w = k.magnitude().expect("finite-tau kernel");
    let mut t_end = (16.2 / k.half_integral()).max(5.7 / w);
    while (-2.0 * g(t_end)).exp() > TAIL_CUTOFF {
        t_end *= 2.0;
    }
    let integrand = |t: f64| (-2.0 * g(t)).exp();
    let mut knots = vec![0.0];
    if let Some(tau) = k.corr_time() {
        if tau < t_end {
            knots.push(tau);
        }
    }
    knots.push(t_end);
    quad::integrate_knots(&integrand, &knots)
}

/// Motional-narrowing limit `T^2 / (beta W^2 tau) = 2 T^2 / int C dt`
/// (`W tau << 1`); for white noise this is the exact `2 T^2 / gamma`.
pub fn diffusion_short_corr_limit(params: &TheoryParams) -> Result<f64> {
    if params.kernel.is_ballistic() {
        return Err(Error::BallisticRegime);
    }
    let t2 = params.tunneling * params.tunneling;
    Ok(t2 / params.kernel.half_integral())
}

/// Long-correlation-time limit `sqrt(pi) T^2 / W` (`W tau >> 1`),
/// independent of tau and kernel shape.
pub fn diffusion_long_corr_limit(magnitude: f64, tunneling: f64) -> Result<f64> {
    if magnitude == 0.0 {
        return Err(Error::BallisticRegime);
    }
    if !(magnitude > 0.0) {
        return Err(Error::Domain(format!(
            "magnitude must be >= 0, got {magnitude}"
        )));
    }
    Ok(std::f64::consts::PI.sqrt() * tunneling * tunneling / magnitude)
}

/// Dimensionless scaling function `f(x)` in `D = T^2 tau f(W tau)`,
/// evaluated by quadrature at `T = 1, tau = 1, W = x`. Defined for the
/// finite-correlation-time built-in shapes.
pub fn scaling_function(shape: KernelShape, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "scaling argument must be > 0, got {x}"
        )));
    }
    let kernel = match shape {
        KernelShape::Triangular => CorrelationKernel::triangular(x, 1.0)?,
        KernelShape::Exponential => CorrelationKernel::exponential(x, 1.0)?,
        KernelShape::WhiteNoise | KernelShape::Tabulated => {
            return Err(Error::Domain(format!(
                "scaling function needs a finite-tau built-in shape, got {shape}"
            )));
        }
    };
    let params = TheoryParams::new(1.0, kernel)?;
    predict_diffusion(&params)
}

/// Classify `x = W tau` against the crossover: `x < 0.1` short, `x > 10`
/// long, otherwise crossover. White noise is the short-correlation limit by
/// construction.
pub fn classify_regime(kernel: &CorrelationKernel) -> CorrelationRegime {
    let x = match (kernel.magnitude(), kernel.corr_time()) {
        (Some(w), Some(tau)) => w * tau,
        _ => 0.0, // white noise
    };
    if x < 0.1 {
        CorrelationRegime::ShortCorrelation
    } else if x > 10.0 {
        CorrelationRegime::LongCorrelation
    } else {
        CorrelationRegime::Crossover
    }
}

/// Dephasing time, reported as the root of `C_phi(tau_phi) = 1/e`
/// (equivalently `g(tau_phi) = 1`), located by bisection.
pub fn dephasing_time(kernel: &CorrelationKernel) -> Result<f64> {
    if kernel.is_ballistic() {
        return Err(Error::BallisticRegime);
    }
    let g = |t: f64| kernel.dephasing_exponent(t).expect("g defined for t >= 0");
    let mut hi = 1.0;
    while g(hi) < 1.0 {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::Domain(
                "dephasing time not reachable; kernel too weak".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

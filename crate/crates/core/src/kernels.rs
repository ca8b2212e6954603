//! Noise correlation kernels C(t) and the single-site dephasing correlation
//! they induce.
//!
//! A kernel describes the stationary autocorrelation of the on-site energy
//! fluctuations, `<xi(t') xi(t'+t)> = C(t)`, with `C(-t) = C(t)` and
//! `C(0) = W^2`. The phase a site accumulates from that noise decorrelates
//! as `C_phi(dt) = exp(-g(dt))` with `g(dt) = int_0^dt (dt - t) C(t) dt`,
//! which this module evaluates in closed form for the built-in shapes and by
//! adaptive quadrature for tabulated ones.

use crate::error::{Error, Result};
use crate::quad;

/// Functional form of a correlation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    Triangular,
    Exponential,
    WhiteNoise,
    Tabulated,
}

impl std::fmt::Display for KernelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelShape::Triangular => "triangular",
            KernelShape::Exponential => "exponential",
            KernelShape::WhiteNoise => "white",
            KernelShape::Tabulated => "tabulated",
        };
        f.write_str(s)
    }
}

/// Asymptotic regime selector for [`CorrelationKernel::dephasing_asymptote`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymptoticRegime {
    /// `dt >> tau`: exponential decay, `exp(-beta W^2 tau dt)`.
    LongTime,
    /// `dt << tau`: Gaussian decay, `exp(-W^2 dt^2 / 2)`, shape-independent.
    ShortTime,
}

/// Noise autocorrelation `C(t)`.
///
/// Magnitudes are energies in `hbar = 1` units; `C` itself carries energy
/// squared. Evaluation is symmetric in `t` (always at `|t|`). White noise is
/// the `tau -> 0` limit and is parameterized by the strength
/// `gamma = int C dt` because `W` and `tau` are individually meaningless
/// there.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationKernel {
    /// `C(t) = W^2 (1 - |t|/tau)` for `|t| <= tau`, zero beyond.
    Triangular { magnitude: f64, corr_time: f64 },
    /// `C(t) = W^2 exp(-|t|/tau)`.
    Exponential { magnitude: f64, corr_time: f64 },
    /// `C(t) = gamma delta(t)`.
    WhiteNoise { strength: f64 },
    /// Linear interpolation of `(time, value)` samples on `t >= 0`, zero
    /// beyond the last sample.
    Tabulated { table: Vec<(f64, f64)> },
}

use CorrelationKernel::*;

impl CorrelationKernel {
    pub fn triangular(magnitude: f64, corr_time: f64) -> Result<Self> {
        check_w_tau(magnitude, corr_time)?;
        Ok(Triangular {
            magnitude,
            corr_time,
        })
    }

    pub fn exponential(magnitude: f64, corr_time: f64) -> Result<Self> {
        check_w_tau(magnitude, corr_time)?;
        Ok(Exponential {
            magnitude,
            corr_time,
        })
    }

    pub fn white_noise(strength: f64) -> Result<Self> {
        if !strength.is_finite() || strength < 0.0 {
            return Err(Error::InvalidKernel(format!(
                "white-noise strength must be finite and >= 0, got {strength}"
            )));
        }
        Ok(WhiteNoise { strength })
    }

    /// Build a tabulated kernel. The first entry must be at `t = 0` with the
    /// value `W^2 > 0`; times must increase strictly and values must be
    /// non-negative and non-increasing (decaying correlations are assumed by
    /// the dephasing formulas, so other tables are rejected here rather than
    /// silently accepted).
    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::InvalidKernel(
                "tabulated kernel needs at least two samples".into(),
            ));
        }
        if table[0].0 != 0.0 {
            return Err(Error::InvalidKernel(format!(
                "tabulated kernel must start at t=0, got t={}",
                table[0].0
            )));
        }
        if !(table[0].1 > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "tabulated kernel must have C(0)=W^2 > 0, got {}",
                table[0].1
            )));
        }
        for pair in table.windows(2) {
            let (t0, v0) = pair[0];
            let (t1, v1) = pair[1];
            if !(t1.is_finite() && v1.is_finite()) {
                return Err(Error::InvalidKernel("non-finite table entry".into()));
            }
            if t1 <= t0 {
                return Err(Error::InvalidKernel(format!(
                    "table times must increase strictly ({t0} then {t1})"
                )));
            }
            if v1 < 0.0 {
                return Err(Error::InvalidKernel(format!(
                    "table values must be non-negative, got {v1} at t={t1}"
                )));
            }
            if v1 > v0 {
                return Err(Error::InvalidKernel(format!(
                    "table values must be non-increasing ({v0} then {v1} at t={t1})"
                )));
            }
        }
        Ok(Tabulated { table })
    }

    pub fn shape(&self) -> KernelShape {
        match self {
            Triangular { .. } => KernelShape::Triangular,
            Exponential { .. } => KernelShape::Exponential,
            WhiteNoise { .. } => KernelShape::WhiteNoise,
            Tabulated { .. } => KernelShape::Tabulated,
        }
    }

    /// Noise magnitude `W = sqrt(C(0))`; `None` for white noise.
    pub fn magnitude(&self) -> Option<f64> {
        match self {
            Triangular { magnitude, .. } | Exponential { magnitude, .. } => Some(*magnitude),
            WhiteNoise { .. } => None,
            Tabulated { table } => Some(table[0].1.sqrt()),
        }
    }

    /// Correlation time: the natural parameter for the built-in shapes, the
    /// first time `C` drops below `C(0)/e` for tabulated kernels (used only
    /// for regime classification and resolution checks), `None` for white
    /// noise.
    pub fn corr_time(&self) -> Option<f64> {
        match self {
            Triangular { corr_time, .. } | Exponential { corr_time, .. } => Some(*corr_time),
            WhiteNoise { .. } => None,
            Tabulated { table } => {
                let target = table[0].1 / std::f64::consts::E;
                for pair in table.windows(2) {
                    let (t0, v0) = pair[0];
                    let (t1, v1) = pair[1];
                    if v1 <= target {
                        // linear interpolation within the segment
                        let frac = if v0 == v1 {
                            0.0
                        } else {
                            (v0 - target) / (v0 - v1)
                        };
                        return Some(t0 + frac * (t1 - t0));
                    }
                }
                // never drops below C(0)/e inside the table; C vanishes
                // immediately past the last sample
                Some(table.last().unwrap().0)
            }
        }
    }

    /// True when the kernel carries no noise at all (`W = 0` or `gamma = 0`,
    /// the ballistic regime).
    pub fn is_ballistic(&self) -> bool {
        match self {
            Triangular { magnitude, .. } | Exponential { magnitude, .. } => *magnitude == 0.0,
            WhiteNoise { strength } => *strength == 0.0,
            Tabulated { .. } => false, // C(0) > 0 enforced at construction
        }
    }

    /// Pointwise value `C(|t|)`.
    ///
    /// White noise is distributional and has no pointwise value. Tabulated
    /// queries beyond the table return 0.
    pub fn value(&self, t: f64) -> Result<f64> {
        let t = t.abs();
        match self {
            Triangular {
                magnitude,
                corr_time,
            } => {
                if t >= *corr_time {
                    Ok(0.0)
                } else {
                    Ok(magnitude * magnitude * (1.0 - t / corr_time))
                }
            }
            Exponential {
                magnitude,
                corr_time,
            } => Ok(magnitude * magnitude * (-t / corr_time).exp()),
            WhiteNoise { .. } => Err(Error::WhiteNoisePointwise),
            Tabulated { table } => {
                if t > table.last().unwrap().0 {
                    return Ok(0.0);
                }
                // first index with time >= t; t is within the table here
                let idx = table.partition_point(|&(ti, _)| ti < t);
                if idx == 0 {
                    return Ok(table[0].1);
                }
                let (t0, v0) = table[idx - 1];
                let (t1, v1) = table[idx];
                Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
            }
        }
    }

    /// One-sided integral `int_0^inf C(t) dt = beta W^2 tau`, the decay rate
    /// of the long-time dephasing asymptote. `gamma/2` for white noise.
    pub fn half_integral(&self) -> f64 {
        match self {
            Triangular {
                magnitude,
                corr_time,
            } => 0.5 * magnitude * magnitude * corr_time,
            Exponential {
                magnitude,
                corr_time,
            } => magnitude * magnitude * corr_time,
            WhiteNoise { strength } => 0.5 * strength,
            Tabulated { table } => trapezoid(table),
        }
    }

    /// Dimensionless kernel-shape factor `beta = int_0^inf C dt / (W^2 tau)`:
    /// 1 for exponential decay, 1/2 for linear decay. For tabulated kernels
    /// the table's own grid is integrated by the trapezoid rule and `tau` is
    /// taken as the table's extent (the last sample time).
    pub fn beta(&self) -> Result<f64> {
        match self {
            Triangular { .. } => Ok(0.5),
            Exponential { .. } => Ok(1.0),
            WhiteNoise { .. } => Err(Error::UndefinedBeta),
            Tabulated { table } => {
                let w2 = table[0].1;
                let extent = table.last().unwrap().0;
                Ok(trapezoid(table) / (w2 * extent))
            }
        }
    }

    /// Dephasing exponent `g(dt) = int_0^dt (dt - t) C(t) dt`.
    pub fn dephasing_exponent(&self, dt: f64) -> Result<f64> {
        if dt < 0.0 || !dt.is_finite() {
            return Err(Error::NegativeLag(dt));
        }
        match self {
            Triangular {
                magnitude,
                corr_time,
            } => {
                let w2 = magnitude * magnitude;
                let tau = *corr_time;
                if dt <= tau {
                    Ok(w2 * (dt * dt / 2.0 - dt * dt * dt / (6.0 * tau)))
                } else {
                    Ok(w2 * (tau * dt / 2.0 - tau * tau / 6.0))
                }
            }
            Exponential {
                magnitude,
                corr_time,
            } => {
                let w2 = magnitude * magnitude;
                let tau = *corr_time;
                let u = dt / tau;
                // W^2 tau^2 (u - 1 + e^{-u}); use the series for small u where
                // the direct form loses all significant digits
                if u < 1e-4 {
                    let series = u * u / 2.0 - u * u * u / 6.0 + u * u * u * u / 24.0;
                    Ok(w2 * tau * tau * series)
                } else {
                    Ok(w2 * tau * tau * (u - 1.0 + (-u).exp()))
                }
            }
            WhiteNoise { strength } => Ok(0.5 * strength * dt),
            Tabulated { table } => {
                if dt == 0.0 {
                    return Ok(0.0);
                }
                let t_last = table.last().unwrap().0;
                let hi = dt.min(t_last);
                let mut knots: Vec<f64> =
                    table.iter().map(|&(t, _)| t).filter(|&t| t < hi).collect();
                knots.push(hi);
                let f = |t: f64| (dt - t) * self.value(t).expect("tabulated value");
                Ok(quad::integrate_knots(&f, &knots))
            }
        }
    }

    /// Exact dephasing correlation `C_phi(dt) = exp(-g(dt))`, in `(0, 1]`.
    pub fn dephasing_correlation(&self, dt: f64) -> Result<f64> {
        Ok((-self.dephasing_exponent(dt)?).exp())
    }

    /// Asymptotic dephasing correlation in the requested regime.
    pub fn dephasing_asymptote(&self, dt: f64, regime: AsymptoticRegime) -> Result<f64> {
        if dt < 0.0 || !dt.is_finite() {
            return Err(Error::NegativeLag(dt));
        }
        match regime {
            AsymptoticRegime::LongTime => Ok((-self.half_integral() * dt).exp()),
            AsymptoticRegime::ShortTime => {
                let w = self.magnitude().ok_or(Error::Domain(
                    "white noise has no short-time dephasing regime (tau -> 0)".into(),
                ))?;
                Ok((-0.5 * w * w * dt * dt).exp())
            }
        }
    }
}

fn check_w_tau(magnitude: f64, corr_time: f64) -> Result<()> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(Error::InvalidKernel(format!(
            "magnitude W must be finite and >= 0, got {magnitude}"
        )));
    }
    if !corr_time.is_finite() || corr_time <= 0.0 {
        return Err(Error::InvalidKernel(format!(
            "correlation time tau must be finite and > 0, got {corr_time}"
        )));
    }
    Ok(())
}

fn trapezoid(table: &[(f64, f64)]) -> f64 {
    table
        .windows(2)
        .map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1))
        .sum()
}

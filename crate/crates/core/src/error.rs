use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split into three families that front ends map to distinct exit
/// codes: configuration/input problems, physics-domain problems (a quantity
/// is undefined for the requested parameters), and numerical-validity
/// problems (the computation ran but its result cannot be trusted).
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("white noise has no pointwise correlation value")]
    WhiteNoisePointwise,

    #[error("beta is undefined for a white-noise kernel")]
    UndefinedBeta,

    #[error("time separation must be non-negative, got {0}")]
    NegativeLag(f64),

    #[error("ballistic regime: noise magnitude is zero, diffusion coefficient undefined")]
    BallisticRegime,

    #[error("{0}")]
    Domain(String),

    #[error("dt={dt} does not resolve correlation time tau={tau} (need dt <= tau/4)")]
    NoiseResolution { dt: f64, tau: f64 },

    #[error(
        "moving-average window M=round(tau/dt)={m} misses tau by {err_pct:.2}% (limit 5%); \
         choose dt commensurate with tau"
    )]
    WindowMismatch { m: usize, err_pct: f64 },

    #[error("tabulated kernels cannot be sampled; use a built-in shape")]
    UnsampleableKernel,

    #[error("non-finite amplitudes after step at t={0}")]
    NumericalBlowup(f64),

    #[error("profile is not a probability distribution: {0}")]
    BadProfile(String),

    #[error("max_lag={max_lag} too large for {n_steps} steps (need max_lag < n_steps/10)")]
    LagTooLarge { max_lag: usize, n_steps: usize },

    #[error("fit window is empty; extend t_max to at least {needed}")]
    WindowTooShort { needed: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

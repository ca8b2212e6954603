//! Spreading of a quantum wavepacket on a 1D tight-binding lattice whose
//! on-site energies fluctuate with a finite correlation time.
//!
//! The crate has two faces that must agree with no fitting parameters:
//!
//! * an analytic side ([`kernels`], [`theory`]) that evaluates the dephasing
//!   correlation of a single noisy site and the diffusion coefficient it
//!   implies, and
//! * a simulation side ([`noise`], [`dynamics`], [`ensemble`]) that
//!   synthesizes colored Gaussian noise, integrates the stochastic
//!   Schrödinger equation with a norm-preserving split-step scheme, and
//!   extracts the diffusion coefficient from ensemble-averaged spreading.

pub mod dynamics;
pub mod ensemble;
mod error;
pub mod kernels;
pub mod noise;
mod quad;
pub mod theory;

pub use error::{Error, Result};
pub use kernels::{AsymptoticRegime, CorrelationKernel, KernelShape};
pub use theory::{CorrelationRegime, TheoryParams};

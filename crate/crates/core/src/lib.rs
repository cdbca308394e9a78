//! Simulation and verification toolkit for fractional Brownian motion.
//!
//! The crate covers exact and FFT-based path generation, increment covariance
//! analysis, Riemann-sum discretisation of pathwise integrals with
//! bounded-variation integrands, local-time estimation and a Monte Carlo
//! harness that measures convergence rates of the normalised discretisation
//! error.
//!
//! Replicate loops run on rayon when the `parallel` feature is enabled (the
//! default). Every experiment is reproducible from its master seed, and the
//! aggregated output does not depend on the number of worker threads.

// `!(x > 0.0)` deliberately rejects NaN; quadrature nodes keep full printed precision.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bound_lab;
pub mod error;
pub mod fgn;
pub mod gauss_cov;
pub mod harness;
pub mod integrals;
pub mod linalg;
pub mod local_time;
pub mod par;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use fgn::{fbm_covariance, sample_exact, sample_fft, FbmPath, GridSpec, HurstIndex};
pub use integrals::SignedMeasure;

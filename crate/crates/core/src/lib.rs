//! Random-feature score models trained by denoising score matching on
//! Gaussian mixtures.
//!
//! The crate follows one analytical pipeline end to end:
//!
//! * [`quadrature`]: Gaussian expectations used by every Hermite coefficient.
//! * [`gmm`]: mixture specification, centroid geometry, sampling, forward
//!   noising and the exact mixture score.
//! * [`gep`]: per-class Gaussian-equivalent coefficients at a diffusion time.
//! * [`covariance`]: empirical, Gaussian-equivalent, population and
//!   large-time feature correlation matrices `U` and `V`.
//! * [`dynamics`]: closed-form gradient flow, explicit gradient descent,
//!   Monte Carlo losses, semi-analytical error curves and timescale extraction.
//! * [`spectral`]: resolvent solver for the centered mixture, bulk and edge
//!   extraction, generalization/memorization windows.
//! * [`speciation`]: centroid/eigenvector overlap experiment across diffusion
//!   times and system sizes.
//! * [`memgap`]: descriptor-driven mixtures and memorization-gap tables.

extern crate blas_src;

pub mod activation;
pub mod covariance;
pub mod dynamics;
pub mod error;
pub mod gep;
pub mod gmm;
pub mod histogram;
pub mod linalg;
pub mod memgap;
pub mod quadrature;
pub mod seed;
pub mod speciation;
pub mod spectral;

pub use activation::Activation;
pub use error::{Error, Result};
pub use gmm::{Dataset, DiffusionClock, MixtureSpec};
pub use quadrature::QuadratureRule;

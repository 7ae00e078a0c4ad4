//! Gaussian MAP/CM estimation for linear inverse problems with
//! hypoelliptic forward operators on flat tori.
//!
//! Fields live on a truncated Fourier lattice ([`lattice`]), operators are
//! Fourier multipliers or dense matrices in that basis ([`ops`]), and
//! [`posterior`] solves the Gaussian conditioning problem. [`rates`] holds
//! the closed-form convergence exponents and [`experiments`] the numerical
//! studies that measure them.

pub mod error;
pub mod experiments;
pub mod fields;
pub mod lattice;
pub mod ops;
pub mod posterior;
pub mod rates;
pub mod rng;

pub use error::{Error, Result};
pub use fields::{sample_prior, sample_white_noise, sobolev_norm, GaussianPrior, NoiseSpec};
pub use lattice::{build_lattice, forward_transform, inverse_transform, FrequencyLattice, SpectralField};
pub use ops::{bessel_op, heat_op, variable_coeff_op, DenseOp, MultiplierOp, OperatorHandle, SmoothingOrders};
pub use posterior::{map_estimate, posterior_covariance, sample_posterior, GaussianModel, PosteriorGaussian};
pub use rates::{bayes_rate, contraction_rate, credible_rate, frequentist_rate, Regime, SmoothnessParams};

//! Variational inference for Gaussian process state-space models (GPSSMs).
//!
//! A GPSSM places independent GP priors on each coordinate of a latent
//! transition function `f: R^(D+Dc) -> R^D`, propagates a latent state
//! `x_{t+1} ~ N(f(x_t, c_t), Q)` and emits observations through a linear
//! Gaussian likelihood `y_t ~ N(C x_t + d, R)`. This crate implements the
//! sparse variational treatment of that model: a family of structured
//! approximate posteriors over trajectories (factorised linear/non-linear,
//! chunked non-factorised, inducing-draw conditioned, and the PR-SSM special
//! case), an unbiased Monte Carlo evidence lower bound, reparameterised
//! gradients via an internal tape, and the experiment pipeline used to
//! study them (synthetic kink dynamics, delimited-text system-identification
//! data, bias and timing studies).
//!
//! Layout:
//! - [`linalg`]: dense Cholesky-centred primitives generic over the scalar.
//! - [`autodiff`]: reverse-mode tape and the [`autodiff::Scalar`] trait that
//!   lets the same model code run on plain floats or tracked variables.
//! - [`gp`]: kernels, mean functions, sequential GP conditioning, sparse
//!   inducing-point posteriors.
//! - [`model`]: the generative state-space model and exact prior sampling.
//! - [`posterior`]: the approximate-posterior family and its samplers.
//! - [`inference`]: ELBO estimation, gradients, training loop.
//! - [`evaluation`]: Kalman reference, predictive metrics, calibration,
//!   sampling-bias study.
//! - [`data`]: datasets, experiment configuration and pipeline.
//! - [`checkpoint`]: versioned parameter serialisation.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod rng;

pub use error::{Error, Result};

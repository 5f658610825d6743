//! Additive-noise mixture models.
//!
//! Observations `(x, y)` are assumed to come from `y = f(x; theta) + eps`
//! where `theta` switches between a few mechanism parameters. The crate
//! estimates a latent `theta` per observation with an HSIC-penalized
//! Gaussian process model, uses it to decide the causal direction between
//! two variables, and clusters observations by mechanism.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod gppom;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod synth;

pub use error::{Error, Result};

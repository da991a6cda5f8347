//! Spatial SIR transmission-kernel inference.
//!
//! Fits a nonparametric distance-dependent infection rate (the exponential
//! of a Gaussian-process log-rate) to outbreak culling records by
//! data-augmentation MCMC, and evaluates ring-culling control policies
//! through the posterior predictive distribution.

pub mod data;
pub mod error;
pub mod gp;
pub mod likelihood;
pub mod mcmc;
pub mod posterior;
pub mod rates;
pub mod trace;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};

//! Poisson spatial scan statistic with a correlation-adjusted null.
//!
//! The classical scan compares the most likely cluster against a Monte
//! Carlo reference built from independent Poisson counts. When counts carry
//! overdispersion and spatial correlation that reference is too narrow and
//! the scan over-reports clusters. This crate fits a Poisson model with a
//! latent Matérn Gaussian field by MCMC and rebuilds the reference
//! distribution from that model instead.
//!
//! Modules:
//!
//! - [`region`]: study-region input, distances, circular windows
//! - [`scan`]: likelihood-ratio scan and Monte Carlo p-values
//! - [`matern`]: Matérn covariance, Cholesky factors, field simulation
//! - [`glmm`]: MCMC fit of the spatial Poisson mixed model
//! - [`adjusted`]: the adjusted scan procedure and train/test workflow
//! - [`theory`]: numerical checks of Poisson-mixture tail behaviour
//! - [`fdr`]: empirical-null local false discovery rates
//! - [`harness`]: simulation studies and surveillance runs
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod adjusted;
pub mod bessel;
pub mod config;
pub mod error;
pub mod fdr;
pub mod glmm;
pub mod harness;
pub mod matern;
pub mod output;
pub mod quadrature;
pub mod region;
pub mod scan;
pub mod seed;
pub mod spline;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};

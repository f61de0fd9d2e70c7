//! Blockwise Hessian spectra and heterogeneity experiments.
//!
//! * [`operator`]: symmetric linear operators, block partitions and restriction.
//! * [`lanczos`]: m-step Lanczos with full reorthogonalization.
//! * [`slq`]: stochastic Lanczos quadrature and the blurred spectral density.
//! * [`spectra`]: densities, Jensen-Shannon distance and heterogeneity reports.
//! * [`quadlab`]: block-diagonal quadratic problems, GD and Adam runners, bounds.
//! * [`nnlab`]: small networks, Hessian-vector products and training loops.

pub mod cli;
pub mod error;
pub mod io;
pub mod lanczos;
pub mod linalg;
pub mod nnlab;
pub mod operator;
pub mod quadlab;
pub mod seed;
pub mod slq;
pub mod spectra;

pub use error::{Error, Result};

//! Small networks with exact Hessian access, their training loops, and the
//! layer-scaling experiment.

mod binary;
mod data;
mod experiment;
mod hessian;
mod linear;
mod mlp;
mod model;
mod train;

pub use binary::*;
pub use data::*;
pub use experiment::*;
pub use hessian::*;
pub use linear::*;
pub use mlp::*;
pub use model::*;
pub use train::*;

#[cfg(test)]
mod tests;

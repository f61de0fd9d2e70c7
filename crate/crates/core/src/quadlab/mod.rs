//! Block-diagonal quadratic problems, GD and Adam runners and the
//! associated rate constants.

mod problem;
mod runners;
mod theory;

pub use problem::*;
pub use runners::*;
pub use theory::*;

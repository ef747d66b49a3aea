//! Equilibriated recurrent networks: cells whose state is an approximate
//! ODE equilibrium reached by unrolled Euler iterations, plus baselines,
//! training, synthetic tasks and a numerical verification suite.

pub mod autodiff;
pub mod cells;
pub mod equilibrium;
pub mod error;
pub mod numerics;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};

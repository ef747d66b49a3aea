//! Reverse-mode differentiation over an explicitly recorded graph.
//!
//! Cells append nodes to a [`Tape`]; the same tape serves training gradients,
//! per-step state Jacobians and finite-difference checks.

mod gradcheck;
mod tape;

pub use gradcheck::{gradcheck, GradcheckReport, ParamCheck, MAX_STEP, MIN_STEP};
pub(crate) use tape::cross_entropy_value;
pub use tape::{Activation, GradientSet, NodeId, OpKind, ParamId, ParamRef, Tape};

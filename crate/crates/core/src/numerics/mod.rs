//! Dense linear algebra, eigenvalues, norms and the seeded random stream.

mod eig;
mod linalg;
mod rng;

pub use eig::{eig, Eigenvalue, Spectrum, MAX_EIG_DIM};
pub(crate) use linalg::dot;
pub use linalg::{lu_solve, matmul, spectral_norm, Lu, Matrix, Vector, SINGULAR_PIVOT};
pub use rng::{gaussian, Rng};

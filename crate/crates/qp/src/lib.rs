//! Sparse convex QP solver used by the microgrid agents.
//!
//! Problems are stated in one canonical form,
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx + c
//! subject to  Ax = b
//!             lower ≤ x ≤ upper
//! ```
//!
//! and solved by ADMM operator splitting with Ruiz scaling, over-relaxation,
//! adaptive penalty and active-set polishing. A [`QpWorkspace`] keeps the
//! factorization alive so the linear cost can be swapped between solves, which
//! is what proximal updates inside an outer ADMM loop need.

mod ldl;
mod ordering;
mod problem;
mod solver;
pub mod sparse;
mod transform;

pub use ldl::{LdlError, LdlFactor};
pub use problem::{CanonicalQp, QpBuilder};
pub use solver::{kkt_residuals, kkt_scales, solve_qp, QpSettings, QpSolution, QpStatus, QpWorkspace, WarmStart};
pub use sparse::{CscMatrix, Triplets};
pub use transform::{l1_to_qp, range_to_qp, DiffOperator, DiffRow, L1Extension, RangeExtension};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains NaN or infinite coefficients")]
    NonFinite,
    #[error("P is not symmetric")]
    NotSymmetric,
    #[error("P is not positive semidefinite")]
    NotConvex,
    #[error("factorization failed: {0}")]
    Factorization(#[from] LdlError),
}

//! Small dense semidefinite programming.
//!
//! Problems are stated in the linear-matrix-inequality form
//!
//! ```text
//! minimize / maximize   c'y
//! subject to            A y = b
//!                       F0_j + sum_k y_k F_kj  >= 0   (PSD, every block j)
//! ```
//!
//! and solved by a homogeneous self-dual interior-point method with
//! Nesterov-Todd scaling and Mehrotra predictor-corrector steps.

mod ipm;
mod program;
pub mod examples;
pub mod sdpa;
mod svec;

pub use ipm::solve;
pub use program::{
    residuals, ConicProgram, EqualityRow, LmiBlock, ProgramError, Residuals, Sense, Solution,
    SolverSettings, Status,
};
pub use svec::{smat, svec};

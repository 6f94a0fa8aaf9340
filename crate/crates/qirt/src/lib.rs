//! Numerical toolkit for resource theories of quantum instruments.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense complex matrices, tensor products, partial trace/transpose,
//!   Hermitian eigendecomposition.
//! - [`qobjects`]: POVMs, CP maps (Choi form), instruments, and the constructions
//!   on them (flag channels, Heisenberg pictures, post-processing, ...).
//! - [`sdp`]: a self-contained small dense semidefinite-program solver with
//!   feasibility certification, plus a builder for programs over complex
//!   Hermitian variables.
//! - [`distances`]: diamond-norm distances for channels, measurements,
//!   instruments, and aligned sets, with a sampled lower-bound oracle.
//! - [`classify`]: membership tests for the free classes (trash-and-prepare,
//!   entanglement-breaking, incompatibility-breaking, compatibility, ...) with
//!   three-valued verdicts and certificates.
//! - [`measures`]: robustness, weight, and diamond-distance resource measures,
//!   with hierarchy reports.
//! - [`transforms`]: free-transformation constructors per resource theory and
//!   monotonicity harnesses.
//! - [`cli`]: the `qirt` command-line front end (JSON I/O, repro cases).

pub mod linalg;
pub mod qobjects;
pub mod sdp;
pub mod distances;
pub mod classify;
pub mod measures;
pub mod transforms;
pub mod cli;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum QirtError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not Hermitian within tolerance (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("object fails validity invariant: {0}")]
    InvalidObject(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("unsupported free-set tag for this operation: {0}")]
    UnsupportedTag(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QirtError>;

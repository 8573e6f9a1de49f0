//! Rank-one approximation of dense and structured tensors by alternating
//! least squares, with per-micro-step instrumentation, rate estimation and
//! independent stationarity and optimality checks.

pub mod als;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod format;
pub mod generators;
pub mod linalg;
pub mod oracles;
pub mod report;
pub mod tensor;

pub use als::{solve, solve_with_reference, SolverConfig, SweepState, TerminationReason};
pub use error::{Error, Result};
pub use tensor::{CpTensor, DenseTensor, RankOneRep, TuckerTensor};

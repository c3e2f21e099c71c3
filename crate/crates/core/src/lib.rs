//! Scaling-law estimation and compute planning for multi-exit ("familial")
//! language models.
//!
//! The crate fits two laws from training records:
//!
//! * the familial law `L(N, D, G) = (E + A·N^−α + B·D^−β)·G^γ` relating
//!   family-average loss to parameters, tokens and the number of exits, and
//! * the branch law `L(P, Q, D) = L_dense + (α_b·P + β_b·Q)·(D_d/D)^a`
//!   describing how extra branch points degrade one exit,
//!
//! both by minimizing Huber penalties on log-residuals with L-BFGS started
//! from a parameter grid. Fitted laws drive IsoFLOP planning, compute-optimal
//! frontiers, isoloss contours and Efficiency Leverage curves.

pub mod analysis;
pub mod branch;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod familial;
pub mod flops;
pub mod multistart;
pub mod numerics;

pub use error::{Error, Result};

/// Toolkit version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Pessimistic batch policy optimization that stays valid when the target
//! policy's visitation measure is singular to the data distribution.
//!
//! The Bellman residual of a candidate Q-function is regressed on the kernel
//! of state-action pairs. Two uncertainty sets are built from it: an RKHS-ball
//! weighted residual (the part the data covers) and the RKHS norm of the
//! regressed residual (the part that must be extrapolated). A primal-dual
//! method then maximizes the worst-case policy value over both sets.

pub mod error;
pub mod funcapprox;
pub mod kernel;
pub mod data;
pub mod residual;
pub mod par;
pub mod rng;
pub mod steel;
pub mod adaptive;
pub mod bandit;
pub mod sim;

mod linalg;

pub use error::{Error, Result};

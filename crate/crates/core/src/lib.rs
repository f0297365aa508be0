//! Parameter estimation for linear ODEs `ẋ = A_θ(t)x + r_θ(t)` by optimal
//! tracking: the model is fitted to a smoothed trajectory by profiling out the
//! smallest additive perturbation that makes it follow the data, which reduces
//! to a linear-quadratic control problem solved with a Riccati equation.
//!
//! Nonlinear least squares and generalized smoothing baselines, a Monte Carlo
//! harness and misspecification diagnostics are included.

pub mod bench;
pub mod data;
pub mod error;
pub mod estimate;
pub mod grad;
pub mod linalg;
pub mod lq;
pub mod model;
pub mod odesolve;
pub mod parallel;
pub mod smoothing;

pub use error::{Error, Result};

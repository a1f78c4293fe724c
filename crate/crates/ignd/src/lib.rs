//! Incremental Gauss-Newton Descent (IGND) and companion optimizers, with the
//! three testbeds used to validate them: incremental least-squares regression,
//! value-based reinforcement learning (tabular and with a small Q-network),
//! and LQR policy iteration with quadratic Q-functions.
//!
//! Everything is deterministic given a seed: the random source is a splittable
//! counter-based generator, and all arithmetic is plain `f64`.

pub mod lqr;
pub mod model;
pub mod numkit;
pub mod optim;
pub mod rl_deep;
pub mod rl_tabular;
pub mod supervised;

pub use numkit::{DenseMatrix, DenseVector, SeededRng};

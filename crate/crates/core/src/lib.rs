//! Persistently exciting data-driven predictive control.
//!
//! A Hankel data window stands in for a plant model. Each step the
//! controller finds the inputs that would make the window lose persistency
//! of excitation (a hyperplane `a'u + c = 0` in input space), solves the
//! tracking QP once on each side of it, and applies the cheaper first input.
//!
//! * [`linalg`]: SVD rank, left null vectors, condition numbers.
//! * [`hankel`]: Hankel matrices, PE tests, the nonexciting hyperplane.
//! * [`qp`]: dense convex QP solver (dual active set).
//! * [`controller`]: the data-driven OCP and the per-step logic.
//! * [`plant`], [`bench`]: the four-tank plant, closed-loop runs and sweeps.
//! * [`config`], [`cli`]: TOML experiments and the `pe-mpc` command.

pub mod bench;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod hankel;
pub mod linalg;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};

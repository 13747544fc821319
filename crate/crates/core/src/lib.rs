//! First-order splitting-up scheme for backward doubly stochastic
//! differential equations (BDSDEs) in one space dimension.
//!
//! The equation
//!
//! ```text
//! Y_t = xi + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s dW_s + int_t^T g(s, X_s, Y_s) d<-B_s
//! ```
//!
//! with `X_t = X_0 + W_t` is split on every interval `[t_i, t_{i+1})` into a
//! BSDE predictor (explicit Euler, conditional expectations by Gauss–Hermite
//! quadrature) and an SDE corrector carrying the backward Itô integral
//! (Milstein). The crate is organised bottom-up:
//!
//! * [`quadrature`]: Gauss–Hermite rules and the two conditional-expectation kernels.
//! * [`spatial`]: uniform space grids, cubic interpolation, per-level values.
//! * [`model`]: the [`Problem`](model::Problem) coefficient bundle and built-in examples.
//! * [`brownian`]: seeded sampling of the backward noise `B`.
//! * [`solver`]: the backward recursion for one `B` path.
//! * [`experiment`]: Monte Carlo RMSE, convergence studies, brute-force oracle.
//! * [`cli`]: command-line front end used by the `bdsde` binary.

pub mod brownian;
pub mod cli;
mod error;
pub mod experiment;
pub mod model;
pub mod quadrature;
pub mod solver;
pub mod spatial;

pub use error::{Error, Result};

//! Nonlinear progressive wave equation `u_tt = Δ(c1 u + c2 u^n)`: forward solves,
//! Dirichlet-to-Neumann traces, high-order linearization, Gaussian beams and
//! reconstruction of the nonlinear coefficient.

pub mod asymptotics;
pub mod beam;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod inversion;
pub mod linearize;
pub mod medium;
pub mod stats;

pub use error::{NpeError, Result};
pub use num_complex::Complex64;

//! Wasserstein projection (WP) statistics for moment-equation nulls.
//!
//! Given i.i.d. observations `X_1..X_n` and a moment function `h: R^m -> R^d`,
//! the WP distance is the minimal squared-Mahalanobis optimal-transport cost
//! from the empirical measure to the set of laws `P` with `E_P[h(X)] = 0`:
//!
//! ```text
//! R_n(h) = inf { W_c(Q_n, P) : E_P[h(X)] = 0 },   c(x̄, x) = (x̄-x)ᵀ Σ⁻¹ (x̄-x).
//! ```
//!
//! This crate computes `n R_n(h)` through the strong-dual formulation
//!
//! ```text
//! n R_n(h) = sup_ζ { -ζᵀ H_n - M_n(ζ) },    H_n = n^{-1/2} Σ_i h(X_i),
//! ```
//!
//! where each evaluation of the convex penalty `M_n` solves one transport
//! subproblem per sample. On top of the solver it provides
//!
//! * second- and third-order polynomial approximations of `n R_n(h)` built
//!   from the empirical tensors `V_n, ξ_n, K_n, L_n` ([`expansion`]),
//! * the plug-in quantile of the limiting law and the WP / empirical
//!   likelihood / Hotelling T² decision rules ([`quantile`], [`hypothesis`]),
//! * Bartlett-type corrections for one-dimensional moment functions
//!   ([`bartlett`]) and second-order power analytics under location shifts
//!   ([`power`]),
//! * a reproducible Monte Carlo harness for coverage, power and
//!   expansion-error studies ([`sim`]).
//!
//! The `wproj` binary exposes the same functionality as a CLI; see the
//! repository README.

pub mod bartlett;
pub mod error;
pub mod expansion;
pub mod hypothesis;
pub mod model;
pub mod power;
pub mod quantile;
pub mod report;
pub mod sim;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};

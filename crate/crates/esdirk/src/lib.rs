//! Stiffly accurate ESDIRK Runge-Kutta methods for stiff ODEs and index-1 DAEs.
//!
//! The crate bundles:
//!
//! * Butcher tableaus for the ESDIRK12/23/34 family, the Kværnø ESDIRK32a/32b/43b
//!   methods, and the verification-only ESDIRK32c/45c tableaus ([`tableau`]).
//! * Rooted-tree order-condition machinery up to order 4 ([`order_conditions`]).
//! * Stability functions `R(z) = P(z)/Q(z)`, `R(∞)`, and the Laguerre L-stability
//!   condition ([`stability`]).
//! * Continuous extensions (dense output) derived from order and side conditions,
//!   plus the published coefficient matrices ([`dense_output`]).
//! * An adaptive integrator with modified-Newton stage solves, FSAL reuse, an
//!   embedded error estimator, and a PI step-size controller ([`integrator`]).
//! * Zero-crossing event location on dense segments with restart ([`events`]).
//! * A small corpus of stiff test problems with reference solutions ([`problems`]).
//!
//! The `esdirk` binary exposes `verify`, `solve`, `convergence`, and `events`
//! subcommands on top of these modules.
//!
//! With the `parallel` feature (default) the batch verification and the
//! A-stability boundary scan use rayon; disabling the feature falls back to
//! sequential loops with identical results.

pub mod dense_output;
pub mod events;
pub mod integrator;
pub mod linalg;
pub mod order_conditions;
pub mod problems;
pub mod report;
pub mod stability;
pub mod stage_solver;
pub mod tableau;

pub use integrator::{Controls, IvpProblem, Solution, SolveStats};
pub use tableau::{ButcherTableau, Method};

//! Splitting and composition integrators for separable ODEs, with embedded
//! local-error estimators built as linear combinations of the intermediate
//! stage outputs that the integrator produces anyway (no extra flow
//! evaluations).
//!
//! The crate has two halves:
//!
//! * a derivation engine ([`opalg`], [`estgen`]) that manipulates truncated
//!   noncommutative series of graded generators, assembles the linear order
//!   conditions an estimator's weights must satisfy, and solves them;
//! * an execution engine ([`stepper`], [`problems`], [`bench`]) that runs the
//!   schemes from the [`schemes`] catalog against exact split flows, applies
//!   the estimators, and drives fixed-step and adaptive integrations.

// Catalog coefficients and pinned weights are kept at full printed precision
// even where f64 rounds the last digits.
#![allow(clippy::excessive_precision)]

pub mod bench;
pub mod estgen;
pub mod opalg;
pub mod problems;
pub mod schemes;
pub mod stepper;

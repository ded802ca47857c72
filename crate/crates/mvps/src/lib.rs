//! Measure-valued Polya sequences (MVPS) on finite state spaces.
//!
//! An MVPS generalizes the classical Polya sequence: after observing
//! `X_1, ..., X_n`, the next draw follows the predictive
//!
//! ```text
//! P(X_{n+1} in A | X_1, ..., X_n) = (theta * nu(A) + sum_i R_{X_i}(A)) / (theta + sum_i R_{X_i}(X))
//! ```
//!
//! where `nu` is a probability measure on the state space `X`, `theta > 0`,
//! and `R` is a non-negative reinforcement kernel assigning each state `x` a
//! finite measure `R_x`. Taking `R_x = delta_x` recovers the Polya sequence
//! whose directing random measure is a Dirichlet process.
//!
//! The crate provides, for finite spaces, exact (enumeration-based) tooling:
//!
//! * [`measure`]: finite measures, normalization, total variation, mixtures,
//!   and the Dirichlet process product moment.
//! * [`kernel`]: reinforcement kernels and their structural checks
//!   (non-negativity, balancedness, scaled stationarity, self-averaging,
//!   properness, block decomposition) plus Monte Carlo checks for kernels
//!   given only through samplers.
//! * [`urn`]: sequential simulation of the predictive update, both for finite
//!   kernels and for sampler-defined kernels on the real line, and the
//!   coupled predictive/observation recursion driven by a weight sequence.
//! * [`exactlaw`]: exact joint laws of the first `n` draws, exchangeability
//!   and conditional-identity-in-distribution (c.i.d.) checks, the closed-form
//!   Polya joint law, and projection of the law onto kernel atoms.
//! * [`prior`]: stick-breaking samplers for the directing random measure,
//!   its posterior given data, the hierarchical two-stage sampler over kernel
//!   atoms, and the two-part mixture sampler for kernels with a null part.
//! * [`diagnostics`]: trajectory-level convergence traces and martingale
//!   diagnostics.
//! * [`config`] and [`cli`]: a JSON experiment configuration and the
//!   subcommand driver behind the `mvps` binary.
//!
//! # Example
//!
//! ```
//! use std::sync::Arc;
//! use mvps::measure::{Space, FiniteMeasure};
//! use mvps::kernel::FiniteKernel;
//! use mvps::urn::UrnSpec;
//! use mvps::exactlaw;
//!
//! let space = Arc::new(Space::new(["a", "b"]).unwrap());
//! let nu = FiniteMeasure::new(space.clone(), vec![0.5, 0.5]).unwrap();
//! // delta kernel: reinforce exactly the observed state.
//! let kernel = FiniteKernel::identity(space.clone());
//! let spec = Arc::new(UrnSpec::new(1.0, nu.normalize().unwrap(), kernel).unwrap());
//! let report = exactlaw::check_exchangeable(&spec, 4, mvps::EXACT_TOL).unwrap();
//! assert!(report.passed);
//! ```
//!
//! All probability comparisons in exact checks use the crate-wide absolute
//! tolerance [`EXACT_TOL`]; statistical checks use the thresholds in
//! [`diagnostics::stat`].

#![forbid(unsafe_code)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod exactlaw;
pub mod kernel;
pub mod measure;
pub mod prior;
pub mod seed;
pub mod urn;

/// Absolute tolerance used by every exact mass/probability comparison.
///
/// Masses and probabilities handled here are O(1), so a single absolute
/// tolerance is used instead of a relative one.
pub const EXACT_TOL: f64 = 1e-12;

/// Cap on the number of tuples any exact enumeration is allowed to touch.
pub const ENUMERATION_CAP: u128 = 10_000_000;

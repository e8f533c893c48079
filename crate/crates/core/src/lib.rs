//! Consensus-based secondary control of DC microgrids.
//!
//! The crate models a microgrid as a pair of weighted graphs over the same
//! DGUs: resistive power lines and consensus communication links. Secondary
//! control integrates per-unit current disagreements into voltage
//! corrections; the closed loop is governed by the product
//! `Q = L D M` of the communication Laplacian, the inverse current ratings,
//! and the electrical Laplacian. The modules follow that pipeline:
//!
//! - [`graph`]: networks, incidence matrices, weighted Laplacians,
//!   connectivity checks.
//! - [`spectral`]: eigenstructure certification of `Q`, zero-mean
//!   decompositions, the invariant-subspace transform, and a stored
//!   counterexample showing what goes wrong outside the certified regimes.
//! - [`equilibria`]: steady states, current sharing and voltage balancing at
//!   equilibrium, and convergence rates for both primary-loop abstractions.
//! - [`dynamics`]: fixed-step simulation of the unit-gain and first-order
//!   closed loops with derived electrical outputs.
//! - [`pnp`]: plug-in and unplug procedures that keep the correction state
//!   zero-average through topology changes.
//! - [`scenario`]: declarative event timelines, metrics, and check
//!   evaluation, including the builtin staged experiment.
//! - [`cli`]: the `mgc` command-line tool and the scenario file format.

// Validation uses `!(x > 0.0)` on purpose: NaN must fail positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod graph;
pub mod model;
mod numeric;
pub mod pnp;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};

//! Probabilistic preimage approximation for small feedforward networks.
//!
//! Given a network, an input hyperrectangle and an output property, the
//! verifier trains a forest of randomized, depth-bounded decision trees on
//! labeled samples, harvests the pure positive leaves, validates each
//! candidate box by active resampling against a tolerance-limit sample size
//! and stops once a Monte Carlo estimate of coverage reaches the target.
//!
//! Module map:
//! - [`nn`]: network loading, evaluation and margin labeling.
//! - [`geometry`]: axis-aligned boxes, dyadic grids, dedup, union membership.
//! - [`sampling`]: seeded streams, uniform and union-uniform sampling.
//! - [`forest`]: grid-aligned Gini trees and forests.
//! - [`guarantees`]: closed-form sample sizes, bounds and the budget planner.
//! - [`verifier`]: the end-to-end procedure and its ablation/baseline modes.
//! - [`oracle`], [`synthetic`], [`bench`]: ground truth and experiment harnesses.

pub mod bench;
pub mod error;
pub mod forest;
pub mod geometry;
pub mod guarantees;
pub mod nn;
pub mod oracle;
pub mod sampling;
pub mod synthetic;
pub mod verifier;

pub use error::{Error, Result};
pub use geometry::{AxisBox, BoxSet, UnitMap, XiGrid};
pub use nn::{Activation, Labeler, MarginLabeler, Network, OutputProperty};
pub use verifier::{Mode, VerificationReport, VerificationTask};

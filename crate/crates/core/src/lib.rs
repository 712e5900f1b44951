//! Learning interpretable safety constraints from expert demonstrations.
//!
//! Expert trajectories are mapped to feature vectors, a one-class decision
//! tree carves the region the experts visit out of the feature bounding box,
//! and the complement of that region becomes a DNF formula of axis-aligned
//! literals. A Lagrangian policy-gradient learner uses the formula as its cost
//! signal, and conjunctions the learner never triggers are pruned afterwards.

pub mod config;
pub mod crl;
pub mod density;
pub mod error;
pub mod features;
pub mod formula;
pub mod navenv;
pub mod octree;
pub mod pipeline;
pub mod registry;
pub mod split;
pub mod svg;

pub use error::{Error, Result};

//! Temporal synchronization of frame-descriptor sequences without
//! annotations.
//!
//! Two recordings of the same route rarely agree on timing: vehicles stop,
//! accelerate, and start at different landmarks. This crate aligns such
//! recordings frame-by-frame using only the footage itself. A small metric
//! embedding maps per-frame features onto the unit hypersphere, pairwise
//! descriptor distances form a cost matrix, a low-rank decorrelation strips
//! globally correlated structure from that matrix, and a stripe-wise
//! shortest-path search extracts a monotone matching tour. Accepted tours
//! are mined for fresh training labels, so embedding and matcher improve
//! jointly over a few self-supervised iterations. A final coarse-to-fine
//! pass refines the tour to full frame rate and smooths it with a Kalman
//! filter.

pub mod config;
pub mod corpus;
pub mod costmat;
pub mod curriculum;
pub mod embedder;
pub mod error;
pub mod eval;
pub(crate) mod io;
pub mod refine;
pub mod svd;
pub mod tourfinder;

pub use config::Config;
pub use error::{Error, Result};

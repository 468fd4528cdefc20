//! Click-supervised pseudo labelling for LiDAR point clouds.
//!
//! A single BEV click per object is lifted to a per-point 3D label through a
//! camera mask ([`plg`]), refined with votes from neighbouring sweeps
//! ([`tsu`]) and optionally replaced by confident, overlapping predictions
//! ([`ile`]). [`synthgen`] produces ground-truth sequences for testing and
//! [`metrics`] scores the results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod clicksim;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod ile;
pub mod maskprovider;
pub mod metrics;
pub mod pipeline;
pub mod plg;
pub mod rng;
pub mod synthgen;
pub mod teacher;
pub mod tsu;

pub use error::{Error, Result};

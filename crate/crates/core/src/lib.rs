//! Manipulation question answering in a simulated, occlusion-aware bin.
//!
//! A top-down 2D world of stacked convex objects ([`world`]) is rasterized
//! with a painter's algorithm ([`geometry`]) to measure how much of each
//! object is hidden. A pixel-wise Q-network ([`agent`]) learns push actions
//! that reveal the objects a counting question asks about, using the shaped
//! rewards in [`reward`]. Questions and ground-truth answers come from
//! [`dataset`]; answers after manipulation come from [`qa`]. The
//! [`harness`] module wires everything into reproducible experiment runs.

pub mod agent;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod par;
pub mod qa;
pub mod reward;
pub mod rng;
pub mod world;

pub use error::{Error, Result};

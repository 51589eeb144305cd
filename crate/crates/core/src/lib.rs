//! Field-of-view constrained multi-robot topology control.
//!
//! Robots are single integrators `(x, y, θ)` with a triangular sensing
//! region. A directed edge `(i, j)` asks robot `i` to keep robot `j` inside
//! its triangle. The crate provides the graph algebra, the pairwise
//! potentials, the adaptive per-edge gain law, a fault-tolerant observer
//! and a fixed-step simulator tying them together.

pub mod adaptive;
pub mod config;
pub mod error;
pub mod fov;
pub mod gradcheck;
pub mod graph;
pub mod resilience;
pub mod sim;

pub use error::{EdgeRef, Error, Result};
pub use fov::{FovParams, Pose};
pub use graph::Topology;

//! Planning, simulation and model-fusion tooling for hierarchical
//! (cloud, edge, device) Gaussian-splatting reconstruction.
//!
//! * [`geometry`]: weighted Voronoi regions and camera assignment.
//! * [`costmodel`]: profiled time and size curves.
//! * [`rtp`]: per-edge min-max device allocation.
//! * [`arp`]: iterative region planning across edges.
//! * [`sim`]: discrete-event latency simulation.
//! * [`splat2d`]: a 2D splatting testbed for merge vs. retrain fusion.
//! * [`scenario`]: scenario files and their validation.
//! * [`pipeline`]: the end-to-end run tying the stages together.

pub mod arp;
pub mod costmodel;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod rtp;
pub mod scenario;
pub mod sim;
pub mod splat2d;

pub use error::{Error, Result};

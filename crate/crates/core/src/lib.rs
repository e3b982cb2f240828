//! Physics-aware multiplex graph neural network for 3D molecular structures.
//!
//! A molecule is represented as a two-plex graph over one node set: a local
//! plex (chemical bonds or a short cutoff) whose messages see distances and
//! one-/two-hop angles, and a global plex (long cutoff) whose messages see
//! distances only. Per-layer outputs of both plexes are fused by a per-node
//! attention pool. Scalar heads are E(3)-invariant; the vector head is
//! E(3)-equivariant through per-node geometric vectors.
//!
//! Crate layout:
//!
//! - [`chem_io`]: XYZ / SDF parsing, label files, dataset splits.
//! - [`geometry`]: distances, angles, E(3) transforms.
//! - [`graph`]: multiplex graph construction, neighbor search, message counts.
//! - [`basis`]: radial and angular basis features.
//! - [`nn`]: tape-based reverse-mode autodiff, layers, Adam, EMA, checkpoints.
//! - [`model`]: the network itself.
//! - [`profiler`]: message-count complexity reports and cutoff sweeps.
//! - [`harness`]: training, metrics, symmetry checks, attention reports.

pub mod basis;
pub mod chem_io;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod profiler;

pub use error::{Error, Result};

//! Numeric core of the attention mesh face-landmark model.
//!
//! Everything here is `no_std` + `alloc`: a small dense-tensor library with
//! reverse-mode differentiation, the affine spatial transformer, landmark
//! geometry, the unified and cascaded networks, losses and the two-phase
//! trainer, the synthetic face generator and the static MAC cost model.
//! File formats, timing and the command line live in the `attnmesh` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod contour;
pub mod cost;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod spatial;
pub mod synth;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{LandmarkSet, RegionCrop, RegionSpec};
pub use graph::{Graph, NodeId, Primitive};
pub use network::{AttentionMeshOutput, Model, ModelConfig};
pub use rng::Rng;
pub use spatial::{AffineTheta, SampleGrid};
pub use tensor::Tensor;
pub use topology::Topology;

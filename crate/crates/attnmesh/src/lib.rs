//! File formats, the training pipeline and the `attnmesh` command line.
//!
//! The numerics live in `attnmesh-core`; this crate adds disk formats
//! (datasets, checkpoints, topology files, reports), wall-clock timing,
//! overlay images and the commands that tie them together.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod overlay;
pub mod pipeline;
pub mod report;
pub mod topo;

pub use error::{Error, Result};

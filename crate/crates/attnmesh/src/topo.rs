//! Topology files and their content hash.

use std::path::Path;

use attnmesh_core::topology::Layout;
use attnmesh_core::Topology;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// On-disk topology description: a name and the ring sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub name: String,
    pub layout: Layout,
}

/// SHA-256 of the canonical JSON of the full topology.
pub fn topology_hash(t: &Topology) -> String {
    let json = serde_json::to_vec(t).expect("topology serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path).at(path)?;
    let f: TopologyFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Topology::from_layout(&f.name, f.layout)?)
}

pub fn save_topology(t: &Topology, path: &Path) -> Result<()> {
    let f = TopologyFile { name: t.name.clone(), layout: t.layout };
    std::fs::write(path, serde_json::to_string_pretty(&f).expect("serializes")).at(path)
}

/// `desk`, `full`, or a JSON file.
pub fn resolve_topology(spec: Option<&str>) -> Result<Topology> {
    match spec {
        None | Some("desk") => Ok(Topology::desk()),
        Some("full") => Ok(Topology::full()),
        Some(p) => load_topology(Path::new(p)),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

//! Static multiply-accumulate counts from shapes alone.
//!
//! Convolutions count `out_elems · k² · C_in` (depthwise `out_elems · k²`),
//! dense layers `in · out`, bilinear sampling 4 per output element.
//! Elementwise ops, pooling and activations are not counted.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::RegionName;
use crate::network::{CascadeModel, Model, ModelConfig};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubmodelCost {
    pub name: String,
    pub macs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    MeshOnly,
    Cascade,
    AttentionMesh,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MeshOnly, Variant::Cascade, Variant::AttentionMesh];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MeshOnly => "mesh-only",
            Variant::Cascade => "cascade",
            Variant::AttentionMesh => "attention-mesh",
        }
    }

    /// Row label in the NME and cost tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::MeshOnly => "Mesh",
            Variant::Cascade => "Cascade",
            Variant::AttentionMesh => "Attention mesh",
        }
    }

    pub fn image_encodes(self) -> usize {
        match self {
            Variant::Cascade => 1 + RegionName::ALL.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MacReport {
    /// Mesh, Lips, Eye & iris (per eye), as in a cascade breakdown.
    pub submodels: Vec<SubmodelCost>,
    /// Face + lips + 2 × eye.
    pub cascade_total: u64,
    /// Backbone, face head, each region head, sampling.
    pub unified_parts: Vec<SubmodelCost>,
    pub unified_total: u64,
    pub mesh_total: u64,
    /// unified / cascade.
    pub ratio: f64,
}

impl MacReport {
    /// Cascade total equals face + lips + 2 × eye, unified total equals its parts.
    pub fn check_additivity(&self) -> Result<()> {
        let eye = self.submodels.get(2).map_or(0, |s| s.macs);
        let sum = self.submodels.iter().take(2).map(|s| s.macs).sum::<u64>() + 2 * eye;
        if sum != self.cascade_total {
            return Err(Error::Invalid(alloc::format!("cascade total {} != parts {sum}", self.cascade_total)));
        }
        if self.unified_parts.iter().map(|s| s.macs).sum::<u64>() != self.unified_total {
            return Err(Error::Invalid(String::from("unified total differs from its parts")));
        }
        Ok(())
    }

    pub fn total(&self, v: Variant) -> u64 {
        match v {
            Variant::MeshOnly => self.mesh_total,
            Variant::Cascade => self.cascade_total,
            Variant::AttentionMesh => self.unified_total,
        }
    }
}

/// Per-submodel and per-variant MACs for one sample at `config`.
pub fn count_macs(config: &ModelConfig, topology: &Topology) -> Result<MacReport> {
    let unified = Model::skeleton(config.clone(), topology.clone())?;
    let cascade = CascadeModel::skeleton(config.clone(), topology.clone())?;
    let parts = unified.cost_parts()?;
    let mesh_total = parts.backbone + parts.face_head;
    let lips = cascade.region_cost(RegionName::Lips)?;
    let eye = cascade.region_cost(RegionName::LeftEye)?;
    let sub = |name: &str, macs| SubmodelCost { name: String::from(name), macs };
    let submodels = alloc::vec![sub("Mesh", mesh_total), sub("Lips", lips), sub("Eye & iris", eye)];
    let cascade_total = mesh_total + lips + 2 * eye;
    let mut unified_parts = alloc::vec![sub("backbone", parts.backbone), sub("face head", parts.face_head)];
    for (name, &m) in RegionName::ALL.iter().zip(&parts.region_heads) {
        unified_parts.push(sub(name.as_str(), m));
    }
    unified_parts.push(sub("sampling", 3 * parts.sampler_per_region));
    let unified_total = parts.total();
    let report = MacReport {
        submodels,
        cascade_total,
        unified_parts,
        unified_total,
        mesh_total,
        ratio: unified_total as f64 / cascade_total as f64,
    };
    report.check_additivity()?;
    Ok(report)
}

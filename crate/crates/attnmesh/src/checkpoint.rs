//! `AMCK` parameter containers with a JSON sidecar.
//!
//! Binary layout: magic `AMCK`, format version (u32 LE), then one record
//! per tensor until end of file: name length (u32), UTF-8 name, rank (u32),
//! dims (u32 × rank), f32 LE payload. Records are sorted by name. The
//! sidecar `<file>.json` carries the model config and topology hash.

use std::path::{Path, PathBuf};

use attnmesh_core::network::{CascadeModel, ParamStore};
use attnmesh_core::training::{EpochRecord, TrainConfig};
use attnmesh_core::{Model, ModelConfig, Tensor, Topology};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::topo::{topology_hash, TopologyFile};

pub const MAGIC: &[u8; 4] = b"AMCK";
pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR_VERSION: u32 = 1;

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * store.numel() + 64 * store.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "not an AMCK checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("checkpoint format version {version}, expected {FORMAT_VERSION}")));
    }
    let mut store = ParamStore::new();
    while !r.done() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<_>>()?;
        let numel = dims.iter().product();
        let data = r.f32s(numel, &name)?;
        if store.get(&name).is_some() {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
        store.insert(name, Tensor::new(&dims, data)?);
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unified,
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub kind: ModelKind,
    pub model_config: ModelConfig,
    pub topology: TopologyFile,
    pub topology_hash: String,
    /// Training phases completed, in order.
    pub phases: Vec<u8>,
    pub blend_trained: bool,
    pub train_config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
}

impl Sidecar {
    pub fn new(kind: ModelKind, config: &ModelConfig, topology: &Topology) -> Sidecar {
        Sidecar {
            format_version: SIDECAR_VERSION,
            kind,
            model_config: config.clone(),
            topology: TopologyFile { name: topology.name.clone(), layout: topology.layout },
            topology_hash: topology_hash(topology),
            phases: Vec::new(),
            blend_trained: false,
            train_config: None,
            history: Vec::new(),
        }
    }

    fn topology(&self, path: &Path) -> Result<Topology> {
        let t = Topology::from_layout(&self.topology.name, self.topology.layout)?;
        if topology_hash(&t) != self.topology_hash {
            return Err(Error::format(path, "topology hash does not match the stored layout"));
        }
        Ok(t)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn write(path: &Path, params: &ParamStore, sidecar: &Sidecar) -> Result<()> {
    std::fs::write(path, encode_params(params)).at(path)?;
    let sc = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    json.push('\n');
    std::fs::write(&sc, json).at(&sc)
}

fn read(path: &Path, kind: ModelKind, expected: Option<&Topology>) -> Result<(ParamStore, Sidecar, Topology)> {
    let sc = sidecar_path(path);
    let text = std::fs::read_to_string(&sc).at(&sc)?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(&sc, e.to_string()))?;
    if sidecar.format_version != SIDECAR_VERSION {
        return Err(Error::format(&sc, format!("sidecar version {}, expected {SIDECAR_VERSION}", sidecar.format_version)));
    }
    if sidecar.kind != kind {
        return Err(Error::Mismatch(format!("{} holds a {:?} model, expected {:?}", path.display(), sidecar.kind, kind)));
    }
    let topo = sidecar.topology(&sc)?;
    if let Some(t) = expected {
        let h = topology_hash(t);
        if h != sidecar.topology_hash {
            return Err(Error::Mismatch(format!(
                "checkpoint topology `{}` ({}) does not match `{}` ({h})",
                topo.name, sidecar.topology_hash, t.name
            )));
        }
    }
    let bytes = std::fs::read(path).at(path)?;
    Ok((decode_params(&bytes, path)?, sidecar, topo))
}

pub fn save_model(path: &Path, model: &Model, sidecar: &Sidecar) -> Result<()> {
    write(path, &model.params, sidecar)
}

/// Loads a unified model, refusing a topology other than `expected`.
pub fn load_model(path: &Path, expected: Option<&Topology>) -> Result<(Model, Sidecar)> {
    let (params, sidecar, topo) = read(path, ModelKind::Unified, expected)?;
    // built only for its parameter names and shapes
    let mut m = Model::build(sidecar.model_config.clone(), topo, &mut attnmesh_core::Rng::new(0))?;
    m.params.load_from(&params).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, sidecar))
}

pub fn save_cascade(path: &Path, model: &CascadeModel, sidecar: &Sidecar) -> Result<()> {
    write(path, &model.params, sidecar)
}

pub fn load_cascade(path: &Path, expected: Option<&Topology>) -> Result<(CascadeModel, Sidecar)> {
    let (params, sidecar, topo) = read(path, ModelKind::Cascade, expected)?;
    let mut m = CascadeModel::build(sidecar.model_config.clone(), topo, &mut attnmesh_core::Rng::new(0))?;
    m.params.load_from(&params).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, sidecar))
}

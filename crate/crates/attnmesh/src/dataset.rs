//! `AMDS` sample directories.
//!
//! A dataset is a directory holding `manifest.json` and one file per
//! sample, `sample_NNNNNN.amds`:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `AMDS` |
//! | 4 | format version, u32 LE |
//! | 4 | image side `S`, u32 LE |
//! | 4 | landmark count `P`, u32 LE |
//! | 12·S² | image, f32 LE, channel-major `[3, S, S]` |
//! | 12·P | landmarks, f32 LE, `[P, 3]` |
//! | 4 | params JSON length `J`, u32 LE |
//! | J | generator parameters, JSON |
//!
//! The manifest records the count, image size, topology and its hash, and
//! the SHA-256 of every sample file.

use std::path::{Path, PathBuf};

use attnmesh_core::synth::{generate_indexed, Sample, SynthConfig, SynthFaceParams};
use attnmesh_core::{LandmarkSet, Tensor, Topology};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::topo::{sha256_hex, topology_hash, TopologyFile};

pub const MAGIC: &[u8; 4] = b"AMDS";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub image_size: usize,
    pub topology: TopologyFile,
    pub topology_hash: String,
    /// Generator settings and base seed, when the set was generated.
    pub generator: Option<GeneratorInfo>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub config: SynthConfig,
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:06}.amds")
}

/// Exact size in bytes of one sample file.
pub fn blob_size(image_size: usize, points: usize, params_json_len: usize) -> usize {
    16 + 12 * image_size * image_size + 12 * points + 4 + params_json_len
}

pub fn params_json(p: &SynthFaceParams) -> Vec<u8> {
    serde_json::to_vec(p).expect("params serialize")
}

pub fn encode_sample(s: &Sample) -> Vec<u8> {
    let size = s.image.shape()[1];
    let json = params_json(&s.params);
    let mut out = Vec::with_capacity(blob_size(size, s.landmarks.len(), json.len()));
    out.extend_from_slice(MAGIC);
    for v in [FORMAT_VERSION, size as u32, s.landmarks.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in s.image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &s.landmarks.points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

pub fn decode_sample(bytes: &[u8], path: &Path) -> Result<Sample> {
    let trunc = || Error::format(path, format!("truncated sample file ({} bytes)", bytes.len()));
    let word = |at: usize| -> Result<u32> {
        bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes"))).ok_or_else(trunc)
    };
    if bytes.get(..4).ok_or_else(trunc)? != MAGIC {
        return Err(Error::format(path, "not an AMDS sample (bad magic)"));
    }
    let version = word(4)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("sample format version {version}, expected {FORMAT_VERSION}")));
    }
    let size = word(8)? as usize;
    let points = word(12)? as usize;
    let floats = |from: usize, n: usize| -> Result<Vec<f32>> {
        let raw = bytes.get(from..from + 4 * n).ok_or_else(trunc)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    };
    let img_at = 16;
    let lm_at = img_at + 12 * size * size;
    let json_at = lm_at + 12 * points;
    let image = Tensor::new(&[3, size, size], floats(img_at, 3 * size * size)?)?;
    let landmarks = LandmarkSet::from_flat(&floats(lm_at, 3 * points)?);
    let jlen = word(json_at)? as usize;
    let json = bytes.get(json_at + 4..json_at + 4 + jlen).ok_or_else(trunc)?;
    if bytes.len() != json_at + 4 + jlen {
        return Err(Error::format(path, "trailing bytes after sample"));
    }
    let params = serde_json::from_slice(json).map_err(|e| Error::format(path, format!("params: {e}")))?;
    Ok(Sample { image, landmarks, params })
}

pub fn write_dataset(dir: &Path, samples: &[Sample], topology: &Topology, generator: Option<GeneratorInfo>) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).at(dir)?;
    let image_size = samples.first().map_or(0, |s| s.image.shape()[1]);
    let mut files = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.image.shape()[1] != image_size || s.landmarks.len() != topology.unified_count() {
            return Err(Error::Mismatch(format!("sample {i} does not match the dataset shape")));
        }
        let name = sample_name(i);
        let bytes = encode_sample(s);
        let path = dir.join(&name);
        std::fs::write(&path, &bytes).at(&path)?;
        files.push(FileEntry { name, sha256: sha256_hex(&bytes) });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        count: samples.len(),
        image_size,
        topology: TopologyFile { name: topology.name.clone(), layout: topology.layout },
        topology_hash: topology_hash(topology),
        generator,
        files,
    };
    let path = dir.join(MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    std::fs::write(&path, json).at(&path)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).at(&path)?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Mismatch(format!(
            "{}: dataset format version {}, this build reads {FORMAT_VERSION}",
            path.display(),
            m.format_version
        )));
    }
    if m.files.len() != m.count {
        return Err(Error::format(&path, format!("{} files listed for {} samples", m.files.len(), m.count)));
    }
    Ok(m)
}

/// A loaded dataset and its topology.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub topology: Topology,
    pub samples: Vec<Sample>,
}

/// Reads and validates a dataset; with `expected`, refuses any other topology.
pub fn read_dataset(dir: &Path, expected: Option<&Topology>) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let topology = Topology::from_layout(&manifest.topology.name, manifest.topology.layout)?;
    let hash = topology_hash(&topology);
    if hash != manifest.topology_hash {
        return Err(Error::Mismatch(format!(
            "{}: topology hash {} does not match its layout ({hash})",
            dir.join(MANIFEST).display(),
            manifest.topology_hash
        )));
    }
    if let Some(t) = expected {
        if topology_hash(t) != hash {
            return Err(Error::Mismatch(format!("dataset topology `{}` differs from `{}`", topology.name, t.name)));
        }
    }
    let mut samples = Vec::with_capacity(manifest.count);
    for f in &manifest.files {
        let path = dir.join(&f.name);
        let bytes = std::fs::read(&path).at(&path)?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::format(&path, "content hash does not match the manifest"));
        }
        let s = decode_sample(&bytes, &path)?;
        if s.image.shape()[1] != manifest.image_size || s.landmarks.len() != topology.unified_count() {
            return Err(Error::format(&path, "sample shape does not match the manifest"));
        }
        samples.push(s);
    }
    Ok(Dataset { manifest, topology, samples })
}

/// Generates `count` samples with per-index seeds on up to `threads` workers;
/// the result does not depend on the worker count.
pub fn generate(seed: u64, count: usize, config: &SynthConfig, topology: &Topology, threads: usize) -> Vec<Sample> {
    let threads = threads.clamp(1, count.max(1));
    let mut out: Vec<Option<Sample>> = (0..count).map(|_| None).collect();
    let chunk = count.div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (j, s) in slot.iter_mut().enumerate() {
                    *s = Some(generate_indexed(seed, (c * chunk + j) as u64, config, topology));
                }
            });
        }
    });
    out.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn sample_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(sample_name(i))
}

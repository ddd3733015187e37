//! The attention mesh model, the cascaded baseline and the blend-shape head.
//!
//! Head outputs live in their own frames: the face head predicts x, y in the
//! normalized [-1, 1] image frame and z scaled the same way (`2z`); region
//! heads predict crop-local coordinates whose unit is half the crop side.

mod blend;
mod layers;
mod params;

pub use blend::{blend_inputs, BlendCoefficients, EYE_COEFFS, MOUTH_COEFFS};
pub use layers::Shape;
pub use params::{Bound, ParamStore};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    fallback_crop, map_region_to_global, region_from_landmarks, LandmarkSet, RegionCrop, RegionName,
};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::spatial::{theta_from_crop, AffineTheta};
use crate::tensor::Tensor;
use crate::topology::Topology;
use layers::{collapse, downsample_to, Layer, Stack};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub input_size: usize,
    /// Always `input_size / 4`.
    pub featmap_size: usize,
    pub featmap_channels: usize,
    pub crop_size: usize,
    /// Side at which eye heads fork into contour and iris branches.
    pub eye_split_size: usize,
    pub stem_channels: usize,
    /// Stride-1 blocks at each backbone resolution.
    pub blocks_per_stage: usize,
    pub head_channels: usize,
    /// Width of the 1×1 features a head collapses to before its dense output.
    pub collapse_channels: usize,
    pub crop_margin: f64,
    /// Regress θ for each region from the face features instead of deriving it from landmarks.
    pub theta_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            input_size: 64,
            featmap_size: 16,
            featmap_channels: 32,
            crop_size: 8,
            eye_split_size: 2,
            stem_channels: 16,
            blocks_per_stage: 1,
            head_channels: 32,
            collapse_channels: 64,
            crop_margin: 0.25,
            theta_head: false,
        }
    }

    pub fn full() -> Self {
        ModelConfig { input_size: 256, featmap_size: 64, crop_size: 24, eye_split_size: 6, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return bad(format!("input_size {} must be a positive multiple of 8", self.input_size));
        }
        if self.featmap_size * 4 != self.input_size {
            return bad(format!("featmap_size {} must be input_size / 4", self.featmap_size));
        }
        if self.crop_size < 2 || self.crop_size >= self.featmap_size {
            return bad(format!("crop_size {} must be in [2, featmap_size)", self.crop_size));
        }
        if self.eye_split_size == 0
            || self.crop_size % self.eye_split_size != 0
            || !(self.crop_size / self.eye_split_size).is_power_of_two()
        {
            return bad(format!(
                "eye_split_size {} must reach crop_size {} by halving",
                self.eye_split_size, self.crop_size
            ));
        }
        for (what, v) in [
            ("featmap_channels", self.featmap_channels),
            ("stem_channels", self.stem_channels),
            ("head_channels", self.head_channels),
            ("collapse_channels", self.collapse_channels),
        ] {
            if v == 0 {
                return bad(format!("{what} must be positive"));
            }
        }
        if self.stem_channels > self.featmap_channels {
            return bad(String::from("stem_channels must not exceed featmap_channels"));
        }
        if !(self.crop_margin >= 0.0 && self.crop_margin.is_finite()) {
            return bad(format!("crop_margin {} must be non-negative", self.crop_margin));
        }
        Ok(())
    }
}

/// Output layers start small so initial predictions sit near the frame center.
const OUTPUT_GAIN: f32 = 0.1;

/// A head: a shared trunk, then one stack per output branch.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    trunk: Stack,
    branches: Vec<Stack>,
}

impl Head {
    fn stacks(&self) -> impl Iterator<Item = &Stack> {
        core::iter::once(&self.trunk).chain(&self.branches)
    }

    fn macs(&self) -> Result<u64> {
        self.stacks().map(Stack::macs).sum()
    }

    fn forward(&self, g: &mut Graph<f32>, b: &Bound, x: NodeId) -> Result<Vec<NodeId>> {
        let t = self.trunk.forward(g, b, x)?;
        self.branches.iter().map(|s| s.forward(g, b, t)).collect()
    }
}

/// Strided stem and blocks taking `side` input pixels to `side / 4` features.
fn encoder(prefix: &str, side: usize, cfg: &ModelConfig) -> Result<Stack> {
    let mut s = Stack::new(Shape::Map { channels: 3, side });
    s.push(Layer::Conv { name: format!("{prefix}.stem"), cin: 3, cout: cfg.stem_channels, k: 3, stride: 2, pad: 1 })?;
    for i in 0..cfg.blocks_per_stage {
        let c = cfg.stem_channels;
        s.push(Layer::Block { name: format!("{prefix}.s1b{i}"), cin: c, cout: c, stride: 1 })?;
    }
    let c = cfg.featmap_channels;
    s.push(Layer::Block { name: format!("{prefix}.s2down"), cin: cfg.stem_channels, cout: c, stride: 2 })?;
    for i in 0..cfg.blocks_per_stage {
        s.push(Layer::Block { name: format!("{prefix}.s2b{i}"), cin: c, cout: c, stride: 1 })?;
    }
    Ok(s)
}

/// One stride-1 block, halve while the side is even and above 3, then collapse.
fn branch(prefix: &str, input: Shape, cfg: &ModelConfig, outputs: usize) -> Result<Stack> {
    let mut s = Stack::new(input);
    let c = s.channels();
    s.push(Layer::Block { name: format!("{prefix}.b0"), cin: c, cout: c, stride: 1 })?;
    let mut i = 0;
    while s.side() > 3 && s.side() % 2 == 0 {
        let cin = s.channels();
        s.push(Layer::Block { name: format!("{prefix}.down{i}"), cin, cout: cin, stride: 2 })?;
        i += 1;
    }
    collapse(&mut s, prefix, cfg.collapse_channels, outputs, OUTPUT_GAIN)?;
    Ok(s)
}

fn region_head(prefix: &str, cfg: &ModelConfig, topo: &Topology, name: RegionName) -> Result<Head> {
    let mut trunk = Stack::new(Shape::Map { channels: cfg.featmap_channels, side: cfg.crop_size });
    downsample_to(&mut trunk, prefix, cfg.eye_split_size, cfg.head_channels)?;
    let split = trunk.output()?;
    let mut branches = vec![branch(&format!("{prefix}.contour"), split, cfg, 3 * topo.region(name).output_count)?];
    if name.is_eye() {
        branches.push(branch(&format!("{prefix}.iris"), split, cfg, 3 * topo.iris_count)?);
    }
    Ok(Head { trunk, branches })
}

fn face_head(cfg: &ModelConfig, topo: &Topology) -> Result<Head> {
    let mut trunk = Stack::new(Shape::Map { channels: cfg.featmap_channels, side: cfg.featmap_size });
    let mut i = 0;
    while trunk.side() > 3 && trunk.side() % 2 == 0 {
        let cin = trunk.channels();
        trunk.push(Layer::Block { name: format!("face.down{i}"), cin, cout: cfg.head_channels.max(cin), stride: 2 })?;
        i += 1;
    }
    let (cin, side) = (trunk.channels(), trunk.side());
    trunk.push(Layer::Conv { name: "face.collapse".into(), cin, cout: cfg.collapse_channels, k: side, stride: 1, pad: 0 })?;
    trunk.push(Layer::Flatten)?;
    let feat = trunk.output()?;
    let dense = |name: &str, fout| -> Result<Stack> {
        let mut s = Stack::new(feat);
        s.push(Layer::Dense { name: name.into(), fin: cfg.collapse_channels, fout, act: false, gain: OUTPUT_GAIN })?;
        Ok(s)
    };
    let mut branches = vec![dense("face.mesh", 3 * topo.base_count)?];
    if cfg.theta_head {
        branches.push(dense("face.theta", 6 * RegionName::ALL.len())?);
    }
    Ok(Head { trunk, branches })
}

/// Parameter-name prefix of a unified region head.
pub fn region_prefix(name: RegionName) -> &'static str {
    name.as_str()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub topology: Topology,
    pub params: ParamStore,
    backbone: Stack,
    face: Head,
    regions: Vec<Head>,
    blend: blend::BlendArch,
}

/// Features of a batch through the unified model's shared path.
#[derive(Debug, Clone, Copy)]
pub struct FaceNodes {
    pub features: NodeId,
    /// `[N, 3·base_count]` in the normalized frame.
    pub mesh: NodeId,
    /// `[N, 18]` when the θ head is enabled.
    pub theta: Option<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct RegionNodes {
    /// `[N, 3·output_count]`, crop-local.
    pub contour: NodeId,
    /// `[N, 3·iris_count]`, crop-local (eyes only).
    pub iris: Option<NodeId>,
}

/// One region's crop as used by a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CropInfo {
    /// Image-frame crop.
    pub crop: RegionCrop,
    /// Normalized-frame θ used for sampling.
    pub theta: AffineTheta,
    /// The predicted corners were degenerate and an axis-aligned box was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForwardStats {
    /// Times an encoder ran on pixels of the input image.
    pub image_encodes: usize,
    pub backbone_passes: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMeshOutput {
    pub base_mesh: LandmarkSet,
    /// Lips, left eye, right eye in image coordinates.
    pub refined: Vec<LandmarkSet>,
    /// Crop-local region predictions (inputs to the blend-shape head).
    pub region_local: Vec<LandmarkSet>,
    /// Left, right iris in image coordinates.
    pub irises: Vec<LandmarkSet>,
    /// Left, right iris, crop-local.
    pub iris_local: Vec<LandmarkSet>,
    pub crops: Vec<CropInfo>,
    pub unified_mesh: LandmarkSet,
    pub stats: ForwardStats,
}

impl AttentionMeshOutput {
    pub fn any_fallback(&self) -> bool {
        self.crops.iter().any(|c| c.fallback)
    }
}

/// Face-head values to image-frame landmarks.
pub fn mesh_from_normalized(v: &[f32]) -> LandmarkSet {
    LandmarkSet::new(v.chunks_exact(3).map(|c| [(c[0] + 1.0) * 0.5, (c[1] + 1.0) * 0.5, c[2] * 0.5]).collect())
}

/// Image-frame landmarks to face-head values.
pub fn mesh_to_normalized(m: &LandmarkSet) -> Vec<f32> {
    m.points.iter().flat_map(|p| [2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0, 2.0 * p[2]]).collect()
}

/// Crop of a region on a (predicted) image-frame mesh, with the degenerate fallback.
pub fn crop_for(mesh: &LandmarkSet, topo: &Topology, name: RegionName, margin: f64) -> Result<CropInfo> {
    let spec = topo.region(name);
    let (crop, fallback) = match region_from_landmarks(mesh, spec, margin) {
        Ok(c) => (c, false),
        Err(Error::DegenerateRegion { .. }) => (fallback_crop(mesh, spec, margin), true),
        Err(e) => return Err(e),
    };
    let theta = theta_from_crop(&crop.to_normalized())?;
    Ok(CropInfo { crop, theta, fallback })
}

pub(crate) fn theta_tensor(thetas: &[AffineTheta]) -> Result<Tensor<f32>> {
    let data = thetas.iter().flat_map(|t| t.to_array().map(|v| v as f32)).collect();
    Tensor::new(&[thetas.len(), 2, 3], data)
}

pub(crate) fn stack_images(images: &[&Tensor<f32>], size: usize) -> Result<Tensor<f32>> {
    if images.is_empty() {
        return Err(Error::Invalid(String::from("empty image batch")));
    }
    let mut data = Vec::with_capacity(images.len() * 3 * size * size);
    for im in images {
        if im.shape() != [3, size, size] {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("image {:?} must be [3,{size},{size}]", im.shape()),
            });
        }
        data.extend_from_slice(im.data());
    }
    Tensor::new(&[images.len(), 3, size, size], data)
}

fn rows(t: &Tensor<f32>) -> Vec<&[f32]> {
    let n = t.shape()[0];
    let w = t.numel() / n;
    t.data().chunks_exact(w).collect()
}

// Paste refined regions into the base mesh and append the irises.
fn assemble(
    topo: &Topology,
    base_mesh: LandmarkSet,
    local: Vec<LandmarkSet>,
    iris_local: Vec<LandmarkSet>,
    crops: Vec<CropInfo>,
    stats: ForwardStats,
) -> Result<AttentionMeshOutput> {
    let mut refined = Vec::with_capacity(3);
    for (r, l) in local.iter().enumerate() {
        refined.push(map_region_to_global(l, &crops[r].theta)?);
    }
    let irises = vec![
        map_region_to_global(&iris_local[0], &crops[1].theta)?,
        map_region_to_global(&iris_local[1], &crops[2].theta)?,
    ];
    let mut unified = base_mesh.clone();
    for (spec, pts) in topo.regions.iter().zip(&refined) {
        for (&id, p) in spec.indices.iter().zip(&pts.points) {
            unified.points[id] = *p;
        }
    }
    unified.points.extend_from_slice(&irises[0].points);
    unified.points.extend_from_slice(&irises[1].points);
    Ok(AttentionMeshOutput {
        base_mesh,
        refined,
        region_local: local,
        irises,
        iris_local,
        crops,
        unified_mesh: unified,
        stats,
    })
}

impl Model {
    pub fn build(config: ModelConfig, topology: Topology, rng: &mut Rng) -> Result<Model> {
        let mut m = Model::skeleton(config, topology)?;
        let stacks: Vec<&Stack> = core::iter::once(&m.backbone)
            .chain(m.face.stacks())
            .chain(m.regions.iter().flat_map(Head::stacks))
            .chain(m.blend.stacks())
            .collect();
        let mut params = ParamStore::new();
        for s in stacks {
            s.init(&mut params, rng);
        }
        m.params = params;
        Ok(m)
    }

    /// Architecture without parameters, for loading checkpoints and counting.
    pub fn skeleton(config: ModelConfig, topology: Topology) -> Result<Model> {
        config.validate()?;
        topology.validate()?;
        let backbone = encoder("backbone", config.input_size, &config)?;
        let face = face_head(&config, &topology)?;
        let regions = RegionName::ALL
            .iter()
            .map(|&r| region_head(region_prefix(r), &config, &topology, r))
            .collect::<Result<Vec<_>>>()?;
        let blend = blend::BlendArch::new(&topology)?;
        Ok(Model { config, topology, params: ParamStore::new(), backbone, face, regions, blend })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Backbone features `[N, C, F, F]` of an image batch `[N, 3, S, S]`.
    pub fn encode(&self, g: &mut Graph<f32>, b: &Bound, images: NodeId) -> Result<NodeId> {
        self.backbone.forward(g, b, images)
    }

    pub fn face_forward(&self, g: &mut Graph<f32>, b: &Bound, images: NodeId) -> Result<FaceNodes> {
        let features = self.encode(g, b, images)?;
        let outs = self.face.forward(g, b, features)?;
        Ok(FaceNodes { features, mesh: outs[0], theta: outs.get(1).copied() })
    }

    /// Samples a region's crop `[N, C, crop, crop]` from the shared features
    /// at `theta` `[N,2,3]` and runs its head.
    pub fn region_forward(
        &self,
        g: &mut Graph<f32>,
        b: &Bound,
        name: RegionName,
        features: NodeId,
        theta: NodeId,
    ) -> Result<RegionNodes> {
        let c = self.config.crop_size;
        let grid = g.affine_grid(theta, c, c)?;
        let crop = g.bilinear_sample(features, grid)?;
        let head = &self.regions[region_index(name)];
        let outs = head.forward(g, b, crop)?;
        Ok(RegionNodes { contour: outs[0], iris: outs.get(1).copied() })
    }

    /// Crops for every region of every sample given face-head values.
    pub fn crops_from_mesh(&self, mesh_values: &Tensor<f32>, theta_values: Option<&Tensor<f32>>) -> Result<Vec<Vec<CropInfo>>> {
        let mut out = Vec::new();
        for (i, row) in rows(mesh_values).into_iter().enumerate() {
            let mesh = mesh_from_normalized(row);
            let mut crops = Vec::with_capacity(3);
            for (r, &name) in RegionName::ALL.iter().enumerate() {
                let mut info = crop_for(&mesh, &self.topology, name, self.config.crop_margin)?;
                if let Some(tv) = theta_values {
                    let a = &tv.data()[i * 18 + r * 6..i * 18 + r * 6 + 6];
                    let th = AffineTheta::from_array(core::array::from_fn(|k| f64::from(a[k])));
                    if th.is_finite() && th.det().abs() > 1e-8 {
                        info.theta = th;
                    }
                }
                crops.push(info);
            }
            out.push(crops);
        }
        Ok(out)
    }

    /// One unified pass over a batch: a single backbone evaluation, crops
    /// from the predicted base mesh, region features sampled from the shared map.
    pub fn forward_unified_batch(&self, images: &[&Tensor<f32>]) -> Result<Vec<AttentionMeshOutput>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| false)?;
        let x = g.constant(stack_images(images, self.config.input_size)?)?;
        let face = self.face_forward(&mut g, &b, x)?;
        let crops = self.crops_from_mesh(g.value(face.mesh), face.theta.map(|t| g.value(t)))?;
        let mut region_vals = Vec::new();
        for (r, &name) in RegionName::ALL.iter().enumerate() {
            let thetas: Vec<AffineTheta> = crops.iter().map(|c| c[r].theta).collect();
            let th = g.constant(theta_tensor(&thetas)?)?;
            let nodes = self.region_forward(&mut g, &b, name, face.features, th)?;
            region_vals.push(nodes);
        }
        let n = images.len();
        let stats = ForwardStats { image_encodes: 1, backbone_passes: 1, macs: g.macs() / n as u64 };
        let mesh_rows = rows(g.value(face.mesh));
        let mut outs = Vec::with_capacity(n);
        for (i, crops_i) in crops.into_iter().enumerate() {
            let base = mesh_from_normalized(mesh_rows[i]);
            let local: Vec<LandmarkSet> =
                region_vals.iter().map(|rn| LandmarkSet::from_flat(rows(g.value(rn.contour))[i])).collect();
            let iris_local: Vec<LandmarkSet> = region_vals[1..]
                .iter()
                .map(|rn| rn.iris.map(|id| LandmarkSet::from_flat(rows(g.value(id))[i])).unwrap_or_default())
                .collect();
            outs.push(assemble(&self.topology, base, local, iris_local, crops_i, stats)?);
        }
        Ok(outs)
    }

    pub fn forward_unified(&self, image: &Tensor<f32>) -> Result<AttentionMeshOutput> {
        let mut v = self.forward_unified_batch(&[image])?;
        Ok(v.remove(0))
    }

    /// Base mesh only (the face submodel on its own).
    pub fn forward_mesh_batch(&self, images: &[&Tensor<f32>]) -> Result<Vec<LandmarkSet>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| false)?;
        let x = g.constant(stack_images(images, self.config.input_size)?)?;
        let face = self.face_forward(&mut g, &b, x)?;
        Ok(rows(g.value(face.mesh)).into_iter().map(mesh_from_normalized).collect())
    }

    /// Static MACs per sample of the pieces of the unified model.
    pub fn cost_parts(&self) -> Result<UnifiedCost> {
        let c = self.config.crop_size as u64;
        let sampler = 4 * self.config.featmap_channels as u64 * c * c;
        let face_head = self.face.macs()?;
        Ok(UnifiedCost {
            backbone: self.backbone.macs()?,
            face_head,
            region_heads: self.regions.iter().map(Head::macs).collect::<Result<Vec<_>>>()?,
            sampler_per_region: sampler,
        })
    }

    pub fn blend_head(&self) -> &blend::BlendArch {
        &self.blend
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedCost {
    pub backbone: u64,
    pub face_head: u64,
    /// Lips, left eye, right eye.
    pub region_heads: Vec<u64>,
    pub sampler_per_region: u64,
}

impl UnifiedCost {
    pub fn total(&self) -> u64 {
        self.backbone + self.face_head + self.region_heads.iter().sum::<u64>() + 3 * self.sampler_per_region
    }
}

pub fn region_index(name: RegionName) -> usize {
    match name {
        RegionName::Lips => 0,
        RegionName::LeftEye => 1,
        RegionName::RightEye => 2,
    }
}

/// Independently trained region models of the cascade: each re-encodes a
/// `4·crop_size` crop of the original image. One eye model serves both eyes;
/// the right eye is mirrored into it.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub config: ModelConfig,
    pub topology: Topology,
    pub params: ParamStore,
    lips: (Stack, Head),
    eye: (Stack, Head),
}

/// Which cascade region model serves a region.
pub fn cascade_prefix(name: RegionName) -> &'static str {
    if name.is_eye() { "cascade_eye" } else { "cascade_lips" }
}

impl CascadeModel {
    pub fn build(config: ModelConfig, topology: Topology, rng: &mut Rng) -> Result<CascadeModel> {
        let mut m = CascadeModel::skeleton(config, topology)?;
        let mut params = ParamStore::new();
        for (enc, head) in [&m.lips, &m.eye] {
            enc.init(&mut params, rng);
            for s in head.stacks() {
                s.init(&mut params, rng);
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn skeleton(config: ModelConfig, topology: Topology) -> Result<CascadeModel> {
        config.validate()?;
        topology.validate()?;
        let side = 4 * config.crop_size;
        let mk = |name: RegionName| -> Result<(Stack, Head)> {
            let p = cascade_prefix(name);
            Ok((encoder(&format!("{p}.encoder"), side, &config)?, region_head(p, &config, &topology, name)?))
        };
        let lips = mk(RegionName::Lips)?;
        let eye = mk(RegionName::LeftEye)?;
        Ok(CascadeModel { config, topology, params: ParamStore::new(), lips, eye })
    }

    pub fn input_side(&self) -> usize {
        4 * self.config.crop_size
    }

    fn parts(&self, name: RegionName) -> &(Stack, Head) {
        if name.is_eye() { &self.eye } else { &self.lips }
    }

    /// θ actually used to sample the image for a region (mirrored for the right eye).
    pub fn sampling_theta(name: RegionName, theta: AffineTheta) -> AffineTheta {
        if name == RegionName::RightEye { theta.flipped_horizontal() } else { theta }
    }

    /// Region model on image crops: resample `[N,3,4c,4c]` from `images` at
    /// `theta`, encode, run the head.
    pub fn region_forward(
        &self,
        g: &mut Graph<f32>,
        b: &Bound,
        name: RegionName,
        images: NodeId,
        theta: NodeId,
    ) -> Result<RegionNodes> {
        let side = self.input_side();
        let grid = g.affine_grid(theta, side, side)?;
        let crop = g.bilinear_sample(images, grid)?;
        let (enc, head) = self.parts(name);
        let f = enc.forward(g, b, crop)?;
        let outs = head.forward(g, b, f)?;
        Ok(RegionNodes { contour: outs[0], iris: outs.get(1).copied() })
    }

    /// Region model MACs per call: image resampling, encoder, head.
    pub fn region_cost(&self, name: RegionName) -> Result<u64> {
        let s = self.input_side() as u64;
        let (enc, head) = self.parts(name);
        Ok(4 * 3 * s * s + enc.macs()? + head.macs()?)
    }
}

/// The cascade: the face model on the full image, then each region model on
/// its own crop of the original image.
pub fn forward_cascade_batch(face: &Model, cascade: &CascadeModel, images: &[&Tensor<f32>]) -> Result<Vec<AttentionMeshOutput>> {
    if face.topology != cascade.topology {
        return Err(Error::Topology(String::from("face and region models use different topologies")));
    }
    let mut g = Graph::new();
    let fb = face.params.bind(&mut g, |_| false)?;
    let cb = cascade.params.bind(&mut g, |_| false)?;
    let x = g.constant(stack_images(images, face.config.input_size)?)?;
    let fnodes = face.face_forward(&mut g, &fb, x)?;
    let mut encodes = 1;
    let crops = face.crops_from_mesh(g.value(fnodes.mesh), fnodes.theta.map(|t| g.value(t)))?;
    let mut region_vals = Vec::new();
    // sampling θ per region, used to map outputs back
    let mut used: Vec<Vec<AffineTheta>> = Vec::new();
    for (r, &name) in RegionName::ALL.iter().enumerate() {
        let thetas: Vec<AffineTheta> = crops.iter().map(|c| CascadeModel::sampling_theta(name, c[r].theta)).collect();
        let th = g.constant(theta_tensor(&thetas)?)?;
        region_vals.push(cascade.region_forward(&mut g, &cb, name, x, th)?);
        used.push(thetas);
        encodes += 1;
    }
    let n = images.len();
    let stats = ForwardStats { image_encodes: encodes, backbone_passes: 1, macs: g.macs() / n as u64 };
    let mesh_rows = rows(g.value(fnodes.mesh));
    let mut outs = Vec::with_capacity(n);
    for (i, mut crops_i) in crops.into_iter().enumerate() {
        for (r, c) in crops_i.iter_mut().enumerate() {
            c.theta = used[r][i];
        }
        let base = mesh_from_normalized(mesh_rows[i]);
        let local: Vec<LandmarkSet> =
            region_vals.iter().map(|rn| LandmarkSet::from_flat(rows(g.value(rn.contour))[i])).collect();
        let iris_local: Vec<LandmarkSet> = region_vals[1..]
            .iter()
            .map(|rn| rn.iris.map(|id| LandmarkSet::from_flat(rows(g.value(id))[i])).unwrap_or_default())
            .collect();
        outs.push(assemble(&face.topology, base, local, iris_local, crops_i, stats)?);
    }
    Ok(outs)
}

pub fn forward_cascade(face: &Model, cascade: &CascadeModel, image: &Tensor<f32>) -> Result<AttentionMeshOutput> {
    let mut v = forward_cascade_batch(face, cascade, &[image])?;
    Ok(v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::count_macs;

    fn desk() -> Model {
        Model::build(ModelConfig::desk(), Topology::desk(), &mut Rng::new(7)).unwrap()
    }

    fn frac_image(size: usize, seed: u64) -> Tensor<f32> {
        let mut t = Tensor::uniform(&[3, size, size], 0.5, &mut Rng::new(seed));
        t.data_mut().iter_mut().for_each(|v| *v += 0.5);
        t
    }

    #[test]
    fn desk_shapes_and_invariants() {
        let m = desk();
        assert!(m.param_count() > 0);
        let out = m.forward_unified(&Tensor::zeros(&[3, 64, 64])).unwrap();
        assert_eq!(out.base_mesh.len(), 68);
        assert_eq!(out.unified_mesh.len(), 78);
        assert!(out.unified_mesh.flat().iter().all(|v| v.is_finite()));
        let regions: Vec<usize> = m.topology.regions.iter().flat_map(|r| r.indices.clone()).collect();
        for i in 0..68 {
            if !regions.contains(&i) {
                assert_eq!(out.unified_mesh.points[i], out.base_mesh.points[i]);
            }
        }
        assert_eq!(out.stats.image_encodes, 1);
        assert_eq!(out.stats.backbone_passes, 1);
    }

    #[test]
    fn equal_seeds_equal_params() {
        assert_eq!(desk().params, desk().params);
    }

    #[test]
    fn deterministic_forward() {
        let m = desk();
        let im = frac_image(64, 1);
        assert_eq!(m.forward_unified(&im).unwrap(), m.forward_unified(&im).unwrap());
    }

    #[test]
    fn executed_macs_match_static_count() {
        let m = desk();
        let out = m.forward_unified(&frac_image(64, 2)).unwrap();
        let r = count_macs(&m.config, &m.topology).unwrap();
        assert_eq!(out.stats.macs, r.unified_total);
        let c = CascadeModel::build(m.config.clone(), m.topology.clone(), &mut Rng::new(8)).unwrap();
        let co = forward_cascade(&m, &c, &frac_image(64, 2)).unwrap();
        assert_eq!(co.stats.macs, r.cascade_total);
        assert_eq!(co.stats.image_encodes, 4);
        assert_eq!(co.base_mesh, out.base_mesh);
        assert_eq!(co.unified_mesh.len(), 78);
    }

    #[test]
    fn full_scale_counts() {
        let m = Model::build(ModelConfig::full(), Topology::full(), &mut Rng::new(1)).unwrap();
        let out = m.forward_unified(&frac_image(256, 3)).unwrap();
        assert_eq!(out.unified_mesh.len(), 478);
    }

    #[test]
    fn blend_head_starts_at_half() {
        let m = desk();
        let z = |n| LandmarkSet::new(vec![[0.0; 3]; n]);
        let c = m.blendshape_head(&[z(20), z(16), z(16)], &[z(5), z(5)]).unwrap();
        assert_eq!(c.mouth.len(), MOUTH_COEFFS);
        assert_eq!(c.left_eye.len(), EYE_COEFFS);
        assert!(c.mouth.iter().chain(&c.left_eye).chain(&c.right_eye).all(|&v| v == 0.5));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk();
        c.featmap_size = 12;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.eye_split_size = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.crop_size = 16;
        assert!(c.validate().is_err());
    }
}

//! Losses, crop augmentation and the two-phase schedule.
//!
//! Phase 1 trains every submodel on ground-truth crops with slight random
//! jitter. Phase 2 takes crops from the model's own base mesh and trains
//! again so the region heads adapt to them, with the face submodel at a
//! reduced rate. Both phases minimize
//! `w_mse · Σ MSE + w_contour · Σ contour loss` with Adam.

mod adam;
mod blend;
mod cascade;
mod unified;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{Adam, Grads, BETA1, BETA2, EPS};
pub use blend::{train_blend, BlendTrainConfig};
pub use cascade::train_cascade;
pub use unified::{train_phase1, train_phase2, TrainState};

use crate::error::{Error, Result};
use crate::eval::Nme;
use crate::geometry::{LandmarkSet, RegionCrop};
use crate::graph::{Graph, NodeId, Primitive};
use crate::network::Bound;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::Chain;

pub use crate::contour::contour_loss;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Augment {
    /// Radians, symmetric.
    pub rotation: f64,
    /// Fraction of the crop size, symmetric.
    pub scale: f64,
    /// Fraction of the crop size per axis, symmetric.
    pub translation: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Augment { rotation: 0.1, scale: 0.1, translation: 0.05 }
    }
}

impl Augment {
    pub const NONE: Augment = Augment { rotation: 0.0, scale: 0.0, translation: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay.
    pub lr_decay: f64,
    /// Learning-rate factor of the backbone and face head in phase 2.
    pub phase2_face_lr: f64,
    pub augment: Augment,
    pub w_mse: f64,
    pub w_contour: f64,
    /// Samples per contour; `None` uses each chain's node count.
    pub contour_k: Option<usize>,
    /// Let region losses reach the face head through the crop transform in phase 2.
    pub differentiable_crops: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs_phase1: 60,
            epochs_phase2: 10,
            learning_rate: 3e-3,
            lr_decay: 0.97,
            phase2_face_lr: 0.1,
            augment: Augment::default(),
            w_mse: 1.0,
            w_contour: 5.0,
            contour_k: None,
            differentiable_crops: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(String::from(m)));
        let a = &self.augment;
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(a.rotation >= 0.0 && a.scale >= 0.0 && a.translation >= 0.0) {
            return bad("augmentation ranges must be non-negative");
        }
        if a.scale >= 1.0 {
            return bad("scale jitter must stay below 1");
        }
        if !(self.w_mse >= 0.0 && self.w_contour >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.contour_k.is_some_and(|k| k < 2) {
            return bad("contour k must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.phase2_face_lr >= 0.0) {
            return bad("learning rate, decay and the phase-2 factor must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * num_traits::Float::powi(self.lr_decay, epoch as i32)
    }
}

/// Validation figures after an epoch: base mesh and unified output.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValMetrics {
    pub mesh: Nme,
    pub unified: Nme,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub val: Option<ValMetrics>,
}

/// Mean over points and the three coordinates of squared differences.
pub fn mse_landmark_loss(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Topology(alloc::format!("{} predicted points for {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Invalid(String::from("empty landmark set")));
    }
    let sum: f64 = pred
        .points
        .iter()
        .zip(&gt.points)
        .flat_map(|(p, q)| (0..3).map(move |k| f64::from(p[k]) - f64::from(q[k])))
        .map(|d| d * d)
        .sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// Random jitter of a crop: rotation, then scale, then a translation
/// relative to the unjittered size.
pub fn augment_crop(crop: &RegionCrop, aug: &Augment, rng: &mut Rng) -> RegionCrop {
    let da = rng.symmetric(aug.rotation);
    let ds = rng.symmetric(aug.scale);
    let dx = rng.symmetric(aug.translation);
    let dy = rng.symmetric(aug.translation);
    RegionCrop {
        center: [crop.center[0] + crop.size * dx, crop.center[1] + crop.size * dy],
        angle: crate::geometry::wrap_angle(crop.angle + da),
        size: crop.size * (1.0 + ds),
    }
}

// Graph helpers shared by the trainers.

pub(crate) struct LossTerms {
    terms: Vec<(NodeId, f64)>,
}

impl LossTerms {
    pub(crate) fn new() -> Self {
        LossTerms { terms: Vec::new() }
    }

    pub(crate) fn push(&mut self, node: NodeId, w: f64) {
        if w > 0.0 {
            self.terms.push((node, w));
        }
    }

    pub(crate) fn total(&self, g: &mut Graph<f32>) -> Result<NodeId> {
        g.weighted_sum(&self.terms)
    }
}

/// Contour losses of `chains` on `[N, P·3]` predictions against constant targets.
pub(crate) fn chain_losses(
    g: &mut Graph<f32>,
    pred: NodeId,
    target: NodeId,
    points: usize,
    chains: &[Chain],
    k: Option<usize>,
    terms: &mut LossTerms,
    w: f64,
) -> Result<()> {
    if w <= 0.0 || chains.is_empty() {
        return Ok(());
    }
    let n = g.value(pred).shape()[0];
    let p3 = g.reshape(pred, &[n, points, 3])?;
    let t3 = g.reshape(target, &[n, points, 3])?;
    for c in chains {
        let prim = Primitive::ResampleChain { ids: c.ids.clone(), k: k.unwrap_or(c.ids.len()), closed: c.closed };
        let rp = g.apply(prim.clone(), &[p3])?;
        let rt = g.apply(prim, &[t3])?;
        let l = g.mse(rp, rt)?;
        terms.push(l, w);
    }
    Ok(())
}

pub(crate) fn rows_tensor(rows: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let w = rows.first().map_or(0, Vec::len);
    Tensor::new(&[rows.len(), w], rows.concat())
}

/// Loss value and the gradients of every trainable bound parameter.
pub(crate) fn collect_grads(g: &mut Graph<f32>, b: &Bound, loss: NodeId) -> Result<(f64, Grads)> {
    let value = f64::from(g.value(loss).item());
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let mut grads = Vec::new();
    for (name, &id) in b.iter() {
        if let Some(gr) = g.grad(id) {
            grads.push((name.clone(), gr.to_vec()));
        }
    }
    Ok((value, grads))
}

/// Shuffled mini-batches of `0..n`.
pub(crate) fn batches(n: usize, size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

/// RNG stream for one phase of one training run.
pub(crate) fn phase_rng(seed: u64, stream: u64) -> Rng {
    Rng::for_item(seed, 0x7452_4149_4e00 + stream)
}

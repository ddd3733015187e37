//! Normalized mean error reports over a labelled set.
//!
//! All values are percentages. The overall figure uses the interocular
//! distance over the base mesh; lips use the lip corners over the lip
//! region; eyes average the two per-eye figures, each normalized by its
//! own corners. Iris points are not scored.

use alloc::string::String;
use alloc::vec::Vec;

use crate::cost::Variant;
use crate::error::{Error, Result};
use crate::geometry::{normalized_mean_error, LandmarkSet, Normalizer, RegionName};
#[allow(unused_imports)]
use num_traits::Float;

use crate::network::{forward_cascade_batch, BlendCoefficients, AttentionMeshOutput, CascadeModel, Model};
use crate::synth::Sample;
use crate::topology::Topology;

/// Images per forward batch during evaluation.
pub const EVAL_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Nme {
    pub all: f64,
    pub lips: f64,
    pub eyes: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub variant: Variant,
    pub model_id: String,
    pub nme_all: f64,
    pub nme_lips: f64,
    pub nme_eyes: f64,
    pub count: usize,
    pub per_sample: Vec<Nme>,
    /// Samples whose predicted crops fell back to an axis-aligned box.
    pub fallbacks: usize,
}

impl EvalReport {
    pub fn mean(&self) -> Nme {
        Nme { all: self.nme_all, lips: self.nme_lips, eyes: self.nme_eyes }
    }

    /// Mean of the lips and eyes figures.
    pub fn nme_regions(&self) -> f64 {
        (self.nme_lips + self.nme_eyes) / 2.0
    }
}

/// Scores one prediction (at least `base_count` points) against ground truth.
pub fn score(pred: &LandmarkSet, gt: &LandmarkSet, topo: &Topology) -> Result<Nme> {
    let base = topo.base_count;
    if pred.len() < base || gt.len() < base {
        return Err(Error::Topology(alloc::format!(
            "need {base} base points, got prediction {} and ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let p = pred.select(&(0..base).collect::<Vec<_>>());
    let g = gt.select(&(0..base).collect::<Vec<_>>());
    let [lo, ro] = topo.interocular;
    let all_ids: Vec<usize> = (0..base).collect();
    let all = normalized_mean_error(&p, &g, &all_ids, Normalizer::Interocular { left_outer: lo, right_outer: ro })?;
    let region = |name: RegionName| {
        let spec = topo.region(name);
        normalized_mean_error(&p, &g, &spec.indices, Normalizer::corners(spec))
    };
    let lips = region(RegionName::Lips)?;
    let eyes = (region(RegionName::LeftEye)? + region(RegionName::RightEye)?) / 2.0;
    Ok(Nme { all, lips, eyes })
}

/// Report from precomputed predictions.
pub fn evaluate_predictions(
    variant: Variant,
    model_id: &str,
    preds: &[LandmarkSet],
    gts: &[LandmarkSet],
    topo: &Topology,
) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Invalid(alloc::format!("{} predictions for {} samples", preds.len(), gts.len())));
    }
    let per_sample = preds.iter().zip(gts).map(|(p, g)| score(p, g, topo)).collect::<Result<Vec<_>>>()?;
    let n = per_sample.len() as f64;
    let mean = |f: fn(&Nme) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        variant,
        model_id: String::from(model_id),
        nme_all: mean(|s| s.all),
        nme_lips: mean(|s| s.lips),
        nme_eyes: mean(|s| s.eyes),
        count: per_sample.len(),
        per_sample,
        fallbacks: 0,
    })
}

fn batched<T>(
    samples: &[Sample],
    mut f: impl FnMut(&[&crate::tensor::Tensor<f32>]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        out.extend(f(&images)?);
    }
    Ok(out)
}

fn from_outputs(variant: Variant, model_id: &str, outs: &[AttentionMeshOutput], samples: &[Sample], topo: &Topology) -> Result<EvalReport> {
    let preds: Vec<LandmarkSet> = outs.iter().map(|o| o.unified_mesh.clone()).collect();
    let gts: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
    let mut r = evaluate_predictions(variant, model_id, &preds, &gts, topo)?;
    r.fallbacks = outs.iter().filter(|o| o.any_fallback()).count();
    Ok(r)
}

/// The face submodel's base mesh alone.
pub fn evaluate_mesh(model: &Model, samples: &[Sample], model_id: &str) -> Result<EvalReport> {
    let preds = batched(samples, |im| model.forward_mesh_batch(im))?;
    let gts: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
    evaluate_predictions(Variant::MeshOnly, model_id, &preds, &gts, &model.topology)
}

/// The unified model with crops from its own base mesh.
pub fn evaluate_unified(model: &Model, samples: &[Sample], model_id: &str) -> Result<EvalReport> {
    let outs = batched(samples, |im| model.forward_unified_batch(im))?;
    from_outputs(Variant::AttentionMesh, model_id, &outs, samples, &model.topology)
}

/// Base mesh and unified output from the same forward passes.
pub fn evaluate_unified_pair(model: &Model, samples: &[Sample], model_id: &str) -> Result<(EvalReport, EvalReport)> {
    let outs = batched(samples, |im| model.forward_unified_batch(im))?;
    let base: Vec<LandmarkSet> = outs.iter().map(|o| o.base_mesh.clone()).collect();
    let gts: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
    let mesh = evaluate_predictions(Variant::MeshOnly, model_id, &base, &gts, &model.topology)?;
    Ok((mesh, from_outputs(Variant::AttentionMesh, model_id, &outs, samples, &model.topology)?))
}

pub fn evaluate_cascade(face: &Model, cascade: &CascadeModel, samples: &[Sample], model_id: &str) -> Result<EvalReport> {
    let outs = batched(samples, |im| forward_cascade_batch(face, cascade, im))?;
    from_outputs(Variant::Cascade, model_id, &outs, samples, &face.topology)
}

/// Blend-shape coefficients of the unified model on each sample.
pub fn blend_predictions(model: &Model, samples: &[Sample]) -> Result<Vec<BlendCoefficients>> {
    let outs = batched(samples, |im| model.forward_unified_batch(im))?;
    outs.iter().map(|o| model.blendshapes(o)).collect()
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid(alloc::format!("pearson needs two equal series of 2+, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Invalid(String::from("pearson of a constant series")));
    }
    Ok(sab / Float::sqrt(saa * sbb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_indexed, SynthConfig};

    fn samples(n: u64) -> Vec<Sample> {
        let topo = Topology::desk();
        (0..n).map(|i| generate_indexed(11, i, &SynthConfig::default(), &topo)).collect()
    }

    #[test]
    fn ground_truth_scores_zero() {
        let topo = Topology::desk();
        let s = samples(5);
        let gts: Vec<_> = s.iter().map(|x| x.landmarks.clone()).collect();
        let r = evaluate_predictions(Variant::AttentionMesh, "gt", &gts, &gts, &topo).unwrap();
        assert_eq!((r.nme_all, r.nme_lips, r.nme_eyes, r.count), (0.0, 0.0, 0.0, 5));
    }

    #[test]
    fn shifted_prediction_matches_loop_oracle() {
        let topo = Topology::desk();
        let gt = samples(1).remove(0).landmarks;
        let mut pred = gt.clone();
        for p in pred.points.iter_mut() {
            p[0] += 0.01;
        }
        let s = score(&pred, &gt, &topo).unwrap();
        let dist = |a: usize, b: usize| {
            let (p, q) = (gt.points[a], gt.points[b]);
            (0..3).map(|k| f64::from(p[k] - q[k]).powi(2)).sum::<f64>().sqrt()
        };
        let shift = f64::from(gt.points[0][0] + 0.01) - f64::from(gt.points[0][0]);
        let io = dist(topo.interocular[0], topo.interocular[1]);
        assert!((s.all - 100.0 * shift / io).abs() < 1e-3);
        let l = topo.region(RegionName::Lips);
        assert!((s.lips - 100.0 * shift / dist(l.left_corner, l.right_corner)).abs() < 0.05);
    }

    #[test]
    fn pearson_of_linear_series() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&a, &[1.0; 4]).is_err());
    }

    #[test]
    fn empty_or_mismatched_sets_are_rejected() {
        let topo = Topology::desk();
        assert!(evaluate_predictions(Variant::MeshOnly, "x", &[], &[], &topo).is_err());
        let g = samples(1).remove(0).landmarks;
        let short = g.select(&[0, 1, 2]);
        assert!(score(&short, &g, &topo).is_err());
    }
}

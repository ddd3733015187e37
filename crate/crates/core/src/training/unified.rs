use alloc::vec::Vec;

use super::{
    augment_crop, batches, chain_losses, collect_grads, phase_rng, rows_tensor, Adam, EpochRecord, Grads, LossTerms,
    TrainConfig, ValMetrics,
};
use crate::error::{Error, Result};
use crate::eval::evaluate_unified_pair;
use crate::geometry::{map_global_to_region, region_from_landmarks, RegionName};
use crate::graph::{Graph, Primitive};
use crate::network::{mesh_to_normalized, stack_images, theta_tensor, CropInfo, Model, ParamStore};
use crate::rng::Rng;
use crate::spatial::{theta_from_crop, AffineTheta};
use crate::synth::Sample;

/// A model with its training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CropSource {
    /// Augmented crops from the ground truth.
    Truth,
    /// Crops from the model's own base-mesh prediction.
    Own,
}

/// Whether a parameter belongs to the face submodel (shared encoder and face head).
pub fn is_face_param(name: &str) -> bool {
    name.starts_with("backbone.") || name.starts_with("face.")
}

pub(crate) fn truth_crops(model_margin: f64, s: &Sample, topo: &crate::topology::Topology, aug: Option<(&super::Augment, &mut Rng)>) -> Result<Vec<CropInfo>> {
    let mut aug = aug;
    let mut out = Vec::with_capacity(3);
    for spec in &topo.regions {
        let mut crop = region_from_landmarks(&s.landmarks, spec, model_margin)?;
        if let Some((a, rng)) = aug.as_mut() {
            crop = augment_crop(&crop, a, rng);
        }
        let theta = theta_from_crop(&crop.to_normalized())?;
        out.push(CropInfo { crop, theta, fallback: false });
    }
    Ok(out)
}

fn unified_step(model: &Model, batch: &[&Sample], cfg: &TrainConfig, source: CropSource, rng: &mut Rng) -> Result<(f64, Grads)> {
    let topo = &model.topology;
    let base = topo.base_count;
    let n = batch.len();
    let margin = model.config.crop_margin;
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, |name| !name.starts_with("blend."))?;
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let x = g.constant(stack_images(&images, model.config.input_size)?)?;
    let face = model.face_forward(&mut g, &b, x)?;
    let base_ids: Vec<usize> = (0..base).collect();
    let target_rows: Vec<Vec<f32>> = batch.iter().map(|s| mesh_to_normalized(&s.landmarks.select(&base_ids))).collect();
    let target = g.constant(rows_tensor(&target_rows)?)?;
    let mut terms = LossTerms::new();
    let l = g.mse(face.mesh, target)?;
    terms.push(l, cfg.w_mse);
    chain_losses(&mut g, face.mesh, target, base, &topo.chains, cfg.contour_k, &mut terms, cfg.w_contour)?;

    let crops: Vec<Vec<CropInfo>> = match source {
        CropSource::Truth => batch
            .iter()
            .map(|s| truth_crops(margin, s, topo, Some((&cfg.augment, &mut *rng))))
            .collect::<Result<_>>()?,
        CropSource::Own => model.crops_from_mesh(g.value(face.mesh), face.theta.map(|t| g.value(t)))?,
    };
    if let Some(th) = face.theta {
        let rows = batch
            .iter()
            .map(|s| {
                let c = truth_crops(margin, s, topo, None)?;
                Ok(c.iter().flat_map(|ci| ci.theta.to_array().map(|v| v as f32)).collect())
            })
            .collect::<Result<Vec<Vec<f32>>>>()?;
        let t = g.constant(rows_tensor(&rows)?)?;
        let l = g.mse(th, t)?;
        terms.push(l, cfg.w_mse);
    }
    let mesh3 = g.reshape(face.mesh, &[n, base, 3])?;
    for (r, &name) in RegionName::ALL.iter().enumerate() {
        let spec = topo.region(name);
        let thetas: Vec<AffineTheta> = crops.iter().map(|c| c[r].theta).collect();
        let through_mesh = cfg.differentiable_crops && source == CropSource::Own && crops.iter().all(|c| !c[r].fallback);
        let theta = if through_mesh {
            let prim = Primitive::RegionTheta {
                ids: spec.indices.clone(),
                left: spec.left_corner,
                right: spec.right_corner,
                margin,
            };
            g.apply(prim, &[mesh3])?
        } else {
            g.constant(theta_tensor(&thetas)?)?
        };
        let nodes = model.region_forward(&mut g, &b, name, face.features, theta)?;
        let local = |ids: &[usize]| -> Result<Vec<Vec<f32>>> {
            batch.iter().zip(&thetas).map(|(s, t)| Ok(map_global_to_region(&s.landmarks.select(ids), t)?.flat())).collect()
        };
        let t = g.constant(rows_tensor(&local(&spec.indices)?)?)?;
        let l = g.mse(nodes.contour, t)?;
        terms.push(l, cfg.w_mse);
        let chains = topo.region_chains(name);
        chain_losses(&mut g, nodes.contour, t, spec.indices.len(), &chains, cfg.contour_k, &mut terms, cfg.w_contour)?;
        if let Some(iris) = nodes.iris {
            let t = g.constant(rows_tensor(&local(&topo.iris_ids(name))?)?)?;
            let l = g.mse(iris, t)?;
            terms.push(l, cfg.w_mse);
        }
    }
    let loss = terms.total(&mut g)?;
    collect_grads(&mut g, &b, loss)
}

/// One phase of Adam over shuffled mini-batches.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_phase<M>(
    target: &mut M,
    params: fn(&mut M) -> &mut ParamStore,
    phase: u8,
    epochs: usize,
    samples: &[Sample],
    cfg: &TrainConfig,
    lr_scale: &dyn Fn(&str) -> f64,
    step: &mut dyn FnMut(&M, &[&Sample], &[usize], &mut Rng) -> Result<(f64, Grads)>,
    validate: &mut dyn FnMut(&M) -> Result<Option<ValMetrics>>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid(alloc::string::String::from("training set is empty")));
    }
    let mut rng = phase_rng(cfg.seed, u64::from(phase));
    let mut opt = Adam::new();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = cfg.lr_at(epoch);
        let mut step_losses = Vec::new();
        for (bi, ids) in batches(samples.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let batch: Vec<&Sample> = ids.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = step(target, &batch, &ids, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { phase, epoch, batch: bi, samples: ids });
            }
            opt.update(params(target), &grads, |name| lr * lr_scale(name));
            step_losses.push(loss);
        }
        let train_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
        let val = validate(target)?;
        let rec = EpochRecord { phase, epoch, train_loss, step_losses, val };
        observer(&rec);
        records.push(rec);
    }
    Ok(records)
}

pub(crate) fn unified_val(model: &Model, val: &[Sample]) -> Result<Option<ValMetrics>> {
    if val.is_empty() {
        return Ok(None);
    }
    let (mesh, unified) = evaluate_unified_pair(model, val, "")?;
    Ok(Some(ValMetrics { mesh: mesh.mean(), unified: unified.mean() }))
}

fn model_params(m: &mut Model) -> &mut ParamStore {
    &mut m.params
}

/// Every submodel on augmented ground-truth crops.
pub fn train_phase1(
    model: Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState> {
    let mut model = model;
    let history = run_phase(
        &mut model,
        model_params,
        1,
        cfg.epochs_phase1,
        train,
        cfg,
        &|_| 1.0,
        &mut |m, batch, _, rng| unified_step(m, batch, cfg, CropSource::Truth, rng),
        &mut |m| unified_val(m, val),
        observer,
    )?;
    Ok(TrainState { model, history })
}

/// Region heads adapt to crops from the model's own base mesh; the face
/// submodel continues at `phase2_face_lr` times the rate.
pub fn train_phase2(
    state: TrainState,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState> {
    let TrainState { mut model, mut history } = state;
    let factor = cfg.phase2_face_lr;
    let records = run_phase(
        &mut model,
        model_params,
        2,
        cfg.epochs_phase2,
        train,
        cfg,
        &|name| if is_face_param(name) { factor } else { 1.0 },
        &mut |m, batch, _, rng| unified_step(m, batch, cfg, CropSource::Own, rng),
        &mut |m| unified_val(m, val),
        observer,
    )?;
    history.extend(records);
    Ok(TrainState { model, history })
}

#[cfg(test)]
pub(crate) fn unified_step_for_tests(m: &Model, batch: &[&Sample], cfg: &TrainConfig, rng: &mut Rng) -> (f64, Grads) {
    unified_step(m, batch, cfg, CropSource::Truth, rng).unwrap()
}

#[cfg(test)]
pub(crate) fn own_crop_step_for_tests(m: &Model, batch: &[&Sample], cfg: &TrainConfig, rng: &mut Rng) -> (f64, Grads) {
    unified_step(m, batch, cfg, CropSource::Own, rng).unwrap()
}

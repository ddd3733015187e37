use alloc::vec::Vec;

use super::unified::{run_phase, truth_crops};
use super::{chain_losses, collect_grads, rows_tensor, EpochRecord, Grads, LossTerms, TrainConfig, ValMetrics};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cascade, evaluate_mesh};
use crate::geometry::{map_global_to_region, RegionName};
use crate::graph::Graph;
use crate::network::{crop_for, stack_images, theta_tensor, CascadeModel, CropInfo, Model, ParamStore};
use crate::rng::Rng;
use crate::spatial::AffineTheta;
use crate::synth::Sample;

fn cascade_step(
    cascade: &CascadeModel,
    batch: &[&Sample],
    crops: &[Vec<CropInfo>],
    cfg: &TrainConfig,
) -> Result<(f64, Grads)> {
    let topo = &cascade.topology;
    let mut g = Graph::new();
    let b = cascade.params.bind(&mut g, |_| true)?;
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let x = g.constant(stack_images(&images, cascade.config.input_size)?)?;
    let mut terms = LossTerms::new();
    for (r, &name) in RegionName::ALL.iter().enumerate() {
        let spec = topo.region(name);
        let thetas: Vec<AffineTheta> = crops.iter().map(|c| CascadeModel::sampling_theta(name, c[r].theta)).collect();
        let th = g.constant(theta_tensor(&thetas)?)?;
        let nodes = cascade.region_forward(&mut g, &b, name, x, th)?;
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

fn cascade_params(m: &mut CascadeModel) -> &mut ParamStore {
    &mut m.params
}

/// Trains the cascade's region models: phase 1 on augmented ground-truth
/// crops, phase 2 on crops from `face`'s base mesh (which stays fixed).
pub fn train_cascade(
    face: &Model,
    cascade: CascadeModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(CascadeModel, Vec<EpochRecord>)> {
    if face.topology != cascade.topology {
        return Err(Error::Topology(alloc::string::String::from("face and region models use different topologies")));
    }
    let mut cascade = cascade;
    let margin = cascade.config.crop_margin;
    let topo = cascade.topology.clone();
    let mut validate = |c: &CascadeModel| -> Result<Option<ValMetrics>> {
        if val.is_empty() {
            return Ok(None);
        }
        let mesh = evaluate_mesh(face, val, "")?.mean();
        let unified = evaluate_cascade(face, c, val, "")?.mean();
        Ok(Some(ValMetrics { mesh, unified }))
    };
    let mut history = run_phase(
        &mut cascade,
        cascade_params,
        1,
        cfg.epochs_phase1,
        train,
        cfg,
        &|_| 1.0,
        &mut |c, batch, _, rng: &mut Rng| {
            let crops = batch
                .iter()
                .map(|s| truth_crops(margin, s, &topo, Some((&cfg.augment, &mut *rng))))
                .collect::<Result<Vec<_>>>()?;
            cascade_step(c, batch, &crops, cfg)
        },
        &mut validate,
        observer,
    )?;
    if cfg.epochs_phase2 > 0 {
        // the face model is frozen, so its crops are computed once
        let meshes: Vec<_> = train
            .chunks(crate::eval::EVAL_BATCH)
            .map(|ch| face.forward_mesh_batch(&ch.iter().map(|s| &s.image).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let own: Vec<Vec<CropInfo>> = meshes
            .iter()
            .map(|m| RegionName::ALL.iter().map(|&r| crop_for(m, &topo, r, margin)).collect())
            .collect::<Result<_>>()?;
        history.extend(run_phase(
            &mut cascade,
            cascade_params,
            2,
            cfg.epochs_phase2,
            train,
            cfg,
            &|_| 1.0,
            &mut |c, batch, ids, _| {
                let crops: Vec<Vec<CropInfo>> = ids.iter().map(|&i| own[i].clone()).collect();
                cascade_step(c, batch, &crops, cfg)
            },
            &mut validate,
            observer,
        )?);
    }
    Ok((cascade, history))
}

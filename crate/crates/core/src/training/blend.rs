use alloc::vec::Vec;

use super::{batches, collect_grads, phase_rng, rows_tensor, Adam};
use crate::error::{Error, Result};
use crate::eval::EVAL_BATCH;
use crate::graph::Graph;
use crate::network::{blend_inputs, Model, EYE_COEFFS, MOUTH_COEFFS};
use crate::synth::Sample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BlendTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BlendTrainConfig {
    fn default() -> Self {
        BlendTrainConfig { epochs: 60, batch_size: 32, learning_rate: 3e-3, seed: 1 }
    }
}

/// Supervised coefficients: mouth [openness, width], eye [openness, iris x, iris y].
pub const MOUTH_SUPERVISED: usize = 2;
pub const EYE_SUPERVISED: usize = 3;

fn padded(values: &[f64], width: usize) -> Vec<f32> {
    let mut v = alloc::vec![0f32; width];
    for (d, s) in v.iter_mut().zip(values) {
        *d = *s as f32;
    }
    v
}

fn mask(width: usize, on: usize, rows: usize) -> Result<Tensor<f32>> {
    let row: Vec<f32> = (0..width).map(|i| if i < on { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[rows, width], row.repeat(rows))
}

/// Fits the blend-shape head on the frozen unified model's crop-local
/// outputs against the generator's known expression parameters. Returns
/// the mean loss of every epoch.
pub fn train_blend(model: &mut Model, train: &[Sample], cfg: &BlendTrainConfig) -> Result<Vec<f64>> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Invalid(alloc::string::String::from("blend training needs samples and a positive batch size")));
    }
    let mut mouth_x = Vec::with_capacity(train.len());
    let mut eye_x = Vec::with_capacity(train.len());
    for chunk in train.chunks(EVAL_BATCH) {
        let imgs: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        for o in model.forward_unified_batch(&imgs)? {
            let (m, e) = blend_inputs(&o.region_local, &o.iris_local)?;
            mouth_x.push(m);
            eye_x.push(e);
        }
    }
    let targets: Vec<_> = train.iter().map(|s| s.params.blend_targets()).collect();
    let mut rng = phase_rng(cfg.seed, 3);
    let mut opt = Adam::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut losses = Vec::new();
        for ids in batches(train.len(), cfg.batch_size, &mut rng) {
            let n = ids.len();
            let mut g = Graph::new();
            let b = model.params.bind(&mut g, |name| name.starts_with("blend."))?;
            let mx = g.constant(rows_tensor(&ids.iter().map(|&i| mouth_x[i].clone()).collect::<Vec<_>>())?)?;
            let ex_rows: Vec<Vec<f32>> = ids.iter().flat_map(|&i| eye_x[i].iter().cloned()).collect();
            let ex = g.constant(rows_tensor(&ex_rows)?)?;
            let (mc, ec) = model.blend_forward(&mut g, &b, mx, ex)?;
            let mt: Vec<Vec<f32>> = ids.iter().map(|&i| padded(&targets[i].0, MOUTH_COEFFS)).collect();
            let et: Vec<Vec<f32>> = ids.iter().flat_map(|&i| targets[i].1.iter().map(|e| padded(e, EYE_COEFFS))).collect();
            let mm = g.constant(mask(MOUTH_COEFFS, MOUTH_SUPERVISED, n)?)?;
            let em = g.constant(mask(EYE_COEFFS, EYE_SUPERVISED, 2 * n)?)?;
            let mo = g.mul(mc, mm)?;
            let eo = g.mul(ec, em)?;
            let mt = g.constant(rows_tensor(&mt)?)?;
            let et = g.constant(rows_tensor(&et)?)?;
            let lm = g.mse(mo, mt)?;
            let le = g.mse(eo, et)?;
            let loss = g.add(lm, le)?;
            let (value, grads) = collect_grads(&mut g, &b, loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "blend training" });
            }
            opt.update(&mut model.params, &grads, |_| cfg.learning_rate);
            losses.push(value);
        }
        history.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(history)
}

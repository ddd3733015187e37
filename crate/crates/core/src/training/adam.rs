use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::network::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-7;

/// Named parameter gradients from one step.
pub type Grads = Vec<(String, Vec<f32>)>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update; `lr(name)` gives the learning rate of each parameter.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads, lr: impl Fn(&str) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let rate = lr(name);
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (alloc::vec![0.0; g.len()], alloc::vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = f64::from(gi);
                let mn = BETA1 * f64::from(*mi) + (1.0 - BETA1) * gi;
                let vn = BETA2 * f64::from(*vi) + (1.0 - BETA2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let upd = rate * (mn / c1) / ((vn / c2).sqrt() + EPS);
                *w = (f64::from(*w) - upd) as f32;
            }
        }
    }
}

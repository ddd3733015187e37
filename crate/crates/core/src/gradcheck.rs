//! Central finite-difference gradient checks on the 64-bit path.

use alloc::vec;
use alloc::vec::Vec;


#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::graph::{Graph, NodeId, Primitive};
use crate::rng::Rng;
use crate::spatial::lattice;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// (input position, element) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backward against central differences with step `h` for every
/// element of every input that requires a gradient. `f` builds a scalar
/// loss from the input nodes.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let numeric = numeric_gradient(inputs, h, &f)?;
    let mut report = GradReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (pos, id) in ids.iter().enumerate() {
        let Some(num) = &numeric[pos] else { continue };
        let analytic = g.grad(*id).map(<[f64]>::to_vec).unwrap_or_default();
        for (e, (&a, &n)) in analytic.iter().zip(num).enumerate() {
            let err = relative_error(a, n);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pos, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Central differences for every input that requires a gradient.
pub fn numeric_gradient<F>(inputs: &[Tensor<f64>], h: f64, f: &F) -> Result<Vec<Option<Vec<f64>>>>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids = ts.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for pos in 0..inputs.len() {
        if !inputs[pos].requires_grad() {
            out.push(None);
            continue;
        }
        let mut grad = Vec::with_capacity(inputs[pos].numel());
        for e in 0..inputs[pos].numel() {
            let x0 = inputs[pos].data()[e];
            work[pos].data_mut()[e] = x0 + h;
            let up = eval(&work)?;
            work[pos].data_mut()[e] = x0 - h;
            let down = eval(&work)?;
            work[pos].data_mut()[e] = x0;
            grad.push((up - down) / (2.0 * h));
        }
        out.push(Some(grad));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
}

const H: f64 = 1e-3;

fn rand_tensor(shape: &[usize], rng: &mut Rng, grad: bool) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng).with_requires_grad(grad)
}

// Random contraction weights so every output element matters.
fn weigh(g: &mut Graph<f64>, y: NodeId, rng: &mut Rng) -> Result<NodeId> {
    let w = g.constant(rand_tensor(&g.value(y).shape().to_vec(), rng, false))?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

// Some gradient entry is small but not structurally zero, so its relative
// error would measure truncation error of the difference quotient.
fn near_stationary(numeric: &[Option<Vec<f64>>]) -> bool {
    numeric.iter().flatten().flatten().any(|g| g.abs() > 1e-9 && g.abs() < 1e-2)
}

fn near_integer(p: f64, tol: f64) -> bool {
    (p - p.round()).abs() < tol
}

/// Gradient checks over every primitive with `cases` random inputs each.
/// Inputs are drawn in [-1, 1]; draws landing within reach of a kink
/// (PReLU at zero, texel lines, chain nodes, extreme-point ties) are redrawn,
/// as are chain and crop cases with a near-stationary gradient entry.
pub fn primitive_suite(cases: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mut screened = |name: &'static str,
                        rng: &mut Rng,
                        make: &mut dyn FnMut(&mut Rng) -> Option<Vec<Tensor<f64>>>,
                        f: &dyn Fn(&mut Graph<f64>, &[NodeId], &mut Rng) -> Result<NodeId>,
                        screen: bool|
     -> Result<()> {
        let mut worst: f64 = 0.0;
        let mut c = 0;
        while c < cases {
            let Some(inputs) = make(rng) else { continue };
            let wseed = rng.next_u64() ^ c as u64;
            let loss = |g: &mut Graph<f64>, ids: &[NodeId]| f(g, ids, &mut Rng::new(wseed));
            if screen && near_stationary(&numeric_gradient(&inputs, H, &loss)?) {
                continue;
            }
            let r = gradient_check(&inputs, H, loss)?;
            worst = worst.max(r.max_rel_error);
            c += 1;
        }
        out.push(SuiteEntry { name, cases, max_rel_error: worst });
        Ok(())
    };
    let mut run = |name, rng: &mut Rng, make: &mut dyn FnMut(&mut Rng) -> Option<Vec<Tensor<f64>>>, f: &dyn Fn(&mut Graph<f64>, &[NodeId], &mut Rng) -> Result<NodeId>| {
        screened(name, rng, make, f, false)
    };

    run(
        "conv2d",
        &mut rng,
        &mut |r| Some(vec![rand_tensor(&[1, 2, 6, 6], r, true), rand_tensor(&[3, 2, 3, 3], r, true), rand_tensor(&[3], r, true)]),
        &|g, ids, r| {
            let stride = 1 + (r.next_u64() % 2) as usize;
            let pad = (r.next_u64() % 2) as usize;
            let y = g.conv2d(ids[0], ids[1], Some(ids[2]), stride, pad)?;
            weigh(g, y, r)
        },
    )?;
    run(
        "depthwise_conv2d",
        &mut rng,
        &mut |r| Some(vec![rand_tensor(&[1, 3, 6, 6], r, true), rand_tensor(&[3, 1, 3, 3], r, true), rand_tensor(&[3], r, true)]),
        &|g, ids, r| {
            let stride = 1 + (r.next_u64() % 2) as usize;
            let y = g.depthwise_conv2d(ids[0], ids[1], Some(ids[2]), stride, 1)?;
            weigh(g, y, r)
        },
    )?;
    run(
        "prelu",
        &mut rng,
        &mut |r| {
            let x = rand_tensor(&[2, 3, 4], r, true);
            if x.data().iter().any(|v| v.abs() < 10.0 * H) {
                return None;
            }
            Some(vec![x, rand_tensor(&[3], r, true)])
        },
        &|g, ids, r| {
            let y = g.prelu(ids[0], ids[1])?;
            weigh(g, y, r)
        },
    )?;
    run("avg_pool2", &mut rng, &mut |r| Some(vec![rand_tensor(&[1, 2, 4, 6], r, true)]), &|g, ids, r| {
        let y = g.avg_pool2(ids[0])?;
        weigh(g, y, r)
    })?;
    run(
        "dense",
        &mut rng,
        &mut |r| Some(vec![rand_tensor(&[2, 5], r, true), rand_tensor(&[4, 5], r, true), rand_tensor(&[4], r, true)]),
        &|g, ids, r| {
            let y = g.dense(ids[0], ids[1], Some(ids[2]))?;
            weigh(g, y, r)
        },
    )?;
    let pair = |r: &mut Rng| Some(vec![rand_tensor(&[2, 3], r, true), rand_tensor(&[2, 3], r, true)]);
    run("add", &mut rng, &mut { pair }, &|g, ids, r| {
        let y = g.add(ids[0], ids[1])?;
        weigh(g, y, r)
    })?;
    run("sub", &mut rng, &mut { pair }, &|g, ids, r| {
        let y = g.sub(ids[0], ids[1])?;
        weigh(g, y, r)
    })?;
    run("mul", &mut rng, &mut { pair }, &|g, ids, r| {
        let y = g.mul(ids[0], ids[1])?;
        weigh(g, y, r)
    })?;
    run("mse", &mut rng, &mut { pair }, &|g, ids, _| g.mse(ids[0], ids[1]))?;
    run("scale", &mut rng, &mut |r| Some(vec![rand_tensor(&[2, 3], r, true)]), &|g, ids, r| {
        let y = g.scale(ids[0], -1.7)?;
        weigh(g, y, r)
    })?;
    run("sum", &mut rng, &mut |r| Some(vec![rand_tensor(&[5], r, true)]), &|g, ids, _| g.sum(ids[0]))?;
    run("mean", &mut rng, &mut |r| Some(vec![rand_tensor(&[5], r, true)]), &|g, ids, _| g.mean(ids[0]))?;
    run("sigmoid", &mut rng, &mut |r| Some(vec![rand_tensor(&[6], r, true)]), &|g, ids, r| {
        let x = g.scale(ids[0], 3.0)?;
        let y = g.sigmoid(x)?;
        weigh(g, y, r)
    })?;
    run("reshape", &mut rng, &mut |r| Some(vec![rand_tensor(&[2, 3], r, true)]), &|g, ids, r| {
        let y = g.reshape(ids[0], &[3, 2])?;
        weigh(g, y, r)
    })?;
    run(
        "concat",
        &mut rng,
        &mut |r| Some(vec![rand_tensor(&[2, 3], r, true), rand_tensor(&[2, 2], r, true)]),
        &|g, ids, r| {
            let y = g.concat(&[ids[0], ids[1]], 1)?;
            weigh(g, y, r)
        },
    )?;
    run("affine_grid", &mut rng, &mut |r| Some(vec![rand_tensor(&[2, 2, 3], r, true)]), &|g, ids, r| {
        let y = g.affine_grid(ids[0], 3, 4)?;
        weigh(g, y, r)
    })?;
    let (oh, ow, side) = (5usize, 5usize, 8usize);
    let sampler_inputs = move |r: &mut Rng, feat_grad: bool| -> Option<Vec<Tensor<f64>>> {
        let angle = r.symmetric(1.0);
        let s = r.range(0.4, 0.9);
        let t = [r.symmetric(0.4), r.symmetric(0.4)];
        let th = [s * angle.cos(), -s * angle.sin(), t[0], s * angle.sin(), s * angle.cos(), t[1]];
        let half = (side - 1) as f64 / 2.0;
        for i in 0..oh {
            for j in 0..ow {
                let (u, v) = (lattice::<f64>(j, ow), lattice::<f64>(i, oh));
                let x = th[0] * u + th[1] * v + th[2];
                let y = th[3] * u + th[4] * v + th[5];
                if near_integer((x + 1.0) * half, 5.0 * H * half) || near_integer((y + 1.0) * half, 5.0 * H * half) {
                    return None;
                }
            }
        }
        let theta = Tensor::new(&[1, 2, 3], th.to_vec()).ok()?.with_requires_grad(!feat_grad);
        Some(vec![rand_tensor(&[1, 4, side, side], r, feat_grad), theta])
    };
    let sample = move |g: &mut Graph<f64>, ids: &[NodeId], r: &mut Rng| -> Result<NodeId> {
        let grid = g.affine_grid(ids[1], oh, ow)?;
        let y = g.bilinear_sample(ids[0], grid)?;
        weigh(g, y, r)
    };
    run("bilinear_sample/features", &mut rng, &mut |r| sampler_inputs(r, true), &sample)?;
    run("bilinear_sample/theta", &mut rng, &mut |r| sampler_inputs(r, false), &sample)?;
    for (name, closed) in [("resample_chain/open", false), ("resample_chain/closed", true)] {
        let k = 7;
        screened(
            name,
            &mut rng,
            &mut |r| {
                // contour-like: jittered polygon around a circle (an arc when open)
                let span = if closed { 2.0 * core::f64::consts::PI } else { 3.0 };
                let mut p = rand_tensor(&[1, 6, 3], r, true);
                for i in 0..6 {
                    let a = span * (i as f64 + r.symmetric(0.2)) / 6.0;
                    let rad = 0.7 + r.symmetric(0.1);
                    p.data_mut()[i * 3] = rad * a.cos();
                    p.data_mut()[i * 3 + 1] = rad * a.sin();
                }
                let chain: Vec<[f64; 2]> = (0..6).map(|i| [p.data()[i * 3], p.data()[i * 3 + 1]]).collect();
                let segs = if closed { 6 } else { 5 };
                let mut cum = vec![0.0];
                for m in 0..segs {
                    let (a, b) = (chain[m], chain[(m + 1) % 6]);
                    let l = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    if l < 0.1 {
                        return None;
                    }
                    cum.push(cum[m] + l);
                }
                let total = cum[segs];
                let steps = if closed { k } else { k - 1 };
                for j in 1..steps {
                    let s = j as f64 / steps as f64 * total;
                    if cum.iter().any(|c| (s - c).abs() < 0.01 * total) {
                        return None;
                    }
                }
                Some(vec![p])
            },
            &|g, ids, r| {
                let y = g.apply(Primitive::ResampleChain { ids: (0..6).collect(), k, closed }, &[ids[0]])?;
                weigh(g, y, r)
            },
            true,
        )?;
    }
    screened(
        "region_theta",
        &mut rng,
        &mut |r| {
            let mut p = rand_tensor(&[1, 8, 3], r, true);
            // keep the corner axis well away from the atan2 branch cut
            let d = p.data_mut();
            d[0] = -0.9 + 0.2 * d[0].abs();
            d[3] = 0.9 - 0.2 * d[3].abs();
            let d = p.data();
            let angle = (d[4] - d[1]).atan2(d[3] - d[0]);
            let (sn, cs) = (angle.sin(), angle.cos());
            let xr: Vec<f64> = (0..8).map(|i| cs * d[i * 3] + sn * d[i * 3 + 1]).collect();
            let yr: Vec<f64> = (0..8).map(|i| -sn * d[i * 3] + cs * d[i * 3 + 1]).collect();
            let gap = |v: &[f64]| {
                let mut s = v.to_vec();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
                (s[1] - s[0]).min(s[s.len() - 1] - s[s.len() - 2])
            };
            let ext = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            if gap(&xr) < 0.02 || gap(&yr) < 0.02 || (ext(&xr) - ext(&yr)).abs() < 0.02 {
                return None;
            }
            Some(vec![p])
        },
        &|g, ids, r| {
            let y = g.apply(Primitive::RegionTheta { ids: (0..8).collect(), left: 0, right: 1, margin: 0.25 }, &[ids[0]])?;
            weigh(g, y, r)
        },
        true,
    )?;
    Ok(out)
}

//! Arc-length resampling of polygonal chains and the contour loss.
//!
//! An open chain is resampled at `k` points evenly spaced from the first node
//! to the last, both included. A closed chain is resampled at `k` points
//! evenly spaced over the full loop, starting at node 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ChainSample<T> {
    pub point: [T; 2],
    seg: usize,
    t: T,
    frac: T,
}

fn segments(nodes: usize, closed: bool) -> usize {
    if closed { nodes } else { nodes - 1 }
}

#[inline]
fn seg_end(m: usize, nodes: usize) -> usize {
    if m + 1 == nodes { 0 } else { m + 1 }
}

fn lengths<T: Scalar>(chain: &[[T; 2]], closed: bool) -> Vec<T> {
    (0..segments(chain.len(), closed))
        .map(|m| {
            let (a, b) = (chain[m], chain[seg_end(m, chain.len())]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            (dx * dx + dy * dy).sqrt()
        })
        .collect()
}

fn check(nodes: usize, k: usize) -> Result<()> {
    if nodes < 2 {
        return Err(Error::Contour(format!("chain needs at least 2 points, got {nodes}")));
    }
    if k < 2 {
        return Err(Error::Contour(format!("sample count k must be >= 2, got {k}")));
    }
    Ok(())
}

pub(crate) fn resample_fwd<T: Scalar>(chain: &[[T; 2]], k: usize, closed: bool) -> Result<Vec<ChainSample<T>>> {
    check(chain.len(), k)?;
    let len = lengths(chain, closed);
    let total = len.iter().fold(T::zero(), |a, &l| a + l);
    if !(total > T::epsilon()) {
        return Err(Error::Contour(format!("zero-length chain of {} points", chain.len())));
    }
    let steps = if closed { k } else { k - 1 };
    let nseg = len.len();
    let mut out = Vec::with_capacity(k);
    let (mut seg, mut cum) = (0usize, T::zero());
    for j in 0..k {
        let frac = T::count(j) / T::count(steps);
        let s = frac * total;
        while seg + 1 < nseg && (s > cum + len[seg] || len[seg] == T::zero()) {
            cum += len[seg];
            seg += 1;
        }
        let t = if len[seg] > T::zero() { ((s - cum) / len[seg]).max(T::zero()).min(T::one()) } else { T::zero() };
        let (a, b) = (chain[seg], chain[seg_end(seg, chain.len())]);
        let point = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        out.push(ChainSample { point, seg, t, frac });
    }
    Ok(out)
}

/// Vector-Jacobian product of the resampled points w.r.t. the chain nodes.
pub(crate) fn resample_bwd<T: Scalar>(chain: &[[T; 2]], k: usize, closed: bool, g: &[[T; 2]]) -> Result<Vec<[T; 2]>> {
    let samples = resample_fwd(chain, k, closed)?;
    let len = lengths(chain, closed);
    let n = chain.len();
    let mut gq = vec![[T::zero(); 2]; n];
    // gradient w.r.t. each segment length
    let mut glen = vec![T::zero(); len.len()];
    let mut g_total = T::zero();
    for (smp, gj) in samples.iter().zip(g) {
        let (i, t) = (smp.seg, smp.t);
        let (ia, ib) = (i, seg_end(i, n));
        let (a, b) = (chain[ia], chain[ib]);
        for d in 0..2 {
            gq[ia][d] += (T::one() - t) * gj[d];
            gq[ib][d] += t * gj[d];
        }
        if len[i] == T::zero() {
            continue;
        }
        let g_t = gj[0] * (b[0] - a[0]) + gj[1] * (b[1] - a[1]);
        let inv = g_t / len[i];
        // t = (frac * total - sum_{m<i} len_m) / len_i
        g_total += smp.frac * inv;
        for gl in &mut glen[..i] {
            *gl -= inv;
        }
        glen[i] -= t * inv;
    }
    for (m, gl) in glen.iter_mut().enumerate() {
        *gl += g_total;
        if len[m] == T::zero() {
            continue;
        }
        let (ia, ib) = (m, seg_end(m, n));
        let u = [(chain[ib][0] - chain[ia][0]) / len[m], (chain[ib][1] - chain[ia][1]) / len[m]];
        for d in 0..2 {
            gq[ib][d] += *gl * u[d];
            gq[ia][d] -= *gl * u[d];
        }
    }
    Ok(gq)
}

/// `k` arc-length-uniform points along a chain.
pub fn resample_chain(chain: &[[f64; 2]], k: usize, closed: bool) -> Result<Vec<[f64; 2]>> {
    Ok(resample_fwd(chain, k, closed)?.into_iter().map(|s| s.point).collect())
}

/// Mean squared error between the resamplings of two chains, averaged over
/// the `k` points and both coordinates.
pub fn contour_loss(pred: &[[f64; 2]], gt: &[[f64; 2]], k: usize, closed: bool) -> Result<f64> {
    let p = resample_chain(pred, k, closed)?;
    let q = resample_chain(gt, k, closed)?;
    let sum: f64 = p
        .iter()
        .zip(&q)
        .map(|(a, b)| {
            let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
            dx * dx + dy * dy
        })
        .sum();
    Ok(sum / (2 * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identical_chains_have_zero_loss() {
        let c = [[0.0, 0.0], [1.0, 0.5], [2.0, -0.3]];
        assert_eq!(contour_loss(&c, &c, 7, false).unwrap(), 0.0);
        assert_eq!(contour_loss(&c, &c, 7, true).unwrap(), 0.0);
    }

    #[test]
    fn collinear_insertion_is_invisible() {
        let c = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let d = [[0.0, 0.0], [0.25, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let a = resample_chain(&c, 9, false).unwrap();
        let b = resample_chain(&d, 9, false).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
        assert!(contour_loss(&c, &d, 9, false).unwrap() < 1e-12);
    }

    #[test]
    fn parallel_segments() {
        let d = 0.3;
        let a = [[0.0, 0.0], [1.0, 0.0]];
        let b = [[0.0, d], [1.0, d]];
        for k in 2..10 {
            let l = contour_loss(&a, &b, k, false).unwrap();
            assert!((l - d * d / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn open_endpoints_and_closed_start() {
        let c = [[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]];
        let open = resample_chain(&c, 3, false).unwrap();
        assert_eq!(open[0], [0.0, 0.0]);
        assert_eq!(open[2], [3.0, 4.0]);
        assert!((open[1][0] - 3.0).abs() < 1e-12 && (open[1][1] - 0.5).abs() < 1e-12);
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let closed = resample_chain(&sq, 8, true).unwrap();
        assert_eq!(closed[0], [0.0, 0.0]);
        assert!((closed[1][0] - 0.5).abs() < 1e-12);
        assert!((closed[7][1] - 0.5).abs() < 1e-12 && closed[7][0].abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(resample_chain(&[[0.0, 0.0]], 4, false).is_err());
        assert!(resample_chain(&[[0.0, 0.0], [0.0, 0.0]], 4, false).is_err());
        assert!(resample_chain(&[[0.0, 0.0], [1.0, 0.0]], 1, false).is_err());
    }

    #[test]
    fn zero_length_segments_are_skipped() {
        let c = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let r = resample_chain(&c, 5, false).unwrap();
        for (j, p) in r.iter().enumerate() {
            assert!((p[0] - j as f64 / 4.0).abs() < 1e-12);
        }
        let mut rng = Rng::new(1);
        let g: Vec<[f64; 2]> = (0..5).map(|_| [rng.normal(), rng.normal()]).collect();
        let gq = resample_bwd(&c, 5, false, &g).unwrap();
        assert!(gq.iter().all(|v| v[0].is_finite() && v[1].is_finite()));
    }
}

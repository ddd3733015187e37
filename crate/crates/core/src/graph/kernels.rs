use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Primitive;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{contour, geometry, spatial};

type Grads<T> = Vec<Option<Vec<T>>>;

fn arity(op: &'static str, inputs: usize, lo: usize, hi: usize) -> Result<()> {
    if inputs < lo || inputs > hi {
        return Err(Error::shape(op, format!("expected {lo}..={hi} inputs, got {inputs}")));
    }
    Ok(())
}

fn rank(op: &'static str, what: &str, t: &Tensor<impl Scalar>, r: usize) -> Result<()> {
    if t.rank() != r {
        return Err(Error::shape(op, format!("{what} must be rank {r}, got shape {:?}", t.shape())));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("operands {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Output positions `o` with `0 <= o*stride + k - pad < in_len`, as a half-open range.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k { ((in_len - 1 + pad - k) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_geom(
    op: &'static str,
    x: &Tensor<impl Scalar>,
    w: &Tensor<impl Scalar>,
    b: Option<&Tensor<impl Scalar>>,
    stride: usize,
    pad: usize,
    depthwise: bool,
) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::attr(op, "stride must be >= 1"));
    }
    rank(op, "input", x, 4)?;
    rank(op, "kernel", w, 4)?;
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if depthwise {
        if co != ci || wci != 1 {
            return Err(Error::shape(
                op,
                format!("kernel {:?} must be [{ci},1,k,k] for input channels {ci}", w.shape()),
            ));
        }
    } else if wci != ci {
        return Err(Error::shape(
            op,
            format!("kernel input channels {wci} != input channels {ci} (input {:?})", x.shape()),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [co] {
            return Err(Error::shape(op, format!("bias {:?} must be [{co}]", b.shape())));
        }
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(Error::shape(
            op,
            format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, wd + 2 * pad),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    Ok(ConvGeom { n, ci, h, w: wd, co, kh, kw, oh, ow, stride, pad })
}

// One input plane times one kernel plane, accumulated into one output plane.
#[inline]
fn conv_plane_fwd<T: Scalar>(g: &ConvGeom, xin: &[T], k: &[T], out: &mut [T]) {
    for a in 0..g.kh {
        let (oh_lo, oh_hi) = valid_range(a, g.pad, g.stride, g.h, g.oh);
        for b in 0..g.kw {
            let wv = k[a * g.kw + b];
            if wv == T::zero() {
                continue;
            }
            let (ow_lo, ow_hi) = valid_range(b, g.pad, g.stride, g.w, g.ow);
            if ow_lo >= ow_hi {
                continue;
            }
            for o in oh_lo..oh_hi {
                let ih = o * g.stride + a - g.pad;
                let row_out = &mut out[o * g.ow + ow_lo..o * g.ow + ow_hi];
                let base = ih * g.w + ow_lo * g.stride + b - g.pad;
                if g.stride == 1 {
                    let row_in = &xin[base..base + row_out.len()];
                    for (y, &x) in row_out.iter_mut().zip(row_in) {
                        *y += wv * x;
                    }
                } else {
                    for (i, y) in row_out.iter_mut().enumerate() {
                        *y += wv * xin[base + i * g.stride];
                    }
                }
            }
        }
    }
}

#[inline]
fn conv_plane_bwd<T: Scalar>(
    g: &ConvGeom,
    xin: &[T],
    k: &[T],
    gout: &[T],
    gx: Option<&mut [T]>,
    gk: Option<&mut [T]>,
) {
    let mut gx = gx;
    let mut gk = gk;
    for a in 0..g.kh {
        let (oh_lo, oh_hi) = valid_range(a, g.pad, g.stride, g.h, g.oh);
        for b in 0..g.kw {
            let (ow_lo, ow_hi) = valid_range(b, g.pad, g.stride, g.w, g.ow);
            if ow_lo >= ow_hi {
                continue;
            }
            let wv = k[a * g.kw + b];
            let mut acc = T::zero();
            for o in oh_lo..oh_hi {
                let ih = o * g.stride + a - g.pad;
                let row_g = &gout[o * g.ow + ow_lo..o * g.ow + ow_hi];
                let base = ih * g.w + ow_lo * g.stride + b - g.pad;
                if gk.is_some() {
                    for (i, &gv) in row_g.iter().enumerate() {
                        acc += gv * xin[base + i * g.stride];
                    }
                }
                if let Some(gx) = gx.as_deref_mut() {
                    for (i, &gv) in row_g.iter().enumerate() {
                        gx[base + i * g.stride] += wv * gv;
                    }
                }
            }
            if let Some(gk) = gk.as_deref_mut() {
                gk[a * g.kw + b] += acc;
            }
        }
    }
}

fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, depthwise: bool) -> Vec<T> {
    let (plane_in, plane_out, ksz) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut out = vec![T::zero(); g.n * g.co * plane_out];
    for n in 0..g.n {
        for co in 0..g.co {
            let o = &mut out[(n * g.co + co) * plane_out..(n * g.co + co + 1) * plane_out];
            if let Some(b) = b {
                o.iter_mut().for_each(|v| *v = b[co]);
            }
            if depthwise {
                let xin = &x[(n * g.ci + co) * plane_in..(n * g.ci + co + 1) * plane_in];
                conv_plane_fwd(g, xin, &w[co * ksz..(co + 1) * ksz], o);
            } else {
                for ci in 0..g.ci {
                    let xin = &x[(n * g.ci + ci) * plane_in..(n * g.ci + ci + 1) * plane_in];
                    let k = &w[(co * g.ci + ci) * ksz..(co * g.ci + ci + 1) * ksz];
                    conv_plane_fwd(g, xin, k, o);
                }
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    need: &[bool],
    depthwise: bool,
) -> Grads<T> {
    let (plane_in, plane_out, ksz) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut gx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut gb = need.get(2).copied().unwrap_or(false).then(|| vec![T::zero(); g.co]);
    for n in 0..g.n {
        for co in 0..g.co {
            let go = &gout[(n * g.co + co) * plane_out..(n * g.co + co + 1) * plane_out];
            if let Some(gb) = gb.as_mut() {
                gb[co] += go.iter().fold(T::zero(), |a, &v| a + v);
            }
            let cis: core::ops::Range<usize> = if depthwise { co..co + 1 } else { 0..g.ci };
            for ci in cis {
                let kidx = if depthwise { co } else { co * g.ci + ci };
                let xin = &x[(n * g.ci + ci) * plane_in..(n * g.ci + ci + 1) * plane_in];
                let k = &w[kidx * ksz..(kidx + 1) * ksz];
                let gxi = gx.as_mut().map(|gx| &mut gx[(n * g.ci + ci) * plane_in..(n * g.ci + ci + 1) * plane_in]);
                let gki = gw.as_mut().map(|gw| &mut gw[kidx * ksz..(kidx + 1) * ksz]);
                conv_plane_bwd(g, xin, k, go, gxi, gki);
            }
        }
    }
    let mut res = vec![gx, gw];
    if need.len() > 2 {
        res.push(gb);
    }
    res
}

fn channel_geom(op: &'static str, x: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::shape(op, format!("input must be at least [N,C], got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    let inner = x.shape()[2..].iter().product::<usize>();
    Ok((n, c, inner))
}

fn concat_geom(op: &'static str, parts: &[&Tensor<impl Scalar>], axis: usize) -> Result<(Vec<usize>, usize, usize)> {
    if parts.is_empty() {
        return Err(Error::shape(op, "no inputs"));
    }
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(Error::attr(op, format!("axis {axis} out of range for rank {}", first.len())));
    }
    let mut shape = first.to_vec();
    shape[axis] = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
            return Err(Error::shape(op, format!("{s:?} incompatible with {first:?} along axis {axis}")));
        }
        shape[axis] += s[axis];
    }
    let outer = first[..axis].iter().product::<usize>();
    let inner = first[axis + 1..].iter().product::<usize>();
    Ok((shape, outer, inner))
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(super) fn forward<T: Scalar>(prim: &Primitive, ins: &[&Tensor<T>]) -> Result<(Tensor<T>, u64)> {
    let op = prim.name();
    match prim {
        Primitive::Conv2d { stride, pad } | Primitive::DepthwiseConv2d { stride, pad } => {
            arity(op, ins.len(), 2, 3)?;
            let depthwise = matches!(prim, Primitive::DepthwiseConv2d { .. });
            let g = conv_geom(op, ins[0], ins[1], ins.get(2).copied(), *stride, *pad, depthwise)?;
            let out = conv_forward(&g, ins[0].data(), ins[1].data(), ins.get(2).map(|b| b.data()), depthwise);
            let per_out = (g.kh * g.kw * if depthwise { 1 } else { g.ci }) as u64;
            let macs = (g.n * g.co * g.oh * g.ow) as u64 * per_out;
            Ok((Tensor::new(&[g.n, g.co, g.oh, g.ow], out)?, macs))
        }
        Primitive::Prelu => {
            arity(op, ins.len(), 2, 2)?;
            let (n, c, inner) = channel_geom(op, ins[0])?;
            if ins[1].shape() != [c] {
                return Err(Error::shape(op, format!("slope {:?} must be [{c}]", ins[1].shape())));
            }
            let (x, a) = (ins[0].data(), ins[1].data());
            let mut out = x.to_vec();
            for ni in 0..n {
                for ci in 0..c {
                    let s = &mut out[(ni * c + ci) * inner..(ni * c + ci + 1) * inner];
                    for v in s.iter_mut() {
                        if *v < T::zero() {
                            *v *= a[ci];
                        }
                    }
                }
            }
            Ok((Tensor::new(ins[0].shape(), out)?, 0))
        }
        Primitive::AvgPool2 => {
            arity(op, ins.len(), 1, 1)?;
            rank(op, "input", ins[0], 4)?;
            let s = ins[0].shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::shape(op, format!("spatial dims {h}x{w} must be even")));
            }
            let (oh, ow) = (h / 2, w / 2);
            let x = ins[0].data();
            let quarter = T::lit(0.25);
            let mut out = vec![T::zero(); n * c * oh * ow];
            for p in 0..n * c {
                for i in 0..oh {
                    for j in 0..ow {
                        let b = p * h * w + 2 * i * w + 2 * j;
                        out[p * oh * ow + i * ow + j] = (x[b] + x[b + 1] + x[b + w] + x[b + w + 1]) * quarter;
                    }
                }
            }
            Ok((Tensor::new(&[n, c, oh, ow], out)?, 0))
        }
        Primitive::Dense => {
            arity(op, ins.len(), 2, 3)?;
            rank(op, "input", ins[0], 2)?;
            rank(op, "weight", ins[1], 2)?;
            let (n, fin) = (ins[0].shape()[0], ins[0].shape()[1]);
            let (fout, win) = (ins[1].shape()[0], ins[1].shape()[1]);
            if win != fin {
                return Err(Error::shape(
                    op,
                    format!("weight {:?} expects {win} features, input {:?} has {fin}", ins[1].shape(), ins[0].shape()),
                ));
            }
            if let Some(b) = ins.get(2) {
                if b.shape() != [fout] {
                    return Err(Error::shape(op, format!("bias {:?} must be [{fout}]", b.shape())));
                }
            }
            let (x, w) = (ins[0].data(), ins[1].data());
            let mut out = vec![T::zero(); n * fout];
            for ni in 0..n {
                let xr = &x[ni * fin..(ni + 1) * fin];
                for o in 0..fout {
                    let wr = &w[o * fin..(o + 1) * fin];
                    let mut acc = ins.get(2).map_or(T::zero(), |b| b.data()[o]);
                    for (a, b) in xr.iter().zip(wr) {
                        acc += *a * *b;
                    }
                    out[ni * fout + o] = acc;
                }
            }
            Ok((Tensor::new(&[n, fout], out)?, (n * fin * fout) as u64))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            arity(op, ins.len(), 2, 2)?;
            same_shape(op, ins[0], ins[1])?;
            let f = |a: T, b: T| match prim {
                Primitive::Add => a + b,
                Primitive::Sub => a - b,
                _ => a * b,
            };
            let out = ins[0].data().iter().zip(ins[1].data()).map(|(&a, &b)| f(a, b)).collect();
            Ok((Tensor::new(ins[0].shape(), out)?, 0))
        }
        Primitive::Scale(s) => {
            arity(op, ins.len(), 1, 1)?;
            let s = T::lit(*s);
            let out = ins[0].data().iter().map(|&v| v * s).collect();
            Ok((Tensor::new(ins[0].shape(), out)?, 0))
        }
        Primitive::Sum | Primitive::Mean => {
            arity(op, ins.len(), 1, 1)?;
            let mut total = ins[0].data().iter().fold(T::zero(), |a, &v| a + v);
            if matches!(prim, Primitive::Mean) {
                total /= T::count(ins[0].numel());
            }
            Ok((Tensor::scalar(total), 0))
        }
        Primitive::Sigmoid => {
            arity(op, ins.len(), 1, 1)?;
            let out = ins[0].data().iter().map(|&v| sigmoid(v)).collect();
            Ok((Tensor::new(ins[0].shape(), out)?, 0))
        }
        Primitive::Reshape(shape) => {
            arity(op, ins.len(), 1, 1)?;
            Ok((ins[0].clone().with_requires_grad(false).reshape(shape)?, 0))
        }
        Primitive::Concat { axis } => {
            let (shape, outer, inner) = concat_geom(op, ins, *axis)?;
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in ins {
                    let chunk = p.shape()[*axis] * inner;
                    out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Ok((Tensor::new(&shape, out)?, 0))
        }
        Primitive::AffineGrid { out_h, out_w } => {
            arity(op, ins.len(), 1, 1)?;
            let th = ins[0];
            if th.rank() != 3 || th.shape()[1..] != [2, 3] {
                return Err(Error::shape(op, format!("theta {:?} must be [N,2,3]", th.shape())));
            }
            if *out_h < 2 || *out_w < 2 {
                return Err(Error::attr(op, format!("output {out_h}x{out_w} must be at least 2x2")));
            }
            let n = th.shape()[0];
            let out = spatial::affine_grid_fwd(th.data(), n, *out_h, *out_w);
            Ok((Tensor::new(&[n, *out_h, *out_w, 2], out)?, 0))
        }
        Primitive::BilinearSample => {
            arity(op, ins.len(), 2, 2)?;
            let (f, grid) = (ins[0], ins[1]);
            rank(op, "features", f, 4)?;
            rank(op, "grid", grid, 4)?;
            let (n, c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]);
            if grid.shape()[0] != n || grid.shape()[3] != 2 {
                return Err(Error::shape(op, format!("grid {:?} must be [{n},h,w,2]", grid.shape())));
            }
            if h < 2 || w < 2 {
                return Err(Error::shape(op, format!("feature map {h}x{w} must be at least 2x2")));
            }
            let (oh, ow) = (grid.shape()[1], grid.shape()[2]);
            let out = spatial::bilinear_fwd(f.data(), grid.data(), n, c, h, w, oh * ow);
            Ok((Tensor::new(&[n, c, oh, ow], out)?, (4 * n * c * oh * ow) as u64))
        }
        Primitive::Mse => {
            arity(op, ins.len(), 2, 2)?;
            same_shape(op, ins[0], ins[1])?;
            let mut acc = T::zero();
            for (&p, &t) in ins[0].data().iter().zip(ins[1].data()) {
                let d = p - t;
                acc += d * d;
            }
            Ok((Tensor::scalar(acc / T::count(ins[0].numel())), 0))
        }
        Primitive::ResampleChain { ids, k, closed } => {
            arity(op, ins.len(), 1, 1)?;
            let pts = ins[0];
            if pts.rank() != 3 || pts.shape()[2] != 3 {
                return Err(Error::shape(op, format!("points {:?} must be [N,P,3]", pts.shape())));
            }
            let (n, p) = (pts.shape()[0], pts.shape()[1]);
            check_ids(op, ids, p)?;
            let mut out = Vec::with_capacity(n * k * 2);
            for ni in 0..n {
                let chain = gather_xy(&pts.data()[ni * p * 3..(ni + 1) * p * 3], ids);
                let res = contour::resample_fwd(&chain, *k, *closed)?;
                for s in &res {
                    out.push(s.point[0]);
                    out.push(s.point[1]);
                }
            }
            Ok((Tensor::new(&[n, *k, 2], out)?, 0))
        }
        Primitive::RegionTheta { ids, left, right, margin } => {
            arity(op, ins.len(), 1, 1)?;
            let pts = ins[0];
            if pts.rank() != 3 || pts.shape()[2] != 3 {
                return Err(Error::shape(op, format!("points {:?} must be [N,P,3]", pts.shape())));
            }
            let (n, p) = (pts.shape()[0], pts.shape()[1]);
            check_ids(op, ids, p)?;
            check_ids(op, &[*left, *right], p)?;
            let mut out = Vec::with_capacity(n * 6);
            for ni in 0..n {
                let d = &pts.data()[ni * p * 3..(ni + 1) * p * 3];
                let fit = geometry::fit_crop(d, ids, *left, *right, T::lit(*margin))?;
                out.extend_from_slice(&fit.theta());
            }
            Ok((Tensor::new(&[n, 2, 3], out)?, 0))
        }
    }
}

fn check_ids(op: &'static str, ids: &[usize], count: usize) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= count) {
        return Err(Error::attr(op, format!("point id {bad} out of range for {count} points")));
    }
    Ok(())
}

fn gather_xy<T: Scalar>(pts: &[T], ids: &[usize]) -> Vec<[T; 2]> {
    ids.iter().map(|&i| [pts[i * 3], pts[i * 3 + 1]]).collect()
}

pub(super) fn backward<T: Scalar>(
    prim: &Primitive,
    ins: &[&Tensor<T>],
    out: &Tensor<T>,
    gout: &[T],
    need: &[bool],
) -> Result<Grads<T>> {
    let op = prim.name();
    let none = || -> Grads<T> { (0..ins.len()).map(|_| None).collect() };
    Ok(match prim {
        Primitive::Conv2d { stride, pad } | Primitive::DepthwiseConv2d { stride, pad } => {
            let depthwise = matches!(prim, Primitive::DepthwiseConv2d { .. });
            let g = conv_geom(op, ins[0], ins[1], ins.get(2).copied(), *stride, *pad, depthwise)?;
            conv_backward(&g, ins[0].data(), ins[1].data(), gout, need, depthwise)
        }
        Primitive::Prelu => {
            let (n, c, inner) = channel_geom(op, ins[0])?;
            let (x, a) = (ins[0].data(), ins[1].data());
            let mut gx = need[0].then(|| vec![T::zero(); x.len()]);
            let mut ga = need[1].then(|| vec![T::zero(); c]);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * inner;
                    for i in base..base + inner {
                        let pos = x[i] >= T::zero();
                        if let Some(gx) = gx.as_mut() {
                            gx[i] = if pos { gout[i] } else { gout[i] * a[ci] };
                        }
                        if let Some(ga) = ga.as_mut() {
                            if !pos {
                                ga[ci] += gout[i] * x[i];
                            }
                        }
                    }
                }
            }
            vec![gx, ga]
        }
        Primitive::AvgPool2 => {
            let s = ins[0].shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let quarter = T::lit(0.25);
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = gout[p * oh * ow + i * ow + j] * quarter;
                        let b = p * h * w + 2 * i * w + 2 * j;
                        gx[b] = gv;
                        gx[b + 1] = gv;
                        gx[b + w] = gv;
                        gx[b + w + 1] = gv;
                    }
                }
            }
            vec![Some(gx)]
        }
        Primitive::Dense => {
            let (n, fin) = (ins[0].shape()[0], ins[0].shape()[1]);
            let fout = ins[1].shape()[0];
            let (x, w) = (ins[0].data(), ins[1].data());
            let gx = need[0].then(|| {
                let mut gx = vec![T::zero(); n * fin];
                for ni in 0..n {
                    let gr = &mut gx[ni * fin..(ni + 1) * fin];
                    for o in 0..fout {
                        let gv = gout[ni * fout + o];
                        if gv == T::zero() {
                            continue;
                        }
                        for (g, &wv) in gr.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                            *g += gv * wv;
                        }
                    }
                }
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = vec![T::zero(); fout * fin];
                for ni in 0..n {
                    let xr = &x[ni * fin..(ni + 1) * fin];
                    for o in 0..fout {
                        let gv = gout[ni * fout + o];
                        for (g, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                            *g += gv * xv;
                        }
                    }
                }
                gw
            });
            let mut res = vec![gx, gw];
            if ins.len() > 2 {
                res.push(need[2].then(|| {
                    let mut gb = vec![T::zero(); fout];
                    for ni in 0..n {
                        for o in 0..fout {
                            gb[o] += gout[ni * fout + o];
                        }
                    }
                    gb
                }));
            }
            res
        }
        Primitive::Add => vec![need[0].then(|| gout.to_vec()), need[1].then(|| gout.to_vec())],
        Primitive::Sub => vec![need[0].then(|| gout.to_vec()), need[1].then(|| gout.iter().map(|&g| -g).collect())],
        Primitive::Mul => {
            let (a, b) = (ins[0].data(), ins[1].data());
            vec![
                need[0].then(|| gout.iter().zip(b).map(|(&g, &v)| g * v).collect()),
                need[1].then(|| gout.iter().zip(a).map(|(&g, &v)| g * v).collect()),
            ]
        }
        Primitive::Scale(s) => {
            let s = T::lit(*s);
            vec![Some(gout.iter().map(|&g| g * s).collect())]
        }
        Primitive::Sum => vec![Some(vec![gout[0]; ins[0].numel()])],
        Primitive::Mean => vec![Some(vec![gout[0] / T::count(ins[0].numel()); ins[0].numel()])],
        Primitive::Sigmoid => {
            vec![Some(out.data().iter().zip(gout).map(|(&y, &g)| g * y * (T::one() - y)).collect())]
        }
        Primitive::Reshape(_) => vec![Some(gout.to_vec())],
        Primitive::Concat { axis } => {
            let (_, outer, inner) = concat_geom(op, ins, *axis)?;
            let mut res = none();
            let total: usize = ins.iter().map(|p| p.shape()[*axis] * inner).sum();
            let mut offset = 0;
            for (pi, p) in ins.iter().enumerate() {
                let chunk = p.shape()[*axis] * inner;
                if need[pi] {
                    let mut g = Vec::with_capacity(p.numel());
                    for o in 0..outer {
                        g.extend_from_slice(&gout[o * total + offset..o * total + offset + chunk]);
                    }
                    res[pi] = Some(g);
                }
                offset += chunk;
            }
            res
        }
        Primitive::AffineGrid { out_h, out_w } => {
            let n = ins[0].shape()[0];
            vec![Some(spatial::affine_grid_bwd(gout, n, *out_h, *out_w))]
        }
        Primitive::BilinearSample => {
            let (f, grid) = (ins[0], ins[1]);
            let (n, c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]);
            let cells = grid.shape()[1] * grid.shape()[2];
            let (gf, gg) = spatial::bilinear_bwd(f.data(), grid.data(), gout, n, c, h, w, cells, need[0], need[1]);
            vec![gf, gg]
        }
        Primitive::Mse => {
            let scale = T::lit(2.0) / T::count(ins[0].numel());
            let diff: Vec<T> =
                ins[0].data().iter().zip(ins[1].data()).map(|(&p, &t)| (p - t) * scale * gout[0]).collect();
            let neg = need[1].then(|| diff.iter().map(|&d| -d).collect());
            vec![need[0].then_some(diff), neg]
        }
        Primitive::ResampleChain { ids, k, closed } => {
            let pts = ins[0];
            let (n, p) = (pts.shape()[0], pts.shape()[1]);
            let mut gp = vec![T::zero(); pts.numel()];
            for ni in 0..n {
                let chain = gather_xy(&pts.data()[ni * p * 3..(ni + 1) * p * 3], ids);
                let g: Vec<[T; 2]> =
                    (0..*k).map(|j| [gout[(ni * k + j) * 2], gout[(ni * k + j) * 2 + 1]]).collect();
                let gc = contour::resample_bwd(&chain, *k, *closed, &g)?;
                for (m, &id) in ids.iter().enumerate() {
                    gp[(ni * p + id) * 3] += gc[m][0];
                    gp[(ni * p + id) * 3 + 1] += gc[m][1];
                }
            }
            vec![Some(gp)]
        }
        Primitive::RegionTheta { ids, left, right, margin } => {
            let pts = ins[0];
            let (n, p) = (pts.shape()[0], pts.shape()[1]);
            let mut gp = vec![T::zero(); pts.numel()];
            for ni in 0..n {
                let range = ni * p * 3..(ni + 1) * p * 3;
                let fit = geometry::fit_crop(&pts.data()[range.clone()], ids, *left, *right, T::lit(*margin))?;
                let mut gt = [T::zero(); 6];
                gt.copy_from_slice(&gout[ni * 6..ni * 6 + 6]);
                fit.backward(&pts.data()[range.clone()], &gt, &mut gp[range]);
            }
            vec![Some(gp)]
        }
    })
}

//! Affine spatial transformer: sampling grids and bilinear sampling.
//!
//! Coordinates are normalized to [-1, 1] with corner alignment: -1 and +1
//! are the centers of the first and last texel, so `x_pix = (x + 1)(W - 1) / 2`.
//! Reads outside the map return zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::RegionCrop;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The 2x3 matrix `[[s_x, sh_x, t_x], [sh_y, s_y, t_y]]` mapping crop-grid
/// coordinates `(u, v)` to source coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineTheta {
    pub s_x: f64,
    pub sh_x: f64,
    pub t_x: f64,
    pub sh_y: f64,
    pub s_y: f64,
    pub t_y: f64,
}

impl AffineTheta {
    pub const IDENTITY: AffineTheta = AffineTheta { s_x: 1.0, sh_x: 0.0, t_x: 0.0, sh_y: 0.0, s_y: 1.0, t_y: 0.0 };

    pub fn from_rows(rows: [[f64; 3]; 2]) -> Self {
        AffineTheta {
            s_x: rows[0][0],
            sh_x: rows[0][1],
            t_x: rows[0][2],
            sh_y: rows[1][0],
            s_y: rows[1][1],
            t_y: rows[1][2],
        }
    }

    /// Row-major `[s_x, sh_x, t_x, sh_y, s_y, t_y]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.s_x, self.sh_x, self.t_x, self.sh_y, self.s_y, self.t_y]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        AffineTheta { s_x: a[0], sh_x: a[1], t_x: a[2], sh_y: a[3], s_y: a[4], t_y: a[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn det(&self) -> f64 {
        self.s_x * self.s_y - self.sh_x * self.sh_y
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.s_x * p[0] + self.sh_x * p[1] + self.t_x,
            self.sh_y * p[0] + self.s_y * p[1] + self.t_y,
        ]
    }

    pub fn inverse(&self) -> Result<AffineTheta> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularTheta { det });
        }
        let (a, b, c, d) = (self.s_y / det, -self.sh_x / det, -self.sh_y / det, self.s_x / det);
        Ok(AffineTheta {
            s_x: a,
            sh_x: b,
            t_x: -(a * self.t_x + b * self.t_y),
            sh_y: c,
            s_y: d,
            t_y: -(c * self.t_x + d * self.t_y),
        })
    }

    /// Mirrors the sampled crop left-to-right (negates the `u` column).
    pub fn flipped_horizontal(&self) -> AffineTheta {
        AffineTheta { s_x: -self.s_x, sh_y: -self.sh_y, ..*self }
    }
}

/// Per-cell source coordinates, row-major over `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub height: usize,
    pub width: usize,
    pub coords: Vec<[f32; 2]>,
}

/// Target coordinate of cell `i` along an axis of `len` cells.
#[inline]
pub(crate) fn lattice<T: Scalar>(i: usize, len: usize) -> T {
    T::lit(-1.0 + 2.0 * i as f64 / (len - 1) as f64)
}

pub fn affine_grid(theta: &AffineTheta, out_h: usize, out_w: usize) -> Result<SampleGrid> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::attr("affine_grid", format!("output {out_h}x{out_w} must be at least 2x2")));
    }
    let th: Vec<f32> = theta.to_array().iter().map(|&v| v as f32).collect();
    let flat = affine_grid_fwd(&th, 1, out_h, out_w);
    let coords = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(SampleGrid { height: out_h, width: out_w, coords })
}

/// Samples a `C x H x W` map on `grid`, returning `C x grid.height x grid.width`.
pub fn bilinear_sample(featmap: &Tensor<f32>, grid: &SampleGrid) -> Result<Tensor<f32>> {
    let op = "bilinear_sample";
    if featmap.rank() != 3 {
        return Err(Error::shape(op, format!("feature map {:?} must be [C,H,W]", featmap.shape())));
    }
    let (c, h, w) = (featmap.shape()[0], featmap.shape()[1], featmap.shape()[2]);
    if h < 2 || w < 2 {
        return Err(Error::shape(op, format!("feature map {h}x{w} must be at least 2x2")));
    }
    if grid.coords.len() != grid.height * grid.width {
        return Err(Error::shape(
            op,
            format!("grid holds {} coords for a declared {}x{} output", grid.coords.len(), grid.height, grid.width),
        ));
    }
    let flat: Vec<f32> = grid.coords.iter().flat_map(|c| [c[0], c[1]]).collect();
    let out = bilinear_fwd(featmap.data(), &flat, 1, c, h, w, grid.coords.len());
    Tensor::new(&[c, grid.height, grid.width], out)
}

/// Square crop of side `crop.size` centered at `crop.center`, rotated by
/// `crop.angle`. The crop must already be in normalized [-1, 1] coordinates.
pub fn theta_from_crop(crop: &RegionCrop) -> Result<AffineTheta> {
    if !(crop.size > 0.0) || !crop.size.is_finite() {
        return Err(Error::Invalid(format!("crop size must be positive, got {}", crop.size)));
    }
    let half = crop.size / 2.0;
    let (s, c) = (Float::sin(crop.angle), Float::cos(crop.angle));
    Ok(AffineTheta {
        s_x: half * c,
        sh_x: -half * s,
        t_x: crop.center[0],
        sh_y: half * s,
        s_y: half * c,
        t_y: crop.center[1],
    })
}

pub(crate) fn affine_grid_fwd<T: Scalar>(theta: &[T], n: usize, oh: usize, ow: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * oh * ow * 2];
    for b in 0..n {
        let t = &theta[b * 6..b * 6 + 6];
        for i in 0..oh {
            let v: T = lattice(i, oh);
            for j in 0..ow {
                let u: T = lattice(j, ow);
                let o = ((b * oh + i) * ow + j) * 2;
                out[o] = t[0] * u + t[1] * v + t[2];
                out[o + 1] = t[3] * u + t[4] * v + t[5];
            }
        }
    }
    out
}

pub(crate) fn affine_grid_bwd<T: Scalar>(gout: &[T], n: usize, oh: usize, ow: usize) -> Vec<T> {
    let mut g = vec![T::zero(); n * 6];
    for b in 0..n {
        for i in 0..oh {
            let v: T = lattice(i, oh);
            for j in 0..ow {
                let u: T = lattice(j, ow);
                let o = ((b * oh + i) * ow + j) * 2;
                let (gx, gy) = (gout[o], gout[o + 1]);
                let t = &mut g[b * 6..b * 6 + 6];
                t[0] += gx * u;
                t[1] += gx * v;
                t[2] += gx;
                t[3] += gy * u;
                t[4] += gy * v;
                t[5] += gy;
            }
        }
    }
    g
}

/// Pixel coordinate of a normalized coordinate; values within a few ulps of a
/// texel center snap onto it so lattice-aligned grids read texels exactly.
#[inline]
fn to_pixel<T: Scalar>(x: T, len: usize) -> T {
    let p = (x + T::one()) * T::count(len - 1) * T::lit(0.5);
    let r = p.round();
    if (p - r).abs() <= T::epsilon() * T::count(8 * len) {
        r
    } else {
        p
    }
}

struct Taps<T> {
    idx: [Option<usize>; 4],
    w: [T; 4],
    fx: T,
    fy: T,
}

#[inline]
fn taps<T: Scalar>(x: T, y: T, h: usize, w: usize) -> Taps<T> {
    let xp = to_pixel(x, w);
    let yp = to_pixel(y, h);
    let x0 = xp.floor();
    let y0 = yp.floor();
    let fx = xp - x0;
    let fy = yp - y0;
    let xi = x0.to_f64_lossy();
    let yi = y0.to_f64_lossy();
    let at = |dx: f64, dy: f64| -> Option<usize> {
        let (cx, cy) = (xi + dx, yi + dy);
        if cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64 {
            Some(cy as usize * w + cx as usize)
        } else {
            None
        }
    };
    let one = T::one();
    Taps {
        idx: [at(0.0, 0.0), at(1.0, 0.0), at(0.0, 1.0), at(1.0, 1.0)],
        w: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
        fx,
        fy,
    }
}

pub(crate) fn bilinear_fwd<T: Scalar>(
    f: &[T],
    grid: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cells: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); n * c * cells];
    for b in 0..n {
        for cell in 0..cells {
            let g = (b * cells + cell) * 2;
            let tp = taps(grid[g], grid[g + 1], h, w);
            for ch in 0..c {
                let fp = &f[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                let mut acc = T::zero();
                for k in 0..4 {
                    if let Some(i) = tp.idx[k] {
                        if tp.w[k] != T::zero() {
                            acc += fp[i] * tp.w[k];
                        }
                    }
                }
                out[(b * c + ch) * cells + cell] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bilinear_bwd<T: Scalar>(
    f: &[T],
    grid: &[T],
    gout: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cells: usize,
    need_features: bool,
    need_grid: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plane = h * w;
    let mut gf = need_features.then(|| vec![T::zero(); f.len()]);
    let mut gg = need_grid.then(|| vec![T::zero(); grid.len()]);
    let sx = T::count(w - 1) * T::lit(0.5);
    let sy = T::count(h - 1) * T::lit(0.5);
    let one = T::one();
    for b in 0..n {
        for cell in 0..cells {
            let g = (b * cells + cell) * 2;
            let tp = taps(grid[g], grid[g + 1], h, w);
            let (mut dx, mut dy) = (T::zero(), T::zero());
            for ch in 0..c {
                let go = gout[(b * c + ch) * cells + cell];
                let base = (b * c + ch) * plane;
                if let Some(gf) = gf.as_mut() {
                    for k in 0..4 {
                        if let Some(i) = tp.idx[k] {
                            gf[base + i] += go * tp.w[k];
                        }
                    }
                }
                if gg.is_some() {
                    let v = |k: usize| tp.idx[k].map_or(T::zero(), |i| f[base + i]);
                    let (v00, v10, v01, v11) = (v(0), v(1), v(2), v(3));
                    dx += go * ((one - tp.fy) * (v10 - v00) + tp.fy * (v11 - v01));
                    dy += go * ((one - tp.fx) * (v01 - v00) + tp.fx * (v11 - v10));
                }
            }
            if let Some(gg) = gg.as_mut() {
                gg[g] = dx * sx;
                gg[g + 1] = dy * sy;
            }
        }
    }
    (gf, gg)
}

//! Coverage-based anti-aliased rendering.
//!
//! Shapes are described by a signed distance in pixels (negative inside).
//! Coverage falls linearly across a 2-pixel band centered on the boundary.
//! Pixel `i` of an `S`-pixel axis sits at `i / (S - 1)`.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::{arc, SynthFaceParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fraction of a pixel inside a shape with signed distance `sd_px`.
pub fn coverage(sd_px: f64) -> f64 {
    (0.5 - sd_px / 2.0).clamp(0.0, 1.0)
}

/// First-order signed distance to an axis-aligned ellipse.
fn ellipse_sd(p: [f64; 2], c: [f64; 2], ax: f64, ay: f64) -> f64 {
    let (x, y) = (p[0] - c[0], p[1] - c[1]);
    let f = (x / ax).powi(2) + (y / ay).powi(2) - 1.0;
    let g = 2.0 * ((x / (ax * ax)).powi(2) + (y / (ay * ay)).powi(2)).sqrt();
    f / g.max(1e-12)
}

/// Region between an upper arc of height `up` and a lower arc of height
/// `down` spanning width `w` around `c`.
fn lens_sd(p: [f64; 2], c: [f64; 2], w: f64, up: f64, down: f64) -> f64 {
    let s = (p[0] - c[0]) / (w / 2.0);
    let yu = c[1] - arc(up, s);
    let yl = c[1] + arc(down, s);
    let du = 4.0 * up * s / w;
    let dl = -4.0 * down * s / w;
    let sd_u = (yu - p[1]) / (1.0 + du * du).sqrt();
    let sd_l = (p[1] - yl) / (1.0 + dl * dl).sqrt();
    sd_u.max(sd_l)
}

/// Half-height below which a shape is not drawn, in pixels.
const MIN_EXTENT_PX: f64 = 0.05;

fn mix(v: &mut [f64; 3], c: [f64; 3], t: f64) {
    for k in 0..3 {
        v[k] += (c[k] - v[k]) * t;
    }
}

/// Renders `p` at `size × size` with Gaussian pixel noise drawn from `rng`.
pub fn render(p: &SynthFaceParams, size: usize, rng: &mut Rng) -> Tensor<f32> {
    let px = (size - 1) as f64;
    let lv = &p.levels;
    let eyes: Vec<_> = p
        .eyes
        .iter()
        .map(|e| {
            let [ax, ay] = SynthFaceParams::eye_semi_axes(e);
            (p.local_center(e.center), ax, ay, p.iris_center(e), SynthFaceParams::iris_radius(e))
        })
        .collect();
    let mc = p.local_center(p.mouth.center);
    let g = p.lip_gap();
    let (up, down) = (g / 2.0 + p.mouth.upper_thickness, g / 2.0 + p.mouth.lower_thickness);
    let mut data = alloc::vec![0f32; 3 * size * size];
    for i in 0..size {
        for j in 0..size {
            let q = p.to_local([j as f64 / px, i as f64 / px]);
            let mut v = lv.background;
            mix(&mut v, lv.skin, coverage(px * ellipse_sd(q, [0.0, 0.0], p.face_axes[0], p.face_axes[1])));
            for &(c, ax, ay, ic, r) in &eyes {
                if ay * px < MIN_EXTENT_PX {
                    continue;
                }
                let eye = px * ellipse_sd(q, c, ax, ay);
                mix(&mut v, lv.sclera, coverage(eye));
                let iris = px * ellipse_sd(q, ic, r, r);
                mix(&mut v, lv.iris, coverage(iris.max(eye)));
            }
            mix(&mut v, lv.lips, coverage(px * lens_sd(q, mc, p.mouth.width, up, down)));
            if g / 2.0 * px >= MIN_EXTENT_PX {
                mix(&mut v, lv.mouth, coverage(px * lens_sd(q, mc, p.inner_lip_width(), g / 2.0, g / 2.0)));
            }
            for (k, val) in v.iter().enumerate() {
                let noisy = if p.noise_std > 0.0 { val + rng.normal() * p.noise_std } else { *val };
                data[k * size * size + i * size + j] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("image shape")
}

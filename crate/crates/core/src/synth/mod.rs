//! Parametric synthetic faces with analytic landmarks.
//!
//! A face is an ellipse rolled about its center. Eyes are ellipses whose
//! upper and lower halves are the lids (openness scales the vertical axis),
//! irises are circles drawn inside the eye, lips are bounded by quadratic
//! arcs with an opening between inner arcs. Every landmark is evaluated on the
//! same curves the renderer draws. Depth comes from an ellipsoid over the oval.

mod render;

pub use render::{coverage, render};

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geometry::LandmarkSet;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::{Layout, Topology};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub image_size: usize,
    pub noise_std: f64,
    /// Geometry must stay this far inside the unit image.
    pub border_margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { image_size: 64, noise_std: 0.02, border_margin: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EyeParams {
    /// Image-frame center.
    pub center: [f64; 2],
    pub width: f64,
    pub openness: f64,
    /// Iris displacement in [-1, 1]², as a fraction of its free travel.
    pub iris_offset: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MouthParams {
    pub center: [f64; 2],
    pub width: f64,
    pub openness: f64,
    pub upper_thickness: f64,
    pub lower_thickness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Levels {
    pub background: [f64; 3],
    pub skin: [f64; 3],
    pub sclera: [f64; 3],
    pub iris: [f64; 3],
    pub lips: [f64; 3],
    pub mouth: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthFaceParams {
    pub face_center: [f64; 2],
    /// Horizontal and vertical semi-axes.
    pub face_axes: [f64; 2],
    pub roll: f64,
    /// Left (smaller x before roll), right.
    pub eyes: [EyeParams; 2],
    pub mouth: MouthParams,
    pub levels: Levels,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    /// Unified topology order: base points, then left and right iris.
    pub landmarks: LandmarkSet,
    pub params: SynthFaceParams,
}

// Fraction of the iris radius relative to eye width and of the inner lip width.
const IRIS_RADIUS: f64 = 0.2;
const INNER_LIP_WIDTH: f64 = 0.7;
const MAX_GAP: f64 = 0.55;

impl SynthFaceParams {
    fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.roll.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Face-local offset to image coordinates.
    pub fn to_image(&self, local: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(local);
        [self.face_center[0] + r[0], self.face_center[1] + r[1]]
    }

    /// Image coordinates to face-local offset.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [p[0] - self.face_center[0], p[1] - self.face_center[1]];
        let (s, c) = self.roll.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    /// Face-local center of a feature given its image center.
    pub(crate) fn local_center(&self, p: [f64; 2]) -> [f64; 2] {
        self.to_local(p)
    }

    pub fn eye_semi_axes(e: &EyeParams) -> [f64; 2] {
        [e.width / 2.0, e.openness * e.width * 0.3]
    }

    pub fn iris_radius(e: &EyeParams) -> f64 {
        IRIS_RADIUS * e.width
    }

    /// Face-local iris center.
    pub fn iris_center(&self, e: &EyeParams) -> [f64; 2] {
        let c = self.local_center(e.center);
        let r = Self::iris_radius(e);
        let [ax, ay] = Self::eye_semi_axes(e);
        [c[0] + e.iris_offset[0] * (ax - r) * 0.6, c[1] + e.iris_offset[1] * ay * 0.4]
    }

    pub fn lip_gap(&self) -> f64 {
        self.mouth.openness * MAX_GAP * self.mouth.width * 0.5
    }

    pub fn inner_lip_width(&self) -> f64 {
        INNER_LIP_WIDTH * self.mouth.width
    }

    /// Ellipsoid depth at a face-local point (0 on the oval, negative toward the camera).
    pub fn depth(&self, local: [f64; 2]) -> f64 {
        let [a, b] = self.face_axes;
        let rho2 = (local[0] / a).powi(2) + (local[1] / b).powi(2);
        -0.5 * a * (1.0 - rho2).max(0.0).sqrt()
    }

    /// Known blend-shape targets: mouth [openness, width], eye [openness, iris x, iris y].
    pub fn blend_targets(&self) -> ([f64; 2], [[f64; 3]; 2]) {
        let mouth = [self.mouth.openness, (self.mouth.width / self.face_axes[0] - 0.6) / 0.4];
        let eye = |e: &EyeParams, mirror: f64| [e.openness, 0.5 + 0.5 * mirror * e.iris_offset[0], 0.5 + 0.5 * e.iris_offset[1]];
        (mouth, [eye(&self.eyes[0], 1.0), eye(&self.eyes[1], -1.0)])
    }
}

/// Quadratic lip arc height at `s ∈ [-1, 1]` across the width.
fn arc(h: f64, s: f64) -> f64 {
    h * (1.0 - s * s)
}

fn lid_angles(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |j| core::f64::consts::PI * j as f64 / (n + 1) as f64)
}

/// Face-local landmark positions (x, y) in unified topology order.
pub fn local_landmarks(p: &SynthFaceParams, layout: &Layout) -> Vec<[f64; 2]> {
    use core::f64::consts::PI;
    let mut pts = Vec::new();
    let [a, b] = p.face_axes;
    for j in 0..layout.oval {
        let phi = PI / 2.0 - 2.0 * PI * j as f64 / layout.oval as f64;
        pts.push([a * phi.cos(), -b * phi.sin()]);
    }
    let lid = (layout.eye_ring - 2) / 2;
    for (k, e) in p.eyes.iter().enumerate() {
        let c = p.local_center(e.center);
        let [ax, ay] = SynthFaceParams::eye_semi_axes(e);
        let at = |phi: f64| [c[0] + ax * phi.cos(), c[1] - ay * phi.sin()];
        // left eye: left corner, upper lid to the right, right corner, lower lid back;
        // right eye mirrored
        let (start, dir) = if k == 0 { (PI, -1.0) } else { (0.0, 1.0) };
        pts.push(at(start));
        for t in lid_angles(lid) {
            pts.push(at(start + dir * t));
        }
        pts.push(at(start + dir * PI));
        for t in lid_angles(lid) {
            pts.push(at(start + dir * (PI + t)));
        }
    }
    let mc = p.local_center(p.mouth.center);
    let g = p.lip_gap();
    let ring = |pts: &mut Vec<[f64; 2]>, n: usize, w: f64, up: f64, down: f64| {
        let lid = (n - 2) / 2;
        let s_of = |j: usize| -1.0 + 2.0 * j as f64 / (lid + 1) as f64;
        pts.push([mc[0] - w / 2.0, mc[1]]);
        for j in 1..=lid {
            let s = s_of(j);
            pts.push([mc[0] + s * w / 2.0, mc[1] - arc(up, s)]);
        }
        pts.push([mc[0] + w / 2.0, mc[1]]);
        for j in 1..=lid {
            let s = -s_of(j);
            pts.push([mc[0] + s * w / 2.0, mc[1] + arc(down, s)]);
        }
    };
    let w = p.mouth.width;
    ring(&mut pts, layout.lips_outer, w, g / 2.0 + p.mouth.upper_thickness, g / 2.0 + p.mouth.lower_thickness);
    ring(&mut pts, layout.lips_inner, p.inner_lip_width(), g / 2.0, g / 2.0);
    let golden = PI * (3.0 - 5.0f64.sqrt());
    for j in 0..layout.filler {
        let r = 0.85 * ((j as f64 + 0.5) / layout.filler as f64).sqrt();
        let t = j as f64 * golden;
        pts.push([a * r * t.cos(), b * r * t.sin()]);
    }
    for (k, e) in p.eyes.iter().enumerate() {
        let c = p.iris_center(e);
        let r = SynthFaceParams::iris_radius(e);
        let m = if k == 0 { 1.0 } else { -1.0 };
        pts.push(c);
        pts.push([c[0] + m * r, c[1]]);
        pts.push([c[0], c[1] - r]);
        pts.push([c[0] - m * r, c[1]]);
        pts.push([c[0], c[1] + r]);
    }
    pts
}

/// Ground-truth landmarks in image coordinates with ellipsoid depth.
pub fn landmarks(p: &SynthFaceParams, layout: &Layout) -> LandmarkSet {
    let pts = local_landmarks(p, layout)
        .into_iter()
        .map(|l| {
            let q = p.to_image(l);
            [q[0] as f32, q[1] as f32, p.depth(l) as f32]
        })
        .collect();
    LandmarkSet::new(pts)
}

fn color(rng: &mut Rng, base: [f64; 3], tint: f64) -> [f64; 3] {
    let v = rng.symmetric(tint);
    base.map(|c| (c + v + rng.symmetric(tint * 0.5)).clamp(0.0, 1.0))
}

/// Draws face parameters, redrawing until the face stays inside the border margin.
pub fn sample_params(rng: &mut Rng, config: &SynthConfig) -> SynthFaceParams {
    loop {
        let p = draw_params(rng, config);
        if inside_margin(&p, config.border_margin) {
            return p;
        }
    }
}

fn draw_params(rng: &mut Rng, config: &SynthConfig) -> SynthFaceParams {
    let a = rng.range(0.28, 0.36);
    let b = a * rng.range(1.15, 1.3);
    let face_center = [0.5 + rng.symmetric(0.06), 0.5 + rng.symmetric(0.06)];
    let roll = rng.symmetric(0.35);
    let eye_y = -b * rng.range(0.15, 0.3);
    let eye_dx = a * rng.range(0.38, 0.48);
    let eye_w = a * rng.range(0.36, 0.46);
    let mut partial = SynthFaceParams {
        face_center,
        face_axes: [a, b],
        roll,
        eyes: [EyeParams { center: [0.0; 2], width: eye_w, openness: 0.0, iris_offset: [0.0; 2] }; 2],
        mouth: MouthParams { center: [0.0; 2], width: 0.0, openness: 0.0, upper_thickness: 0.0, lower_thickness: 0.0 },
        levels: Levels {
            background: [0.0; 3],
            skin: [0.0; 3],
            sclera: [0.0; 3],
            iris: [0.0; 3],
            lips: [0.0; 3],
            mouth: [0.0; 3],
        },
        noise_std: config.noise_std,
    };
    for (k, side) in [-1.0, 1.0].into_iter().enumerate() {
        let center = partial.to_image([side * eye_dx + rng.symmetric(0.01), eye_y + rng.symmetric(0.01)]);
        partial.eyes[k] = EyeParams {
            center,
            width: eye_w * rng.range(0.95, 1.05),
            openness: rng.uniform(),
            iris_offset: [rng.symmetric(1.0), rng.symmetric(1.0)],
        };
    }
    let mouth_w = a * rng.range(0.6, 1.0);
    partial.mouth = MouthParams {
        center: partial.to_image([rng.symmetric(0.01), b * rng.range(0.42, 0.55)]),
        width: mouth_w,
        openness: rng.uniform(),
        upper_thickness: mouth_w * rng.range(0.1, 0.16),
        lower_thickness: mouth_w * rng.range(0.12, 0.2),
    };
    let background = rng.range(0.05, 0.4);
    partial.levels = Levels {
        background: color(rng, [background; 3], 0.05),
        skin: color(rng, [0.75, 0.6, 0.5], 0.1),
        sclera: color(rng, [0.95, 0.95, 0.92], 0.03),
        iris: color(rng, [0.2, 0.15, 0.1], 0.1),
        lips: color(rng, [0.7, 0.3, 0.3], 0.08),
        mouth: color(rng, [0.08, 0.03, 0.03], 0.03),
    };
    partial
}

fn inside_margin(p: &SynthFaceParams, margin: f64) -> bool {
    let [a, b] = p.face_axes;
    let (s, c) = p.roll.sin_cos();
    let hx = (a * a * c * c + b * b * s * s).sqrt();
    let hy = (a * a * s * s + b * b * c * c).sqrt();
    let [cx, cy] = p.face_center;
    cx - hx >= margin && cx + hx <= 1.0 - margin && cy - hy >= margin && cy + hy <= 1.0 - margin
}

/// One sample: parameters, rendering, analytic landmarks on `topology`.
pub fn generate_sample(rng: &mut Rng, config: &SynthConfig, topology: &Topology) -> Sample {
    let params = sample_params(rng, config);
    let image = render(&params, config.image_size, rng);
    let landmarks = landmarks(&params, &topology.layout);
    Sample { image, landmarks, params }
}

/// Sample `index` of the corpus with base seed `seed`, independent of generation order.
pub fn generate_indexed(seed: u64, index: u64, config: &SynthConfig, topology: &Topology) -> Sample {
    generate_sample(&mut Rng::for_item(seed, index), config, topology)
}

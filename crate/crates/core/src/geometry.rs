//! Landmark bookkeeping: crop extraction, crop-frame mapping, and the
//! normalized mean error metric.
//!
//! Image coordinates put x right and y down in [0, 1]. The feature map uses
//! the normalized frame `2p - 1`. A crop-local frame spans [-1, 1]² over the
//! crop square, with the region's corner axis along +u.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spatial::AffineTheta;

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LandmarkSet {
    pub points: Vec<[f32; 3]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        LandmarkSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Count matches `expected`, every coordinate is finite and x, y lie in [-0.5, 1.5].
    pub fn validate(&self, expected: usize) -> Result<()> {
        if self.points.len() != expected {
            return Err(Error::Topology(format!("expected {expected} landmarks, got {}", self.points.len())));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("landmark {i} is not finite")));
            }
            if !(-0.5..=1.5).contains(&p[0]) || !(-0.5..=1.5).contains(&p[1]) {
                return Err(Error::Invalid(format!("landmark {i} at ({}, {}) is out of frame", p[0], p[1])));
            }
        }
        Ok(())
    }

    pub fn select(&self, ids: &[usize]) -> LandmarkSet {
        LandmarkSet { points: ids.iter().map(|&i| self.points[i]).collect() }
    }

    /// Flattened `[x0, y0, z0, x1, ...]`.
    pub fn flat(&self) -> Vec<f32> {
        self.points.iter().flat_map(|p| *p).collect()
    }

    pub fn from_flat(flat: &[f32]) -> Self {
        LandmarkSet { points: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RegionName {
    Lips,
    LeftEye,
    RightEye,
}

impl RegionName {
    pub const ALL: [RegionName; 3] = [RegionName::Lips, RegionName::LeftEye, RegionName::RightEye];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionName::Lips => "lips",
            RegionName::LeftEye => "left_eye",
            RegionName::RightEye => "right_eye",
        }
    }

    pub fn is_eye(self) -> bool {
        !matches!(self, RegionName::Lips)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionSpec {
    pub name: RegionName,
    /// Base-mesh ids owned by the region, in region-output order.
    pub indices: Vec<usize>,
    pub left_corner: usize,
    pub right_corner: usize,
    pub output_count: usize,
}

/// A square crop: center, rotation taking the corner axis to horizontal, and side length.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionCrop {
    pub center: [f64; 2],
    pub angle: f64,
    pub size: f64,
}

impl RegionCrop {
    /// Image-frame crop expressed in the normalized [-1, 1] frame.
    pub fn to_normalized(&self) -> RegionCrop {
        RegionCrop { center: [2.0 * self.center[0] - 1.0, 2.0 * self.center[1] - 1.0], angle: self.angle, size: 2.0 * self.size }
    }

    pub fn to_image(&self) -> RegionCrop {
        RegionCrop {
            center: [(self.center[0] + 1.0) / 2.0, (self.center[1] + 1.0) / 2.0],
            angle: self.angle,
            size: self.size / 2.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.size > 0.0
            && self.center.iter().all(|v| v.is_finite())
            && self.angle > -core::f64::consts::PI
            && self.angle <= core::f64::consts::PI
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut r = a - two_pi * Float::floor(a / two_pi);
    if r > core::f64::consts::PI {
        r -= two_pi;
    }
    if r <= -core::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Crop fit of one region, keeping what backward needs.
pub(crate) struct CropFit<T> {
    corners: [usize; 2],
    delta: [T; 2],
    angle: T,
    cos: T,
    sin: T,
    mid: [T; 2],
    center: [T; 2],
    half: T,
    margin: T,
    /// ids attaining min x', max x', min y', max y' in the rotated frame
    ext_ids: [usize; 4],
    x_dominant: bool,
}

/// Fits the rotation-normalized square crop of the points `ids` of a flat
/// `P x 3` point array: angle from the corner axis, center at the middle of
/// the rotated bounding box, side `(1 + margin)` times its larger extent.
pub(crate) fn fit_crop<T: Scalar>(pts: &[T], ids: &[usize], left: usize, right: usize, margin: T) -> Result<CropFit<T>> {
    let dx = pts[right * 3] - pts[left * 3];
    let dy = pts[right * 3 + 1] - pts[left * 3 + 1];
    let sep = (dx * dx + dy * dy).sqrt();
    if !(sep >= T::lit(1e-6)) {
        return Err(Error::DegenerateRegion {
            region: String::from("region"),
            detail: format!("corner landmarks {left} and {right} are {:e} apart", sep.to_f64_lossy()),
        });
    }
    if ids.is_empty() {
        return Err(Error::DegenerateRegion { region: String::from("region"), detail: String::from("no landmarks") });
    }
    let angle = dy.atan2(dx);
    let (sin, cos) = (angle.sin(), angle.cos());
    let rot = |id: usize| {
        let (x, y) = (pts[id * 3], pts[id * 3 + 1]);
        (cos * x + sin * y, -sin * x + cos * y)
    };
    let (x0, y0) = rot(ids[0]);
    let mut ext = [(x0, ids[0]), (x0, ids[0]), (y0, ids[0]), (y0, ids[0])];
    for &id in &ids[1..] {
        let (xr, yr) = rot(id);
        if xr < ext[0].0 {
            ext[0] = (xr, id);
        }
        if xr > ext[1].0 {
            ext[1] = (xr, id);
        }
        if yr < ext[2].0 {
            ext[2] = (yr, id);
        }
        if yr > ext[3].0 {
            ext[3] = (yr, id);
        }
    }
    let half_t = T::lit(0.5);
    let mid = [(ext[0].0 + ext[1].0) * half_t, (ext[2].0 + ext[3].0) * half_t];
    let (ex, ey) = (ext[1].0 - ext[0].0, ext[3].0 - ext[2].0);
    let x_dominant = ex >= ey;
    let extent = if x_dominant { ex } else { ey };
    let half = (T::one() + margin) * extent * half_t;
    let center = [cos * mid[0] - sin * mid[1], sin * mid[0] + cos * mid[1]];
    Ok(CropFit {
        corners: [left, right],
        delta: [dx, dy],
        angle,
        cos,
        sin,
        mid,
        center,
        half,
        margin,
        ext_ids: [ext[0].1, ext[1].1, ext[2].1, ext[3].1],
        x_dominant,
    })
}

impl<T: Scalar> CropFit<T> {
    pub(crate) fn theta(&self) -> [T; 6] {
        let (h, c, s) = (self.half, self.cos, self.sin);
        [h * c, -h * s, self.center[0], h * s, h * c, self.center[1]]
    }

    pub(crate) fn crop(&self) -> RegionCrop {
        RegionCrop {
            center: [self.center[0].to_f64_lossy(), self.center[1].to_f64_lossy()],
            angle: self.angle.to_f64_lossy(),
            size: (self.half + self.half).to_f64_lossy(),
        }
    }

    /// Accumulates the vector-Jacobian product of `theta()` with `gt` into `gp`.
    pub(crate) fn backward(&self, pts: &[T], gt: &[T; 6], gp: &mut [T]) {
        let (c, s, h) = (self.cos, self.sin, self.half);
        let half_t = T::lit(0.5);
        let zero = T::zero();
        let d_half = gt[0] * c - gt[1] * s + gt[3] * s + gt[4] * c;
        let mut d_c = (gt[0] + gt[4]) * h + gt[2] * self.mid[0] + gt[5] * self.mid[1];
        let mut d_s = (gt[3] - gt[1]) * h - gt[2] * self.mid[1] + gt[5] * self.mid[0];
        let d_mx = gt[2] * c + gt[5] * s;
        let d_my = -gt[2] * s + gt[5] * c;
        let d_ext = d_half * (T::one() + self.margin) * half_t;
        let (ex, ey) = if self.x_dominant { (d_ext, zero) } else { (zero, d_ext) };
        let [ixmin, ixmax, iymin, iymax] = self.ext_ids;
        let rotated_grads = [
            (ixmin, d_mx * half_t - ex, zero),
            (ixmax, d_mx * half_t + ex, zero),
            (iymin, zero, d_my * half_t - ey),
            (iymax, zero, d_my * half_t + ey),
        ];
        for &(id, gxr, gyr) in &rotated_grads {
            let (x, y) = (pts[id * 3], pts[id * 3 + 1]);
            gp[id * 3] += c * gxr - s * gyr;
            gp[id * 3 + 1] += s * gxr + c * gyr;
            d_c += x * gxr + y * gyr;
            d_s += y * gxr - x * gyr;
        }
        let d_angle = -s * d_c + c * d_s;
        let [dx, dy] = self.delta;
        let r2 = dx * dx + dy * dy;
        let (g_dx, g_dy) = (-dy / r2 * d_angle, dx / r2 * d_angle);
        let [l, r] = self.corners;
        gp[r * 3] += g_dx;
        gp[r * 3 + 1] += g_dy;
        gp[l * 3] -= g_dx;
        gp[l * 3 + 1] -= g_dy;
    }
}

/// Rotation- and scale-normalized square crop of a region, in the frame of `mesh`.
pub fn region_from_landmarks(mesh: &LandmarkSet, spec: &RegionSpec, margin: f64) -> Result<RegionCrop> {
    let flat: Vec<f64> = mesh.points.iter().flat_map(|p| p.map(f64::from)).collect();
    let max_id = spec.indices.iter().chain([&spec.left_corner, &spec.right_corner]).copied().max().unwrap_or(0);
    if max_id >= mesh.len() {
        return Err(Error::Topology(format!(
            "region {} references landmark {max_id} of a {}-point mesh",
            spec.name.as_str(),
            mesh.len()
        )));
    }
    match fit_crop(&flat, &spec.indices, spec.left_corner, spec.right_corner, margin) {
        Ok(fit) => Ok(fit.crop()),
        Err(Error::DegenerateRegion { detail, .. }) => {
            Err(Error::DegenerateRegion { region: String::from(spec.name.as_str()), detail })
        }
        Err(e) => Err(e),
    }
}

/// Axis-aligned crop around a region's bounding box, used when the corner axis is degenerate.
pub fn fallback_crop(mesh: &LandmarkSet, spec: &RegionSpec, margin: f64) -> RegionCrop {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &i in &spec.indices {
        for a in 0..2 {
            let v = f64::from(mesh.points[i][a]);
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-3);
    RegionCrop { center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0], angle: 0.0, size: (1.0 + margin) * extent }
}

fn z_scale(theta: &AffineTheta) -> Result<f64> {
    let det = theta.det();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::SingularTheta { det });
    }
    // one crop-local unit in image units
    Ok(Float::sqrt(det.abs()) / 2.0)
}

/// Crop-local landmarks to image coordinates through `theta` (normalized frame).
pub fn map_region_to_global(region: &LandmarkSet, theta: &AffineTheta) -> Result<LandmarkSet> {
    let zs = z_scale(theta)?;
    let points = region
        .points
        .iter()
        .map(|p| {
            let q = theta.apply([f64::from(p[0]), f64::from(p[1])]);
            [((q[0] + 1.0) / 2.0) as f32, ((q[1] + 1.0) / 2.0) as f32, (f64::from(p[2]) * zs) as f32]
        })
        .collect();
    Ok(LandmarkSet { points })
}

/// Image-coordinate landmarks into the crop-local frame of `theta`.
pub fn map_global_to_region(global: &LandmarkSet, theta: &AffineTheta) -> Result<LandmarkSet> {
    let zs = z_scale(theta)?;
    let inv = theta.inverse()?;
    let points = global
        .points
        .iter()
        .map(|p| {
            let q = inv.apply([2.0 * f64::from(p[0]) - 1.0, 2.0 * f64::from(p[1]) - 1.0]);
            [q[0] as f32, q[1] as f32, (f64::from(p[2]) / zs) as f32]
        })
        .collect();
    Ok(LandmarkSet { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalizer {
    /// 3D distance between the two outer eye corners.
    Interocular { left_outer: usize, right_outer: usize },
    /// 3D distance between a region's corner landmarks.
    CornerDistance { left: usize, right: usize },
}

impl Normalizer {
    pub fn corners(spec: &RegionSpec) -> Self {
        Normalizer::CornerDistance { left: spec.left_corner, right: spec.right_corner }
    }

    fn ids(self) -> (usize, usize) {
        match self {
            Normalizer::Interocular { left_outer, right_outer } => (left_outer, right_outer),
            Normalizer::CornerDistance { left, right } => (left, right),
        }
    }
}

/// Mean 2D point error over `subset`, divided by the normalizer measured on
/// `gt`, times 100.
pub fn normalized_mean_error(pred: &LandmarkSet, gt: &LandmarkSet, subset: &[usize], normalizer: Normalizer) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Topology(format!("prediction has {} points, ground truth {}", pred.len(), gt.len())));
    }
    if subset.is_empty() {
        return Err(Error::Invalid(String::from("empty NME subset")));
    }
    let (a, b) = normalizer.ids();
    if a >= gt.len() || b >= gt.len() || subset.iter().any(|&i| i >= gt.len()) {
        return Err(Error::Topology(String::from("NME index out of range")));
    }
    let (pa, pb) = (gt.points[a], gt.points[b]);
    let norm = Float::sqrt(
        (0..3).map(|k| { let d = f64::from(pa[k]) - f64::from(pb[k]); d * d }).sum::<f64>(),
    );
    if !(norm >= 1e-6) {
        return Err(Error::DegenerateNormalizer(norm));
    }
    let total: f64 = subset
        .iter()
        .map(|&i| {
            let dx = f64::from(pred.points[i][0]) - f64::from(gt.points[i][0]);
            let dy = f64::from(pred.points[i][1]) - f64::from(gt.points[i][1]);
            Float::sqrt(dx * dx + dy * dy)
        })
        .sum();
    Ok(100.0 * total / subset.len() as f64 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spatial::theta_from_crop;
    use alloc::vec;

    fn spec(n: usize) -> RegionSpec {
        RegionSpec { name: RegionName::LeftEye, indices: (0..n).collect(), left_corner: 0, right_corner: 1, output_count: n }
    }

    fn eye(points: &[[f32; 2]]) -> LandmarkSet {
        LandmarkSet::new(points.iter().map(|p| [p[0], p[1], 0.0]).collect())
    }

    #[test]
    fn horizontal_corners_give_zero_angle() {
        let m = eye(&[[0.3, 0.5], [0.4, 0.5], [0.35, 0.48], [0.35, 0.52]]);
        let crop = region_from_landmarks(&m, &spec(4), 0.25).unwrap();
        assert_eq!(crop.angle, 0.0);
        assert!((crop.center[0] - 0.35).abs() < 1e-7 && (crop.center[1] - 0.5).abs() < 1e-7);
        assert!((crop.size - 0.125).abs() < 1e-7);
    }

    #[test]
    fn diagonal_corners_give_quarter_pi() {
        let m = eye(&[[0.3, 0.3], [0.4, 0.4]]);
        let crop = region_from_landmarks(&m, &spec(2), 0.25).unwrap();
        assert!((crop.angle - core::f64::consts::FRAC_PI_4).abs() < 1e-6);
    }

    #[test]
    fn coincident_corners_are_degenerate() {
        let m = eye(&[[0.3, 0.3], [0.3, 0.3], [0.35, 0.32]]);
        let err = region_from_landmarks(&m, &spec(3), 0.25).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegion { ref region, .. } if region == "left_eye"));
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let pts: Vec<[f32; 2]> = (0..8).map(|_| [rng.range(0.3, 0.7) as f32, rng.range(0.3, 0.7) as f32]).collect();
            let m = eye(&pts);
            let phi = rng.symmetric(3.0);
            let (s, c) = (Float::sin(phi), Float::cos(phi));
            let rotated = LandmarkSet::new(
                m.points
                    .iter()
                    .map(|p| {
                        let (x, y) = (f64::from(p[0]) - 0.5, f64::from(p[1]) - 0.5);
                        [(0.5 + c * x - s * y) as f32, (0.5 + s * x + c * y) as f32, 0.0]
                    })
                    .collect(),
            );
            let a = region_from_landmarks(&m, &spec(8), 0.25).unwrap();
            let b = region_from_landmarks(&rotated, &spec(8), 0.25).unwrap();
            assert!(wrap_angle(b.angle - a.angle - phi).abs() < 1e-5);
            let (x, y) = (a.center[0] - 0.5, a.center[1] - 0.5);
            assert!((b.center[0] - (0.5 + c * x - s * y)).abs() < 1e-5);
            assert!((b.center[1] - (0.5 + s * x + c * y)).abs() < 1e-5);
            assert!((a.size - b.size).abs() < 1e-5);
        }
    }

    #[test]
    fn identity_theta_maps_normalized_to_image() {
        let local = LandmarkSet::new(vec![[-1.0, -1.0, 0.5], [1.0, 0.0, 0.0]]);
        let g = map_region_to_global(&local, &AffineTheta::IDENTITY).unwrap();
        assert_eq!(g.points, vec![[0.0, 0.0, 0.25], [1.0, 0.5, 0.0]]);
    }

    #[test]
    fn singular_theta_is_rejected() {
        let th = AffineTheta::from_rows([[0.0, 0.0, 0.1], [0.0, 0.0, 0.2]]);
        assert!(map_region_to_global(&LandmarkSet::new(vec![[0.0; 3]]), &th).is_err());
    }

    #[test]
    fn mapping_matches_matrix_oracle() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let m: [f64; 6] = core::array::from_fn(|_| rng.symmetric(1.0));
            let th = AffineTheta::from_array(m);
            if th.det().abs() < 1e-3 {
                continue;
            }
            let p = [rng.symmetric(1.0), rng.symmetric(1.0)];
            let g = map_region_to_global(&LandmarkSet::new(vec![[p[0] as f32, p[1] as f32, 0.0]]), &th).unwrap();
            let pu = [f64::from(p[0] as f32), f64::from(p[1] as f32)];
            let ex = (m[0] * pu[0] + m[1] * pu[1] + m[2] + 1.0) / 2.0;
            let ey = (m[3] * pu[0] + m[4] * pu[1] + m[5] + 1.0) / 2.0;
            assert!((f64::from(g.points[0][0]) - ex).abs() < 1e-6);
            assert!((f64::from(g.points[0][1]) - ey).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_round_trip_recovers_landmarks() {
        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let pts: Vec<[f32; 3]> = (0..10)
                .map(|_| [rng.range(0.2, 0.8) as f32, rng.range(0.2, 0.8) as f32, rng.symmetric(0.05) as f32])
                .collect();
            let m = LandmarkSet::new(pts);
            let crop = region_from_landmarks(&m, &spec(10), 0.25).unwrap();
            let th = theta_from_crop(&crop.to_normalized()).unwrap();
            let local = map_global_to_region(&m, &th).unwrap();
            for p in &local.points {
                assert!(p[0].abs() <= 0.8 + 1e-5 && p[1].abs() <= 0.8 + 1e-5, "{p:?}");
            }
            let back = map_region_to_global(&local, &th).unwrap();
            for (a, b) in back.points.iter().zip(&m.points) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn nme_examples() {
        let gt = LandmarkSet::new(vec![[0.4, 0.5, 0.0], [0.6, 0.5, 0.0], [0.5, 0.6, 0.0]]);
        let norm = Normalizer::Interocular { left_outer: 0, right_outer: 1 };
        assert_eq!(normalized_mean_error(&gt, &gt, &[0, 1, 2], norm).unwrap(), 0.0);
        let shifted = LandmarkSet::new(gt.points.iter().map(|p| [p[0] + 0.01, p[1], p[2]]).collect());
        let nme = normalized_mean_error(&shifted, &gt, &[0, 1, 2], norm).unwrap();
        assert!((nme - 5.0).abs() < 1e-4, "{nme}");
        let bad = LandmarkSet::new(vec![[0.5, 0.5, 0.0]; 3]);
        assert!(matches!(normalized_mean_error(&gt, &bad, &[0], norm), Err(Error::DegenerateNormalizer(_))));
        assert!(normalized_mean_error(&gt.select(&[0, 1]), &gt, &[0], norm).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        let pi = core::f64::consts::PI;
        assert!((wrap_angle(3.0 * pi) - pi).abs() < 1e-12);
        assert!((wrap_angle(-pi) - pi).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-12);
    }
}

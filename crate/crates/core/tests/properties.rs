use attnmesh_core::contour::{contour_loss, resample_chain};
use attnmesh_core::cost::count_macs;
use attnmesh_core::geometry::{map_global_to_region, map_region_to_global, normalized_mean_error, region_from_landmarks, wrap_angle, Normalizer, RegionName};
use attnmesh_core::spatial::{affine_grid, bilinear_sample, theta_from_crop};
use attnmesh_core::{AffineTheta, LandmarkSet, ModelConfig, Rng, Tensor, Topology};
use proptest::prelude::*;

fn point2() -> impl Strategy<Value = [f64; 2]> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y)| [x, y])
}

fn chain(min: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(point2(), min..12).prop_filter("non-degenerate", |c| {
        c.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum::<f64>() > 1e-3
    })
}

fn mesh(seed: u64) -> LandmarkSet {
    let mut rng = Rng::new(seed);
    LandmarkSet::new(
        (0..78)
            .map(|_| [rng.range(0.15, 0.85) as f32, rng.range(0.15, 0.85) as f32, rng.symmetric(0.05) as f32])
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn crop_mapping_round_trips(seed in any::<u64>(), region in 0usize..3, margin in 0.0..0.5f64) {
        let topo = Topology::desk();
        let spec = topo.region([RegionName::Lips, RegionName::LeftEye, RegionName::RightEye][region]);
        let m = mesh(seed);
        let crop = region_from_landmarks(&m, spec, margin);
        prop_assume!(crop.is_ok());
        let th = theta_from_crop(&crop.unwrap().to_normalized()).unwrap();
        let back = map_region_to_global(&map_global_to_region(&m, &th).unwrap(), &th).unwrap();
        for (a, b) in back.points.iter().zip(&m.points) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-4, "{:?} vs {:?}", a, b);
            }
        }
    }

    #[test]
    fn theta_inverse_undoes_apply(a in prop::array::uniform6(-2.0..2.0f64), p in point2()) {
        let th = AffineTheta::from_array(a);
        prop_assume!(th.det().abs() > 0.05);
        let q = th.inverse().unwrap().apply(th.apply(p));
        prop_assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
    }

    #[test]
    fn identity_sampling_is_exact(c in 1usize..4, h in 2usize..20, w in 2usize..20, seed in any::<u64>()) {
        let map = Tensor::<f32>::uniform(&[c, h, w], 1.0, &mut Rng::new(seed));
        let out = bilinear_sample(&map, &affine_grid(&AffineTheta::IDENTITY, h, w).unwrap()).unwrap();
        prop_assert_eq!(out.data(), map.data());
    }

    #[test]
    fn constant_maps_stay_constant_inside(v in -3.0..3.0f32, s in 0.1..0.6f64, tx in -0.1..0.1f64, rot in -3.0..3.0f64) {
        let map = Tensor::new(&[1, 9, 9], vec![v; 81]).unwrap();
        let (c, sn) = (rot.cos() * s, rot.sin() * s);
        let th = AffineTheta::from_rows([[c, -sn, tx], [sn, c, 0.0]]);
        let out = bilinear_sample(&map, &affine_grid(&th, 5, 5).unwrap()).unwrap();
        for &x in out.data() {
            prop_assert!((x - v).abs() <= 1e-5 * v.abs().max(1.0));
        }
    }

    #[test]
    fn contour_loss_is_zero_on_identical_chains(c in chain(2), k in 2usize..40, closed in any::<bool>()) {
        prop_assert_eq!(contour_loss(&c, &c, k, closed).unwrap(), 0.0);
    }

    #[test]
    fn contour_loss_is_symmetric_and_nonnegative(a in chain(2), b in chain(2), k in 2usize..40) {
        let ab = contour_loss(&a, &b, k, false).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - contour_loss(&b, &a, k, false).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn collinear_insertion_does_not_move_the_loss(a in chain(2), b in chain(2), k in 2usize..40, at in 0usize..100, t in 0.0..1.0f64, closed in any::<bool>()) {
        let seg = at % (a.len() - 1);
        let (p, q) = (a[seg], a[seg + 1]);
        let mut longer = a.clone();
        longer.insert(seg + 1, [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        let before = contour_loss(&a, &b, k, closed && a.len() > 2).unwrap();
        let after = contour_loss(&longer, &b, k, closed && a.len() > 2).unwrap();
        prop_assert!((before - after).abs() < 1e-6, "{} vs {}", before, after);
    }

    #[test]
    fn resampled_points_are_evenly_spaced(c in chain(2), k in 3usize..30) {
        let total: f64 = c.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        let r = resample_chain(&c, k, false).unwrap();
        prop_assert_eq!(r.len(), k);
        prop_assert!((r[0][0] - c[0][0]).abs() < 1e-12 && (r[k - 1][1] - c[c.len() - 1][1]).abs() < 1e-9);
        // chords never exceed the arc spacing
        for w in r.windows(2) {
            prop_assert!((w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) <= total / (k - 1) as f64 + 1e-9);
        }
    }

    #[test]
    fn wrapped_angles_lie_in_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let turns = (a - w) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn nme_is_translation_invariant(seed in any::<u64>(), dx in -0.1..0.1f32, dy in -0.1..0.1f32) {
        let gt = mesh(seed);
        let pred = mesh(seed ^ 1);
        let shift = |m: &LandmarkSet| LandmarkSet::new(m.points.iter().map(|p| [p[0] + dx, p[1] + dy, p[2]]).collect());
        let norm = Normalizer::Interocular { left_outer: 0, right_outer: 1 };
        let ids: Vec<usize> = (0..78).collect();
        let a = normalized_mean_error(&pred, &gt, &ids, norm).unwrap();
        let b = normalized_mean_error(&shift(&pred), &shift(&gt), &ids, norm).unwrap();
        prop_assert!(a >= 0.0 && (a - b).abs() <= 1e-4 * a.max(1.0));
    }

    #[test]
    fn rng_streams_depend_only_on_the_seed(seed in any::<u64>()) {
        let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
        for _ in 0..32 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn landmark_flat_round_trip(pts in prop::collection::vec(prop::array::uniform3(-1.0..1.0f32), 0..50)) {
        let m = LandmarkSet::new(pts);
        prop_assert_eq!(LandmarkSet::from_flat(&m.flat()), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Cost accounting is additive for any valid config.
    #[test]
    fn mac_reports_are_additive(stem in 4usize..24, head in 8usize..64, blocks in 1usize..3) {
        let cfg = ModelConfig { stem_channels: stem, head_channels: head, blocks_per_stage: blocks, ..ModelConfig::desk() };
        prop_assume!(cfg.validate().is_ok());
        let r = count_macs(&cfg, &Topology::desk()).unwrap();
        prop_assert!(r.check_additivity().is_ok());
        prop_assert_eq!(&r, &count_macs(&cfg, &Topology::desk()).unwrap());
        prop_assert!(r.unified_total < r.cascade_total);
    }
}

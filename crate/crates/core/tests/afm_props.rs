mod common;

use afmkit::afm::{dilate, make_tip_kernel, render_views, HeightMap, KernelShape, RenderParams};
use afmkit::mesh::{uv_sphere, Point};
use afmkit::raster::CameraPose;
use proptest::prelude::*;

fn map(width: usize, height: usize, values: Vec<f32>) -> HeightMap {
    HeightMap {
        width,
        height,
        values_nm: values,
        step_nm: 1.0,
        pose: CameraPose::top_down(),
        source_id: "p".into(),
        tip_radius_nm: 0.0,
        kernel: KernelShape::Spherical,
    }
}

fn arb_map() -> impl Strategy<Value = HeightMap> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..30.0], w * h).prop_map(move |v| map(w, h, v))
    })
}

fn arb_shape() -> impl Strategy<Value = KernelShape> {
    prop_oneof![Just(KernelShape::FlatDisk), Just(KernelShape::Spherical)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_pixelwise_definition(h in arb_map(), tip in 0.0f64..4.0, step in 0.5f64..2.0, shape in arb_shape()) {
        let k = make_tip_kernel(tip, step, shape).unwrap();
        prop_assert_eq!(dilate(&h, &k).values_nm, common::dilate_naive(&h, &k));
    }

    #[test]
    fn never_lowers_a_pixel(h in arb_map(), tip in 0.0f64..4.0, shape in arb_shape()) {
        let k = make_tip_kernel(tip, 1.0, shape).unwrap();
        let d = dilate(&h, &k);
        for (a, b) in h.values_nm.iter().zip(&d.values_nm) {
            prop_assert!(b >= a);
        }
        prop_assert!(d.max_nm() <= h.max_nm());
    }

    #[test]
    fn is_monotone(h in arb_map(), bump in prop::collection::vec(0.0f32..5.0, 576), tip in 0.0f64..4.0, shape in arb_shape()) {
        let k = make_tip_kernel(tip, 1.0, shape).unwrap();
        let higher = map(h.width, h.height, h.values_nm.iter().zip(&bump).map(|(v, b)| v + b).collect());
        let (lo, hi) = (dilate(&h, &k), dilate(&higher, &k));
        for (a, b) in lo.values_nm.iter().zip(&hi.values_nm) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn zero_radius_is_identity(h in arb_map(), shape in arb_shape()) {
        let k = make_tip_kernel(0.2, 1.0, shape).unwrap();
        prop_assert_eq!(k.radius_px, 0);
        prop_assert_eq!(dilate(&h, &k).values_nm, h.values_nm);
    }

    #[test]
    fn flat_disk_dominates_sphere(h in arb_map(), tip in 0.0f64..4.0) {
        let disk = dilate(&h, &make_tip_kernel(tip, 1.0, KernelShape::FlatDisk).unwrap());
        let ball = dilate(&h, &make_tip_kernel(tip, 1.0, KernelShape::Spherical).unwrap());
        for (a, b) in ball.values_nm.iter().zip(&disk.values_nm) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn widening_the_disk_never_lowers(h in arb_map(), r in 0usize..3) {
        let small = dilate(&h, &make_tip_kernel(r as f64, 1.0, KernelShape::FlatDisk).unwrap());
        let large = dilate(&h, &make_tip_kernel(r as f64 + 1.0, 1.0, KernelShape::FlatDisk).unwrap());
        for (a, b) in small.values_nm.iter().zip(&large.values_nm) {
            prop_assert!(a <= b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn renders_are_nonnegative_and_seed_stable(seed in any::<u64>(), radius in 2.0f64..20.0) {
        let sphere = uv_sphere(Point::origin(), radius, 12, 24, 1.0, "s").unwrap();
        let params = RenderParams { n_views: 3, step_nm: radius / 8.0, seed, ..Default::default() };
        let a = render_views(&sphere, &params).unwrap();
        let b = render_views(&sphere, &params).unwrap();
        prop_assert_eq!(&a, &b);
        for v in &a {
            prop_assert!(v.values_nm.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!(f64::from(v.max_nm()) <= 2.0 * radius * 1.001);
        }
    }
}

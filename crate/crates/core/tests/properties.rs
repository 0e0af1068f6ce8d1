//! Property-based invariants across modules.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector2, Vector3};
use proptest::prelude::*;

use monoprior::anchors3d::{
    collect_anchor_stats, filter_ground, generate_anchors, obs_angle, wrap_angle, yaw_from_obs,
    Box2d, DetectionBox,
};
use monoprior::camgeo::Pinhole;
use monoprior::depthbins::LogitTensor;
use monoprior::depthmetrics::{evaluate, Caps, ScaleMode};
use monoprior::epiflow::FlowField;
use monoprior::grid::Grid;
use monoprior::io;
use monoprior::labelmatch::hungarian;
use monoprior::postopt::{OptWeights, OuterSystem, VoSample};
use monoprior::slic3d::{slic3d, SlicParams};
use monoprior::warprecon::{ColorSpace, DepthMap, Image};

fn depth_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 6 => 0.5f64..90.0], n)
}

fn slic_input() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<f64>, SlicParams)> {
    (8usize..40, 8usize..40).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(0.0f32..1.0, w * h * 3),
            depth_values(w * h),
            (4usize..9, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..0.3).prop_map(|(step, l, d, p)| {
                SlicParams {
                    step,
                    lambda_lab: l,
                    lambda_depth: d,
                    lambda_pix: p,
                    max_iter: 5,
                }
            }),
        )
    })
}

fn system() -> impl Strategy<Value = OuterSystem> {
    (1usize..40).prop_flat_map(|n| {
        (
            1e-4f64..1.0,
            0.1f64..10.0,
            0.05f64..2.0,
            prop::collection::vec(-1.0f64..4.4, n),
            prop::collection::vec(prop::option::of(-1.0f64..4.4), n),
        )
            .prop_map(|(l0, l1, l2, lg0, tar)| {
                let w = OptWeights {
                    lambda0: l0,
                    lambda1: l1,
                    lambda2: l2,
                };
                OuterSystem::new(&w, lg0, &tar).unwrap()
            })
    })
}

fn label_box() -> impl Strategy<Value = DetectionBox> {
    (
        0.0f64..200.0,
        0.0f64..100.0,
        10.0f64..60.0,
        10.0f64..60.0,
        5.0f64..60.0,
        -PI..PI,
        prop::sample::select(vec!["Car", "Pedestrian"]),
    )
        .prop_map(|(x, y, w, h, z, alpha, cat)| {
            DetectionBox {
                box2d: Box2d::new(x, y, x + w, y + h),
                center: Vector3::new(0.0, 1.0, z),
                dims: [1.6, 1.5, 4.0],
                yaw: 0.0,
                alpha: 0.0,
                score: 1.0,
                category: cat.into(),
            }
            .with_alpha(alpha)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn slic_labels_partition_the_image((w, h, rgb, depth, params) in slic_input()) {
        let image = Image::new(w, h, ColorSpace::Rgb, rgb).unwrap();
        let depth = DepthMap::from_values(w, h, depth).unwrap();
        let seg = slic3d(&image, &depth, &params).unwrap();
        let n = seg.num_segments();
        prop_assert_eq!(seg.counts.iter().sum::<usize>(), w * h);
        prop_assert!(seg.counts.iter().all(|c| *c > 0));
        prop_assert!(seg.labels.as_slice().iter().all(|l| (*l as usize) < n));
        // compact labels appear first in raster order 0, 1, 2, ...
        let mut next = 0u32;
        for &l in seg.labels.as_slice() {
            prop_assert!(l <= next);
            if l == next { next += 1; }
        }
        for win in seg.objective.windows(2) {
            prop_assert!(win[1] <= win[0] * (1.0 + 1e-12));
        }
        let again = slic3d(&image, &depth, &params).unwrap();
        prop_assert_eq!(seg.labels.as_slice(), again.labels.as_slice());
    }

    #[test]
    fn outer_solution_is_the_global_minimum(
        sys in system(),
        dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 40), 4),
        scale in 1e-3f64..1.0,
    ) {
        let x = sys.solve().unwrap();
        let best = sys.objective(&x);
        for d in &dirs {
            let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + scale * b).collect();
            prop_assert!(sys.objective(&y) >= best - 1e-9 * best.abs().max(1.0));
        }
    }

    #[test]
    fn stronger_vo_weight_never_loosens_the_fit(sys in system(), factor in 1.0f64..20.0) {
        let residual = |s: &OuterSystem, x: &[f64]| -> f64 {
            (0..x.len()).filter(|&k| s.lambda1[k] > 0.0).map(|k| (x[k] - s.lg_tar[k]).powi(2)).sum()
        };
        let mut strong = sys.clone();
        for l in strong.lambda1.iter_mut() { *l *= factor; }
        let a = residual(&sys, &sys.solve().unwrap());
        let b = residual(&strong, &strong.solve().unwrap());
        prop_assert!(b <= a * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn duplicated_labels_keep_anchor_moments(labels in prop::collection::vec(label_box(), 1..25)) {
        let anchors = generate_anchors(256, 160, 32, &[(30.0, 30.0), (60.0, 40.0)]).unwrap();
        let once = collect_anchor_stats(&anchors, &labels, 0.3).unwrap();
        let doubled: Vec<DetectionBox> = labels.iter().chain(labels.iter()).cloned().collect();
        let twice = collect_anchor_stats(&anchors, &doubled, 0.3).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert_eq!(a.pooled.is_some(), b.pooled.is_some());
            if let (Some(a), Some(b)) = (&a.pooled, &b.pooled) {
                prop_assert_eq!(2 * a.count, b.count);
                prop_assert!((a.z.mean - b.z.mean).abs() <= 1e-9 * a.z.mean.abs().max(1.0));
                prop_assert!((a.z.var - b.z.var).abs() <= 1e-9 * a.z.var.max(1.0));
                prop_assert!((a.cos_alpha.mean - b.cos_alpha.mean).abs() <= 1e-12);
                prop_assert!((a.sin_2alpha.var - b.sin_2alpha.var).abs() <= 1e-12);
            }
            prop_assert_eq!(a.per_category.keys().collect::<Vec<_>>(), b.per_category.keys().collect::<Vec<_>>());
        }
    }

    #[test]
    fn ground_filter_follows_anchor_order(
        labels in prop::collection::vec(label_box(), 1..25),
        perm_seed in any::<u64>(),
        tol in 0.1f64..3.0,
    ) {
        let cam = Pinhole::new(200.0, 200.0, 128.0, 40.0, 256, 160);
        let anchors = generate_anchors(256, 160, 32, &[(30.0, 30.0)]).unwrap();
        let anchors = collect_anchor_stats(&anchors, &labels, 0.3).unwrap();
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        // deterministic Fisher-Yates from the seed
        let mut s = perm_seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<_> = order.iter().map(|&i| anchors[i].clone()).collect();
        for cat in [None, Some("Car")] {
            let base = filter_ground(&anchors, &cam, 1.65, tol, cat).unwrap();
            let perm = filter_ground(&shuffled, &cam, 1.65, tol, cat).unwrap();
            let mut mapped: Vec<usize> = perm.kept.iter().map(|&i| order[i]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(&mapped, &base.kept);
            prop_assert_eq!(base.kept.len() + base.dropped.len(), anchors.len());
        }
    }

    #[test]
    fn observation_angle_round_trip(x in -50.0f64..50.0, z in 0.5f64..80.0, yaw in -20.0f64..20.0) {
        let alpha = obs_angle(x, z, yaw);
        prop_assert!(alpha > -PI && alpha <= PI);
        let back = yaw_from_obs(alpha, x, z);
        prop_assert!(back > -PI && back <= PI);
        let gap = wrap_angle(back - yaw).abs();
        prop_assert!(gap <= 1e-9);
    }

    #[test]
    fn metrics_are_bounded_and_ordered(
        gt in depth_values(60),
        pred in prop::collection::vec(0.01f64..120.0, 60),
        median in any::<bool>(),
    ) {
        let gt = DepthMap::from_values(60, 1, gt).unwrap();
        let pred = DepthMap::from_values(60, 1, pred).unwrap();
        let mode = if median { ScaleMode::Median } else { ScaleMode::None };
        let caps = Caps { min: 1.0, max: 80.0 };
        match evaluate(&pred, &gt, mode, caps) {
            Ok(r) => {
                let in_caps = gt.iter().flatten().filter(|g| *g > 1.0 && *g < 80.0).count();
                prop_assert_eq!(r.count, in_caps);
                prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3 && r.delta3 <= 1.0);
                prop_assert!(r.abs_rel >= 0.0 && r.rmse >= 0.0 && r.silog >= 0.0);
                // clamped predictions bound every log-ratio by the caps
                prop_assert!(r.rmse_log <= 80f64.ln() + 1e-12);
                prop_assert!(r.silog <= r.rmse_log * r.rmse_log + 1e-12);
            }
            Err(_) => prop_assert!(gt.iter().flatten().all(|g| g <= 1.0 || g >= 80.0)),
        }
    }

    #[test]
    fn assignment_cost_is_transpose_symmetric(
        rows in 1usize..8,
        cols in 1usize..8,
        values in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let cost = DMatrix::from_fn(rows, cols, |r, c| values[r * 8 + c]);
        let total = |m: &DMatrix<f64>| -> f64 {
            hungarian(m).unwrap().iter().enumerate().filter_map(|(r, c)| c.map(|c| m[(r, c)])).sum()
        };
        prop_assert!((total(&cost) - total(&cost.transpose())).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn file_formats_round_trip(
        (w, h) in (1usize..12, 1usize..12),
        seed in prop::collection::vec(-1.0e3f32..1.0e3, 144 * 3),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let n = w * h;

        let depth = DepthMap::from_values(w, h, (0..n).map(|i| if seed[i] < -800.0 { 0.0 } else { (seed[i].abs() as f64) / 8.0 + 0.01 }).collect()).unwrap();
        let p = dir.path().join("d.png");
        io::write_depth_png(&p, &depth).unwrap();
        let back = io::read_depth_png(&p).unwrap();
        for (a, b) in depth.iter().zip(back.iter()) {
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 0.5 / 256.0 + 1e-12 || (a < 1.0 / 256.0 && b == 1.0 / 256.0)),
                _ => prop_assert!(false, "validity changed"),
            }
        }

        let p = dir.path().join("d.pfm");
        let as_f32 = depth.map_valid(|_, d| d as f32 as f64);
        io::write_depth_pfm(&p, &as_f32).unwrap();
        prop_assert_eq!(io::read_depth_pfm(&p).unwrap().iter().collect::<Vec<_>>(), as_f32.iter().collect::<Vec<_>>());

        let flow = FlowField::new(Grid::from_fn(w, h, |x, y| {
            let i = y * w + x;
            (seed[i] > -700.0).then(|| Vector2::new(seed[i] as f64, seed[n + i] as f64))
        }));
        let p = dir.path().join("f.flo");
        io::write_flo(&p, &flow).unwrap();
        let read = io::read_flo(&p).unwrap();
        prop_assert_eq!(read.vectors.as_slice(), flow.vectors.as_slice());

        let t = LogitTensor { height: h, width: w, bins: 3, data: seed[..n * 3].to_vec() };
        let p = dir.path().join("l.bins");
        io::write_bins(&p, &t).unwrap();
        prop_assert_eq!(io::read_bins(&p).unwrap(), t);

        let labels = Grid::from_fn(w, h, |x, y| seed[y * w + x].abs() as u32 % 97);
        let p = dir.path().join("s.seg");
        io::write_seg(&p, &labels).unwrap();
        let read = io::read_seg(&p).unwrap();
        prop_assert_eq!(read.as_slice(), labels.as_slice());

        let vo: Vec<VoSample> = (0..n.min(20))
            .map(|i| VoSample { u: (i % w) as f64 + 0.25, v: (i / w) as f64, depth: seed[i].abs() as f64 + 0.5 })
            .collect();
        let p = dir.path().join("vo.csv");
        io::write_vo_csv(&p, &vo).unwrap();
        prop_assert_eq!(io::read_vo_csv(&p).unwrap(), vo);
    }
}

//! Randomized invariants across modules.

mod common;

use common::{gaussian_in_view, random_image, random_pose, random_quat, random_rotation, rng};
use duosplat::camera::{
    invert_pose, normalize_scene_scale, project_point, relative_pose, rotation_geodesic_angle, CameraPose, Intrinsics,
};
use duosplat::gaussian::{covariance_from_attributes, unproject_pixel_aligned, Gaussian, GaussianScene, InitConfig};
use duosplat::harness::{farthest_point_sample, select_views, ViewProtocol};
use duosplat::image::{DepthMap, ImageBuffer};
use duosplat::io::{
    decode_gaussians, encode_gaussians, format_key_values, format_poses, parse_key_values, parse_poses,
    records_from_poses, KeyValues,
};
use duosplat::linalg::{Mat3, Vec3};
use duosplat::loss::{camera_loss, huber, LossWeights};
use duosplat::metrics::{pairwise_pose_errors, pose_auc, psnr, ssim, DEFAULT_AUC_THRESHOLDS};
use duosplat::optim::{align_poses_epa, EpaConfig};
use duosplat::render::{render, render_reference, render_with_alpha, RenderConfig};
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn intrinsics(r: &mut impl Rng, w: usize, h: usize) -> Intrinsics<f64> {
    let f = r.random_range(0.8..1.5) * w as f64;
    let cx = w as f64 / 2.0 + r.random_range(-1.0..1.0);
    let cy = h as f64 / 2.0 + r.random_range(-1.0..1.0);
    Intrinsics::new(f, f * r.random_range(0.9..1.1), cx, cy, w, h).unwrap()
}

fn poses(seed: u64, n: usize) -> Vec<CameraPose<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let k = intrinsics(&mut r, 32, 24);
            random_pose(&mut r, k)
        })
        .collect()
}

fn gauge(seed: u64) -> (Mat3<f64>, Vec3<f64>) {
    let mut r = rng(seed);
    let t = Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    (random_rotation(&mut r, std::f64::consts::PI), t)
}

fn max_mat_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    a.sub(b).max_abs()
}

/// A camera with `count` Gaussians in its view.
fn view_scene(seed: u64, count: usize, w: usize, h: usize) -> (GaussianScene<f64>, CameraPose<f64>) {
    let mut r = rng(seed);
    let k = intrinsics(&mut r, w, h);
    let pose = random_pose(&mut r, k);
    let gs = (0..count).map(|_| gaussian_in_view(&mut r, &pose, 0.4, (0.05, 0.4))).collect();
    let bg = Vec3::new(r.random(), r.random(), r.random());
    (GaussianScene::from_gaussians(gs, bg), pose)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_poses_ignore_world_frame(seed in any::<u64>(), gseed in any::<u64>()) {
        let ps = poses(seed, 4);
        let (gr, gt) = gauge(gseed);
        let moved: Vec<_> = ps.iter().map(|p| p.change_world(&gr, &gt)).collect();
        for i in 0..4 {
            for j in 0..4 {
                let a = relative_pose(&ps[i], &ps[j]).unwrap();
                let b = relative_pose(&moved[i], &moved[j]).unwrap();
                prop_assert!(max_mat_diff(&a.rotation, &b.rotation) < 1e-10);
                prop_assert!((a.translation - b.translation).max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn geodesic_is_symmetric_and_metric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let [a, b, c] = [0; 3].map(|_| random_rotation(&mut r, std::f64::consts::PI));
        let d = |x: &Mat3<f64>, y: &Mat3<f64>| rotation_geodesic_angle(x, y).unwrap();
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        prop_assert!(d(&a, &a).abs() < 1e-9);
    }

    #[test]
    fn scale_normalization_is_invertible(seed in any::<u64>(), n in 1usize..8) {
        let ps = poses(seed, n);
        let (norm, s) = normalize_scene_scale(&ps).unwrap();
        let largest = norm.iter().map(|p| p.translation.norm()).fold(0.0, f64::max);
        prop_assert!((largest - 1.0).abs() < 1e-12);
        for (p, q) in ps.iter().zip(&norm) {
            prop_assert!((q.translation * s - p.translation).max_abs() < 1e-12);
            prop_assert_eq!(p.rotation, q.rotation);
        }
    }

    #[test]
    fn double_inversion_is_identity(seed in any::<u64>()) {
        for p in poses(seed, 8) {
            let back = invert_pose(&invert_pose(&p).unwrap()).unwrap();
            prop_assert!(max_mat_diff(&back.rotation, &p.rotation) < 1e-12);
            prop_assert!((back.translation - p.translation).max_abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_admits_plain_cholesky(
        s in prop::array::uniform3(-5.0f64..1.5),
        seed in any::<u64>(),
    ) {
        let q = random_quat(&mut rng(seed));
        let c = covariance_from_attributes(&Vec3(s), &q).unwrap().to_f64();
        let m = Matrix3::from_fn(|i, j| c[i][j]);
        prop_assert!(m.cholesky().is_some(), "{c:?}");
    }

    #[test]
    fn pixel_aligned_gaussians_project_home(seed in any::<u64>(), w in 2usize..9, h in 2usize..9) {
        let mut r = rng(seed);
        let k = intrinsics(&mut r, w, h);
        let pose = random_pose(&mut r, k);
        let mut depth = DepthMap::filled(w, h, 0.0);
        for d in depth.data.iter_mut() {
            *d = r.random_range(0.2..20.0);
        }
        let colors = random_image(&mut r, w, h);
        let init = InitConfig { opacity_logit: 1.0, scale_factor: 0.5 };
        let scene = unproject_pixel_aligned(&depth, &colors, &pose, &init, 2, Vec3::zeros()).unwrap();
        prop_assert_eq!(scene.len(), w * h);
        prop_assert!(scene.source_view.iter().all(|v| *v == 2));
        for (i, g) in scene.gaussians.iter().enumerate() {
            let (x, y) = (i % w, i / w);
            let (u, v, z) = project_point(&g.mean, &pose).visible().expect("in front");
            prop_assert!((u - (x as f64 + 0.5)).abs() < 1e-6 && (v - (y as f64 + 0.5)).abs() < 1e-6);
            prop_assert!((z - depth.get(x, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_loss_is_gauge_free(seed in any::<u64>(), gseed in any::<u64>()) {
        let pred = poses(seed, 4);
        let gt = poses(seed ^ 0x5eed, 4);
        let w = LossWeights::default();
        let (gr, gt_) = gauge(gseed);
        let g = |ps: &[CameraPose<f64>]| -> Vec<CameraPose<f64>> { ps.iter().map(|p| p.change_world(&gr, &gt_)).collect() };
        let inv_r = gr.transpose();
        let inv_t = -(inv_r * gt_);
        let g_inv = |ps: &[CameraPose<f64>]| -> Vec<CameraPose<f64>> {
            ps.iter().map(|p| p.change_world(&inv_r, &inv_t)).collect()
        };
        let base = camera_loss(&pred, &gt, &w).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((camera_loss(&g(&pred), &g(&gt), &w).unwrap() - base).abs() < 1e-10);
        let one_sided = camera_loss(&g(&pred), &gt, &w).unwrap();
        prop_assert!((one_sided - camera_loss(&pred, &g_inv(&gt), &w).unwrap()).abs() < 1e-10);
        prop_assert_eq!(camera_loss(&pred, &pred, &w).unwrap(), 0.0);
    }

    #[test]
    fn huber_grows_with_bounded_slope(a in -50.0f64..50.0, step in 0.0f64..10.0, delta in 0.01f64..5.0) {
        let lo = huber(&[a.abs()], delta).unwrap();
        let hi = huber(&[a.abs() + step], delta).unwrap();
        prop_assert!(lo >= 0.0);
        prop_assert!(hi >= lo);
        prop_assert!(hi - lo <= delta * step * (1.0 + 1e-12) + 1e-12);
        prop_assert_eq!(huber(&[a], delta).unwrap(), huber(&[-a], delta).unwrap());
    }

    #[test]
    fn image_metrics_are_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_image(&mut r, 16, 13);
        let b = random_image(&mut r, 16, 13);
        prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn auc_drops_when_a_large_error_is_added(
        first in 0.0f64..4.9,
        rest in prop::collection::vec(0.0f64..40.0, 0..30),
        extra in 20.0f64..1000.0,
    ) {
        let mut errors = vec![first];
        errors.extend(rest);
        let before = pose_auc(&errors, &DEFAULT_AUC_THRESHOLDS).unwrap();
        errors.push(extra);
        let after = pose_auc(&errors, &DEFAULT_AUC_THRESHOLDS).unwrap();
        for ((t, b), (_, a)) in before.iter().zip(&after) {
            prop_assert!((0.0..=1.0).contains(b));
            prop_assert!(a < b, "tau {t}: {a} !< {b}");
        }
    }

    #[test]
    fn pose_errors_ignore_gauges(seed in any::<u64>(), g1 in any::<u64>(), g2 in any::<u64>()) {
        let pred = poses(seed, 5);
        let gt = poses(seed.wrapping_add(1), 5);
        let (r1, t1) = gauge(g1);
        let (r2, t2) = gauge(g2);
        let moved_pred: Vec<_> = pred.iter().map(|p| p.change_world(&r1, &t1)).collect();
        let moved_gt: Vec<_> = gt.iter().map(|p| p.change_world(&r2, &t2)).collect();
        let a = pairwise_pose_errors(&pred, &gt).unwrap();
        let b = pairwise_pose_errors(&moved_pred, &moved_gt).unwrap();
        prop_assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.rot_err_deg - y.rot_err_deg).abs() < 1e-9);
            prop_assert!((x.trans_angle_err_deg - y.trans_angle_err_deg).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_text_round_trips_bit_exactly(seed in any::<u64>(), n in 1usize..6) {
        let recs = records_from_poses(&poses(seed, n));
        let back = parse_poses(&format_poses(&recs)).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(&a.frame_id, &b.frame_id);
            prop_assert_eq!(a.pose.translation, b.pose.translation);
            prop_assert_eq!(a.pose.intrinsics, b.pose.intrinsics);
            // Rotations pass through a quaternion, so only the translation is bit-exact.
            prop_assert!(max_mat_diff(&a.pose.rotation, &b.pose.rotation) < 1e-15);
        }
    }

    #[test]
    fn gaussian_dump_round_trips(seed in any::<u64>(), n in 0usize..20) {
        let mut r = rng(seed);
        let mut scene: GaussianScene<f32> = GaussianScene::new(Vec3::new(0.1, 0.2, 0.3));
        for i in 0..n {
            let g = Gaussian::<f64> {
                mean: Vec3::new(r.random(), r.random(), r.random()),
                log_scale: Vec3::new(r.random(), r.random(), r.random()),
                rotation_q: random_quat(&mut r),
                opacity_logit: r.random_range(-5.0..5.0),
                color: Vec3::new(r.random(), r.random(), r.random()),
            };
            scene.push(g.cast(), if i % 3 == 0 { -1 } else { r.random_range(0..8) });
        }
        let back: GaussianScene<f32> = decode_gaussians(&encode_gaussians(&scene), scene.background).unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn key_values_round_trip(entries in prop::collection::btree_map("[a-z][a-z0-9._]{0,8}", "[ -~&&[^#=]]{0,12}", 0..10)) {
        let kv: KeyValues = entries.into_iter().map(|(k, v)| (k, v.trim().to_string())).collect();
        prop_assert_eq!(parse_key_values(&format_key_values(&kv)).unwrap(), kv);
    }

    #[test]
    fn fps_matches_greedy_enumeration(pts in prop::collection::vec(prop::array::uniform3(0i8..4), 1..11), k in 1usize..11) {
        let centers: Vec<Vec3<f64>> = pts.iter().map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect();
        let k = k.min(centers.len());
        let got = farthest_point_sample(&centers, k).unwrap();
        let mut want = vec![0usize];
        while want.len() < k {
            let score = |i: usize| want.iter().map(|&j| (centers[i] - centers[j]).norm()).fold(f64::INFINITY, f64::min);
            let mut best = None;
            for i in (0..centers.len()).filter(|i| !want.contains(i)) {
                if best.is_none_or(|b| score(i) > score(b)) {
                    best = Some(i);
                }
            }
            want.push(best.unwrap());
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn view_selection_is_disjoint_and_sized(n in 6usize..60, ctx in 1usize..4, tgt in 1usize..3, seed in any::<u64>()) {
        let centers: Vec<Vec3<f64>> = (0..n).map(|i| Vec3::new((i as f64 * 0.3).cos(), (i as f64 * 0.3).sin(), 0.0)).collect();
        let protocol = ViewProtocol::new(ctx, tgt, n - 1, seed);
        let sel = select_views(&centers, &protocol).unwrap();
        prop_assert_eq!(sel.context_indices.len(), ctx);
        prop_assert_eq!(sel.target_indices.len(), tgt);
        prop_assert!(sel.context_indices.iter().all(|c| !sel.target_indices.contains(c)));
        prop_assert_eq!(select_views(&centers, &protocol).unwrap(), sel);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composite_stays_in_range_and_hull(seed in any::<u64>(), count in 1usize..40) {
        let (scene, pose) = view_scene(seed, count, 20, 17);
        let (img, alpha) = render_with_alpha(&scene, &pose, &RenderConfig::default()).unwrap();
        for c in 0..3 {
            let colors = scene.gaussians.iter().map(|g| g.color[c]).chain([scene.background[c]]);
            let lo = colors.clone().fold(f64::INFINITY, f64::min);
            let hi = colors.fold(f64::NEG_INFINITY, f64::max);
            for y in 0..img.height {
                for x in 0..img.width {
                    let v = img.pixel(x, y)[c];
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }
        prop_assert!(alpha.data.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn tiled_render_matches_reference(seed in any::<u64>(), count in 1usize..60) {
        let (scene, pose) = view_scene(seed, count, 37, 29);
        let cfg = RenderConfig::default();
        let tiled = render(&scene, &pose, &cfg).unwrap();
        prop_assert!(tiled.max_abs_diff(&render_reference(&scene, &pose, &cfg).unwrap()) < 1e-5);
        let exact = RenderConfig { t_min: 0.0, ..cfg };
        let tiled = render(&scene, &pose, &exact).unwrap();
        prop_assert!(tiled.max_abs_diff(&render_reference(&scene, &pose, &exact).unwrap()) < 1e-7);
    }

    #[test]
    fn render_ignores_list_order_and_repeats_exactly(seed in any::<u64>(), count in 2usize..40) {
        let (scene, pose) = view_scene(seed, count, 24, 20);
        let cfg = RenderConfig::default();
        let img = render(&scene, &pose, &cfg).unwrap();
        prop_assert_eq!(&render(&scene, &pose, &cfg).unwrap(), &img);
        let mut shuffled = scene.gaussians.clone();
        shuffled.shuffle(&mut rng(seed ^ 1));
        let permuted = GaussianScene::from_gaussians(shuffled, scene.background);
        prop_assert_eq!(&render(&permuted, &pose, &cfg).unwrap(), &img);
    }

    #[test]
    fn epa_never_worsens_and_keeps_rotations(seed in any::<u64>()) {
        let (scene, pose) = view_scene(seed, 12, 12, 12);
        let target: ImageBuffer<f64> = render(&scene, &pose, &RenderConfig::default()).unwrap();
        let mut r = rng(seed ^ 2);
        let start = pose.retract(
            &Vec3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)),
            &Vec3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), 0.0),
        );
        let cfg = EpaConfig { iters: 12, lr: 2e-3, ..Default::default() };
        let res = align_poses_epa(&scene, &[start], &[target], &cfg).unwrap();
        let min = res.trace.iter().map(|e| e.loss.total).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(res.best_loss(), min);
        prop_assert!(res.best_loss() <= res.initial_loss());
        prop_assert!(res.poses[0].rotation.orthonormality_error() < 1e-9);
    }
}

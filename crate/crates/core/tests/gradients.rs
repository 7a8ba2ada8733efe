mod common;

use common::*;
use duosplat::camera::{CameraPose, Intrinsics};
use duosplat::gaussian::GaussianScene;
use duosplat::linalg::Vec3;
use duosplat::loss::LossWeights;
use duosplat::render::{render, render_with_gradients, RenderConfig};

fn camera(rng: &mut impl rand::Rng) -> CameraPose<f64> {
    let k = Intrinsics::new(28.0, 26.0, 12.3, 11.7, 24, 22).unwrap();
    random_pose(rng, k)
}

#[test]
fn single_gaussian_matches_finite_differences() {
    for seed in 0..6 {
        let mut rng = rng(seed);
        let pose = camera(&mut rng);
        let g = gaussian_in_view(&mut rng, &pose, 0.15, (0.08, 0.25));
        let scene = GaussianScene::from_gaussians(vec![g], Vec3::new(0.2, 0.1, 0.4));
        let target = random_image(&mut rng, 24, 22);
        let (_, checks) =
            finite_difference_checks(&scene, &pose, &target, &LossWeights::default(), &RenderConfig::smooth());
        for c in &checks {
            assert!(c.rel_err(1e-9) < 1e-4, "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn perfect_fit_has_zero_gradients() {
    let mut rng = rng(11);
    let pose = camera(&mut rng);
    let gs = (0..5).map(|_| gaussian_in_view(&mut rng, &pose, 0.3, (0.05, 0.2))).collect();
    let scene = GaussianScene::from_gaussians(gs, Vec3::new(0.5, 0.5, 0.5));
    let cfg = RenderConfig::default();
    let target = render(&scene, &pose, &cfg).unwrap();
    let (loss, grads) = render_with_gradients(&scene, &pose, &target, &LossWeights::default(), &cfg).unwrap();
    assert_eq!(loss.mse, 0.0);
    assert_eq!(loss.perceptual, 0.0);
    assert!(grads.gaussian_params().iter().all(|v| v.abs() < 1e-10));
    assert!(grads.d_camera.to_array().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn transparent_gaussian_has_vanishing_color_gradient() {
    let mut rng = rng(5);
    let pose = camera(&mut rng);
    let mut g = gaussian_in_view(&mut rng, &pose, 0.1, (0.1, 0.2));
    g.opacity_logit = -30.0;
    let scene = GaussianScene::from_gaussians(vec![g], Vec3::zeros());
    let target = random_image(&mut rng, 24, 22);
    let (_, grads) =
        render_with_gradients(&scene, &pose, &target, &LossWeights::default(), &RenderConfig::smooth()).unwrap();
    assert!(grads.d_gaussians[0].color.max_abs() < 1e-8);
}

#[test]
fn culled_gaussians_get_exactly_zero() {
    let mut rng = rng(9);
    let pose = camera(&mut rng);
    let visible = gaussian_in_view(&mut rng, &pose, 0.1, (0.1, 0.2));
    let mut behind = visible;
    behind.mean = pose.to_world(&Vec3::new(0.0, 0.0, -1.0));
    let scene = GaussianScene::from_gaussians(vec![visible, behind], Vec3::zeros());
    let target = random_image(&mut rng, 24, 22);
    let (_, grads) =
        render_with_gradients(&scene, &pose, &target, &LossWeights::default(), &RenderConfig::default()).unwrap();
    assert!(grads.d_gaussians[0].to_array().iter().any(|v| *v != 0.0));
    assert!(grads.d_gaussians[1].to_array().iter().all(|v| *v == 0.0));
}

#[test]
fn overlapping_gaussians_match_finite_differences() {
    let mut rng = rng(21);
    let pose = camera(&mut rng);
    let gs = (0..4).map(|_| gaussian_in_view(&mut rng, &pose, 0.12, (0.1, 0.3))).collect();
    let scene = GaussianScene::from_gaussians(gs, Vec3::new(0.3, 0.6, 0.2));
    let target = random_image(&mut rng, 24, 22);
    let (_, checks) =
        finite_difference_checks(&scene, &pose, &target, &LossWeights::default(), &RenderConfig::smooth());
    let nonzero = checks.iter().filter(|c| c.numeric.abs() > 1e-6).count();
    assert!(nonzero > checks.len() / 2);
    for c in &checks {
        assert!(c.rel_err(1e-12) < 1e-5, "{c:?}");
    }
}

#[test]
fn off_axis_jacobian_guard_keeps_gradients_exact() {
    let mut rng = rng(33);
    let pose = camera(&mut rng);
    let k = pose.intrinsics;
    let mut g = gaussian_in_view(&mut rng, &pose, 0.01, (0.6, 0.9));
    // Centre 45 px right of the principal point, past the 1.3·width guard.
    let depth = 2.0;
    g.mean = pose.to_world(&Vec3::new(45.0 / k.fx * depth, -3.0 / k.fy * depth, depth));
    g.opacity_logit = 1.0;
    let near = gaussian_in_view(&mut rng, &pose, 0.1, (0.1, 0.2));
    let scene = GaussianScene::from_gaussians(vec![g, near], Vec3::new(0.2, 0.2, 0.2));
    let target = random_image(&mut rng, 24, 22);
    let (grads, checks) =
        finite_difference_checks(&scene, &pose, &target, &LossWeights::default(), &RenderConfig::smooth());
    assert!(grads.d_gaussians[0].color.max_abs() > 1e-4, "guarded Gaussian should reach the image");
    for c in &checks {
        assert!(c.rel_err(1e-10) < 1e-4, "{c:?}");
    }
}

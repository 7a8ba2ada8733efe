#![allow(dead_code)]

use duosplat::camera::{CameraPose, Intrinsics};
use duosplat::gaussian::{Gaussian, GaussianScene};
use duosplat::image::ImageBuffer;
use duosplat::linalg::{Mat3, Quat, Vec3};
use duosplat::loss::LossWeights;
use duosplat::render::{render_with_gradients, GradientBundle, RenderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Mat3<f64> {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(-max_angle..max_angle);
    Mat3::exp_so3(&(axis.normalized() * angle))
}

pub fn random_pose(rng: &mut impl Rng, k: Intrinsics<f64>) -> CameraPose<f64> {
    let r = random_rotation(rng, std::f64::consts::PI);
    let t = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    CameraPose::new(r, t, k).unwrap()
}

pub fn random_quat(rng: &mut impl Rng) -> Quat<f64> {
    Quat::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalized()
}

/// Random Gaussian in front of `pose`, roughly centered in its image.
pub fn gaussian_in_view(rng: &mut impl Rng, pose: &CameraPose<f64>, spread: f64, sigma: (f64, f64)) -> Gaussian<f64> {
    let k = &pose.intrinsics;
    let depth = rng.random_range(1.5..3.0);
    let u = k.cx + rng.random_range(-spread..spread) * k.width as f64;
    let v = k.cy + rng.random_range(-spread..spread) * k.height as f64;
    let p_cam = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    Gaussian {
        mean: pose.to_world(&p_cam),
        log_scale: Vec3::new(
            rng.random_range(sigma.0..sigma.1).ln(),
            rng.random_range(sigma.0..sigma.1).ln(),
            rng.random_range(sigma.0..sigma.1).ln(),
        ),
        rotation_q: random_quat(rng),
        opacity_logit: rng.random_range(-1.5..2.0),
        color: Vec3::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
    }
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> ImageBuffer<f64> {
    ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// One FD comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// Relative error with an absolute floor for gradients that are numerically zero.
    pub fn rel_err(&self, abs_floor: f64) -> f64 {
        let diff = (self.analytic - self.numeric).abs();
        if diff <= abs_floor {
            return 0.0;
        }
        diff / self.analytic.abs().max(self.numeric.abs())
    }
}

fn loss_of(
    scene: &GaussianScene<f64>,
    pose: &CameraPose<f64>,
    target: &ImageBuffer<f64>,
    w: &LossWeights,
    cfg: &RenderConfig,
) -> f64 {
    render_with_gradients(scene, pose, target, w, cfg).unwrap().0.render
}

/// Central differences of the render loss for every Gaussian attribute and
/// camera parameter, using the step `1e-5 · max(1, |p|)`.
pub fn finite_difference_checks(
    scene: &GaussianScene<f64>,
    pose: &CameraPose<f64>,
    target: &ImageBuffer<f64>,
    w: &LossWeights,
    cfg: &RenderConfig,
) -> (GradientBundle<f64>, Vec<GradCheck>) {
    let (_, grads) = render_with_gradients(scene, pose, target, w, cfg).unwrap();
    let mut checks = Vec::new();
    let names = ["mx", "my", "mz", "ls0", "ls1", "ls2", "qw", "qx", "qy", "qz", "opacity", "r", "g", "b"];
    for (gi, g) in scene.gaussians.iter().enumerate() {
        let base = g.to_array();
        let an = grads.d_gaussians[gi].to_array();
        for k in 0..base.len() {
            let h = 1e-5 * base[k].abs().max(1.0);
            let eval = |delta: f64| {
                let mut s = scene.clone();
                let mut a = base;
                a[k] += delta;
                s.gaussians[gi] = Gaussian::from_slice(&a);
                loss_of(&s, pose, target, w, cfg)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            checks.push(GradCheck { name: format!("g{gi}.{}", names[k]), analytic: an[k], numeric });
        }
    }
    let cam = grads.d_camera.to_array();
    let cam_names = ["wx", "wy", "wz", "tx", "ty", "tz", "fx", "fy", "cx", "cy"];
    for k in 0..10 {
        let perturb = |delta: f64| -> CameraPose<f64> {
            let mut p = *pose;
            match k {
                0..=2 => {
                    let mut w = Vec3::zeros();
                    w[k] = delta;
                    p = p.retract(&w, &Vec3::zeros());
                }
                3..=5 => p.translation[k - 3] += delta,
                6 => p.intrinsics.fx += delta,
                7 => p.intrinsics.fy += delta,
                8 => p.intrinsics.cx += delta,
                _ => p.intrinsics.cy += delta,
            }
            p
        };
        let scale = match k {
            0..=2 => 1.0,
            3..=5 => pose.translation[k - 3].abs().max(1.0),
            6 => pose.intrinsics.fx,
            7 => pose.intrinsics.fy,
            8 => pose.intrinsics.cx.max(1.0),
            _ => pose.intrinsics.cy.max(1.0),
        };
        let h = 1e-5 * scale;
        let numeric =
            (loss_of(scene, &perturb(h), target, w, cfg) - loss_of(scene, &perturb(-h), target, w, cfg)) / (2.0 * h);
        checks.push(GradCheck { name: format!("cam.{}", cam_names[k]), analytic: cam[k], numeric });
    }
    (grads, checks)
}

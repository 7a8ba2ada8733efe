//! Adam/AdamW, evaluation-time pose alignment (EPA) and joint pose and
//! Gaussian optimization.
//!
//! Camera parameters are updated on the manifold: every step produces a
//! [`PoseIncrement`] that is retracted onto the current pose, so Adam moments
//! live in the tangent space. All optimizer arithmetic runs in f64; the
//! renderer is evaluated at the caller's precision `T`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianScene, GAUSSIAN_DIM};
use crate::image::ImageBuffer;
use crate::io::csv_float;
use crate::linalg::Vec3;
use crate::loss::{camera_terms_with_grad, LossBreakdown, LossWeights};
use crate::render::{render_with_gradients, CameraGrad, RenderConfig};
use crate::scalar::Real;

/// Number of optimized scalars per camera: ω (3), dt (3), normalized intrinsics (4).
pub const POSE_DOF: usize = 10;

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(len: usize, lr: f64) -> Self {
        OptimState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

fn check_grads(grads: &[f64], state: &OptimState) -> Result<()> {
    if grads.len() != state.len() {
        return Err(Error::ShapeMismatch(format!("{} gradients for {} optimizer slots", grads.len(), state.len())));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(())
}

/// Advances the moments and returns the Adam update `−lr·m̂/(√v̂ + ε)` without applying it.
pub fn adam_direction(grads: &[f64], state: &mut OptimState) -> Result<Vec<f64>> {
    check_grads(grads, state)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = Vec::with_capacity(grads.len());
    for (k, &g) in grads.iter().enumerate() {
        let m = &mut state.first_moment[k];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        let v = &mut state.second_moment[k];
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[k] / bc1;
        let v_hat = state.second_moment[k] / bc2;
        out.push(-state.lr * m_hat / (v_hat.sqrt() + state.eps));
    }
    Ok(out)
}

/// Standard Adam update applied in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!("{} params vs {} gradients", params.len(), grads.len())));
    }
    let d = adam_direction(grads, state)?;
    params.iter_mut().zip(d).for_each(|(p, d)| *p += d);
    Ok(())
}

/// Adam with decoupled weight decay on the entries selected by `decay_mask`.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    weight_decay: f64,
    decay_mask: &[bool],
) -> Result<()> {
    if params.len() != grads.len() || decay_mask.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} gradients, {} mask entries",
            params.len(),
            grads.len(),
            decay_mask.len()
        )));
    }
    let d = adam_direction(grads, state)?;
    let shrink = 1.0 - state.lr * weight_decay;
    for ((p, d), &decay) in params.iter_mut().zip(d).zip(decay_mask) {
        if decay {
            *p *= shrink;
        }
        *p += d;
    }
    Ok(())
}

/// Tangent-space camera update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseIncrement {
    pub omega: [f64; 3],
    pub dt: [f64; 3],
    /// `(fx, fy, cx, cy)` in units of image width/height.
    pub dk: [f64; 4],
}

impl PoseIncrement {
    pub fn from_slice(a: &[f64]) -> Self {
        PoseIncrement { omega: [a[0], a[1], a[2]], dt: [a[3], a[4], a[5]], dk: [a[6], a[7], a[8], a[9]] }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(&self.dt).chain(&self.dk).all(|v| v.is_finite())
    }

    /// `R ← exp([ω]ₓ)·R`, `t ← exp([ω]ₓ)·t + dt`, intrinsics shifted by `dk` scaled to pixels.
    pub fn apply(&self, pose: &CameraPose<f64>) -> CameraPose<f64> {
        let mut p = pose.retract(&Vec3(self.omega), &Vec3(self.dt));
        let (w, h) = (p.intrinsics.width as f64, p.intrinsics.height as f64);
        p.intrinsics.fx += self.dk[0] * w;
        p.intrinsics.fy += self.dk[1] * h;
        p.intrinsics.cx += self.dk[2] * w;
        p.intrinsics.cy += self.dk[3] * h;
        p
    }
}

/// Converts a renderer camera gradient (intrinsics in pixels) into the increment parameterization.
fn camera_grad_to_increment<T: Real>(g: &CameraGrad<T>, pose: &CameraPose<f64>) -> [f64; POSE_DOF] {
    let a = g.to_array().map(|v| v.to_f());
    let (w, h) = (pose.intrinsics.width as f64, pose.intrinsics.height as f64);
    [a[0], a[1], a[2], a[3], a[4], a[5], a[6] * w, a[7] * h, a[8] * w, a[9] * h]
}

/// One optimizer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

pub const TRACE_CSV_HEADER: &str = "iter,mse,perceptual,render,rot,trans,intr,total,wall_ms";

/// Trace as CSV. With `with_timing = false` the `wall_ms` column is written as 0
/// so that repeated runs are byte-identical.
pub fn trace_csv(trace: &[TraceEntry], with_timing: bool) -> String {
    let mut s = String::from(TRACE_CSV_HEADER);
    s.push('\n');
    for e in trace {
        let l = &e.loss;
        let ms = if with_timing { e.wall_ms } else { 0.0 };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.3}",
            e.iter,
            csv_float(l.mse),
            csv_float(l.perceptual),
            csv_float(l.render),
            csv_float(l.rot),
            csv_float(l.trans),
            csv_float(l.intr),
            csv_float(l.total),
            ms
        );
    }
    s
}

/// Evaluation-time pose alignment settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpaConfig {
    pub iters: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Refine focal lengths and principal point as well as extrinsics.
    pub optimize_intrinsics: bool,
    /// Include the perceptual proxy in the alignment objective.
    pub include_perceptual: bool,
    pub weights: LossWeights,
    pub reortho_every: usize,
    pub render: RenderConfig,
}

impl Default for EpaConfig {
    fn default() -> Self {
        EpaConfig {
            iters: 100,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            optimize_intrinsics: true,
            include_perceptual: true,
            weights: LossWeights::default(),
            reortho_every: 50,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpaResult<T> {
    /// Poses at the lowest-loss iterate.
    pub poses: Vec<CameraPose<T>>,
    /// `iters + 1` entries: the loss before each update and after the last one.
    pub trace: Vec<TraceEntry>,
    pub best_iter: usize,
}

impl<T> EpaResult<T> {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0].loss.total
    }

    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_iter].loss.total
    }
}

fn check_views<T>(poses: usize, images: &[ImageBuffer<T>]) -> Result<()> {
    if poses != images.len() {
        return Err(Error::ShapeMismatch(format!("{poses} cameras but {} images", images.len())));
    }
    Ok(())
}

/// Refines every camera against its target image with the scene frozen.
///
/// Minimizes the mean render loss over the views with Adam on [`PoseIncrement`]s
/// and returns the best iterate seen.
pub fn align_poses_epa<T: Real>(
    scene: &GaussianScene<T>,
    cameras: &[CameraPose<T>],
    targets: &[ImageBuffer<T>],
    cfg: &EpaConfig,
) -> Result<EpaResult<T>> {
    check_views(cameras.len(), targets)?;
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let w = if cfg.include_perceptual { cfg.weights } else { cfg.weights.mse_only() };
    let nv = cameras.len();
    let mut poses: Vec<CameraPose<f64>> = cameras.iter().map(|p| p.cast()).collect();
    let mut state = OptimState::new(nv * POSE_DOF, cfg.lr).with_betas(cfg.beta1, cfg.beta2);
    state.eps = cfg.eps;
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best = (0usize, f64::INFINITY, cameras.to_vec());

    for it in 0..=cfg.iters {
        let mut loss = LossBreakdown::default();
        let mut grads = vec![0.0; nv * POSE_DOF];
        for (v, (pose, target)) in poses.iter().zip(targets).enumerate() {
            let (l, g) = render_with_gradients(scene, &pose.cast::<T>(), target, &w, &cfg.render)?;
            loss.mse += l.mse / nv as f64;
            loss.perceptual += l.perceptual / nv as f64;
            loss.render += l.render / nv as f64;
            let inc = camera_grad_to_increment(&g.d_camera, pose);
            for (k, gk) in inc.iter().enumerate() {
                grads[v * POSE_DOF + k] = gk / nv as f64;
            }
        }
        loss.total = loss.render;
        trace.push(TraceEntry { iter: it, loss, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
        if loss.total < best.1 {
            best = (it, loss.total, poses.iter().map(|p| p.cast()).collect());
        }
        if it == cfg.iters {
            break;
        }
        if !cfg.optimize_intrinsics {
            grads.chunks_exact_mut(POSE_DOF).for_each(|c| c[6..].fill(0.0));
        }
        let step = adam_direction(&grads, &mut state)?;
        apply_pose_steps(&mut poses, &step, it + 1, cfg.reortho_every);
    }
    Ok(EpaResult { poses: best.2, trace, best_iter: best.0 })
}

fn apply_pose_steps(poses: &mut [CameraPose<f64>], step: &[f64], step_count: usize, reortho_every: usize) {
    for (p, s) in poses.iter_mut().zip(step.chunks_exact(POSE_DOF)) {
        *p = PoseIncrement::from_slice(s).apply(p);
        if reortho_every > 0 && step_count.is_multiple_of(reortho_every) {
            *p = p.reorthonormalized();
        }
    }
}

/// Joint pose and Gaussian optimization settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointConfig {
    pub iters: usize,
    /// Learning rate for camera increments.
    pub pose_lr: f64,
    /// Learning rate for Gaussian attributes.
    pub gaussian_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay on `log_scale` and `opacity_logit` only.
    pub weight_decay: f64,
    pub optimize_poses: bool,
    pub optimize_intrinsics: bool,
    pub optimize_gaussians: bool,
    /// Random subset of targets rendered per iteration; `None` renders all.
    pub targets_per_iter: Option<usize>,
    pub seed: u64,
    pub reortho_every: usize,
    pub render: RenderConfig,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            iters: 100,
            pose_lr: 2e-5,
            gaussian_lr: 2e-5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.05,
            optimize_poses: true,
            optimize_intrinsics: true,
            optimize_gaussians: true,
            targets_per_iter: None,
            seed: 0,
            reortho_every: 50,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointResult<T> {
    pub poses: Vec<CameraPose<T>>,
    pub scene: GaussianScene<T>,
    pub trace: Vec<TraceEntry>,
    pub best_iter: usize,
}

impl<T> JointResult<T> {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0].loss.total
    }

    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_iter].loss.total
    }
}

/// Descends the total objective over camera increments and Gaussian attributes.
///
/// `images[..n_context]` are context views and the rest are targets; only
/// targets enter the render loss. Camera supervision is added when `gt_poses`
/// is given. Returns the best iterate by total loss.
pub fn joint_optimize<T: Real>(
    images: &[ImageBuffer<T>],
    n_context: usize,
    init_poses: &[CameraPose<T>],
    gt_poses: Option<&[CameraPose<T>]>,
    init_scene: &GaussianScene<T>,
    w: &LossWeights,
    cfg: &JointConfig,
) -> Result<JointResult<T>> {
    check_views(init_poses.len(), images)?;
    if n_context >= images.len() {
        return Err(Error::TooFewTargets);
    }
    if let Some(gt) = gt_poses {
        if gt.len() != init_poses.len() {
            return Err(Error::LengthMismatch(init_poses.len(), gt.len()));
        }
    }
    let views: Vec<usize> = (n_context..images.len()).collect();
    optimize(images, &views, init_poses, gt_poses, init_scene, w, cfg)
}

/// Fits Gaussian attributes to `images` seen from fixed `poses`.
pub fn fit_scene<T: Real>(
    images: &[ImageBuffer<T>],
    poses: &[CameraPose<T>],
    init_scene: &GaussianScene<T>,
    w: &LossWeights,
    cfg: &JointConfig,
) -> Result<JointResult<T>> {
    check_views(poses.len(), images)?;
    if images.is_empty() {
        return Err(Error::TooFewTargets);
    }
    let frozen = JointConfig { optimize_poses: false, ..*cfg };
    let views: Vec<usize> = (0..images.len()).collect();
    optimize(images, &views, poses, None, init_scene, w, &frozen)
}

fn optimize<T: Real>(
    images: &[ImageBuffer<T>],
    loss_views: &[usize],
    init_poses: &[CameraPose<T>],
    gt_poses: Option<&[CameraPose<T>]>,
    init_scene: &GaussianScene<T>,
    w: &LossWeights,
    cfg: &JointConfig,
) -> Result<JointResult<T>> {
    w.validate()?;
    if init_scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let n = init_poses.len();
    let gt64: Option<Vec<CameraPose<f64>>> = gt_poses.map(|g| g.iter().map(|p| p.cast()).collect());
    let mut poses: Vec<CameraPose<f64>> = init_poses.iter().map(|p| p.cast()).collect();
    let mut scene: GaussianScene<f64> = init_scene.cast();
    let mut params = scene.to_params();
    let decay_mask: Vec<bool> = (0..params.len()).map(|k| matches!(k % GAUSSIAN_DIM, 3..=5 | 10)).collect();

    let mut pose_state = OptimState::new(n * POSE_DOF, cfg.pose_lr).with_betas(cfg.beta1, cfg.beta2);
    pose_state.eps = cfg.eps;
    let mut g_state = OptimState::new(params.len(), cfg.gaussian_lr).with_betas(cfg.beta1, cfg.beta2);
    g_state.eps = cfg.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best: Option<(usize, f64, Vec<CameraPose<f64>>, GaussianScene<f64>)> = None;

    for it in 0..=cfg.iters {
        let batch: Vec<usize> = match cfg.targets_per_iter {
            Some(k) if k < loss_views.len() => {
                let mut idx: Vec<usize> = sample(&mut rng, loss_views.len(), k.max(1)).into_iter().collect();
                idx.sort_unstable();
                idx.into_iter().map(|i| loss_views[i]).collect()
            }
            _ => loss_views.to_vec(),
        };
        let scene_t: GaussianScene<T> = scene.cast();
        let nb = batch.len() as f64;
        let mut loss = LossBreakdown::default();
        let mut pose_grads = vec![0.0; n * POSE_DOF];
        let mut g_grads = vec![0.0; params.len()];
        for &v in &batch {
            let (l, g) = render_with_gradients(&scene_t, &poses[v].cast::<T>(), &images[v], w, &cfg.render)?;
            loss.mse += l.mse / nb;
            loss.perceptual += l.perceptual / nb;
            loss.render += l.render / nb;
            let inc = camera_grad_to_increment(&g.d_camera, &poses[v]);
            for (k, gk) in inc.iter().enumerate() {
                pose_grads[v * POSE_DOF + k] += gk / nb;
            }
            for (acc, gv) in g_grads.iter_mut().zip(g.gaussian_params()) {
                *acc += gv.to_f() / nb;
            }
        }
        if let Some(gt) = &gt64 {
            let (terms, cam_grads) = camera_terms_with_grad(&poses, gt, w)?;
            loss.rot = terms.rot;
            loss.trans = terms.trans;
            loss.intr = terms.intr;
            loss.cam = terms.cam;
            for (v, cg) in cam_grads.iter().enumerate() {
                for (k, gk) in cg.to_array().iter().enumerate() {
                    pose_grads[v * POSE_DOF + k] += gk;
                }
            }
        }
        loss.total = loss.render + loss.cam;
        trace.push(TraceEntry { iter: it, loss, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
        if best.as_ref().is_none_or(|b| loss.total < b.1) {
            best = Some((it, loss.total, poses.clone(), scene.clone()));
        }
        if it == cfg.iters {
            break;
        }

        if cfg.optimize_poses {
            if !cfg.optimize_intrinsics {
                pose_grads.chunks_exact_mut(POSE_DOF).for_each(|c| c[6..].fill(0.0));
            }
            let step = adam_direction(&pose_grads, &mut pose_state)?;
            apply_pose_steps(&mut poses, &step, it + 1, cfg.reortho_every);
        }
        if cfg.optimize_gaussians {
            adamw_step(&mut params, &g_grads, &mut g_state, cfg.weight_decay, &decay_mask)?;
            for chunk in params.chunks_exact_mut(GAUSSIAN_DIM) {
                let qn = (chunk[6] * chunk[6] + chunk[7] * chunk[7] + chunk[8] * chunk[8] + chunk[9] * chunk[9]).sqrt();
                chunk[6..10].iter_mut().for_each(|q| *q /= qn);
                chunk[11..14].iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
            }
            scene.set_params(&params);
        }
    }
    let (best_iter, _, best_poses, best_scene) = best.expect("at least one iteration is evaluated");
    Ok(JointResult { poses: best_poses.iter().map(|p| p.cast()).collect(), scene: best_scene.cast(), trace, best_iter })
}

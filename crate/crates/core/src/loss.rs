//! Training and evaluation losses: photometric render loss, relative-pose
//! camera loss and their composition into the total objective.
//!
//! The perceptual term is a deterministic proxy: the mean squared difference
//! of horizontal and vertical finite-difference gradient maps.

use crate::camera::{check_rotation, geodesic_unchecked, relative_unchecked, CameraPose, Intrinsics, RelativePose};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::io::csv_float;
use crate::linalg::Vec3;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_perc: f64,
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub lambda_k: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_perc: 0.5, lambda_r: 0.1, lambda_t: 10.0, lambda_k: 0.5, huber_delta: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_perc, self.lambda_r, self.lambda_t, self.lambda_k, self.huber_delta];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.huber_delta <= 0.0 {
            return Err(Error::NonPositiveDelta(self.huber_delta));
        }
        Ok(())
    }

    /// Same weights without the perceptual term.
    pub fn mse_only(&self) -> Self {
        LossWeights { lambda_perc: 0.0, ..*self }
    }
}

/// Per-term loss values.
///
/// `render = mse + λ_perc·perceptual`, `cam = λ_R·rot + λ_t·trans + λ_K·intr`
/// and `total = render + cam`, where `rot`/`trans` are means over ordered view
/// pairs, `intr` the mean over views and the render terms means over targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub perceptual: f64,
    pub render: f64,
    pub rot: f64,
    pub trans: f64,
    pub intr: f64,
    pub cam: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "mse,perceptual,render,rot,trans,intr,cam,total";

    pub fn csv_row(&self) -> String {
        let v = [self.mse, self.perceptual, self.render, self.rot, self.trans, self.intr, self.cam, self.total];
        v.map(csv_float).join(",")
    }

    pub fn is_finite(&self) -> bool {
        [self.mse, self.perceptual, self.render, self.rot, self.trans, self.intr, self.cam, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Huber penalty of one component.
#[inline]
fn huber_scalar(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
fn huber_scalar_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Sum over components of the Huber penalty with threshold `delta`.
pub fn huber<T: Real>(residual: &[T], delta: T) -> Result<T> {
    let d = delta.to_f();
    if !(d > 0.0) {
        return Err(Error::NonPositiveDelta(d));
    }
    Ok(T::c(residual.iter().map(|r| huber_scalar(r.to_f(), d)).sum()))
}

/// Geodesic angle between predicted and ground-truth relative rotations.
pub fn rotation_loss<T: Real>(rel_pred: &RelativePose<T>, rel_gt: &RelativePose<T>) -> Result<T> {
    crate::camera::rotation_geodesic_angle(&rel_gt.rotation, &rel_pred.rotation)
}

pub fn translation_loss<T: Real>(rel_pred: &RelativePose<T>, rel_gt: &RelativePose<T>, delta: T) -> Result<T> {
    huber(&(rel_pred.translation - rel_gt.translation).0, delta)
}

/// Squared distance between `(fx/W, fy/H, cx/W, cy/H)` vectors.
pub fn intrinsics_loss<T: Real>(k_pred: &Intrinsics<T>, k_gt: &Intrinsics<T>) -> Result<T> {
    if k_pred.width != k_gt.width || k_pred.height != k_gt.height {
        return Err(Error::ShapeMismatch(format!(
            "intrinsics for {}x{} vs {}x{}",
            k_pred.width, k_pred.height, k_gt.width, k_gt.height
        )));
    }
    let (a, b) = (k_pred.normalized(), k_gt.normalized());
    Ok((0..4).map(|m| (a[m] - b[m]) * (a[m] - b[m])).sum())
}

/// Unweighted camera-loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CameraTerms {
    /// Mean rotation loss over ordered pairs.
    pub rot: f64,
    /// Mean translation loss over ordered pairs.
    pub trans: f64,
    /// Mean intrinsics loss over views.
    pub intr: f64,
    /// `λ_R·rot + λ_t·trans + λ_K·intr`.
    pub cam: f64,
}

/// Gradient of a loss w.r.t. one camera's tangent increment.
///
/// `omega` turns the camera about its centre (`R ← E·R`, `t ← E·t`), `translation` adds to `t`, and
/// `intrinsics` is in normalized units (`fx += dk₀·W`, `fy += dk₁·H`, `cx += dk₂·W`, `cy += dk₃·H`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseGrad {
    pub omega: [f64; 3],
    pub translation: [f64; 3],
    pub intrinsics: [f64; 4],
}

impl PoseGrad {
    pub fn add(&mut self, o: &PoseGrad) {
        for k in 0..3 {
            self.omega[k] += o.omega[k];
            self.translation[k] += o.translation[k];
        }
        for k in 0..4 {
            self.intrinsics[k] += o.intrinsics[k];
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        let mut a = [0.0; 10];
        a[0..3].copy_from_slice(&self.omega);
        a[3..6].copy_from_slice(&self.translation);
        a[6..10].copy_from_slice(&self.intrinsics);
        a
    }
}

fn check_pose_lists<T: Real>(pred: &[CameraPose<T>], gt: &[CameraPose<T>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.len() < 2 {
        return Err(Error::TooFewViews(pred.len()));
    }
    for p in pred.iter().chain(gt) {
        check_rotation(&p.rotation)?;
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.intrinsics.width != g.intrinsics.width || p.intrinsics.height != g.intrinsics.height {
            return Err(Error::ShapeMismatch("predicted and ground-truth image sizes differ".into()));
        }
    }
    Ok(())
}

/// Relative-pose camera loss averaged over all ordered pairs plus the
/// intrinsics term averaged over views.
pub fn camera_loss<T: Real>(pred: &[CameraPose<T>], gt: &[CameraPose<T>], w: &LossWeights) -> Result<T> {
    Ok(T::c(camera_terms(pred, gt, w)?.cam))
}

pub fn camera_terms<T: Real>(pred: &[CameraPose<T>], gt: &[CameraPose<T>], w: &LossWeights) -> Result<CameraTerms> {
    Ok(camera_terms_impl(pred, gt, w, false)?.0)
}

/// Camera terms together with per-view gradients of the weighted `cam` value.
pub fn camera_terms_with_grad<T: Real>(
    pred: &[CameraPose<T>],
    gt: &[CameraPose<T>],
    w: &LossWeights,
) -> Result<(CameraTerms, Vec<PoseGrad>)> {
    camera_terms_impl(pred, gt, w, true)
}

fn camera_terms_impl<T: Real>(
    pred: &[CameraPose<T>],
    gt: &[CameraPose<T>],
    w: &LossWeights,
    want_grad: bool,
) -> Result<(CameraTerms, Vec<PoseGrad>)> {
    w.validate()?;
    check_pose_lists(pred, gt)?;
    let n = pred.len();
    let pred: Vec<CameraPose<f64>> = pred.iter().map(|p| p.cast()).collect();
    let gt: Vec<CameraPose<f64>> = gt.iter().map(|p| p.cast()).collect();
    let pairs = (n * (n - 1)) as f64;
    let mut grads = vec![PoseGrad::default(); if want_grad { n } else { 0 }];
    let (mut rot_sum, mut trans_sum) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let rp = relative_unchecked(&pred[i], &pred[j]);
            let rg = relative_unchecked(&gt[i], &gt[j]);
            let m = rp.rotation * rg.rotation.transpose();
            let cos_raw = (m.trace() - 1.0) * 0.5;
            let theta = geodesic_unchecked(&rp.rotation, &rg.rotation);
            rot_sum += theta;
            let resid = rp.translation - rg.translation;
            trans_sum += resid.0.iter().map(|r| huber_scalar(*r, w.huber_delta)).sum::<f64>();

            if want_grad {
                let scale_r = w.lambda_r / pairs;
                let scale_t = w.lambda_t / pairs;
                // Left-perturbation gradient of θ; zero at the clamped/non-smooth endpoints.
                let sin = theta.sin();
                let g_left =
                    if cos_raw.abs() < 1.0 && sin > 1e-12 { m.skew_trace_dual() * (-0.5 / sin) } else { Vec3::zeros() };
                let g_left = g_left * scale_r;
                let rt = rp.rotation.transpose();
                let gt_vec = Vec3(resid.0.map(|r| huber_scalar_grad(r, w.huber_delta))) * scale_t;
                // Turning camera i turns the whole relative pose; turning camera j
                // leaves the relative translation alone.
                let gi_omega = g_left + rp.translation.cross(&gt_vec);
                let gj_omega = -(rt * g_left);
                let gj_trans = -(rt * gt_vec);
                for k in 0..3 {
                    grads[i].omega[k] += gi_omega[k];
                    grads[i].translation[k] += gt_vec[k];
                    grads[j].omega[k] += gj_omega[k];
                    grads[j].translation[k] += gj_trans[k];
                }
            }
        }
    }
    let mut intr_sum = 0.0;
    for v in 0..n {
        let (a, b) = (pred[v].intrinsics.normalized(), gt[v].intrinsics.normalized());
        for m in 0..4 {
            let d = a[m] - b[m];
            intr_sum += d * d;
            if want_grad {
                grads[v].intrinsics[m] += w.lambda_k / n as f64 * 2.0 * d;
            }
        }
    }
    let rot = rot_sum / pairs;
    let trans = trans_sum / pairs;
    let intr = intr_sum / n as f64;
    let cam = w.lambda_r * rot + w.lambda_t * trans + w.lambda_k * intr;
    Ok((CameraTerms { rot, trans, intr, cam }, grads))
}

/// `(mse, perceptual_proxy, mse + λ_perc·perceptual_proxy)`.
pub fn render_loss<T: Real>(rendered: &ImageBuffer<T>, target: &ImageBuffer<T>, w: &LossWeights) -> Result<(T, T, T)> {
    rendered.same_shape(target)?;
    let r: Vec<f64> = rendered.rgb.iter().map(|v| v.to_f()).collect();
    let t: Vec<f64> = target.rgb.iter().map(|v| v.to_f()).collect();
    let (mse, perc, combined) = render_loss_f64(&r, &t, rendered.width, rendered.height, w.lambda_perc, None);
    Ok((T::c(mse), T::c(perc), T::c(combined)))
}

/// Mean squared error between finite-difference gradient maps.
pub fn perceptual_proxy<T: Real>(rendered: &ImageBuffer<T>, target: &ImageBuffer<T>) -> Result<T> {
    Ok(render_loss(rendered, target, &LossWeights { lambda_perc: 1.0, ..Default::default() })?.1)
}

/// Render loss on interleaved f64 buffers; writes `∂combined/∂rendered` into `grad` when given.
pub(crate) fn render_loss_f64(
    r: &[f64],
    t: &[f64],
    width: usize,
    height: usize,
    lambda_perc: f64,
    mut grad: Option<&mut [f64]>,
) -> (f64, f64, f64) {
    let n = r.len() as f64;
    let mut mse = 0.0;
    for (i, (a, b)) in r.iter().zip(t).enumerate() {
        let d = a - b;
        mse += d * d;
        if let Some(g) = grad.as_deref_mut() {
            g[i] = 2.0 * d / n;
        }
    }
    mse /= n;

    let nh = height * width.saturating_sub(1) * 3;
    let nv = height.saturating_sub(1) * width * 3;
    let count = (nh + nv) as f64;
    let mut perc = 0.0;
    if count > 0.0 {
        let idx = |x: usize, y: usize, c: usize| 3 * (y * width + x) + c;
        let scale_g = lambda_perc * 2.0 / count;
        let mut visit = |a: usize, b: usize, grad: &mut Option<&mut [f64]>| {
            let e = (r[b] - r[a]) - (t[b] - t[a]);
            perc += e * e;
            if let Some(g) = grad.as_deref_mut() {
                g[b] += scale_g * e;
                g[a] -= scale_g * e;
            }
        };
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    if x + 1 < width {
                        visit(idx(x, y, c), idx(x + 1, y, c), &mut grad);
                    }
                    if y + 1 < height {
                        visit(idx(x, y, c), idx(x, y + 1, c), &mut grad);
                    }
                }
            }
        }
        perc /= count;
    }
    (mse, perc, mse + lambda_perc * perc)
}

/// Total objective over `N_t` rendered targets and `N` predicted/ground-truth poses.
///
/// When `gt_poses` is `None` the camera terms are zero.
pub fn total_loss<T: Real>(
    rendered: &[ImageBuffer<T>],
    targets: &[ImageBuffer<T>],
    pred_poses: &[CameraPose<T>],
    gt_poses: Option<&[CameraPose<T>]>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if rendered.len() != targets.len() {
        return Err(Error::LengthMismatch(rendered.len(), targets.len()));
    }
    if rendered.is_empty() {
        return Err(Error::TooFewTargets);
    }
    let mut out = LossBreakdown::default();
    for (r, t) in rendered.iter().zip(targets) {
        let (mse, perc, _) = render_loss(r, t, w)?;
        out.mse += mse.to_f();
        out.perceptual += perc.to_f();
    }
    let nt = rendered.len() as f64;
    out.mse /= nt;
    out.perceptual /= nt;
    out.render = out.mse + w.lambda_perc * out.perceptual;
    if let Some(gt) = gt_poses {
        let terms = camera_terms(pred_poses, gt, w)?;
        out.rot = terms.rot;
        out.trans = terms.trans;
        out.intr = terms.intr;
        out.cam = terms.cam;
    }
    out.total = out.render + out.cam;
    Ok(out)
}

//! Gaussian splatting: EWA projection, tile rasterization, a brute-force
//! reference rasterizer and reverse-mode gradients.

mod backward;
mod raster;
mod reference;

pub use backward::{render_backward, render_with_gradients, CameraGrad, GaussianGrad, GradientBundle};
pub use raster::{render, render_with_alpha, ForwardState};
pub use reference::{render_reference, render_reference_features};

use crate::camera::{CameraPose, Intrinsics, DEFAULT_NEAR_PLANE};
use crate::gaussian::{covariance_unchecked, Gaussian};
use crate::linalg::{Sym2, Vec3};
use crate::scalar::{sigmoid, Real};

/// Rasterizer constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Cap on per-sample alpha.
    pub alpha_max: f64,
    /// Samples with alpha below this are skipped.
    pub alpha_cut: f64,
    /// Compositing stops once transmittance falls below this. The dropped tail
    /// is worth at most `t_min` times the colour spread, so the default keeps
    /// tiled output within 1e-5 of the exhaustive renderer.
    pub t_min: f64,
    /// Added to both diagonal entries of the screen covariance (px²).
    pub dilation: f64,
    pub near: f64,
    /// Screen covariances with determinant at or below this are dropped.
    pub det_guard: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tile_size: 16,
            alpha_max: 0.999,
            alpha_cut: 1.0 / 255.0,
            t_min: 1e-5,
            dilation: 0.3,
            near: DEFAULT_NEAR_PLANE,
            det_guard: 1e-12,
        }
    }
}

impl RenderConfig {
    /// No alpha cut-off and no early termination; compositing is then smooth in
    /// every parameter away from the alpha cap.
    pub fn smooth() -> Self {
        RenderConfig { alpha_cut: 0.0, t_min: 0.0, ..Default::default() }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    /// Index into the scene.
    pub index: usize,
    pub mean2d: [T; 2],
    /// Dilated screen covariance (px²).
    pub cov2d: Sym2<T>,
    pub conic: Sym2<T>,
    pub depth: T,
    /// Color clamped to `[0, 1]`.
    pub color: [T; 3],
    pub opacity: T,
    /// Half-widths of the screen bounding box outside which alpha is below the cut-off.
    /// Infinite when the cut-off is zero.
    pub extent: [f64; 2],
}

/// Perspective projection Jacobian rows at camera point `p`.
/// Off-axis reach of the projection Jacobian, as a multiple of the image size
/// in pixels. Far outside the frustum the affine approximation is meaningless
/// and would give near-grazing Gaussians screen-filling footprints.
pub const JACOBIAN_GUARD: f64 = 1.3;

/// Perspective Jacobian with the off-axis terms `fx·x/z`, `fy·y/z` clamped to
/// `±JACOBIAN_GUARD·(W, H)`. Also reports which axes hit the clamp.
#[inline]
pub(crate) fn projection_jacobian<T: Real>(p: &Vec3<T>, k: &Intrinsics<T>) -> ([[T; 3]; 2], [bool; 2]) {
    let z = p.z();
    let iz = T::one() / z;
    let bx = T::c(JACOBIAN_GUARD * k.width as f64);
    let by = T::c(JACOBIAN_GUARD * k.height as f64);
    let (ox, oy) = (k.fx * p.x() * iz, k.fy * p.y() * iz);
    let tx = ox.max(-bx).min(bx);
    let ty = oy.max(-by).min(by);
    ([[k.fx * iz, T::zero(), -tx * iz], [T::zero(), k.fy * iz, -ty * iz]], [tx != ox, ty != oy])
}

/// EWA projection of `g` into `pose`; `None` when culled.
///
/// Culled means behind the near plane, a degenerate screen covariance, or a
/// footprint that cannot reach the image rectangle.
pub fn project_gaussian<T: Real>(
    g: &Gaussian<T>,
    index: usize,
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Option<ProjectedGaussian<T>> {
    let p = pose.to_camera(&g.mean);
    if !(p.z() > T::c(cfg.near)) {
        return None;
    }
    let k = &pose.intrinsics;
    let cov = covariance_unchecked(&g.log_scale, &g.rotation_q.normalized());
    let r = &pose.rotation;
    let cov_cam = *r * cov * r.transpose();
    let (j, _) = projection_jacobian(&p, k);
    let jc0 = cov_cam * Vec3(j[0]);
    let jc1 = cov_cam * Vec3(j[1]);
    let dil = T::c(cfg.dilation);
    let cov2d = Sym2 { a: Vec3(j[0]).dot(&jc0) + dil, b: Vec3(j[0]).dot(&jc1), c: Vec3(j[1]).dot(&jc1) + dil };
    if !(cov2d.det().to_f() > cfg.det_guard) {
        return None;
    }
    let conic = cov2d.inverse()?;
    let iz = T::one() / p.z();
    let mean2d = [k.fx * p.x() * iz + k.cx, k.fy * p.y() * iz + k.cy];
    let opacity = sigmoid(g.opacity_logit);
    let color = g.color.0.map(|c| c.max(T::zero()).min(T::one()));

    let extent = if cfg.alpha_cut > 0.0 {
        let o = opacity.to_f().min(cfg.alpha_max);
        if o < cfg.alpha_cut {
            return None;
        }
        let q_cut = 2.0 * (o / cfg.alpha_cut).ln();
        // Slight inflation so rounding never drops a pixel the reference keeps.
        let grow = |var: f64| (q_cut * var).sqrt() * 1.0001 + 1e-3;
        [grow(cov2d.a.to_f()), grow(cov2d.c.to_f())]
    } else {
        [f64::INFINITY; 2]
    };
    let (mx, my) = (mean2d[0].to_f(), mean2d[1].to_f());
    if !(mx.is_finite() && my.is_finite()) {
        return None;
    }
    let (w, h) = (k.width as f64, k.height as f64);
    if mx + extent[0] < 0.0 || mx - extent[0] > w || my + extent[1] < 0.0 || my - extent[1] > h {
        return None;
    }
    Some(ProjectedGaussian { index, mean2d, cov2d, conic, depth: p.z(), color, opacity, extent })
}

/// Projects every Gaussian and returns the visible ones sorted front to back,
/// ties broken by scene index.
pub(crate) fn project_and_sort<T: Real>(
    gaussians: &[Gaussian<T>],
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Vec<ProjectedGaussian<T>> {
    let mut out: Vec<_> = gaussians.iter().enumerate().filter_map(|(i, g)| project_gaussian(g, i, pose, cfg)).collect();
    out.sort_by(|a, b| a.depth.to_f().total_cmp(&b.depth.to_f()).then(a.index.cmp(&b.index)));
    out
}

/// Per-sample alpha before the cut-off test; also returns the Gaussian falloff.
#[inline]
pub(crate) fn sample_alpha(conic: &[f64; 3], opacity: f64, dx: f64, dy: f64, alpha_max: f64) -> (f64, f64, bool) {
    let q = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
    let falloff = (-0.5 * q).exp();
    let raw = opacity * falloff;
    if raw > alpha_max {
        (alpha_max, falloff, true)
    } else {
        (raw, falloff, false)
    }
}

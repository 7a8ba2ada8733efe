//! Pixel-aligned 3D Gaussians.

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::image::{DepthMap, ImageBuffer};
use crate::linalg::{Mat3, Quat, Vec3};
use crate::scalar::{sigmoid, Real};

/// Number of scalar attributes per Gaussian (3 mean, 3 log-scale, 4 quaternion, 1 opacity, 3 color).
pub const GAUSSIAN_DIM: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian<T> {
    pub mean: Vec3<T>,
    /// Log of the per-axis standard deviations.
    pub log_scale: Vec3<T>,
    /// `(w, x, y, z)`.
    pub rotation_q: Quat<T>,
    /// `opacity = sigmoid(opacity_logit)`.
    pub opacity_logit: T,
    pub color: Vec3<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn isotropic(mean: Vec3<T>, sigma: T, opacity: T, color: Vec3<T>) -> Self {
        let ls = sigma.ln();
        Gaussian {
            mean,
            log_scale: Vec3::new(ls, ls, ls),
            rotation_q: Quat::identity(),
            opacity_logit: (opacity / (T::one() - opacity)).ln(),
            color,
        }
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    /// Attributes in storage order.
    pub fn to_array(&self) -> [T; GAUSSIAN_DIM] {
        let mut a = [T::zero(); GAUSSIAN_DIM];
        a[0..3].copy_from_slice(&self.mean.0);
        a[3..6].copy_from_slice(&self.log_scale.0);
        a[6..10].copy_from_slice(&self.rotation_q.0);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color.0);
        a
    }

    pub fn from_slice(a: &[T]) -> Self {
        Gaussian {
            mean: Vec3([a[0], a[1], a[2]]),
            log_scale: Vec3([a[3], a[4], a[5]]),
            rotation_q: Quat([a[6], a[7], a[8], a[9]]),
            opacity_logit: a[10],
            color: Vec3([a[11], a[12], a[13]]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Gaussian<U> {
        let a = self.to_array().map(|v| U::c(v.to_f()));
        Gaussian::from_slice(&a)
    }

    /// World-space covariance using the normalized quaternion.
    pub fn covariance(&self) -> Mat3<T> {
        covariance_unchecked(&self.log_scale, &self.rotation_q.normalized())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene<T> {
    pub gaussians: Vec<Gaussian<T>>,
    /// Context view each Gaussian was unprojected from, `-1` for free Gaussians.
    pub source_view: Vec<i32>,
    pub background: Vec3<T>,
}

impl<T: Real> GaussianScene<T> {
    pub fn new(background: Vec3<T>) -> Self {
        GaussianScene { gaussians: Vec::new(), source_view: Vec::new(), background }
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian<T>>, background: Vec3<T>) -> Self {
        let source_view = vec![-1; gaussians.len()];
        GaussianScene { gaussians, source_view, background }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian<T>, source_view: i32) {
        self.gaussians.push(g);
        self.source_view.push(source_view);
    }

    /// Appends another scene's Gaussians; background is kept from `self`.
    pub fn extend(&mut self, other: GaussianScene<T>) {
        self.gaussians.extend(other.gaussians);
        self.source_view.extend(other.source_view);
    }

    pub fn cast<U: Real>(&self) -> GaussianScene<U> {
        GaussianScene {
            gaussians: self.gaussians.iter().map(|g| g.cast()).collect(),
            source_view: self.source_view.clone(),
            background: self.background.cast(),
        }
    }

    /// Flattened attributes, `GAUSSIAN_DIM` per Gaussian.
    pub fn to_params(&self) -> Vec<T> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn set_params(&mut self, params: &[T]) {
        debug_assert_eq!(params.len(), self.len() * GAUSSIAN_DIM);
        for (g, chunk) in self.gaussians.iter_mut().zip(params.chunks_exact(GAUSSIAN_DIM)) {
            *g = Gaussian::from_slice(chunk);
        }
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from_attributes<T: Real>(log_scale: &Vec3<T>, rotation_q: &Quat<T>) -> Result<Mat3<T>> {
    let n = rotation_q.norm();
    if !((n - T::one()).abs().to_f() <= T::QUAT_TOL) {
        return Err(Error::UnnormalizedQuaternion(n.to_f()));
    }
    Ok(covariance_unchecked(log_scale, rotation_q))
}

pub(crate) fn covariance_unchecked<T: Real>(log_scale: &Vec3<T>, q: &Quat<T>) -> Mat3<T> {
    let r = q.to_rotation();
    let s = Vec3(log_scale.0.map(|v| v.exp()));
    let m = r * Mat3::diag(s);
    let mut cov = m * m.transpose();
    // Exact symmetry.
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = (cov.0[i][j] + cov.0[j][i]) * T::half();
            cov.0[i][j] = avg;
            cov.0[j][i] = avg;
        }
    }
    cov
}

/// Initialization of pixel-aligned Gaussians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub opacity_logit: f64,
    /// Multiplier on the one-pixel footprint `depth / focal`.
    pub scale_factor: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { opacity_logit: 0.0, scale_factor: 1.0 }
    }
}

/// One Gaussian per pixel, placed on the back-projected pixel center at the given depth.
///
/// Per-axis standard deviations are `scale_factor · d / fx`, `scale_factor · d / fy`
/// and their geometric mean along the third axis, so the footprint covers about one pixel.
pub fn unproject_pixel_aligned<T: Real>(
    depth: &DepthMap<T>,
    colors: &ImageBuffer<T>,
    pose: &CameraPose<T>,
    init: &InitConfig,
    view_index: i32,
    background: Vec3<T>,
) -> Result<GaussianScene<T>> {
    let k = &pose.intrinsics;
    if depth.width != colors.width || depth.height != colors.height {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} vs colors {}x{}",
            depth.width, depth.height, colors.width, colors.height
        )));
    }
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    let half = T::half();
    let sf = T::c(init.scale_factor);
    let mut scene = GaussianScene::new(background);
    scene.gaussians.reserve(depth.width * depth.height);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NonPositiveDepth { u, v, depth: d.to_f() });
            }
            let x = (T::c(u as f64) + half - k.cx) / k.fx;
            let y = (T::c(v as f64) + half - k.cy) / k.fy;
            let p_cam = Vec3::new(x * d, y * d, d);
            let mean = pose.to_world(&p_cam);
            let sx = sf * d / k.fx;
            let sy = sf * d / k.fy;
            let sz = (sx * sy).sqrt();
            let [r, g, b] = colors.pixel(u, v);
            scene.push(
                Gaussian {
                    mean,
                    log_scale: Vec3::new(sx.ln(), sy.ln(), sz.ln()),
                    rotation_q: Quat::from_rotation(&pose.rotation.transpose()),
                    opacity_logit: T::c(init.opacity_logit),
                    color: Vec3::new(r, g, b),
                },
                view_index,
            );
        }
    }
    Ok(scene)
}

/// Invariant-violation counts for a scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SceneReport {
    pub gaussian_count: usize,
    pub non_finite: usize,
    pub unnormalized_quaternions: usize,
    pub bad_source_view: usize,
    pub renderable: bool,
}

impl SceneReport {
    pub fn violations(&self) -> usize {
        self.non_finite + self.unnormalized_quaternions + self.bad_source_view
    }
}

/// Counts invariant violations; `context_views` bounds `source_view` when given.
pub fn validate_scene<T: Real>(scene: &GaussianScene<T>, context_views: Option<usize>) -> SceneReport {
    let mut r = SceneReport { gaussian_count: scene.len(), ..Default::default() };
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !g.is_finite() {
            r.non_finite += 1;
        } else if !((g.rotation_q.norm() - T::one()).abs().to_f() <= T::QUAT_TOL) {
            r.unnormalized_quaternions += 1;
        }
        let sv = scene.source_view.get(i).copied().unwrap_or(i32::MIN);
        let in_range = sv == -1 || (sv >= 0 && context_views.is_none_or(|n| (sv as usize) < n));
        if !in_range {
            r.bad_source_view += 1;
        }
    }
    if scene.source_view.len() > scene.len() {
        r.bad_source_view += scene.source_view.len() - scene.len();
    }
    r.renderable = !scene.is_empty() && r.violations() == 0 && scene.background.is_finite();
    r
}

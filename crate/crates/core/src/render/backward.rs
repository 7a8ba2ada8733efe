//! Reverse-mode gradients of the render loss through compositing, EWA
//! projection, covariance construction and the camera.

use rayon::prelude::*;

use super::raster::{forward, ForwardState};
use super::{projection_jacobian, sample_alpha, RenderConfig};
use crate::camera::CameraPose;
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianScene};
use crate::image::ImageBuffer;
use crate::linalg::{Mat3, Quat, Vec3};
use crate::loss::{render_loss_f64, LossBreakdown, LossWeights};
use crate::scalar::{sigmoid, Real};

/// Per-Gaussian gradient, laid out like [`Gaussian`].
pub type GaussianGrad<T> = Gaussian<T>;

/// Camera gradient: left-multiplied axis-angle increment at zero, translation,
/// and intrinsics `(fx, fy, cx, cy)` in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CameraGrad<T> {
    pub omega: Vec3<T>,
    pub translation: Vec3<T>,
    pub intrinsics: [T; 4],
}

impl<T: Real> CameraGrad<T> {
    pub fn zeros() -> Self {
        CameraGrad { omega: Vec3::zeros(), translation: Vec3::zeros(), intrinsics: [T::zero(); 4] }
    }

    pub fn to_array(&self) -> [T; 10] {
        let mut a = [T::zero(); 10];
        a[0..3].copy_from_slice(&self.omega.0);
        a[3..6].copy_from_slice(&self.translation.0);
        a[6..10].copy_from_slice(&self.intrinsics);
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<T> {
    pub d_gaussians: Vec<GaussianGrad<T>>,
    pub d_camera: CameraGrad<T>,
}

impl<T: Real> GradientBundle<T> {
    pub fn is_finite(&self) -> bool {
        self.d_gaussians.iter().all(|g| g.is_finite()) && self.d_camera.to_array().iter().all(|v| v.is_finite())
    }

    /// Flattened Gaussian gradients in parameter order.
    pub fn gaussian_params(&self) -> Vec<T> {
        self.d_gaussians.iter().flat_map(|g| g.to_array()).collect()
    }
}

fn zero_gaussian<T: Real>() -> Gaussian<T> {
    Gaussian::from_slice(&[T::zero(); crate::gaussian::GAUSSIAN_DIM])
}

/// Loss gradients w.r.t. screen-space quantities of one projected Gaussian.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    /// Conic `(a, b, c)` of `[[a, b], [b, c]]`, `b` counted once.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Backward through compositing for one tile; returns gradients aligned with the tile list.
fn tile_backward<T: Real>(st: &ForwardState<T>, tile: usize, dl_dc: &[f64]) -> Vec<ScreenGrad> {
    let list = &st.tile_lists[tile];
    let mut acc = vec![ScreenGrad::default(); list.len()];
    if list.is_empty() {
        return acc;
    }
    let (x0, x1, y0, y1) = st.grid.bounds(tile);
    let width = st.grid.width;
    let cfg = &st.cfg;
    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * width + x;
            let g = [dl_dc[3 * p], dl_dc[3 * p + 1], dl_dc[3 * p + 2]];
            if g == [0.0; 3] {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = st.final_t[p];
            // Color of everything behind the current sample, per unit transmittance.
            let mut behind = st.background;
            for slot in (0..st.visited[p] as usize).rev() {
                let s = &st.splats[list[slot] as usize];
                let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
                let (alpha, falloff, capped) = sample_alpha(&s.conic, s.opacity, dx, dy, cfg.alpha_max);
                if alpha < cfg.alpha_cut {
                    continue;
                }
                // Transmittance in front of this sample.
                t /= 1.0 - alpha;
                let a = &mut acc[slot];
                let mut dl_dalpha = 0.0;
                for ch in 0..3 {
                    a.color[ch] += alpha * t * g[ch];
                    dl_dalpha += t * (s.color[ch] - behind[ch]) * g[ch];
                    behind[ch] = alpha * s.color[ch] + (1.0 - alpha) * behind[ch];
                }
                if !capped {
                    a.opacity += falloff * dl_dalpha;
                    // α = o·exp(−q/2)
                    let dl_dq = -0.5 * alpha * dl_dalpha;
                    let [ca, cb, cc] = s.conic;
                    a.mean[0] += dl_dq * -2.0 * (ca * dx + cb * dy);
                    a.mean[1] += dl_dq * -2.0 * (cb * dx + cc * dy);
                    a.conic[0] += dl_dq * dx * dx;
                    a.conic[1] += dl_dq * 2.0 * dx * dy;
                    a.conic[2] += dl_dq * dy * dy;
                }
            }
        }
    }
    acc
}

/// Attribute and camera gradients of one Gaussian from its screen-space gradient.
fn chain_gaussian(
    g: &Gaussian<f64>,
    pose: &CameraPose<f64>,
    sg: &ScreenGrad,
    cfg: &RenderConfig,
) -> (Gaussian<f64>, CameraGrad<f64>) {
    let k = &pose.intrinsics;
    let r = &pose.rotation;
    let p = *r * g.mean + pose.translation;
    let (x, y, z) = (p.x(), p.y(), p.z());
    let (fx, fy) = (k.fx, k.fy);

    let qn = g.rotation_q.normalized();
    let rq = qn.to_rotation();
    let s = Vec3(g.log_scale.0.map(f64::exp));
    let m = rq * Mat3::diag(s);
    let cov = m * m.transpose();
    let cov_cam = *r * cov * r.transpose();
    let (j, clamped) = projection_jacobian(&p, k);
    let jm = Mat3([j[0], j[1], [0.0; 3]]);

    let jc = jm * cov_cam;
    let dil = cfg.dilation;
    let (s00, s01, s11) =
        (Vec3(jc.0[0]).dot(&Vec3(j[0])) + dil, Vec3(jc.0[0]).dot(&Vec3(j[1])), Vec3(jc.0[1]).dot(&Vec3(j[1])) + dil);
    let det = s00 * s11 - s01 * s01;
    let inv = [s11 / det, -s01 / det, s00 / det];

    // Conic → screen covariance: dΣ₂ = −A·G_A·A with G_A the full-matrix gradient.
    let ga = [[sg.conic[0], 0.5 * sg.conic[1]], [0.5 * sg.conic[1], sg.conic[2]]];
    let a2 = [[inv[0], inv[1]], [inv[1], inv[2]]];
    let mut g2 = [[0.0; 2]; 2];
    for i in 0..2 {
        for l in 0..2 {
            let mut v = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    v += a2[i][a] * ga[a][b] * a2[b][l];
                }
            }
            g2[i][l] = -v;
        }
    }

    // Σ₂ = J Σc Jᵀ
    let mut g_cov_cam = Mat3::<f64>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let mut v = 0.0;
            for i in 0..2 {
                for l in 0..2 {
                    v += j[i][a] * g2[i][l] * j[l][b];
                }
            }
            g_cov_cam.0[a][b] = v;
        }
    }
    let mut g_j = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            let mut v = 0.0;
            for l in 0..2 {
                v += g2[i][l] * jc.0[l][c];
            }
            g_j[i][c] = 2.0 * v;
        }
    }

    // Σc = R Σ Rᵀ
    let g_cov = r.transpose() * g_cov_cam * *r;
    let comm = cov_cam * g_cov_cam;
    let comm = comm.sub(&comm.transpose());
    let mut d_omega = comm.skew_trace_dual();

    // Σ = M Mᵀ, M = Rq·diag(s)
    let g_m = (g_cov * m).scale(2.0);
    let mut g_rq = Mat3::<f64>::zeros();
    let mut d_log_scale = Vec3::<f64>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            g_rq.0[a][b] = g_m.0[a][b] * s[b];
            d_log_scale[b] += g_m.0[a][b] * rq.0[a][b] * s[b];
        }
    }
    let d_q = g.rotation_q.rotation_grad_to_quat(&g_rq);

    // Screen mean and Jacobian → camera point and intrinsics.
    let (gu, gv) = (sg.mean[0], sg.mean[1]);
    // J[i][2] = −t_i/z with t = (fx·x/z, fy·y/z), frozen at the guard once clamped.
    let (iz, iz2) = (1.0 / z, 1.0 / (z * z));
    let (tx, ty) = (-j[0][2] * z, -j[1][2] * z);
    let (dtx_dx, dtx_dz, dtx_dfx) = if clamped[0] { (0.0, 0.0, 0.0) } else { (fx * iz, -fx * x * iz2, x * iz) };
    let (dty_dy, dty_dz, dty_dfy) = if clamped[1] { (0.0, 0.0, 0.0) } else { (fy * iz, -fy * y * iz2, y * iz) };
    let gtx = -g_j[0][2] * iz;
    let gty = -g_j[1][2] * iz;
    let gp = Vec3::new(
        gu * fx * iz + gtx * dtx_dx,
        gv * fy * iz + gty * dty_dy,
        gu * (-fx * x * iz2)
            + gv * (-fy * y * iz2)
            + g_j[0][0] * (-fx * iz2)
            + g_j[1][1] * (-fy * iz2)
            + g_j[0][2] * tx * iz2
            + g_j[1][2] * ty * iz2
            + gtx * dtx_dz
            + gty * dty_dz,
    );
    let d_fx = gu * x * iz + g_j[0][0] * iz + gtx * dtx_dfx;
    let d_fy = gv * y * iz + g_j[1][1] * iz + gty * dty_dfy;

    let d_mean = r.transpose() * gp;
    // The rotation increment turns the whole camera frame, translation included.
    d_omega += p.cross(&gp);

    let o = sigmoid(g.opacity_logit);
    let d_color = Vec3([0, 1, 2].map(|ch| if (0.0..=1.0).contains(&g.color[ch]) { sg.color[ch] } else { 0.0 }));

    (
        Gaussian {
            mean: d_mean,
            log_scale: d_log_scale,
            rotation_q: Quat(d_q),
            opacity_logit: sg.opacity * o * (1.0 - o),
            color: d_color,
        },
        CameraGrad { omega: d_omega, translation: gp, intrinsics: [d_fx, d_fy, gu, gv] },
    )
}

/// Backpropagates an image-space gradient `dl_dc` (interleaved RGB) from a
/// forward render to Gaussian attributes and the camera.
///
/// Tiles accumulate into private buffers that are merged in tile order, and
/// camera terms are summed in Gaussian order, so results are bit-reproducible.
pub fn render_backward<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    state: &ForwardState<T>,
    dl_dc: &[f64],
) -> GradientBundle<T> {
    let per_tile: Vec<Vec<ScreenGrad>> =
        (0..state.grid.count()).into_par_iter().map(|t| tile_backward(state, t, dl_dc)).collect();
    let mut screen = vec![ScreenGrad::default(); state.projected.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            screen[state.tile_lists[t][slot] as usize].add(g);
        }
    }

    let pose64 = pose.cast::<f64>();
    let chained: Vec<(usize, Gaussian<f64>, CameraGrad<f64>)> = state
        .projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, sg)| {
            let g = scene.gaussians[p.index].cast::<f64>();
            let (dg, dc) = chain_gaussian(&g, &pose64, sg, &state.cfg);
            (p.index, dg, dc)
        })
        .collect();

    let mut d_gaussians = vec![zero_gaussian::<T>(); scene.len()];
    let mut by_index: Vec<Option<(Gaussian<f64>, CameraGrad<f64>)>> = vec![None; scene.len()];
    for (i, dg, dc) in chained {
        by_index[i] = Some((dg, dc));
    }
    let mut cam = CameraGrad::<f64>::zeros();
    for (i, entry) in by_index.into_iter().enumerate() {
        if let Some((dg, dc)) = entry {
            d_gaussians[i] = dg.cast();
            cam.omega += dc.omega;
            cam.translation += dc.translation;
            for k in 0..4 {
                cam.intrinsics[k] += dc.intrinsics[k];
            }
        }
    }
    GradientBundle {
        d_gaussians,
        d_camera: CameraGrad {
            omega: cam.omega.cast(),
            translation: cam.translation.cast(),
            intrinsics: cam.intrinsics.map(T::c),
        },
    }
}

/// Renders `scene` from `pose`, evaluates the render loss against `target` and
/// returns its gradients. Only the render fields of the breakdown are filled.
pub fn render_with_gradients<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    target: &ImageBuffer<T>,
    weights: &LossWeights,
    cfg: &RenderConfig,
) -> Result<(LossBreakdown, GradientBundle<T>)> {
    let k = &pose.intrinsics;
    if target.width != k.width || target.height != k.height {
        return Err(crate::error::Error::ShapeMismatch(format!(
            "target {}x{} vs camera {}x{}",
            target.width, target.height, k.width, k.height
        )));
    }
    let state = forward(scene, pose, cfg)?;
    let rendered = state.image_f64();
    let tgt: Vec<f64> = target.rgb.iter().map(|v| v.to_f()).collect();
    let mut dl_dc = vec![0.0; rendered.rgb.len()];
    let (mse, perceptual, render) =
        render_loss_f64(&rendered.rgb, &tgt, k.width, k.height, weights.lambda_perc, Some(&mut dl_dc));
    let grads = render_backward(scene, pose, &state, &dl_dc);
    let loss = LossBreakdown { mse, perceptual, render, total: render, ..Default::default() };
    Ok((loss, grads))
}

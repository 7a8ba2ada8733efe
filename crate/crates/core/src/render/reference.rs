use super::{project_gaussian, sample_alpha, ProjectedGaussian, RenderConfig};
use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianScene};
use crate::image::{ImageBuffer, ScalarMap};
use crate::scalar::Real;

/// Exhaustive per-pixel compositing of `feature` over every visible Gaussian in depth order.
fn composite_all(
    scene: &GaussianScene<f64>,
    pose: &CameraPose<f64>,
    cfg: &RenderConfig,
    feature: impl Fn(&Gaussian<f64>, &ProjectedGaussian<f64>) -> [f64; 3],
    background: [f64; 3],
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    // Footprint culling off: every Gaussian in front of the camera is visited.
    let geom_cfg = RenderConfig { alpha_cut: 0.0, ..*cfg };
    let mut visible: Vec<(ProjectedGaussian<f64>, [f64; 3])> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, pose, &geom_cfg).map(|p| (p, feature(g, &p))))
        .collect();
    visible.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));

    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let mut out = Vec::with_capacity(w * h);
    let mut trans = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for (p, f) in &visible {
                let conic = [p.conic.a, p.conic.b, p.conic.c];
                let (alpha, _, _) = sample_alpha(&conic, p.opacity, px - p.mean2d[0], py - p.mean2d[1], cfg.alpha_max);
                if alpha < cfg.alpha_cut {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += f[ch] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            for ch in 0..3 {
                c[ch] += t * background[ch];
            }
            out.push(c);
            trans.push(t);
        }
    }
    Ok((out, trans))
}

/// Brute-force f64 renderer: no tiling, no early termination.
pub fn render_reference<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Result<ImageBuffer<T>> {
    let scene = scene.cast::<f64>();
    let pose = pose.cast::<f64>();
    let bg = scene.background.to_f64().map(|c| c.clamp(0.0, 1.0));
    let (colors, _) = composite_all(&scene, &pose, cfg, |_, p| p.color, bg)?;
    Ok(ImageBuffer {
        width: pose.intrinsics.width,
        height: pose.intrinsics.height,
        rgb: colors.iter().flat_map(|c| c.iter().map(|v| T::c(*v))).collect(),
    })
}

/// Composites a per-Gaussian scalar (e.g. camera depth) with the reference
/// renderer's weights. Returns the composited value, with `background_value`
/// filling the residual transmittance, and the accumulated alpha.
pub fn render_reference_features<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
    feature: impl Fn(&Gaussian<f64>, f64) -> f64,
    background_value: f64,
) -> Result<(ScalarMap<f64>, ScalarMap<f64>)> {
    let scene = scene.cast::<f64>();
    let pose = pose.cast::<f64>();
    let (vals, trans) =
        composite_all(&scene, &pose, cfg, |g, p| [feature(g, p.depth), 0.0, 0.0], [background_value, 0.0, 0.0])?;
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    Ok((
        ScalarMap { width: w, height: h, data: vals.iter().map(|v| v[0]).collect() },
        ScalarMap { width: w, height: h, data: trans.iter().map(|t| 1.0 - t).collect() },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::linalg::Vec3;

    #[test]
    fn empty_scene_errors() {
        let k = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let s = GaussianScene::<f64>::new(Vec3::zeros());
        assert!(matches!(
            render_reference(&s, &CameraPose::identity(k), &RenderConfig::default()),
            Err(Error::EmptyScene)
        ));
    }

    #[test]
    fn huge_opaque_gaussian_saturates() {
        let k = Intrinsics::new(10.0, 10.0, 8.0, 8.0, 16, 16).unwrap();
        let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 1.0), 1e3, 0.9999999, Vec3::new(0.25, 0.5, 0.75));
        let bg = [1.0, 0.0, 0.0];
        let cfg = RenderConfig::default();

        // One capped layer leaves exactly 1 − α_max of the background.
        let s = GaussianScene::from_gaussians(vec![g], Vec3(bg));
        let img = render_reference(&s, &CameraPose::identity(k), &cfg).unwrap();
        for px in img.rgb.chunks(3) {
            for ch in 0..3 {
                let want = cfg.alpha_max * g.color[ch] + (1.0 - cfg.alpha_max) * bg[ch];
                assert!((px[ch] - want).abs() < 1e-6, "{} vs {want}", px[ch]);
            }
        }

        // Two layers push transmittance to 1e-6.
        let s = GaussianScene::from_gaussians(vec![g, g], Vec3(bg));
        let img = render_reference(&s, &CameraPose::identity(k), &cfg).unwrap();
        for px in img.rgb.chunks(3) {
            for (v, want) in px.iter().zip([0.25, 0.5, 0.75]) {
                assert!((v - want).abs() < 1e-6, "{v} vs {want}");
            }
        }
    }

    #[test]
    fn depth_feature_matches_single_layer() {
        let k = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 3.0), 100.0, 0.5, Vec3::zeros());
        let s = GaussianScene::from_gaussians(vec![g], Vec3::zeros());
        let (d, a) =
            render_reference_features(&s, &CameraPose::identity(k), &RenderConfig::default(), |_, z| z, 10.0).unwrap();
        // Broad Gaussian: alpha ≈ 0.5 everywhere, depth ≈ 0.5·3 + 0.5·10.
        assert!((a.get(0, 0) - 0.5).abs() < 1e-3);
        assert!((d.get(1, 1) - 6.5).abs() < 1e-2);
    }
}

//! View sampling, the synthetic oracle scene and oracle depth maps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianScene};
use crate::image::{DepthMap, ImageBuffer};
use crate::linalg::{Mat3, Quat, Vec3};
use crate::render::{render_reference, render_reference_features, RenderConfig};

/// Greedy farthest-point sampling seeded at index 0.
///
/// Each pick maximizes the minimum distance to the picks so far; ties go to the lowest index.
pub fn farthest_point_sample(centers: &[Vec3<f64>], k: usize) -> Result<Vec<usize>> {
    fps_from(centers, k, 0)
}

/// FPS with an explicit first pick.
pub fn fps_from(centers: &[Vec3<f64>], k: usize, first: usize) -> Result<Vec<usize>> {
    let n = centers.len();
    if k == 0 || k > n || first >= n {
        return Err(Error::BadK { k, n });
    }
    let mut picks = vec![first];
    let mut min_d: Vec<f64> = centers.iter().map(|c| (*c - centers[first]).norm()).collect();
    while picks.len() < k {
        let mut best = usize::MAX;
        for i in 0..n {
            if picks.contains(&i) {
                continue;
            }
            if best == usize::MAX || min_d[i] > min_d[best] {
                best = i;
            }
        }
        picks.push(best);
        for i in 0..n {
            min_d[i] = min_d[i].min((centers[i] - centers[best]).norm());
        }
    }
    Ok(picks)
}

/// How target views are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetMode {
    /// Seeded uniform draw from the non-context frames in the window.
    RandomHeldout,
    /// Frames at fixed offsets from the window start.
    FixedIndex,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewProtocol {
    pub n_context: usize,
    pub n_target: usize,
    /// Largest allowed index span between the first and last frame used.
    pub max_interval: usize,
    pub target_mode: TargetMode,
    /// Randomize the FPS start inside the window instead of using its first frame.
    pub random_fps_start: bool,
    pub seed: u64,
}

impl ViewProtocol {
    pub fn new(n_context: usize, n_target: usize, max_interval: usize, seed: u64) -> Self {
        ViewProtocol {
            n_context,
            n_target,
            max_interval,
            target_mode: TargetMode::RandomHeldout,
            random_fps_start: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewSelection {
    pub context_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    /// First and last frame of the sampling window (inclusive).
    pub window: (usize, usize),
}

/// Picks context views by FPS over camera centers inside a seeded window of
/// at most `max_interval + 1` frames, then targets from the remaining window frames.
pub fn select_views(centers: &[Vec3<f64>], protocol: &ViewProtocol) -> Result<ViewSelection> {
    let n = centers.len();
    let need = protocol.n_context + protocol.n_target;
    let span = protocol.max_interval.min(n.saturating_sub(1));
    if protocol.n_context == 0 {
        return Err(Error::InsufficientFrames("at least one context view is required".into()));
    }
    if need > span + 1 {
        return Err(Error::InsufficientFrames(format!(
            "{need} views requested but only {} frames fit in the window ({n} frames, interval {})",
            span + 1,
            protocol.max_interval
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let start = if n - 1 > span { rng.random_range(0..=n - 1 - span) } else { 0 };
    let window: Vec<Vec3<f64>> = centers[start..=start + span].to_vec();
    let first = if protocol.random_fps_start { rng.random_range(0..window.len()) } else { 0 };
    let context: Vec<usize> = fps_from(&window, protocol.n_context, first)?.into_iter().map(|i| i + start).collect();
    let rest: Vec<usize> = (start..=start + span).filter(|i| !context.contains(i)).collect();
    let mut targets: Vec<usize> = match protocol.target_mode {
        TargetMode::RandomHeldout => {
            rand::seq::index::sample(&mut rng, rest.len(), protocol.n_target).into_iter().map(|i| rest[i]).collect()
        }
        TargetMode::FixedIndex => {
            let step = rest.len() as f64 / (protocol.n_target + 1) as f64;
            (1..=protocol.n_target).map(|k| rest[((k as f64 * step) as usize).min(rest.len() - 1)]).collect()
        }
    };
    targets.sort_unstable();
    Ok(ViewSelection { context_indices: context, target_indices: targets, window: (start, start + span) })
}

/// Parameters of the seeded oracle scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub gaussian_count: usize,
    pub camera_count: usize,
    pub orbit_radius: f64,
    pub image_size: usize,
    pub background: [f64; 3],
    /// Azimuth span of the camera orbit.
    pub arc_deg: f64,
    pub elevation_deg: f64,
    /// Per-axis standard deviation range, in the same units as `orbit_radius`.
    pub sigma_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Means are drawn with radius in `[1 - shell_thickness, 1]`; 1 fills the ball.
    pub shell_thickness: f64,
    /// Ratio of the radial axis to the smaller tangential one. Below 1 the
    /// Gaussians are flattened onto the shell; 1 keeps random orientations.
    pub flatness: f64,
    /// Colour each Gaussian from a smooth field over position instead of
    /// independently, so overlapping Gaussians agree from every viewpoint.
    pub smooth_colors: bool,
    /// Spatial frequency of the smooth colour field, radians per unit radius.
    pub color_frequency: f64,
    /// Rescale the world so the largest camera translation has norm 1.
    pub normalize: bool,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            gaussian_count: 2000,
            camera_count: 8,
            orbit_radius: 3.0,
            image_size: 64,
            background: [0.05, 0.05, 0.08],
            arc_deg: 90.0,
            elevation_deg: 25.0,
            sigma_range: (0.05, 0.12),
            opacity_range: (0.85, 0.99),
            shell_thickness: 0.05,
            flatness: 1.0,
            smooth_colors: true,
            color_frequency: 3.0,
            normalize: true,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic scene: {m}")));
        if self.gaussian_count == 0 || self.camera_count == 0 {
            return bad("gaussian_count and camera_count must be at least 1");
        }
        if !(self.orbit_radius > 1.0) {
            return bad("orbit_radius must exceed the unit ball");
        }
        if self.image_size < 2 {
            return bad("image_size must be at least 2");
        }
        let (s0, s1) = self.sigma_range;
        let (o0, o1) = self.opacity_range;
        if !(s0 > 0.0 && s0 <= s1) || !(o0 > 0.0 && o0 <= o1 && o1 < 1.0) {
            return bad("sigma_range and opacity_range must be ordered and positive, opacity below 1");
        }
        if !(self.shell_thickness > 0.0 && self.shell_thickness <= 1.0) {
            return bad("shell_thickness must lie in (0, 1]");
        }
        if !(self.flatness > 0.0 && self.flatness <= 1.0) {
            return bad("flatness must lie in (0, 1]");
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: GaussianScene<f64>,
    pub cameras: Vec<CameraPose<f64>>,
    pub images: Vec<ImageBuffer<f64>>,
    /// World units per unit of the generated scene (1 when not normalized).
    pub scale: f64,
}

/// Seeded Gaussians in a shell of the unit ball, cameras on an orbit looking at the
/// origin, and ground-truth images from the reference renderer.
pub fn make_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = if spec.normalize { 1.0 / spec.orbit_radius } else { 1.0 };
    let mut scene = GaussianScene::new(Vec3(spec.background));
    // Low-frequency colour field: one random plane wave per channel.
    let waves: [(Vec3<f64>, f64); 3] = [0; 3].map(|_| {
        let dir = random_unit(&mut rng);
        (dir * spec.color_frequency, rng.random_range(0.0..std::f64::consts::TAU))
    });
    for _ in 0..spec.gaussian_count {
        let mean = loop {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = p.norm();
            if r <= 1.0 && r >= 1.0 - spec.shell_thickness {
                break p;
            }
        };
        let mut sigma = [0; 3].map(|_| rng.random_range(spec.sigma_range.0..=spec.sigma_range.1) * s);
        let q = if spec.flatness < 1.0 {
            sigma[2] = spec.flatness * sigma[0].min(sigma[1]);
            let twist = rng.random_range(0.0..std::f64::consts::TAU);
            tangent_frame(&mean, twist)
        } else {
            Quat::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            )
            .normalized()
        };
        let opacity: f64 = rng.random_range(spec.opacity_range.0..=spec.opacity_range.1);
        let random_color =
            Vec3::new(rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95));
        let color = if spec.smooth_colors {
            Vec3(waves.map(|(k, phase)| 0.5 + 0.4 * (k.dot(&mean) + phase).sin()))
        } else {
            random_color
        };
        scene.push(
            Gaussian {
                mean: mean * s,
                log_scale: Vec3(sigma.map(f64::ln)),
                rotation_q: q,
                opacity_logit: (opacity / (1.0 - opacity)).ln(),
                color,
            },
            -1,
        );
    }

    let size = spec.image_size;
    let focal = 0.9 * size as f64;
    let k = Intrinsics::centered(focal, size, size);
    let n = spec.camera_count;
    let radius = spec.orbit_radius * s;
    let mut cameras = Vec::with_capacity(n);
    for i in 0..n {
        let frac = if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        let az = (frac * spec.arc_deg).to_radians();
        // A gentle elevation wobble keeps the trajectory out of a single plane.
        let el = (spec.elevation_deg + 5.0 * (3.0 * frac * std::f64::consts::PI).sin()).to_radians();
        let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
        cameras.push(CameraPose::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), k)?);
    }
    let cfg = RenderConfig::default();
    let images = cameras.iter().map(|c| render_reference(&scene, c, &cfg)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene { scene, cameras, images, scale: 1.0 / s })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-9 {
            return v.normalized();
        }
    }
}

/// Orientation whose local z axis is the radial direction of `p`, twisted about it.
fn tangent_frame(p: &Vec3<f64>, twist: f64) -> Quat<f64> {
    let n = p.normalized();
    let helper = if n[2].abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let a = helper.cross(&n).normalized();
    let b = n.cross(&a);
    let (sn, cs) = twist.sin_cos();
    let t1 = a * cs + b * sn;
    let t2 = n.cross(&t1);
    // Columns are the local axes expressed in world coordinates.
    Quat::from_rotation(&Mat3([t1.0, t2.0, n.0]).transpose())
}

/// Alpha-normalized expected depth from the reference renderer.
///
/// Pixels whose accumulated alpha is below `min_alpha` get `far_depth`.
pub fn oracle_depth(
    scene: &GaussianScene<f64>,
    pose: &CameraPose<f64>,
    far_depth: f64,
    min_alpha: f64,
) -> Result<DepthMap<f64>> {
    let (mut depth, alpha) = render_reference_features(scene, pose, &RenderConfig::default(), |_, d| d, 0.0)?;
    for (d, a) in depth.data.iter_mut().zip(&alpha.data) {
        *d = if *a >= min_alpha { *d / *a } else { far_depth };
    }
    Ok(depth)
}

/// Multiplies each depth by `1 + N(0, rel_sigma²)`, floored at 1% of the original.
pub fn perturb_depth(depth: &DepthMap<f64>, rel_sigma: f64, seed: u64) -> DepthMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = depth.clone();
    for d in out.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *d *= (1.0 + rel_sigma * z).max(0.01);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Vec3<f64>> {
        (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn fps_examples() {
        let c = line(10);
        assert_eq!(farthest_point_sample(&c, 2).unwrap(), vec![0, 9]);
        assert_eq!(farthest_point_sample(&c, 3).unwrap(), vec![0, 9, 4]);
        let mut all = farthest_point_sample(&c, 10).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(farthest_point_sample(&c, 0), Err(Error::BadK { .. })));
        assert!(matches!(farthest_point_sample(&c, 11), Err(Error::BadK { .. })));
    }

    #[test]
    fn select_views_contract() {
        let c = line(10);
        let p = ViewProtocol::new(2, 1, 50, 7);
        let a = select_views(&c, &p).unwrap();
        assert_eq!(a, select_views(&c, &p).unwrap());
        assert!(a.target_indices.iter().all(|t| !a.context_indices.contains(t)));
        assert!(matches!(select_views(&c, &ViewProtocol::new(12, 0, 50, 7)), Err(Error::InsufficientFrames(_))));
        let fixed = ViewProtocol { target_mode: TargetMode::FixedIndex, ..ViewProtocol::new(2, 2, 50, 7) };
        let f = select_views(&c, &fixed).unwrap();
        assert_eq!(f.target_indices.len(), 2);
        assert!(f.target_indices.iter().all(|t| !f.context_indices.contains(t)));
    }

    #[test]
    fn synthetic_scene_is_deterministic_and_valid() {
        let spec = SyntheticSceneSpec { gaussian_count: 40, camera_count: 3, image_size: 16, ..Default::default() };
        let a = make_synthetic_scene(&spec).unwrap();
        let b = make_synthetic_scene(&spec).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.images, b.images);
        let max_t = a.cameras.iter().map(|c| c.translation.norm()).fold(0.0, f64::max);
        assert!((max_t - 1.0).abs() < 1e-12);
        for c in &a.cameras {
            c.validate().unwrap();
        }
        assert!(a.scene.gaussians.iter().all(|g| g.mean.norm() <= 1.0 / 3.0 + 1e-12));
    }

    #[test]
    fn oracle_depth_hits_the_surface() {
        let spec = SyntheticSceneSpec { gaussian_count: 200, camera_count: 1, image_size: 16, ..Default::default() };
        let s = make_synthetic_scene(&spec).unwrap();
        let d = oracle_depth(&s.scene, &s.cameras[0], 5.0, 0.5).unwrap();
        // The center pixel looks at the ball, which spans depths [2/3, 4/3].
        let c = d.get(8, 8);
        assert!(c > 0.6 && c < 1.4, "{c}");
        assert_eq!(d.get(0, 0), 5.0);
    }
}

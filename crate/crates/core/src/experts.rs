//! The two-expert pipeline: a geometry expert predicts cameras, and an
//! appearance expert turns context images and those cameras into Gaussians.
//!
//! Desk-scale experts are a seeded noisy oracle or a pose file for geometry,
//! and per-scene fitting or a Gaussian dump for appearance. Specs serialize to
//! key=value provenance so any run can be reproduced from its sidecar.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::gaussian::{unproject_pixel_aligned, validate_scene, GaussianScene, InitConfig};
use crate::image::{DepthMap, ImageBuffer};
use crate::io::{encode_pfm, fnv1a_64, format_poses, read_gaussians, read_poses, records_from_poses, KeyValues};
use crate::linalg::{Mat3, Vec3};
use crate::loss::LossWeights;
use crate::optim::{fit_scene, JointConfig};

/// Noise applied by the oracle geometry expert.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseNoise {
    /// Rotation angle is `|N(0, σ²)|` degrees about a uniform random axis.
    pub rot_deg_sigma: f64,
    /// Per-axis translation noise as a fraction of the largest camera translation.
    pub trans_rel_sigma: f64,
    /// Relative noise on the focal lengths.
    pub intr_rel_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryExpertSpec {
    NoisyOracle(PoseNoise),
    FileBacked(PathBuf),
}

/// Where the appearance expert's initial depth comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthPrior {
    /// Depth maps passed in by the caller, one per context view.
    Supplied,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FittingConfig {
    pub iterations: usize,
    pub lr: f64,
    pub depth: DepthPrior,
    pub init: InitConfig,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for FittingConfig {
    fn default() -> Self {
        FittingConfig {
            iterations: 0,
            lr: 2e-3,
            depth: DepthPrior::Supplied,
            init: InitConfig { opacity_logit: 4.0, scale_factor: 0.5 },
            background: [0.0; 3],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AppearanceExpertSpec {
    Fitting(FittingConfig),
    FileBacked(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Ground-truth cameras go straight to the appearance expert.
    Posed,
    /// Cameras come from the geometry expert, including those used to render targets.
    PoseFree,
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Posed => "posed",
            Protocol::PoseFree => "pose_free",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "posed" => Ok(Protocol::Posed),
            "pose_free" => Ok(Protocol::PoseFree),
            _ => Err(Error::InvalidConfig(format!("protocol must be posed or pose_free, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    /// One camera per input view, context views first.
    pub poses: Vec<CameraPose<f64>>,
    /// Gaussians from the context views only.
    pub scene: GaussianScene<f64>,
    pub provenance: KeyValues,
}

/// Uniform unit vector from a normalized Gaussian triple.
fn random_axis(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

/// Perturbs ground-truth cameras with seeded noise.
///
/// Every view consumes the same random draws whatever the sigmas are, so runs
/// at different noise levels share their noise directions.
pub fn noisy_oracle_poses(gt: &[CameraPose<f64>], noise: &PoseNoise) -> Result<Vec<CameraPose<f64>>> {
    if [noise.rot_deg_sigma, noise.trans_rel_sigma, noise.intr_rel_sigma].iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidConfig(format!("noise sigmas must be non-negative: {noise:?}")));
    }
    let scale = gt.iter().map(|p| p.translation.norm()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = Vec::with_capacity(gt.len());
    for p in gt {
        let axis = random_axis(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let dt: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
        let df: [f64; 2] = [0; 2].map(|_| StandardNormal.sample(&mut rng));
        let mut q = *p;
        if noise.rot_deg_sigma > 0.0 {
            // Turn the camera about its own centre; rotating R alone would swing
            // the centre around the world origin instead.
            let angle = (z.abs() * noise.rot_deg_sigma).to_radians();
            let d = Mat3::exp_so3(&(axis * angle));
            q.rotation = d * p.rotation;
            q.translation = d * p.translation;
        }
        if noise.trans_rel_sigma > 0.0 {
            q.translation = q.translation + Vec3(dt) * (noise.trans_rel_sigma * scale);
        }
        if noise.intr_rel_sigma > 0.0 {
            q.intrinsics.fx *= 1.0 + noise.intr_rel_sigma * df[0];
            q.intrinsics.fy *= 1.0 + noise.intr_rel_sigma * df[1];
            q.intrinsics.validate()?;
        }
        out.push(q);
    }
    Ok(out)
}

/// Runs the geometry expert for all views.
pub fn estimate_poses(
    spec: &GeometryExpertSpec,
    images: &[ImageBuffer<f64>],
    gt_poses: Option<&[CameraPose<f64>]>,
) -> Result<Vec<CameraPose<f64>>> {
    let poses = match spec {
        GeometryExpertSpec::NoisyOracle(noise) => noisy_oracle_poses(gt_poses.ok_or(Error::MissingOracle)?, noise)?,
        GeometryExpertSpec::FileBacked(path) => read_poses(path)?.into_iter().map(|r| r.pose).collect(),
    };
    if poses.len() != images.len() {
        return Err(Error::ShapeMismatch(format!("{} poses for {} images", poses.len(), images.len())));
    }
    Ok(poses)
}

/// Runs the appearance expert on the context views.
pub fn generate_gaussians(
    spec: &AppearanceExpertSpec,
    context_images: &[ImageBuffer<f64>],
    poses: &[CameraPose<f64>],
    depth_priors: Option<&[DepthMap<f64>]>,
) -> Result<GaussianScene<f64>> {
    if context_images.len() != poses.len() {
        return Err(Error::ShapeMismatch(format!("{} context images but {} poses", context_images.len(), poses.len())));
    }
    let scene = match spec {
        AppearanceExpertSpec::FileBacked(path) => read_gaussians(path, Vec3::zeros())?,
        AppearanceExpertSpec::Fitting(cfg) => fit_appearance(cfg, context_images, poses, depth_priors)?,
    };
    let report = validate_scene(&scene, Some(context_images.len()));
    if report.violations() > 0 {
        return Err(Error::InvalidConfig(format!("appearance expert produced an invalid scene: {report:?}")));
    }
    Ok(scene)
}

fn fit_appearance(
    cfg: &FittingConfig,
    images: &[ImageBuffer<f64>],
    poses: &[CameraPose<f64>],
    depth_priors: Option<&[DepthMap<f64>]>,
) -> Result<GaussianScene<f64>> {
    let background = Vec3(cfg.background);
    let mut scene = GaussianScene::new(background);
    for (v, (img, pose)) in images.iter().zip(poses).enumerate() {
        let depth = match cfg.depth {
            DepthPrior::Constant(d) => DepthMap::filled(img.width, img.height, d),
            DepthPrior::Supplied => {
                let priors = depth_priors.ok_or(Error::MissingOracle)?;
                if priors.len() != images.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} depth maps for {} views",
                        priors.len(),
                        images.len()
                    )));
                }
                priors[v].clone()
            }
        };
        scene.extend(unproject_pixel_aligned(&depth, img, pose, &cfg.init, v as i32, background)?);
    }
    if cfg.iterations == 0 {
        return Ok(scene);
    }
    let jc = JointConfig {
        iters: cfg.iterations,
        gaussian_lr: cfg.lr,
        weight_decay: 0.0,
        seed: cfg.seed,
        ..Default::default()
    };
    Ok(fit_scene(images, poses, &scene, &LossWeights::default(), &jc)?.scene)
}

/// Geometry expert, then appearance expert on the first `n_context` views.
///
/// `posed` bypasses the geometry expert and requires `gt_poses`.
pub fn run_pipeline(
    geo: &GeometryExpertSpec,
    app: &AppearanceExpertSpec,
    images: &[ImageBuffer<f64>],
    n_context: usize,
    protocol: Protocol,
    gt_poses: Option<&[CameraPose<f64>]>,
    depth_priors: Option<&[DepthMap<f64>]>,
) -> Result<PipelineResult> {
    if images.is_empty() {
        return Err(Error::ShapeMismatch("pipeline needs at least one image".into()));
    }
    if n_context == 0 || n_context > images.len() {
        return Err(Error::ShapeMismatch(format!("{n_context} context views out of {} images", images.len())));
    }
    let poses = match protocol {
        Protocol::Posed => {
            let gt = gt_poses.ok_or(Error::MissingOracle)?;
            if gt.len() != images.len() {
                return Err(Error::ShapeMismatch(format!("{} poses for {} images", gt.len(), images.len())));
            }
            gt.to_vec()
        }
        Protocol::PoseFree => estimate_poses(geo, images, gt_poses)?,
    };
    let scene = generate_gaussians(app, &images[..n_context], &poses[..n_context], depth_priors)?;

    let mut prov = KeyValues::new();
    prov.insert("protocol".into(), protocol.label().into());
    prov.insert("views.total".into(), images.len().to_string());
    prov.insert("views.context".into(), n_context.to_string());
    if protocol == Protocol::PoseFree {
        geometry_to_kv(geo, &mut prov);
    } else {
        prov.insert("geometry.kind".into(), "bypassed".into());
    }
    appearance_to_kv(app, &mut prov);
    for (i, img) in images.iter().enumerate() {
        prov.insert(format!("input.image.{i:03}.fnv1a64"), format!("{:016x}", fnv1a_64(&encode_pfm(img))));
    }
    if let Some(gt) = gt_poses {
        let text = format_poses(&records_from_poses(gt));
        prov.insert("input.gt_poses.fnv1a64".into(), format!("{:016x}", fnv1a_64(text.as_bytes())));
    }
    if let Some(d) = depth_priors {
        for (i, m) in d.iter().enumerate() {
            let bytes: Vec<u8> = m.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            prov.insert(format!("input.depth.{i:03}.fnv1a64"), format!("{:016x}", fnv1a_64(&bytes)));
        }
    }
    Ok(PipelineResult { poses, scene, provenance: prov })
}

fn f64_str(v: f64) -> String {
    format!("{v:?}")
}

pub fn geometry_to_kv(spec: &GeometryExpertSpec, kv: &mut KeyValues) {
    match spec {
        GeometryExpertSpec::NoisyOracle(n) => {
            kv.insert("geometry.kind".into(), "noisy_oracle".into());
            kv.insert("geometry.rot_deg_sigma".into(), f64_str(n.rot_deg_sigma));
            kv.insert("geometry.trans_rel_sigma".into(), f64_str(n.trans_rel_sigma));
            kv.insert("geometry.intr_rel_sigma".into(), f64_str(n.intr_rel_sigma));
            kv.insert("geometry.seed".into(), n.seed.to_string());
        }
        GeometryExpertSpec::FileBacked(p) => {
            kv.insert("geometry.kind".into(), "file_backed".into());
            kv.insert("geometry.path".into(), p.display().to_string());
        }
    }
}

pub fn appearance_to_kv(spec: &AppearanceExpertSpec, kv: &mut KeyValues) {
    match spec {
        AppearanceExpertSpec::Fitting(c) => {
            kv.insert("appearance.kind".into(), "fitting".into());
            kv.insert("appearance.iterations".into(), c.iterations.to_string());
            kv.insert("appearance.lr".into(), f64_str(c.lr));
            let depth = match c.depth {
                DepthPrior::Supplied => "supplied".to_string(),
                DepthPrior::Constant(d) => format!("constant:{}", f64_str(d)),
            };
            kv.insert("appearance.depth".into(), depth);
            kv.insert("appearance.init_opacity_logit".into(), f64_str(c.init.opacity_logit));
            kv.insert("appearance.init_scale_factor".into(), f64_str(c.init.scale_factor));
            kv.insert("appearance.background".into(), c.background.map(f64_str).join(","));
            kv.insert("appearance.seed".into(), c.seed.to_string());
        }
        AppearanceExpertSpec::FileBacked(p) => {
            kv.insert("appearance.kind".into(), "file_backed".into());
            kv.insert("appearance.path".into(), p.display().to_string());
        }
    }
}

fn get<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str> {
    kv.get(key).map(String::as_str).ok_or_else(|| Error::InvalidConfig(format!("missing key {key:?}")))
}

pub(crate) fn parse_num<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
    let raw = get(kv, key)?;
    raw.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {raw:?}")))
}

/// Inverse of [`geometry_to_kv`]; `None` when the geometry expert was bypassed.
pub fn geometry_from_kv(kv: &KeyValues) -> Result<Option<GeometryExpertSpec>> {
    match get(kv, "geometry.kind")? {
        "bypassed" => Ok(None),
        "noisy_oracle" => Ok(Some(GeometryExpertSpec::NoisyOracle(PoseNoise {
            rot_deg_sigma: parse_num(kv, "geometry.rot_deg_sigma")?,
            trans_rel_sigma: parse_num(kv, "geometry.trans_rel_sigma")?,
            intr_rel_sigma: parse_num(kv, "geometry.intr_rel_sigma")?,
            seed: parse_num(kv, "geometry.seed")?,
        }))),
        "file_backed" => Ok(Some(GeometryExpertSpec::FileBacked(get(kv, "geometry.path")?.into()))),
        other => Err(Error::InvalidConfig(format!("unknown geometry.kind {other:?}"))),
    }
}

pub fn appearance_from_kv(kv: &KeyValues) -> Result<AppearanceExpertSpec> {
    match get(kv, "appearance.kind")? {
        "fitting" => {
            let depth_raw = get(kv, "appearance.depth")?;
            let depth = match depth_raw.split_once(':') {
                None if depth_raw == "supplied" => DepthPrior::Supplied,
                Some(("constant", d)) => DepthPrior::Constant(
                    d.parse().map_err(|_| Error::InvalidConfig(format!("bad constant depth {d:?}")))?,
                ),
                _ => return Err(Error::InvalidConfig(format!("bad appearance.depth {depth_raw:?}"))),
            };
            let bg: Vec<f64> = get(kv, "appearance.background")?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad background entry {s:?}"))))
                .collect::<Result<_>>()?;
            let background: [f64; 3] =
                bg.try_into().map_err(|_| Error::InvalidConfig("appearance.background needs three values".into()))?;
            Ok(AppearanceExpertSpec::Fitting(FittingConfig {
                iterations: parse_num(kv, "appearance.iterations")?,
                lr: parse_num(kv, "appearance.lr")?,
                depth,
                init: InitConfig {
                    opacity_logit: parse_num(kv, "appearance.init_opacity_logit")?,
                    scale_factor: parse_num(kv, "appearance.init_scale_factor")?,
                },
                background,
                seed: parse_num(kv, "appearance.seed")?,
            }))
        }
        "file_backed" => Ok(AppearanceExpertSpec::FileBacked(get(kv, "appearance.path")?.into())),
        other => Err(Error::InvalidConfig(format!("unknown appearance.kind {other:?}"))),
    }
}

/// Re-runs a pipeline from its recorded provenance with the same inputs.
pub fn rerun_from_provenance(
    prov: &KeyValues,
    images: &[ImageBuffer<f64>],
    gt_poses: Option<&[CameraPose<f64>]>,
    depth_priors: Option<&[DepthMap<f64>]>,
) -> Result<PipelineResult> {
    let protocol = Protocol::parse(get(prov, "protocol")?)?;
    let n_context: usize = parse_num(prov, "views.context")?;
    let geo = geometry_from_kv(prov)?.unwrap_or(GeometryExpertSpec::NoisyOracle(PoseNoise::default()));
    let app = appearance_from_kv(prov)?;
    run_pipeline(&geo, &app, images, n_context, protocol, gt_poses, depth_priors)
}

/// Independent per-run seed drawn from stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.random()
}

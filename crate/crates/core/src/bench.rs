//! Benchmark sweep over view counts and pose-noise levels on seeded
//! synthetic scenes.
//!
//! Every run is a pure function of the config and its derived seeds. Runs are
//! evaluated in parallel but collected in a fixed order, and no timing enters
//! the outputs, so a sweep writes the same bytes whatever the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::experts::{
    derive_seed, run_pipeline, AppearanceExpertSpec, DepthPrior, FittingConfig, GeometryExpertSpec, PoseNoise, Protocol,
};
use crate::gaussian::InitConfig;
use crate::harness::{
    make_synthetic_scene, oracle_depth, perturb_depth, select_views, SyntheticScene, SyntheticSceneSpec, TargetMode,
    ViewProtocol,
};
use crate::image::ImageBuffer;
use crate::io::{csv_float, encode_pfm, format_key_values, ConfigReader, KeyValues};
use crate::metrics::{
    pairwise_pose_errors, pose_auc, psnr, reports_csv, reports_table, ssim, MetricReport, PoseErrorMode,
    DEFAULT_AUC_THRESHOLDS,
};
use crate::optim::{align_poses_epa, EpaConfig};
use crate::render::{render, RenderConfig};

/// Everything a sweep needs; parsed from a key=value file.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub seed: u64,
    /// Independent scenes per sweep cell.
    pub runs: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub protocol: Protocol,
    pub epa: bool,
    pub epa_config: EpaConfig,
    pub scene: SyntheticSceneSpec,
    pub context_views: Vec<usize>,
    pub target_views: usize,
    pub max_interval: usize,
    pub target_mode: TargetMode,
    pub rot_deg_sigmas: Vec<f64>,
    pub trans_rel_sigma: f64,
    pub intr_rel_sigma: f64,
    pub fitting: FittingConfig,
    pub depth_rel_sigma: f64,
    /// Depth assigned where the oracle sees only background.
    pub far_depth: f64,
    pub min_alpha: f64,
    pub save_renders: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let scene = SyntheticSceneSpec { image_size: 32, ..Default::default() };
        BenchConfig {
            seed: 0,
            runs: 4,
            threads: 0,
            protocol: Protocol::PoseFree,
            epa: false,
            epa_config: EpaConfig::default(),
            scene,
            context_views: vec![2, 3],
            target_views: 2,
            max_interval: 50,
            target_mode: TargetMode::RandomHeldout,
            rot_deg_sigmas: vec![0.0, 1.0, 2.0, 5.0],
            trans_rel_sigma: 0.0,
            intr_rel_sigma: 0.0,
            fitting: FittingConfig { background: scene.background, ..Default::default() },
            depth_rel_sigma: 0.0,
            far_depth: 100.0,
            min_alpha: 0.5,
            save_renders: true,
        }
    }
}

impl BenchConfig {
    /// Reads a config, rejecting unknown keys. Missing keys keep their defaults.
    pub fn from_kv(kv: KeyValues) -> Result<Self> {
        let d = BenchConfig::default();
        let mut r = ConfigReader::new(kv);
        let protocol = match r.raw("protocol") {
            Some(p) => Protocol::parse(&p)?,
            None => d.protocol,
        };
        let target_mode = match r.raw("views.target_mode").as_deref() {
            None => d.target_mode,
            Some("random") => TargetMode::RandomHeldout,
            Some("fixed") => TargetMode::FixedIndex,
            Some(other) => return Err(Error::InvalidConfig(format!("views.target_mode: unknown mode {other:?}"))),
        };
        let bg = r.list("scene.background", d.scene.background.to_vec())?;
        let background: [f64; 3] =
            bg.try_into().map_err(|_| Error::InvalidConfig("scene.background needs three values".into()))?;
        let scene = SyntheticSceneSpec {
            seed: 0,
            gaussian_count: r.get("scene.gaussians", d.scene.gaussian_count)?,
            camera_count: r.get("scene.cameras", d.scene.camera_count)?,
            orbit_radius: r.get("scene.radius", d.scene.orbit_radius)?,
            image_size: r.get("scene.image_size", d.scene.image_size)?,
            background,
            arc_deg: r.get("scene.arc_deg", d.scene.arc_deg)?,
            elevation_deg: r.get("scene.elevation_deg", d.scene.elevation_deg)?,
            shell_thickness: r.get("scene.shell_thickness", d.scene.shell_thickness)?,
            ..d.scene
        };
        let epa_config = EpaConfig {
            iters: r.get("epa.iters", d.epa_config.iters)?,
            lr: r.get("epa.lr", d.epa_config.lr)?,
            optimize_intrinsics: r.flag("epa.intrinsics", d.epa_config.optimize_intrinsics)?,
            include_perceptual: r.flag("epa.perceptual", d.epa_config.include_perceptual)?,
            ..d.epa_config
        };
        let fitting = FittingConfig {
            iterations: r.get("fit.iterations", d.fitting.iterations)?,
            lr: r.get("fit.lr", d.fitting.lr)?,
            depth: DepthPrior::Supplied,
            init: InitConfig {
                opacity_logit: r.get("fit.init_opacity_logit", d.fitting.init.opacity_logit)?,
                scale_factor: r.get("fit.init_scale_factor", d.fitting.init.scale_factor)?,
            },
            background,
            seed: 0,
        };
        let cfg = BenchConfig {
            seed: r.get("seed", d.seed)?,
            runs: r.get("runs", d.runs)?,
            threads: r.get("threads", d.threads)?,
            protocol,
            epa: r.flag("epa", d.epa)?,
            epa_config,
            scene,
            context_views: r.list("views.context", d.context_views)?,
            target_views: r.get("views.targets", d.target_views)?,
            max_interval: r.get("views.max_interval", d.max_interval)?,
            target_mode,
            rot_deg_sigmas: r.list("noise.rot_deg", d.rot_deg_sigmas)?,
            trans_rel_sigma: r.get("noise.trans_rel", d.trans_rel_sigma)?,
            intr_rel_sigma: r.get("noise.intr_rel", d.intr_rel_sigma)?,
            fitting,
            depth_rel_sigma: r.get("depth.rel_sigma", d.depth_rel_sigma)?,
            far_depth: r.get("depth.far", d.far_depth)?,
            min_alpha: r.get("depth.min_alpha", d.min_alpha)?,
            save_renders: r.flag("output.renders", d.save_renders)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key=value form; `from_kv(to_kv())` reproduces the config.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        put("seed", self.seed.to_string());
        put("runs", self.runs.to_string());
        put("threads", self.threads.to_string());
        put("protocol", self.protocol.label().into());
        put("epa", on(self.epa));
        put("epa.iters", self.epa_config.iters.to_string());
        put("epa.lr", format!("{:?}", self.epa_config.lr));
        put("epa.intrinsics", on(self.epa_config.optimize_intrinsics));
        put("epa.perceptual", on(self.epa_config.include_perceptual));
        put("scene.gaussians", self.scene.gaussian_count.to_string());
        put("scene.cameras", self.scene.camera_count.to_string());
        put("scene.radius", format!("{:?}", self.scene.orbit_radius));
        put("scene.image_size", self.scene.image_size.to_string());
        put("scene.background", join(&self.scene.background));
        put("scene.arc_deg", format!("{:?}", self.scene.arc_deg));
        put("scene.elevation_deg", format!("{:?}", self.scene.elevation_deg));
        put("scene.shell_thickness", format!("{:?}", self.scene.shell_thickness));
        put("views.context", self.context_views.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        put("views.targets", self.target_views.to_string());
        put("views.max_interval", self.max_interval.to_string());
        let mode = match self.target_mode {
            TargetMode::RandomHeldout => "random",
            TargetMode::FixedIndex => "fixed",
        };
        put("views.target_mode", mode.into());
        put("noise.rot_deg", join(&self.rot_deg_sigmas));
        put("noise.trans_rel", format!("{:?}", self.trans_rel_sigma));
        put("noise.intr_rel", format!("{:?}", self.intr_rel_sigma));
        put("fit.iterations", self.fitting.iterations.to_string());
        put("fit.lr", format!("{:?}", self.fitting.lr));
        put("fit.init_opacity_logit", format!("{:?}", self.fitting.init.opacity_logit));
        put("fit.init_scale_factor", format!("{:?}", self.fitting.init.scale_factor));
        put("depth.rel_sigma", format!("{:?}", self.depth_rel_sigma));
        put("depth.far", format!("{:?}", self.far_depth));
        put("depth.min_alpha", format!("{:?}", self.min_alpha));
        put("output.renders", on(self.save_renders));
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.scene.validate()?;
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.context_views.is_empty() || self.context_views.contains(&0) {
            return bad("views.context needs at least one positive count".into());
        }
        if self.target_views == 0 {
            return bad("views.targets must be at least 1".into());
        }
        if self.scene.image_size < crate::metrics::SSIM_WINDOW {
            return bad(format!("scene.image_size must be at least {} for SSIM", crate::metrics::SSIM_WINDOW));
        }
        if self.rot_deg_sigmas.is_empty() {
            return bad("noise.rot_deg needs at least one level".into());
        }
        let sigmas =
            self.rot_deg_sigmas.iter().chain([&self.trans_rel_sigma, &self.intr_rel_sigma, &self.depth_rel_sigma]);
        if sigmas.clone().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise and depth sigmas must be finite and non-negative".into());
        }
        if !(self.far_depth > 0.0) || !(0.0..=1.0).contains(&self.min_alpha) {
            return bad("depth.far must be positive and depth.min_alpha within [0, 1]".into());
        }
        let most = self.context_views.iter().max().copied().unwrap_or(0) + self.target_views;
        if most > self.scene.camera_count {
            return bad(format!("{most} views per run exceed scene.cameras = {}", self.scene.camera_count));
        }
        Ok(())
    }

    /// Sweep cells in output order. The posed protocol ignores pose noise, so
    /// it gets one cell per view count.
    pub fn cells(&self) -> Vec<BenchCell> {
        let sigmas: Vec<f64> = match self.protocol {
            Protocol::Posed => vec![0.0],
            Protocol::PoseFree => self.rot_deg_sigmas.clone(),
        };
        let mut out = Vec::new();
        for &n_context in &self.context_views {
            for &rot in &sigmas {
                let mut method = match self.protocol {
                    Protocol::Posed => "posed".to_string(),
                    Protocol::PoseFree => format!("pose_free@rot{rot}"),
                };
                if self.epa {
                    method.push_str("+epa");
                }
                out.push(BenchCell { method, n_context, rot_deg_sigma: rot });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchCell {
    pub method: String,
    pub n_context: usize,
    pub rot_deg_sigma: f64,
}

/// Outcome of one scene in one cell.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub cell: usize,
    pub run: usize,
    pub scene_seed: u64,
    pub target_psnr: Vec<f64>,
    pub target_ssim: Vec<f64>,
    pub pose_errors: Vec<f64>,
    pub renders: Vec<ImageBuffer<f64>>,
    pub provenance: KeyValues,
}

impl RunRecord {
    pub fn mean_psnr(&self) -> f64 {
        self.target_psnr.iter().sum::<f64>() / self.target_psnr.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.target_ssim.iter().sum::<f64>() / self.target_ssim.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub cells: Vec<BenchCell>,
    pub runs: Vec<RunRecord>,
    pub reports: Vec<MetricReport>,
}

pub const RUNS_CSV_HEADER: &str = "method,views,rot_deg,run,scene_seed,psnr,ssim,auc@5,auc@10,auc@20";

/// Runs the sweep, in a dedicated pool when `cfg.threads > 0`.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("threads: {e}")))?;
        pool.install(|| sweep(cfg))
    } else {
        sweep(cfg)
    }
}

fn sweep(cfg: &BenchConfig) -> Result<BenchOutput> {
    let cells = cfg.cells();
    // One scene per run index, shared by every cell so cells are paired.
    let scenes: Vec<(u64, SyntheticScene)> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(cfg.seed, run as u64);
            make_synthetic_scene(&SyntheticSceneSpec { seed, ..cfg.scene }).map(|s| (seed, s))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.runs).map(move |r| (c, r))).collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, r)| run_one(cfg, &cells[c], c, r, scenes[r].0, &scenes[r].1))
        .collect::<Result<_>>()?;

    let reports = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.cell == c).collect();
            let errors: Vec<f64> = mine.iter().flat_map(|r| r.pose_errors.iter().copied()).collect();
            Ok(MetricReport {
                method: cell.method.clone(),
                views: cell.n_context,
                psnr_db: mine.iter().flat_map(|r| r.target_psnr.iter().copied()).collect(),
                ssim: mine.iter().flat_map(|r| r.target_ssim.iter().copied()).collect(),
                auc: pose_auc(&errors, &DEFAULT_AUC_THRESHOLDS)?,
                pose_pairs: errors.len(),
                pose_error_mode: PoseErrorMode::Max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchOutput { cells, runs, reports })
}

fn run_one(
    cfg: &BenchConfig,
    cell: &BenchCell,
    cell_index: usize,
    run: usize,
    scene_seed: u64,
    syn: &SyntheticScene,
) -> Result<RunRecord> {
    let centers: Vec<_> = syn.cameras.iter().map(CameraPose::center).collect();
    let protocol = ViewProtocol {
        target_mode: cfg.target_mode,
        ..ViewProtocol::new(cell.n_context, cfg.target_views, cfg.max_interval, derive_seed(scene_seed, 1))
    };
    let sel = select_views(&centers, &protocol)?;
    let order: Vec<usize> = sel.context_indices.iter().chain(&sel.target_indices).copied().collect();
    let images: Vec<ImageBuffer<f64>> = order.iter().map(|&i| syn.images[i].clone()).collect();
    let gt: Vec<CameraPose<f64>> = order.iter().map(|&i| syn.cameras[i]).collect();
    let nc = cell.n_context;

    let depths = gt[..nc]
        .iter()
        .enumerate()
        .map(|(v, pose)| {
            let d = oracle_depth(&syn.scene, pose, cfg.far_depth, cfg.min_alpha)?;
            Ok(if cfg.depth_rel_sigma > 0.0 {
                perturb_depth(&d, cfg.depth_rel_sigma, derive_seed(scene_seed, 100 + v as u64))
            } else {
                d
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // The noise seed is shared across cells so noise levels differ only in magnitude.
    let geo = GeometryExpertSpec::NoisyOracle(PoseNoise {
        rot_deg_sigma: cell.rot_deg_sigma,
        trans_rel_sigma: cfg.trans_rel_sigma,
        intr_rel_sigma: cfg.intr_rel_sigma,
        seed: derive_seed(scene_seed, 2),
    });
    let app = AppearanceExpertSpec::Fitting(FittingConfig { seed: derive_seed(scene_seed, 3), ..cfg.fitting });
    let result = run_pipeline(&geo, &app, &images, nc, cfg.protocol, Some(&gt), Some(&depths))?;
    let mut poses = result.poses;
    if cfg.epa {
        let refined = align_poses_epa(&result.scene, &poses[nc..], &images[nc..], &cfg.epa_config)?;
        poses.splice(nc.., refined.poses);
    }

    let render_cfg = RenderConfig::default();
    let mut renders = Vec::with_capacity(images.len() - nc);
    let (mut target_psnr, mut target_ssim) = (Vec::new(), Vec::new());
    for (pose, target) in poses[nc..].iter().zip(&images[nc..]) {
        let img = render(&result.scene, pose, &render_cfg)?.clamped();
        target_psnr.push(psnr(&img, target)?);
        target_ssim.push(ssim(&img, target)?);
        renders.push(img);
    }
    let pose_errors: Vec<f64> =
        pairwise_pose_errors(&poses, &gt)?.iter().map(|s| PoseErrorMode::Max.select(s)).collect();

    let mut provenance = result.provenance;
    provenance.insert("bench.method".into(), cell.method.clone());
    provenance.insert("bench.run".into(), run.to_string());
    provenance.insert("bench.scene_seed".into(), scene_seed.to_string());
    provenance.insert("bench.frames".into(), order.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    provenance.insert("bench.epa".into(), if cfg.epa { "on" } else { "off" }.into());

    Ok(RunRecord { cell: cell_index, run, scene_seed, target_psnr, target_ssim, pose_errors, renders, provenance })
}

/// Per-run CSV: one row per (cell, run).
pub fn runs_csv(out: &BenchOutput) -> Result<String> {
    let mut s = format!("{RUNS_CSV_HEADER}\n");
    for r in &out.runs {
        let cell = &out.cells[r.cell];
        let auc = pose_auc(&r.pose_errors, &DEFAULT_AUC_THRESHOLDS)?;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            cell.method,
            cell.n_context,
            csv_float(cell.rot_deg_sigma),
            r.run,
            r.scene_seed,
            csv_float(r.mean_psnr()),
            csv_float(r.mean_ssim())
        );
        for (_, v) in auc {
            let _ = write!(s, ",{}", csv_float(v));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes `config.txt`, `report.csv`, `report.txt`, `runs.csv`,
/// `provenance/` and, when enabled, `renders/` under `dir`.
pub fn write_bench(dir: &Path, cfg: &BenchConfig, out: &BenchOutput) -> Result<()> {
    fs::create_dir_all(dir.join("provenance"))?;
    fs::write(dir.join("config.txt"), format_key_values(&cfg.to_kv()))?;
    fs::write(dir.join("report.csv"), reports_csv(&out.reports))?;
    fs::write(dir.join("report.txt"), reports_table(&out.reports))?;
    fs::write(dir.join("runs.csv"), runs_csv(out)?)?;
    for r in &out.runs {
        let stem = format!("cell{:02}_run{:02}", r.cell, r.run);
        fs::write(dir.join("provenance").join(format!("{stem}.txt")), format_key_values(&r.provenance))?;
        if cfg.save_renders {
            fs::create_dir_all(dir.join("renders"))?;
            for (k, img) in r.renders.iter().enumerate() {
                fs::write(dir.join("renders").join(format!("{stem}_target{k}.pfm")), encode_pfm(img))?;
            }
        }
    }
    Ok(())
}

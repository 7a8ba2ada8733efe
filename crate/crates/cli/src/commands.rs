use std::fs;
use std::path::{Path, PathBuf};

use duosplat::bench::{run_bench, write_bench, BenchConfig};
use duosplat::experts::{
    run_pipeline, AppearanceExpertSpec, DepthPrior, FittingConfig, GeometryExpertSpec, PoseNoise, Protocol,
};
use duosplat::gaussian::InitConfig;
use duosplat::harness::{make_synthetic_scene, oracle_depth, SyntheticSceneSpec};
use duosplat::io::{
    format_key_values, hash_file, read_depth, read_gaussians, read_image, read_key_values, read_poses,
    records_from_poses, write_gaussians, write_pfm, write_poses, write_ppm, write_text, PoseRecord,
};
use duosplat::metrics::{
    pairwise_pose_errors, pose_auc, psnr, reports_csv, reports_table, ssim, MetricReport, PoseErrorMode,
    DEFAULT_AUC_THRESHOLDS,
};
use duosplat::optim::{align_poses_epa, trace_csv, EpaConfig};
use duosplat::{
    render, CameraPose, DepthMap, Error, GaussianScene, ImageBuffer, LossBreakdown, RenderConfig, Result, Vec3,
};

use crate::config::ConfigFile;

/// Names the offending file in filesystem errors.
pub fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_images(paths: &[PathBuf]) -> Result<Vec<ImageBuffer<f64>>> {
    paths.iter().map(|p| at_path(p, read_image(p))).collect()
}

fn load_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    at_path(path, read_poses(path))
}

fn poses_of(records: &[PoseRecord]) -> Vec<CameraPose<f64>> {
    records.iter().map(|r| r.pose).collect()
}

/// Frame ids become file names, so keep them to a safe alphabet.
fn checked_stem(frame_id: &str) -> Result<&str> {
    let ok = !frame_id.is_empty()
        && !frame_id.starts_with('.')
        && frame_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(frame_id)
    } else {
        Err(Error::InvalidConfig(format!("frame id {frame_id:?} is not usable as a file name")))
    }
}

fn load_scene(c: &mut ConfigFile) -> Result<GaussianScene<f64>> {
    let path = c.require_path("scene")?;
    let bg = c.color("background", [0.0; 3])?;
    at_path(&path, read_gaussians(&path, Vec3(bg)))
}

fn epa_config(c: &mut ConfigFile) -> Result<EpaConfig> {
    let d = EpaConfig::default();
    Ok(EpaConfig {
        iters: c.get("epa.iters", d.iters)?,
        lr: c.get("epa.lr", d.lr)?,
        optimize_intrinsics: c.flag("epa.intrinsics", d.optimize_intrinsics)?,
        include_perceptual: c.flag("epa.perceptual", d.include_perceptual)?,
        ..d
    })
}

fn same_count(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

pub fn fit(config: &Path, seed: Option<u64>, protocol: Option<Protocol>, out: &Path) -> Result<()> {
    let mut c = ConfigFile::load(config)?;
    let image_paths = c.require_paths("images")?;
    let images = read_images(&image_paths)?;
    let n_context = c.get("views.context", images.len())?;
    let from_file = c.raw("protocol").map(|p| Protocol::parse(&p)).transpose()?;
    let protocol = protocol.or(from_file).unwrap_or(Protocol::PoseFree);
    let seed = seed.unwrap_or(c.get("seed", 0)?);
    let gt = c.path("poses").map(|p| load_poses(&p)).transpose()?;

    let geo = match c.raw("geometry.kind").as_deref().unwrap_or("noisy_oracle") {
        "noisy_oracle" => GeometryExpertSpec::NoisyOracle(PoseNoise {
            rot_deg_sigma: c.get("noise.rot_deg", 0.0)?,
            trans_rel_sigma: c.get("noise.trans_rel", 0.0)?,
            intr_rel_sigma: c.get("noise.intr_rel", 0.0)?,
            seed,
        }),
        "file_backed" => GeometryExpertSpec::FileBacked(c.require_path("geometry.poses")?),
        other => return Err(Error::InvalidConfig(format!("unknown geometry.kind {other:?}"))),
    };

    let depth_paths = c.paths("depths");
    let depth_constant: Option<f64> = c.opt("depth.constant")?;
    let (depth, depth_maps) = match (depth_paths.is_empty(), depth_constant) {
        (false, None) => {
            let maps = depth_paths.iter().map(|p| at_path(p, read_depth(p))).collect::<Result<Vec<DepthMap<f64>>>>()?;
            (DepthPrior::Supplied, Some(maps))
        }
        (true, Some(d)) if d > 0.0 => (DepthPrior::Constant(d), None),
        (true, Some(d)) => return Err(Error::InvalidConfig(format!("depth.constant must be positive, got {d}"))),
        _ => return Err(Error::InvalidConfig("give exactly one of depths and depth.constant".into())),
    };
    let d = FittingConfig::default();
    let fitting = FittingConfig {
        iterations: c.get("fit.iterations", d.iterations)?,
        lr: c.get("fit.lr", d.lr)?,
        depth,
        init: InitConfig {
            opacity_logit: c.get("fit.init_opacity_logit", d.init.opacity_logit)?,
            scale_factor: c.get("fit.init_scale_factor", d.init.scale_factor)?,
        },
        background: c.color("background", d.background)?,
        seed,
    };
    c.finish()?;

    let gt_poses = gt.as_deref().map(poses_of);
    let result = run_pipeline(
        &geo,
        &AppearanceExpertSpec::Fitting(fitting),
        &images,
        n_context,
        protocol,
        gt_poses.as_deref(),
        depth_maps.as_deref(),
    )?;

    let mut records = records_from_poses(&result.poses);
    if let Some(gt) = gt.as_ref().filter(|g| g.len() == records.len()) {
        for (r, g) in records.iter_mut().zip(gt) {
            r.frame_id.clone_from(&g.frame_id);
        }
    }
    let mut prov = result.provenance;
    prov.insert("cli.config.fnv1a64".into(), format!("{:016x}", at_path(config, hash_file(config))?));
    prov.insert("cli.seed".into(), seed.to_string());

    fs::create_dir_all(out)?;
    write_gaussians(&out.join("scene.2xpg"), &result.scene)?;
    write_poses(&out.join("poses.txt"), &records)?;
    write_text(&out.join("provenance.txt"), &format_key_values(&prov))?;
    println!("{} Gaussians from {n_context} context views ({})", result.scene.len(), protocol.label());
    Ok(())
}

pub fn render_views(config: &Path, out: &Path) -> Result<()> {
    let mut c = ConfigFile::load(config)?;
    let scene = load_scene(&mut c)?;
    let records = load_poses(&c.require_path("poses")?)?;
    let format = c.raw("output.format").unwrap_or_else(|| "ppm".into());
    let (ppm, pfm) = match format.as_str() {
        "ppm" => (true, false),
        "pfm" => (false, true),
        "both" => (true, true),
        other => return Err(Error::InvalidConfig(format!("output.format must be ppm, pfm or both, got {other:?}"))),
    };
    c.finish()?;

    fs::create_dir_all(out)?;
    for r in &records {
        let stem = checked_stem(&r.frame_id)?;
        let img = render(&scene, &r.pose, &RenderConfig::default())?;
        if ppm {
            write_ppm(&out.join(format!("{stem}.ppm")), &img)?;
        }
        if pfm {
            write_pfm(&out.join(format!("{stem}.pfm")), &img)?;
        }
    }
    println!("rendered {} views", records.len());
    Ok(())
}

pub fn epa(config: &Path, out: &Path) -> Result<()> {
    let mut c = ConfigFile::load(config)?;
    let scene = load_scene(&mut c)?;
    let records = load_poses(&c.require_path("poses")?)?;
    let images = read_images(&c.require_paths("images")?)?;
    let cfg = epa_config(&mut c)?;
    let timing = c.flag("output.timing", false)?;
    c.finish()?;
    same_count("poses vs images", records.len(), images.len())?;

    let res = align_poses_epa(&scene, &poses_of(&records), &images, &cfg)?;
    let refined: Vec<PoseRecord> =
        records.iter().zip(&res.poses).map(|(r, p)| PoseRecord { frame_id: r.frame_id.clone(), pose: *p }).collect();
    let best = res.trace[res.best_iter].loss;

    fs::create_dir_all(out)?;
    write_poses(&out.join("poses.txt"), &refined)?;
    write_text(&out.join("trace.csv"), &trace_csv(&res.trace, timing))?;
    write_text(&out.join("loss.csv"), &format!("{}\n{}\n", LossBreakdown::CSV_HEADER, best.csv_row()))?;
    println!("loss {:.6e} -> {:.6e} (best at iteration {})", res.initial_loss(), res.best_loss(), res.best_iter);
    Ok(())
}

pub fn eval(config: &Path, epa_flag: Option<bool>, out: &Path) -> Result<()> {
    let mut c = ConfigFile::load(config)?;
    let targets = read_images(&c.require_paths("targets")?)?;
    let method = c.raw("method").unwrap_or_else(|| "eval".into());
    let views = c.get("views", targets.len())?;
    let epa_on = epa_flag.unwrap_or(c.flag("epa", false)?);
    let pred_paths = c.paths("predictions");
    let predictions = if let Some(scene_path) = c.path("scene") {
        let cfg = epa_config(&mut c)?;
        let bg = c.color("background", [0.0; 3])?;
        let scene = at_path(&scene_path, read_gaussians(&scene_path, Vec3(bg)))?;
        let cams = poses_of(&load_poses(&c.require_path("target_poses")?)?);
        same_count("target_poses vs targets", cams.len(), targets.len())?;
        let cams = if epa_on { align_poses_epa(&scene, &cams, &targets, &cfg)?.poses } else { cams };
        cams.iter().map(|p| render(&scene, p, &RenderConfig::default())).collect::<Result<Vec<_>>>()?
    } else if epa_on {
        return Err(Error::InvalidConfig("epa needs a scene and target_poses to re-render from".into()));
    } else if pred_paths.is_empty() {
        return Err(Error::InvalidConfig("give either predictions or scene with target_poses".into()));
    } else {
        read_images(&pred_paths)?
    };
    same_count("predictions vs targets", predictions.len(), targets.len())?;

    let mode = match c.raw("pose_error").as_deref().unwrap_or("max") {
        "max" => PoseErrorMode::Max,
        "rot" => PoseErrorMode::Rotation,
        other => return Err(Error::InvalidConfig(format!("pose_error must be max or rot, got {other:?}"))),
    };
    let thresholds = c.list("auc.thresholds", DEFAULT_AUC_THRESHOLDS.to_vec())?;
    let pose_files = (c.path("poses.pred"), c.path("poses.gt"));
    c.finish()?;

    let (auc, pose_pairs) = match pose_files {
        (Some(p), Some(g)) => {
            let pred = poses_of(&load_poses(&p)?);
            let gt = poses_of(&load_poses(&g)?);
            let samples = pairwise_pose_errors(&pred, &gt)?;
            let errors: Vec<f64> = samples.iter().map(|s| mode.select(s)).collect();
            (pose_auc(&errors, &thresholds)?, samples.len())
        }
        (None, None) => (Vec::new(), 0),
        _ => return Err(Error::InvalidConfig("poses.pred and poses.gt go together".into())),
    };
    let mut psnr_db = Vec::with_capacity(targets.len());
    let mut ssim_v = Vec::with_capacity(targets.len());
    for (p, t) in predictions.iter().zip(&targets) {
        psnr_db.push(psnr(p, t)?);
        ssim_v.push(ssim(p, t)?);
    }
    let label = if epa_on { format!("{method}+epa") } else { method };
    let report = MetricReport { method: label, views, psnr_db, ssim: ssim_v, auc, pose_pairs, pose_error_mode: mode };
    let reports = [report];

    fs::create_dir_all(out)?;
    write_text(&out.join("report.csv"), &reports_csv(&reports))?;
    let table = reports_table(&reports);
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn bench(
    config: &Path,
    seed: Option<u64>,
    protocol: Option<Protocol>,
    epa_flag: Option<bool>,
    out: &Path,
) -> Result<()> {
    let mut kv = at_path(config, read_key_values(config))?;
    if let Some(s) = seed {
        kv.insert("seed".into(), s.to_string());
    }
    if let Some(p) = protocol {
        kv.insert("protocol".into(), p.label().into());
    }
    if let Some(e) = epa_flag {
        kv.insert("epa".into(), if e { "on" } else { "off" }.into());
    }
    let cfg = BenchConfig::from_kv(kv)?;
    let result = run_bench(&cfg)?;
    write_bench(out, &cfg, &result)?;
    print!("{}", reports_table(&result.reports));
    Ok(())
}

pub fn synth(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut c = ConfigFile::load(config)?;
    let d = SyntheticSceneSpec::default();
    let spec = SyntheticSceneSpec {
        seed: seed.unwrap_or(c.get("seed", 0)?),
        gaussian_count: c.get("scene.gaussians", d.gaussian_count)?,
        camera_count: c.get("scene.cameras", d.camera_count)?,
        orbit_radius: c.get("scene.radius", d.orbit_radius)?,
        image_size: c.get("scene.image_size", d.image_size)?,
        background: c.color("scene.background", d.background)?,
        arc_deg: c.get("scene.arc_deg", d.arc_deg)?,
        elevation_deg: c.get("scene.elevation_deg", d.elevation_deg)?,
        shell_thickness: c.get("scene.shell_thickness", d.shell_thickness)?,
        ..d
    };
    let far = c.get("depth.far", 100.0)?;
    let min_alpha = c.get("depth.min_alpha", 0.5)?;
    c.finish()?;

    let s = make_synthetic_scene(&spec)?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("depths"))?;
    let mut records = records_from_poses(&s.cameras);
    for (i, (img, pose)) in s.images.iter().zip(&s.cameras).enumerate() {
        let stem = format!("view{i:03}");
        write_pfm(&out.join("images").join(format!("{stem}.pfm")), img)?;
        let depth = oracle_depth(&s.scene, pose, far, min_alpha)?;
        fs::write(out.join("depths").join(format!("{stem}.pfm")), duosplat::io::encode_depth_pfm(&depth))?;
        records[i].frame_id = stem;
    }
    write_poses(&out.join("poses.txt"), &records)?;
    write_gaussians(&out.join("scene.2xpg"), &s.scene)?;
    println!("{} Gaussians, {} views", s.scene.len(), s.cameras.len());
    Ok(())
}

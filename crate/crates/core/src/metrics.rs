//! Image quality (PSNR, SSIM) and relative-pose accuracy (pairwise angular
//! errors, cumulative-error AUC).

use std::fmt::Write as _;

use crate::camera::{geodesic_unchecked, relative_pose, CameraPose};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::io::csv_float;
use crate::scalar::Real;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const DEFAULT_AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// `10·log10(1/mse)`, capped at 100 dB once the MSE drops below 1e-10.
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.rgb.len().max(1) as f64;
    let mse = a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x.to_f() - y.to_f()).powi(2)).sum::<f64>() / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering of one channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM per channel (11×11 Gaussian window, σ = 1.5, valid
/// positions only), averaged over the three channels.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}")));
    }
    let taps = ssim_taps();
    let mut total = 0.0;
    for ch in 0..3 {
        let pa: Vec<f64> = (0..w * h).map(|i| a.rgb[3 * i + ch].to_f()).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.rgb[3 * i + ch].to_f()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &taps);
        let mu_b = filter_valid(&pb, w, h, &taps);
        let e_aa = filter_valid(&prod(&pa, &pa), w, h, &taps);
        let e_bb = filter_valid(&prod(&pb, &pb), w, h, &taps);
        let e_ab = filter_valid(&prod(&pa, &pb), w, h, &taps);
        let sum: f64 = (0..mu_a.len()).map(|i| ssim_from_moments(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i])).sum();
        total += sum / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

/// SSIM of one window from its first and second raw moments.
pub fn ssim_from_moments(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Angular error of one unordered view pair, in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseErrorSample {
    pub rot_err_deg: f64,
    pub trans_angle_err_deg: f64,
    pub pair: (usize, usize),
}

impl PoseErrorSample {
    pub fn max_err_deg(&self) -> f64 {
        self.rot_err_deg.max(self.trans_angle_err_deg)
    }
}

/// Which per-pair error feeds the AUC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoseErrorMode {
    #[default]
    Max,
    Rotation,
}

impl PoseErrorMode {
    pub fn label(&self) -> &'static str {
        match self {
            PoseErrorMode::Max => "max",
            PoseErrorMode::Rotation => "rot",
        }
    }

    pub fn select(&self, s: &PoseErrorSample) -> f64 {
        match self {
            PoseErrorMode::Max => s.max_err_deg(),
            PoseErrorMode::Rotation => s.rot_err_deg,
        }
    }
}

fn direction_angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    match (na < 1e-9, nb < 1e-9) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 180.0,
        _ => {
            // atan2 keeps small angles accurate where acos of a near-1 cosine would not.
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            sin.atan2(dot).to_degrees()
        }
    }
}

/// Relative-pose errors for every unordered pair `i < j`.
pub fn pairwise_pose_errors<T: Real>(pred: &[CameraPose<T>], gt: &[CameraPose<T>]) -> Result<Vec<PoseErrorSample>> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    let pred64: Vec<CameraPose<f64>> = pred.iter().map(|p| p.cast()).collect();
    let gt64: Vec<CameraPose<f64>> = gt.iter().map(|p| p.cast()).collect();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let rp = relative_pose(&pred64[i], &pred64[j])?;
            let rg = relative_pose(&gt64[i], &gt64[j])?;
            out.push(PoseErrorSample {
                rot_err_deg: geodesic_unchecked(&rp.rotation, &rg.rotation).to_degrees(),
                trans_angle_err_deg: direction_angle_deg(rp.translation.0, rg.translation.0),
                pair: (i, j),
            });
        }
    }
    Ok(out)
}

/// Exact area under the empirical error CDF up to each threshold, normalized by the threshold.
///
/// For a step CDF this reduces to the mean of `max(0, 1 − e/τ)`.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::EmptyErrorList);
    }
    if let Some(e) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::InvalidConfig(format!("pose errors must be finite and non-negative, got {e}")));
    }
    let m = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let area: f64 = errors.iter().map(|&e| (tau - e).max(0.0)).sum();
            (tau, area / (tau * m))
        })
        .collect())
}

/// Per-run evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub views: usize,
    pub psnr_db: Vec<f64>,
    pub ssim: Vec<f64>,
    pub auc: Vec<(f64, f64)>,
    pub pose_pairs: usize,
    pub pose_error_mode: PoseErrorMode,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr_db)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn auc_at(&self, tau: f64) -> Option<f64> {
        self.auc.iter().find(|(t, _)| *t == tau).map(|(_, v)| *v)
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("method,views,psnr,ssim");
        for (t, _) in &self.auc {
            let _ = write!(h, ",auc@{t}");
        }
        h.push_str(",pose_pairs,pose_error");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r =
            format!("{},{},{},{}", self.method, self.views, csv_float(self.mean_psnr()), csv_float(self.mean_ssim()));
        for (_, v) in &self.auc {
            let _ = write!(r, ",{}", csv_float(*v));
        }
        let _ = write!(r, ",{},{}", self.pose_pairs, self.pose_error_mode.label());
        r
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// CSV document with one header row taken from the first report.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let Some(first) = reports.first() else { return String::new() };
    let mut s = first.csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Plain-text table with right-aligned numeric columns.
pub fn reports_table(reports: &[MetricReport]) -> String {
    let Some(first) = reports.first() else { return String::new() };
    let mut header = vec!["Method".to_string(), "Views".into(), "PSNR".into(), "SSIM".into()];
    header.extend(first.auc.iter().map(|(t, _)| format!("AUC@{t}")));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.method.clone(),
                r.views.to_string(),
                format!("{:.3}", r.mean_psnr()),
                format!("{:.4}", r.mean_ssim()),
            ];
            row.extend(r.auc.iter().map(|(_, v)| format!("{v:.3}")));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[c]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
    }
    let _ = writeln!(out, "pose error: {}", first.pose_error_mode.label());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: usize, h: usize, v: f64) -> ImageBuffer<f64> {
        ImageBuffer::filled(w, h, [v, v, v])
    }

    #[test]
    fn psnr_examples() {
        let a = flat(4, 4, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!((psnr(&a, &flat(4, 4, 0.6)).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &flat(4, 4, 0.51)).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &flat(4, 5, 0.5)).is_err());
    }

    #[test]
    fn ssim_constant_and_small() {
        let a = flat(16, 16, 0.5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(ssim(&flat(10, 16, 0.5), &flat(10, 16, 0.5)), Err(Error::TooSmall(_))));
    }

    #[test]
    fn auc_examples() {
        let auc = pose_auc(&[0.0, 0.0], &DEFAULT_AUC_THRESHOLDS).unwrap();
        assert!(auc.iter().all(|(_, v)| *v == 1.0));
        assert_eq!(pose_auc(&[5.0], &[10.0]).unwrap()[0].1, 0.5);
        let v = pose_auc(&[2.0, 8.0, 30.0], &[10.0]).unwrap()[0].1;
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(pose_auc(&[], &[5.0]), Err(Error::EmptyErrorList)));
    }

    #[test]
    fn direction_angle_degenerate_cases() {
        assert_eq!(direction_angle_deg([0.0; 3], [0.0; 3]), 0.0);
        assert_eq!(direction_angle_deg([0.0; 3], [1.0, 0.0, 0.0]), 180.0);
        assert!((direction_angle_deg([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn table_and_csv_layout() {
        let r = MetricReport {
            method: "oracle+epa".into(),
            views: 6,
            psnr_db: vec![30.0, 32.0],
            ssim: vec![0.9, 0.92],
            auc: pose_auc(&[1.0], &DEFAULT_AUC_THRESHOLDS).unwrap(),
            pose_pairs: 15,
            pose_error_mode: PoseErrorMode::Max,
        };
        let csv = reports_csv(std::slice::from_ref(&r));
        assert!(csv.starts_with("method,views,psnr,ssim,auc@5,auc@10,auc@20,pose_pairs,pose_error\n"));
        assert!(csv.contains("oracle+epa,6,3.100000000e1,"));
        let table = reports_table(&[r]);
        assert!(table.lines().next().unwrap().starts_with("Method      Views"));
    }
}

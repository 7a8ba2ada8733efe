//! On-disk formats: pose text, the `2XPG` Gaussian dump, PPM/PFM images,
//! key=value files and FNV-1a content hashes.
//!
//! Every writer emits bytes that depend only on its inputs, so repeated runs
//! produce byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::hash::Hasher;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use fnv::FnvHasher;

use crate::camera::{CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianScene, GAUSSIAN_DIM};
use crate::image::{DepthMap, ImageBuffer};
use crate::linalg::{Quat, Vec3};
use crate::scalar::Real;

pub const GAUSSIAN_MAGIC: &[u8; 4] = b"2XPG";
pub const GAUSSIAN_VERSION: u32 = 1;

/// One line of a pose file.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub frame_id: String,
    pub pose: CameraPose<f64>,
}

/// Writes poses as `frame_id qw qx qy qz tx ty tz fx fy cx cy width height`.
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn format_poses(records: &[PoseRecord]) -> String {
    let mut s = String::from("# frame_id qw qx qy qz tx ty tz fx fy cx cy width height (world-to-camera)\n");
    for r in records {
        let p = &r.pose;
        let q = Quat::from_rotation(&p.rotation);
        let k = &p.intrinsics;
        let _ = writeln!(
            s,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {}",
            r.frame_id,
            q.0[0],
            q.0[1],
            q.0[2],
            q.0[3],
            p.translation[0],
            p.translation[1],
            p.translation[2],
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height
        );
    }
    s
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse(format!("line {line}: bad number {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("line {line}: non-finite value {tok:?}")));
    }
    Ok(v)
}

/// Parses the pose text format. Quaternions within 1e-6 of unit norm are
/// renormalized; anything further off is rejected.
pub fn parse_poses(text: &str) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 14 {
            return Err(Error::Parse(format!("line {line}: expected 14 fields, got {}", toks.len())));
        }
        let f = |k: usize| parse_f64(toks[k], line);
        let q = Quat::new(f(1)?, f(2)?, f(3)?, f(4)?);
        let n = q.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Parse(format!("line {line}: quaternion norm {n} is not 1")));
        }
        let dim = |k: usize| -> Result<usize> {
            toks[k].parse().map_err(|_| Error::Parse(format!("line {line}: bad image dimension {:?}", toks[k])))
        };
        let k = Intrinsics::new(f(8)?, f(9)?, f(10)?, f(11)?, dim(12)?, dim(13)?)
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let pose = CameraPose::new(q.normalized().to_rotation(), Vec3::new(f(5)?, f(6)?, f(7)?), k)
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        out.push(PoseRecord { frame_id: toks[0].to_string(), pose });
    }
    Ok(out)
}

/// Frame ids default to the list index.
pub fn records_from_poses(poses: &[CameraPose<f64>]) -> Vec<PoseRecord> {
    poses.iter().enumerate().map(|(i, p)| PoseRecord { frame_id: i.to_string(), pose: *p }).collect()
}

pub fn write_poses(path: &Path, records: &[PoseRecord]) -> Result<()> {
    fs::write(path, format_poses(records))?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    parse_poses(&fs::read_to_string(path)?)
}

/// Serializes a scene to the binary dump. Attributes are stored as f32, and a
/// free Gaussian (`source_view = -1`) is stored as `u32::MAX`.
pub fn encode_gaussians<T: Real>(scene: &GaussianScene<T>) -> Vec<u8> {
    let n = scene.len();
    let mut buf = Vec::with_capacity(12 + n * (GAUSSIAN_DIM * 4 + 4));
    buf.extend_from_slice(GAUSSIAN_MAGIC);
    buf.extend_from_slice(&GAUSSIAN_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for g in &scene.gaussians {
        for v in g.to_array() {
            buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    for &sv in &scene.source_view {
        buf.extend_from_slice(&(sv as u32).to_le_bytes());
    }
    buf
}

/// Inverse of [`encode_gaussians`]. The background is not part of the format
/// and is supplied by the caller.
pub fn decode_gaussians<T: Real>(bytes: &[u8], background: Vec3<T>) -> Result<GaussianScene<T>> {
    let bad = |m: &str| Error::Parse(format!("gaussian dump: {m}"));
    if bytes.len() < 12 || &bytes[..4] != GAUSSIAN_MAGIC {
        return Err(bad("missing 2XPG magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"));
    let version = u32_at(4);
    if version != GAUSSIAN_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32_at(8) as usize;
    let expected = 12 + n * (GAUSSIAN_DIM * 4 + 4);
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes for {n} Gaussians, found {}", bytes.len())));
    }
    let mut scene = GaussianScene::new(background);
    let sv_base = 12 + n * GAUSSIAN_DIM * 4;
    for i in 0..n {
        let base = 12 + i * GAUSSIAN_DIM * 4;
        let mut a = [T::zero(); GAUSSIAN_DIM];
        for (k, slot) in a.iter_mut().enumerate() {
            let v = f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().expect("4-byte slice"));
            *slot = T::c(v as f64);
        }
        scene.push(Gaussian::from_slice(&a), u32_at(sv_base + 4 * i) as i32);
    }
    Ok(scene)
}

pub fn write_gaussians<T: Real>(path: &Path, scene: &GaussianScene<T>) -> Result<()> {
    fs::write(path, encode_gaussians(scene))?;
    Ok(())
}

pub fn read_gaussians<T: Real>(path: &Path, background: Vec3<T>) -> Result<GaussianScene<T>> {
    decode_gaussians(&fs::read(path)?, background)
}

/// Binary P6 with 8-bit channels; values are clamped to [0, 1] and rounded half-to-even.
pub fn encode_ppm<T: Real>(img: &ImageBuffer<T>) -> Vec<u8> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend(img.rgb.iter().map(|v| {
        let x = v.to_f().clamp(0.0, 1.0) * 255.0;
        x.round_ties_even() as u8
    }));
    buf
}

/// Reads P6 images written by [`encode_ppm`] (maxval 255, no comments).
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer<f64>> {
    let (header, data) = split_header(bytes, 3)?;
    if header[0] != "P6" {
        return Err(Error::Parse(format!("ppm: unsupported magic {:?}", header[0])));
    }
    let (w, h) = (parse_dim(header[1])?, parse_dim(header[2])?);
    let tokens: Vec<&str> = header[3].split_whitespace().collect();
    if tokens != ["255"] {
        return Err(Error::Parse("ppm: only maxval 255 is supported".into()));
    }
    if data.len() != w * h * 3 {
        return Err(Error::Parse(format!("ppm: expected {} data bytes, found {}", w * h * 3, data.len())));
    }
    Ok(ImageBuffer { width: w, height: h, rgb: data.iter().map(|&b| b as f64 / 255.0).collect() })
}

/// Color PFM, little-endian f32, rows stored bottom-to-top as the format requires.
pub fn encode_pfm<T: Real>(img: &ImageBuffer<T>) -> Vec<u8> {
    let mut buf = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * 3;
    for y in (0..img.height).rev() {
        for v in &img.rgb[y * row..(y + 1) * row] {
            buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    buf
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageBuffer<f64>> {
    let (w, h, channels, data) = decode_pfm_raw(bytes)?;
    if channels != 3 {
        return Err(Error::Parse("pfm: expected a colour (PF) image".into()));
    }
    Ok(ImageBuffer { width: w, height: h, rgb: data })
}

/// Single-channel `Pf` file as a depth map; a colour `PF` file contributes its first channel.
pub fn decode_depth_pfm(bytes: &[u8]) -> Result<DepthMap<f64>> {
    let (w, h, channels, data) = decode_pfm_raw(bytes)?;
    let mut depth = DepthMap::filled(w, h, 0.0);
    for (d, px) in depth.data.iter_mut().zip(data.chunks_exact(channels)) {
        *d = px[0];
    }
    Ok(depth)
}

/// Width, height, channel count and samples in top-to-bottom row order.
fn decode_pfm_raw(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let (header, data) = split_header(bytes, 3)?;
    let channels = match header[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Parse(format!("pfm: unsupported magic {other:?}"))),
    };
    let (w, h) = (parse_dim(header[1])?, parse_dim(header[2])?);
    let scale: f64 = header[3].trim().parse().map_err(|_| Error::Parse("pfm: bad scale".into()))?;
    let little = scale < 0.0;
    let expected = w * h * channels * 4;
    if data.len() != expected {
        return Err(Error::Parse(format!("pfm: expected {expected} data bytes, found {}", data.len())));
    }
    let mut out = vec![0.0; w * h * channels];
    let row = w * channels;
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4-byte chunk");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row, k % row);
        out[(h - 1 - file_row) * row + col] = v as f64;
    }
    Ok((w, h, channels, out))
}

/// Depth maps are stored as single-channel little-endian PFM.
pub fn encode_depth_pfm(depth: &DepthMap<f64>) -> Vec<u8> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for y in (0..depth.height).rev() {
        for v in &depth.data[y * depth.width..(y + 1) * depth.width] {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn read_depth(path: &Path) -> Result<DepthMap<f64>> {
    decode_depth_pfm(&fs::read(path)?)
}

fn parse_dim(tok: &str) -> Result<usize> {
    tok.trim().parse().map_err(|_| Error::Parse(format!("image header: bad dimension {tok:?}")))
}

/// Splits a netpbm-style header: magic, width, height, then one more line.
fn split_header(bytes: &[u8], lines: usize) -> Result<(Vec<&str>, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    // Magic line, then "W H" (which may share a line), then the last header line.
    while fields.len() < lines + 1 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("image header: truncated".into()))?;
        let line =
            std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| Error::Parse("image header: not ASCII".into()))?;
        pos += end + 1;
        if fields.len() == 1 {
            fields.extend(line.split_whitespace());
        } else {
            fields.push(line);
        }
    }
    if fields.len() != lines + 1 {
        return Err(Error::Parse("image header: malformed dimensions".into()));
    }
    Ok((fields, &bytes[pos..]))
}

pub fn write_ppm<T: Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn write_pfm<T: Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    fs::write(path, encode_pfm(img))?;
    Ok(())
}

/// Loads `.pfm` losslessly or `.ppm` at 8-bit precision, chosen by extension.
pub fn read_image(path: &Path) -> Result<ImageBuffer<f64>> {
    let bytes = fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => decode_pfm(&bytes),
        Some("ppm") => decode_ppm(&bytes),
        _ => Err(Error::Parse(format!("{}: expected a .ppm or .pfm file", path.display()))),
    }
}

/// 64-bit FNV-1a of a byte stream.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn hash_file(path: &Path) -> Result<u64> {
    let mut h = FnvHasher::default();
    let mut f = fs::File::open(path)?;
    let mut chunk = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        h.write(&chunk[..n]);
    }
    Ok(h.finish())
}

/// Ordered key=value map. Keys are emitted sorted so output is canonical.
pub type KeyValues = BTreeMap<String, String>;

/// Parses `key = value` lines, ignoring blanks and `#` comments. Duplicate keys are an error.
pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

pub fn format_key_values(kv: &KeyValues) -> String {
    kv.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k}={v}");
        s
    })
}

pub fn read_key_values(path: &Path) -> Result<KeyValues> {
    parse_key_values(&fs::read_to_string(path)?)
}

/// Typed reader over a key=value config that tracks which keys were consumed,
/// so misspelled keys surface as errors instead of silently using defaults.
#[derive(Debug, Clone)]
pub struct ConfigReader {
    kv: KeyValues,
    used: BTreeSet<String>,
}

impl ConfigReader {
    pub fn new(kv: KeyValues) -> Self {
        ConfigReader { kv, used: BTreeSet::new() }
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.kv.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_value(key, &v),
        }
    }

    /// Comma-separated list; an empty value yields an empty list.
    pub fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| parse_value(key, t)).collect(),
        }
    }

    /// Accepts `true/false`, `on/off`, `yes/no` and `1/0`.
    pub fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_flag(&v).ok_or_else(|| Error::InvalidConfig(format!("{key}: expected on/off, got {v:?}"))),
        }
    }

    /// Fails if any key was never read.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self.kv.keys().filter(|k| !self.used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

pub fn parse_flag(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {raw:?}")))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

/// Fixed-precision float formatting shared by every CSV writer.
pub fn csv_float(v: f64) -> String {
    format!("{v:.9e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat3;

    fn sample_pose() -> CameraPose<f64> {
        let k = Intrinsics::new(60.0, 58.5, 31.5, 30.25, 64, 62).unwrap();
        CameraPose::new(Mat3::exp_so3(&Vec3::new(0.3, -1.1, 0.7)), Vec3::new(0.1, -2.0, 3.3), k).unwrap()
    }

    #[test]
    fn pose_text_round_trip() {
        let recs = vec![PoseRecord { frame_id: "f007".into(), pose: sample_pose() }];
        let back = parse_poses(&format_poses(&recs)).unwrap();
        assert_eq!(back[0].frame_id, "f007");
        assert!(back[0].pose.rotation.sub(&recs[0].pose.rotation).max_abs() < 1e-14);
        assert_eq!(back[0].pose.translation, recs[0].pose.translation);
        assert_eq!(back[0].pose.intrinsics, recs[0].pose.intrinsics);
    }

    #[test]
    fn pose_text_rejects_garbage() {
        assert!(parse_poses("0 1 0 0 0 0 0 0 1 1 0 0 4").is_err());
        assert!(parse_poses("0 2 0 0 0 0 0 0 1 1 0 0 4 4").is_err());
        assert!(parse_poses("0 1 0 0 0 0 0 0 1 1 9 0 4 4").is_err());
        assert!(parse_poses("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn gaussian_dump_is_bit_exact_for_f32() {
        let mut scene = GaussianScene::<f32>::new(Vec3::new(0.1, 0.2, 0.3));
        let g = Gaussian::isotropic(Vec3::new(1.0, -2.5, 0.125), 0.07, 0.6, Vec3::new(0.9, 0.1, 0.5));
        scene.push(g, 3);
        scene.push(g, -1);
        let bytes = encode_gaussians(&scene);
        assert_eq!(&bytes[..4], b"2XPG");
        assert_eq!(bytes.len(), 12 + 2 * 60);
        let back = decode_gaussians(&bytes, scene.background).unwrap();
        assert_eq!(back, scene);
        assert!(decode_gaussians::<f32>(&bytes[..bytes.len() - 1], scene.background).is_err());
    }

    #[test]
    fn ppm_rounds_half_to_even_and_clamps() {
        let img = ImageBuffer { width: 2, height: 1, rgb: vec![0.5 / 255.0, 1.5 / 255.0, -0.2, 1.7, 0.5, 1.0] };
        let bytes = encode_ppm(&img);
        let data = &bytes[bytes.len() - 6..];
        assert_eq!(data, &[0, 2, 0, 255, 128, 255]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!((back.width, back.height), (2, 1));
    }

    #[test]
    fn pfm_round_trip_is_lossless_in_f32() {
        let img = ImageBuffer::from_fn(3, 2, |x, y| [x as f64 * 0.25, y as f64 - 0.5, 1.5]);
        let back = decode_pfm(&encode_pfm(&img)).unwrap();
        assert_eq!(back.rgb, img.rgb);
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn key_values_parse_and_reject_duplicates() {
        let kv = parse_key_values("# c\nb = 2\na=1\n").unwrap();
        assert_eq!(format_key_values(&kv), "a=1\nb=2\n");
        assert!(parse_key_values("a=1\na=2").is_err());
        assert!(parse_key_values("novalue").is_err());
    }

    #[test]
    fn depth_pfm_round_trip_and_colour_fallback() {
        let mut d = DepthMap::filled(4, 3, 0.0);
        for (i, v) in d.data.iter_mut().enumerate() {
            *v = 0.5 + i as f64 * 0.25;
        }
        let bytes = encode_depth_pfm(&d);
        assert!(bytes.starts_with(b"Pf\n4 3\n"));
        assert_eq!(decode_depth_pfm(&bytes).unwrap().data, d.data);
        // A colour file yields its red channel.
        let img = ImageBuffer::from_fn(2, 2, |x, y| [(x + 2 * y) as f64, 9.0, 9.0]);
        assert_eq!(decode_depth_pfm(&encode_pfm(&img)).unwrap().data, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(decode_pfm(&bytes).is_err());
    }

    #[test]
    fn config_reader_types_lists_and_unknown_keys() {
        let kv = parse_key_values("n = 3\nxs = 1, 2.5,\nflag = off\ntypo = 1\n").unwrap();
        let mut r = ConfigReader::new(kv);
        assert_eq!(r.get("n", 0usize).unwrap(), 3);
        assert_eq!(r.get("missing", 7u32).unwrap(), 7);
        assert_eq!(r.list("xs", vec![0.0f64]).unwrap(), vec![1.0, 2.5]);
        assert!(!r.flag("flag", true).unwrap());
        let err = r.finish().unwrap_err().to_string();
        assert!(err.contains("typo"), "{err}");
        assert!(r.raw("typo").is_some());
        assert!(r.finish().is_ok());

        let mut bad = ConfigReader::new(parse_key_values("n = three\nf = maybe").unwrap());
        assert!(matches!(bad.get("n", 0usize), Err(Error::InvalidConfig(_))));
        assert!(matches!(bad.flag("f", false), Err(Error::InvalidConfig(_))));
        assert_eq!(parse_flag(" YES "), Some(true));
        assert_eq!(parse_flag("0"), Some(false));
    }
}

use rayon::prelude::*;

use super::{project_and_sort, sample_alpha, ProjectedGaussian, RenderConfig};
use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::image::{ImageBuffer, ScalarMap};
use crate::scalar::Real;

/// f64 copy of the per-sample quantities the pixel loop reads.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat {
    fn from_projected<T: Real>(p: &ProjectedGaussian<T>) -> Self {
        Splat {
            mean: [p.mean2d[0].to_f(), p.mean2d[1].to_f()],
            conic: [p.conic.a.to_f(), p.conic.b.to_f(), p.conic.c.to_f()],
            opacity: p.opacity.to_f(),
            color: p.color.map(|c| c.to_f()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TileGrid {
    pub size: usize,
    pub nx: usize,
    pub ny: usize,
    pub width: usize,
    pub height: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize, size: usize) -> Self {
        let size = size.max(1);
        TileGrid { size, nx: width.div_ceil(size), ny: height.div_ceil(size), width, height }
    }

    pub fn count(&self) -> usize {
        self.nx * self.ny
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.nx, t / self.nx);
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        (x0, (x0 + self.size).min(self.width), y0, (y0 + self.size).min(self.height))
    }
}

/// Everything the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub struct ForwardState<T> {
    pub(crate) projected: Vec<ProjectedGaussian<T>>,
    pub(crate) splats: Vec<Splat>,
    pub(crate) grid: TileGrid,
    /// Per tile, positions into `projected` in front-to-back order.
    pub(crate) tile_lists: Vec<Vec<u32>>,
    /// Row-major f64 color accumulators.
    pub(crate) color: Vec<[f64; 3]>,
    pub(crate) final_t: Vec<f64>,
    /// Number of tile-list entries visited per pixel (including skipped ones).
    pub(crate) visited: Vec<u32>,
    pub(crate) background: [f64; 3],
    pub(crate) cfg: RenderConfig,
}

impl<T: Real> ForwardState<T> {
    pub fn image(&self) -> ImageBuffer<T> {
        let mut rgb = Vec::with_capacity(self.color.len() * 3);
        for c in &self.color {
            rgb.extend(c.iter().map(|v| T::c(*v)));
        }
        ImageBuffer { width: self.grid.width, height: self.grid.height, rgb }
    }

    pub fn image_f64(&self) -> ImageBuffer<f64> {
        ImageBuffer {
            width: self.grid.width,
            height: self.grid.height,
            rgb: self.color.iter().flat_map(|c| c.iter().copied()).collect(),
        }
    }

    /// Accumulated alpha `1 − T_final` per pixel.
    pub fn alpha(&self) -> ScalarMap<T> {
        ScalarMap {
            width: self.grid.width,
            height: self.grid.height,
            data: self.final_t.iter().map(|t| T::c(1.0 - t)).collect(),
        }
    }

    /// Scene indices of the Gaussians that survived culling.
    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.projected.iter().map(|p| p.index)
    }
}

fn bin_tiles<T: Real>(projected: &[ProjectedGaussian<T>], grid: &TileGrid) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); grid.count()];
    let (w, h) = (grid.width as f64, grid.height as f64);
    for (pos, p) in projected.iter().enumerate() {
        let (mx, my) = (p.mean2d[0].to_f(), p.mean2d[1].to_f());
        let [ex, ey] = p.extent;
        // Pixel centers sit at i + 0.5.
        let lo_x = (mx - ex - 0.5).ceil().max(0.0);
        let hi_x = (mx + ex - 0.5).floor().min(w - 1.0);
        let lo_y = (my - ey - 0.5).ceil().max(0.0);
        let hi_y = (my + ey - 0.5).floor().min(h - 1.0);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let s = grid.size;
        let (tx0, tx1) = (lo_x as usize / s, hi_x as usize / s);
        let (ty0, ty1) = (lo_y as usize / s, hi_y as usize / s);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * grid.nx + tx].push(pos as u32);
            }
        }
    }
    lists
}

struct TileOut {
    color: Vec<[f64; 3]>,
    final_t: Vec<f64>,
    visited: Vec<u32>,
}

fn composite_tile(
    grid: &TileGrid,
    tile: usize,
    list: &[u32],
    splats: &[Splat],
    background: &[f64; 3],
    cfg: &RenderConfig,
) -> TileOut {
    let (x0, x1, y0, y1) = grid.bounds(tile);
    let n = (x1 - x0) * (y1 - y0);
    let mut out =
        TileOut { color: Vec::with_capacity(n), final_t: Vec::with_capacity(n), visited: Vec::with_capacity(n) };
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0f64;
            let mut c = [0.0f64; 3];
            let mut visited = 0u32;
            for &pos in list {
                visited += 1;
                let s = &splats[pos as usize];
                let (alpha, _, _) = sample_alpha(&s.conic, s.opacity, px - s.mean[0], py - s.mean[1], cfg.alpha_max);
                if alpha < cfg.alpha_cut {
                    continue;
                }
                let w = alpha * t;
                for ch in 0..3 {
                    c[ch] += s.color[ch] * w;
                }
                t *= 1.0 - alpha;
                if t < cfg.t_min {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * background[ch];
            }
            out.color.push(c);
            out.final_t.push(t);
            out.visited.push(visited);
        }
    }
    out
}

pub(crate) fn forward<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Result<ForwardState<T>> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let k = &pose.intrinsics;
    let grid = TileGrid::new(k.width, k.height, cfg.tile_size);
    let projected = project_and_sort(&scene.gaussians, pose, cfg);
    let splats: Vec<Splat> = projected.iter().map(Splat::from_projected).collect();
    let tile_lists = bin_tiles(&projected, &grid);
    let background = scene.background.to_f64().map(|c| c.clamp(0.0, 1.0));

    let tiles: Vec<TileOut> = (0..grid.count())
        .into_par_iter()
        .map(|t| composite_tile(&grid, t, &tile_lists[t], &splats, &background, cfg))
        .collect();

    let npx = k.width * k.height;
    let mut color = vec![[0.0; 3]; npx];
    let mut final_t = vec![1.0; npx];
    let mut visited = vec![0u32; npx];
    for (t, out) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * k.width + x;
                color[p] = out.color[i];
                final_t[p] = out.final_t[i];
                visited[p] = out.visited[i];
                i += 1;
            }
        }
    }
    Ok(ForwardState { projected, splats, grid, tile_lists, color, final_t, visited, background, cfg: *cfg })
}

/// Tile-based forward render.
///
/// Projection runs in `T`; compositing accumulates in f64. Output is
/// bit-identical across runs and thread counts.
pub fn render<T: Real>(scene: &GaussianScene<T>, pose: &CameraPose<T>, cfg: &RenderConfig) -> Result<ImageBuffer<T>> {
    Ok(forward(scene, pose, cfg)?.image())
}

/// Forward render plus the accumulated-alpha map.
pub fn render_with_alpha<T: Real>(
    scene: &GaussianScene<T>,
    pose: &CameraPose<T>,
    cfg: &RenderConfig,
) -> Result<(ImageBuffer<T>, ScalarMap<T>)> {
    let st = forward(scene, pose, cfg)?;
    Ok((st.image(), st.alpha()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::gaussian::Gaussian;
    use crate::linalg::Vec3;

    fn cam(w: usize, h: usize) -> CameraPose<f64> {
        CameraPose::identity(Intrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap())
    }

    #[test]
    fn culled_scene_renders_background() {
        let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, -2.0), 0.1, 0.9, Vec3::new(1.0, 0.0, 0.0));
        let scene = GaussianScene::from_gaussians(vec![g], Vec3::new(0.2, 0.3, 0.4));
        let img = render(&scene, &cam(20, 12), &RenderConfig::default()).unwrap();
        for y in 0..12 {
            for x in 0..20 {
                assert_eq!(img.pixel(x, y), [0.2, 0.3, 0.4]);
            }
        }
    }

    #[test]
    fn empty_scene_is_an_error() {
        let scene = GaussianScene::<f64>::new(Vec3::zeros());
        assert!(matches!(render(&scene, &cam(4, 4), &RenderConfig::default()), Err(Error::EmptyScene)));
    }

    #[test]
    fn on_axis_gaussian_is_radially_symmetric() {
        let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.2, 0.8, Vec3::new(0.9, 0.6, 0.3));
        let scene = GaussianScene::from_gaussians(vec![g], Vec3::zeros());
        let (w, h) = (32, 32);
        let img = render(&scene, &cam(w, h), &RenderConfig::default()).unwrap();
        // Principal point at (16, 16) lies on a pixel corner; the four central pixels tie.
        let center = img.pixel(15, 15)[0];
        for y in 0..h {
            for x in 0..w {
                let v = img.pixel(x, y)[0];
                assert!(v <= center + 1e-15);
                // Mirror through the principal point: x → 31 − x, and transpose.
                assert!((v - img.pixel(w - 1 - x, y)[0]).abs() < 1e-6);
                assert!((v - img.pixel(x, h - 1 - y)[0]).abs() < 1e-6);
                assert!((v - img.pixel(y, x)[0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tile_grid_covers_ragged_edges() {
        let g = TileGrid::new(33, 17, 16);
        assert_eq!((g.nx, g.ny), (3, 2));
        assert_eq!(g.bounds(5), (32, 33, 16, 17));
    }
}

//! Forward software rasterizer: EWA projection, depth sort, 16x16 tile
//! binning and front-to-back alpha compositing.

mod image;

pub use image::{mse, psnr, ImageRGBA, PSNR_CAP_DB};

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::model::{Camera, Gaussian3D, GaussianSet, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    /// Camera-space depth at or below which a Gaussian is culled.
    pub near: f64,
    pub tile_size: u32,
    /// Splat extent used for binning, in standard deviations.
    pub extent_sigma: f64,
    pub alpha_max: f64,
    /// Contributions with smaller alpha are skipped.
    pub alpha_min: f64,
    /// A pixel stops compositing once transmittance falls below this.
    pub transmittance_min: f64,
    /// Projected covariances with smaller determinant are culled.
    pub min_det: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            near: 0.01,
            tile_size: 16,
            extent_sigma: 3.0,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            min_det: 1e-12,
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian in its set.
    pub source: usize,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vec3,
    pub opacity: f64,
}

impl Splat2D {
    /// `exp(-1/2 d^T cov^-1 d)` at pixel-space offset `d` from the mean.
    #[inline]
    pub fn falloff(&self, d: Vector2<f64>) -> f64 {
        let c = &self.conic;
        let power = -0.5 * (c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y);
        power.min(0.0).exp()
    }

    /// Square root of the largest eigenvalue of the 2D covariance.
    pub fn max_sigma(&self) -> f64 {
        let (a, b, c) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mid + disc).max(0.0).sqrt()
    }
}

/// Affine Jacobian of the perspective projection at camera-space point `m`.
pub fn projection_jacobian(m: &Vec3, cam: &Camera) -> Matrix2x3<f64> {
    let iz = 1.0 / m.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * m.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * m.y * iz * iz,
    )
}

/// Project with the default configuration (near plane 0.01, no 2D dilation).
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Splat2D> {
    project_with(g, 0, cam, &RasterConfig::default())
}

pub fn project_with(g: &Gaussian3D, source: usize, cam: &Camera, cfg: &RasterConfig) -> Option<Splat2D> {
    let m = cam.to_camera(&g.position);
    if !(m.z > cfg.near) {
        return None;
    }
    let mean = Vector2::new(cam.fx * m.x / m.z + cam.cx(), cam.fy * m.y / m.z + cam.cy());
    let t = projection_jacobian(&m, cam) * cam.rotation;
    let cov = t * g.covariance() * t.transpose();
    // enforce exact symmetry
    let cov = Matrix2::new(cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = cov.determinant();
    if !(det > cfg.min_det) || cov[(0, 0)] <= 0.0 {
        return None;
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    Some(Splat2D {
        source,
        mean,
        cov,
        conic,
        depth: m.z,
        color: g.color,
        opacity: g.opacity,
    })
}

/// Projected, sorted and binned splats for one (set, camera) pair; the
/// intermediate state shared by the forward and backward passes.
#[derive(Debug, Clone)]
pub struct Rasterization {
    pub width: u32,
    pub height: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Surviving splats ordered by `(depth, source index)`.
    pub splats: Vec<Splat2D>,
    /// Per tile (row-major), indices into `splats` in front-to-back order.
    pub tiles: Vec<Vec<u32>>,
    pub config: RasterConfig,
    packed: Vec<PackedSplat>,
}

/// The per-pixel working set of a splat, flattened for the inner loops.
#[derive(Debug, Clone, Copy)]
struct PackedSplat {
    mx: f64,
    my: f64,
    a: f64,
    b: f64,
    c: f64,
    opacity: f64,
    /// Exponents below this give `alpha < alpha_min`.
    power_cut: f64,
}

/// One splat evaluated at one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAlpha {
    pub alpha: f64,
    pub falloff: f64,
    /// `opacity * falloff` exceeded the clamp, so `alpha` is constant.
    pub clamped: bool,
}

impl Rasterization {
    pub fn new(gs: &GaussianSet, cam: &Camera, config: &RasterConfig) -> Self {
        let mut splats: Vec<Splat2D> = (0..gs.len())
            .into_par_iter()
            .with_min_len(1024)
            .filter_map(|i| project_with(&gs.get(i), i, cam, config))
            .collect();
        splats.par_sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));

        let ts = config.tile_size;
        let tiles_x = cam.width.div_ceil(ts);
        let tiles_y = cam.height.div_ceil(ts);
        let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        let mut kept = Vec::with_capacity(splats.len());
        for s in splats {
            let Some((x0, x1, y0, y1)) = pixel_rect(&s, cam.width, cam.height, config.extent_sigma) else {
                continue;
            };
            let id = kept.len() as u32;
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    tiles[(ty * tiles_x + tx) as usize].push(id);
                }
            }
            kept.push(s);
        }
        let packed = kept
            .iter()
            .map(|s| PackedSplat {
                mx: s.mean.x,
                my: s.mean.y,
                a: s.conic[(0, 0)],
                b: s.conic[(0, 1)],
                c: s.conic[(1, 1)],
                opacity: s.opacity,
                power_cut: (config.alpha_min / s.opacity).ln(),
            })
            .collect();
        Self {
            width: cam.width,
            height: cam.height,
            tiles_x,
            tiles_y,
            splats: kept,
            tiles,
            config: *config,
            packed,
        }
    }

    /// Alpha of splat `id` at pixel `(x, y)`, `None` when below the skip
    /// threshold. Forward and backward passes both go through here.
    #[inline]
    pub(crate) fn eval(&self, id: u32, x: u32, y: u32) -> Option<PixelAlpha> {
        let p = &self.packed[id as usize];
        let dx = x as f64 + 0.5 - p.mx;
        let dy = y as f64 + 0.5 - p.my;
        let power = (-0.5 * (p.a * dx * dx + 2.0 * p.b * dx * dy + p.c * dy * dy)).min(0.0);
        if power < p.power_cut {
            return None;
        }
        let falloff = power.exp();
        let raw = p.opacity * falloff;
        let alpha = raw.min(self.config.alpha_max);
        (alpha >= self.config.alpha_min).then_some(PixelAlpha {
            alpha,
            falloff,
            clamped: raw > self.config.alpha_max,
        })
    }

    /// Number of splats that touch at least one pixel.
    pub fn rendered_count(&self) -> usize {
        self.splats.len()
    }

    /// Pixel bounds `(x0, x1, y0, y1)` (inclusive) of a tile.
    pub fn tile_bounds(&self, tile: usize) -> (u32, u32, u32, u32) {
        let ts = self.config.tile_size;
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        (
            tx * ts,
            ((tx + 1) * ts).min(self.width) - 1,
            ty * ts,
            ((ty + 1) * ts).min(self.height) - 1,
        )
    }

    /// Alpha of splat `s` at pixel `(x, y)`, or `None` if skipped.
    #[inline]
    pub fn alpha_at(&self, s: &Splat2D, x: u32, y: u32) -> Option<f64> {
        let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - s.mean;
        let alpha = (s.opacity * s.falloff(d)).min(self.config.alpha_max);
        (alpha >= self.config.alpha_min).then_some(alpha)
    }

    pub fn composite(&self) -> ImageRGBA {
        let tile_images: Vec<Vec<[f64; 4]>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| self.composite_tile(t))
            .collect();
        let mut img = ImageRGBA::new(self.width, self.height);
        for (t, buf) in tile_images.into_iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_bounds(t);
            let mut k = 0;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    img.set(x, y, buf[k]);
                    k += 1;
                }
            }
        }
        img
    }

    fn composite_tile(&self, tile: usize) -> Vec<[f64; 4]> {
        let (x0, x1, y0, y1) = self.tile_bounds(tile);
        let list = &self.tiles[tile];
        let mut out = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut t = 1.0;
                let mut px = [0.0; 4];
                for &id in list {
                    let Some(PixelAlpha { alpha, .. }) = self.eval(id, x, y) else { continue };
                    let s = &self.splats[id as usize];
                    let w = t * alpha;
                    px[0] += w * s.color.x;
                    px[1] += w * s.color.y;
                    px[2] += w * s.color.z;
                    px[3] += w;
                    t *= 1.0 - alpha;
                    if t < self.config.transmittance_min {
                        break;
                    }
                }
                out.push(px);
            }
        }
        out
    }
}

/// Inclusive pixel rectangle whose sample points lie within the splat's
/// extent, or `None` if it misses the image.
fn pixel_rect(s: &Splat2D, width: u32, height: u32, extent_sigma: f64) -> Option<(u32, u32, u32, u32)> {
    let r = extent_sigma * s.max_sigma();
    if !r.is_finite() {
        return None;
    }
    let x0 = (s.mean.x - r - 0.5).ceil().max(0.0);
    let x1 = (s.mean.x + r - 0.5).floor().min(width as f64 - 1.0);
    let y0 = (s.mean.y - r - 0.5).ceil().max(0.0);
    let y1 = (s.mean.y + r - 0.5).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as u32, x1 as u32, y0 as u32, y1 as u32))
}

pub fn render(gs: &GaussianSet, cam: &Camera) -> ImageRGBA {
    render_with(gs, cam, &RasterConfig::default())
}

pub fn render_with(gs: &GaussianSet, cam: &Camera, cfg: &RasterConfig) -> ImageRGBA {
    Rasterization::new(gs, cam, cfg).composite()
}

/// Drop Gaussians whose projected `3 sigma` radius is below `clip` pixels
/// (and those culled by projection).
pub fn radius_clip_filter(gs: &GaussianSet, cam: &Camera, clip: f64) -> GaussianSet {
    let cfg = RasterConfig::default();
    let keep: Vec<usize> = (0..gs.len())
        .into_par_iter()
        .with_min_len(1024)
        .filter(|&i| match project_with(&gs.get(i), i, cam, &cfg) {
            Some(s) => 3.0 * s.max_sigma() >= clip,
            None => false,
        })
        .collect();
    gs.select(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::identity_quat;
    use nalgebra::Quaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(pos: Vec3, sigma: f64, opacity: f64, color: Vec3) -> Gaussian3D {
        Gaussian3D {
            position: pos,
            scale: Vec3::repeat(sigma),
            rotation: identity_quat(),
            opacity,
            color,
        }
    }

    fn front_camera(w: u32, h: u32, f: f64) -> Camera {
        // at the origin looking down +z
        Camera::look_at(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0), w, h, f, f).unwrap()
    }

    fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian3D {
        Gaussian3D {
            position: Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(3.0..5.0)),
            scale: Vec3::new(rng.random_range(0.02..0.2), rng.random_range(0.02..0.2), rng.random_range(0.02..0.2)),
            rotation: Quaternion::new(rng.random(), rng.random(), rng.random(), rng.random()).normalize(),
            opacity: rng.random_range(0.1..0.95),
            color: Vec3::new(rng.random(), rng.random(), rng.random()),
        }
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let cam = front_camera(64, 64, 100.0);
        let s = project(&gaussian(Vec3::new(0.0, 0.0, 5.0), 0.1, 0.5, Vec3::zeros()), &cam).unwrap();
        let expected = (100.0 * 0.1 / 5.0f64).powi(2);
        assert!((s.cov[(0, 0)] - expected).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - expected).abs() < 1e-12);
        assert!(s.cov[(0, 1)].abs() < 1e-12);
        assert_eq!(s.mean, Vector2::new(32.0, 32.0));
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = front_camera(64, 64, 100.0);
        assert!(project(&gaussian(Vec3::new(0.0, 0.0, -1.0), 0.1, 0.5, Vec3::zeros()), &cam).is_none());
        assert!(project(&gaussian(Vec3::new(0.0, 0.0, 0.005), 0.1, 0.5, Vec3::zeros()), &cam).is_none());
    }

    #[test]
    fn covariance_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let eye = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::z(), 64, 48, 90.0, 80.0).unwrap();
            let mut g = random_gaussian(&mut rng);
            g.position = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let s = project(&g, &cam).unwrap();
            // full pinhole projection, differentiated numerically
            let proj = |p: Vec3| {
                let m = cam.to_camera(&p);
                Vector2::new(cam.fx * m.x / m.z + cam.cx(), cam.fy * m.y / m.z + cam.cy())
            };
            let h = 1e-6;
            let mut jac = Matrix2x3::zeros();
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                let d = (proj(g.position + e) - proj(g.position - e)) / (2.0 * h);
                jac.set_column(k, &d);
            }
            let cov = jac * g.covariance() * jac.transpose();
            let rel = (cov - s.cov).norm() / s.cov.norm();
            assert!(rel < 1e-3, "relative error {rel}");
        }
    }

    #[test]
    fn empty_set_renders_transparent() {
        let img = render(&GaussianSet::new(), &front_camera(20, 10, 50.0));
        assert_eq!(img, ImageRGBA::new(20, 10));
    }

    #[test]
    fn centered_splat_alpha_is_opacity() {
        let cam = front_camera(33, 33, 100.0);
        for op in [0.3, 0.995] {
            // pixel (16,16) is sampled at 16.5 = principal point
            let gs: GaussianSet = [gaussian(Vec3::new(0.0, 0.0, 5.0), 0.1, op, Vec3::new(1.0, 0.5, 0.2))]
                .into_iter()
                .collect();
            let img = render(&gs, &cam);
            let a = img.get(16, 16)[3];
            assert!((a - op.min(0.99)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_term_blend() {
        let cam = front_camera(33, 33, 100.0);
        let (a1, c1) = (0.6, Vec3::new(1.0, 0.0, 0.0));
        let (a2, c2) = (0.5, Vec3::new(0.0, 1.0, 0.5));
        let gs: GaussianSet = [
            gaussian(Vec3::new(0.0, 0.0, 8.0), 0.1, a2, c2),
            gaussian(Vec3::new(0.0, 0.0, 5.0), 0.1, a1, c1),
        ]
        .into_iter()
        .collect();
        let p = render(&gs, &cam).get(16, 16);
        let expected = c1 * a1 + c2 * ((1.0 - a1) * a2);
        for c in 0..3 {
            assert!((p[c] - expected[c]).abs() < 1e-12);
        }
        assert!((p[3] - (a1 + (1.0 - a1) * a2)).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant_and_alpha_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gs: GaussianSet = (0..200).map(|_| random_gaussian(&mut rng)).collect();
        let cam = front_camera(64, 48, 60.0);
        let img = render(&gs, &cam);
        let mut order: Vec<usize> = (0..gs.len()).collect();
        order.reverse();
        order.swap(3, 77);
        let shuffled = gs.select(&order);
        assert_eq!(render(&shuffled, &cam), img);
        assert!(img.pixels.iter().all(|p| p[3] <= 1.0 && p[3] >= 0.0 && p.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn alpha_monotone_in_opacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gs: GaussianSet = (0..60).map(|_| random_gaussian(&mut rng)).collect();
        let cam = front_camera(48, 48, 60.0);
        let base = render(&gs, &cam);
        for i in [0, 13, 42] {
            let mut up = gs.clone();
            up.opacities[i] = (up.opacities[i] + 0.04).min(0.999);
            let img = render(&up, &cam);
            for (a, b) in base.pixels.iter().zip(&img.pixels) {
                assert!(b[3] >= a[3] - 1e-12);
            }
        }
    }

    #[test]
    fn single_splat_alpha_integral() {
        let cam = front_camera(128, 128, 200.0);
        let g = Gaussian3D {
            position: Vec3::new(0.01, -0.02, 6.0),
            scale: Vec3::new(0.15, 0.08, 0.1),
            rotation: Quaternion::new(0.9, 0.2, 0.1, 0.3).normalize(),
            opacity: 0.4,
            color: Vec3::repeat(1.0),
        };
        let s = project(&g, &cam).unwrap();
        let gs: GaussianSet = [g].into_iter().collect();
        let img = render(&gs, &cam);
        let total: f64 = img.pixels.iter().map(|p| p[3]).sum();
        let expected = g.opacity * 2.0 * std::f64::consts::PI * s.cov.determinant().sqrt();
        assert!((total - expected).abs() / expected < 0.05, "{total} vs {expected}");
    }

    #[test]
    fn radius_clip_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut gs: GaussianSet = (0..50).map(|_| random_gaussian(&mut rng)).collect();
        gs.push(gaussian(Vec3::new(0.0, 0.0, -3.0), 0.1, 0.5, Vec3::zeros()));
        let cam = front_camera(64, 64, 60.0);
        assert_eq!(radius_clip_filter(&gs, &cam, 0.0).len(), 50);
        assert_eq!(radius_clip_filter(&gs, &cam, 1e9).len(), 0);
    }
}

//! Finite-difference check of the analytic backward pass on small random
//! scenes, usable from tests and from the acceptance run.

use nalgebra::{Quaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward;
use crate::model::{Camera, Gaussian3D, GaussianSet, Vec3};
use crate::raster::{ImageRGBA, RasterConfig, Rasterization};

const H: f64 = 1e-4;
/// Gaussians per random scene.
pub const SCENE_SIZE: usize = 5;
/// Scalar parameters per Gaussian: position, scale, color, opacity, rotation.
pub const PARAMS: usize = 14;

/// Raster settings without a skip threshold, early termination or a tight
/// tile cutoff, so the image is a smooth function of every parameter.
pub fn smooth_config() -> RasterConfig {
    RasterConfig {
        alpha_min: 0.0,
        transmittance_min: 0.0,
        extent_sigma: 8.0,
        ..RasterConfig::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Gradients with magnitude above 1e-3.
    pub significant: usize,
    /// Largest relative error among significant gradients.
    pub max_relative: f64,
    /// Largest absolute error among tiny gradients.
    pub max_absolute: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> GaussianSet {
    (0..SCENE_SIZE)
        .map(|i| Gaussian3D {
            position: Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 2.0 + 0.5 * i as f64),
            scale: Vec3::new(rng.random_range(0.1..0.3), rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)),
            rotation: Quaternion::new(
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            opacity: rng.random_range(0.2..0.9),
            color: Vec3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect()
}

fn objective(gs: &GaussianSet, cam: &Camera, weights: &ImageRGBA) -> f64 {
    let img = Rasterization::new(gs, cam, &smooth_config()).composite();
    img.pixels
        .iter()
        .zip(&weights.pixels)
        .map(|(p, w)| (0..4).map(|c| p[c] * w[c]).sum::<f64>())
        .sum()
}

fn central(gs: &GaussianSet, cam: &Camera, w: &ImageRGBA, edit: impl Fn(&mut GaussianSet, f64)) -> f64 {
    let mut plus = gs.clone();
    edit(&mut plus, H);
    let mut minus = gs.clone();
    edit(&mut minus, -H);
    (objective(&plus, cam, w) - objective(&minus, cam, w)) / (2.0 * H)
}

/// Compare every analytic gradient of a random linear image objective with
/// central differences over `configs` random 5-Gaussian scenes seen by one
/// 32x32 camera. Relative error must stay below 1e-3, or absolute error
/// below 1e-6 when both values are under 1e-3.
pub fn gradient_check(configs: usize, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), Vec3::y(), 32, 32, 40.0, 40.0)
        .expect("fixed camera is valid");
    let mut report = GradCheckReport::default();
    for config in 0..configs {
        let gs = random_scene(&mut rng);
        let mut w = ImageRGBA::new(32, 32);
        for p in &mut w.pixels {
            *p = [(); 4].map(|_| rng.random_range(-1.0..1.0));
        }
        let raster = Rasterization::new(&gs, &cam, &smooth_config());
        let g = backward(&raster, &gs, &cam, &w);

        for i in 0..gs.len() {
            let mut pairs = Vec::with_capacity(PARAMS);
            for k in 0..3 {
                pairs.push(("position", g.positions[i][k], central(&gs, &cam, &w, |s, h| s.positions[i][k] += h)));
                pairs.push(("scale", g.scales[i][k], central(&gs, &cam, &w, |s, h| s.scales[i][k] += h)));
                pairs.push(("color", g.colors[i][k], central(&gs, &cam, &w, |s, h| s.colors[i][k] += h)));
            }
            pairs.push(("opacity", g.opacities[i], central(&gs, &cam, &w, |s, h| s.opacities[i] += h)));
            for k in 0..4 {
                let num = central(&gs, &cam, &w, |s, h| {
                    let q = s.rotations[i];
                    let mut v = Vector4::new(q.w, q.i, q.j, q.k);
                    v[k] += h;
                    s.rotations[i] = Quaternion::new(v[0], v[1], v[2], v[3]);
                });
                pairs.push(("rotation", g.rotations[i][k], num));
            }
            for (name, a, n) in pairs {
                report.checked += 1;
                let ok = if n.abs() < 1e-3 && a.abs() < 1e-3 {
                    let err = (a - n).abs();
                    report.max_absolute = report.max_absolute.max(err);
                    err < 1e-6
                } else {
                    report.significant += 1;
                    let err = (a - n).abs() / n.abs().max(a.abs());
                    report.max_relative = report.max_relative.max(err);
                    err < 1e-3
                };
                if !ok {
                    report
                        .failures
                        .push(format!("config {config}, gaussian {i}, {name}: analytic {a} vs numeric {n}"));
                }
            }
        }
    }
    report
}

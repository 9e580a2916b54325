//! Procedural assets and scenes for tests, benchmarks and demos.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::io::quantize_set;
use crate::model::{Gaussian3D, GaussianSet, Instance, Scene, Vec3};

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// `n` flat Gaussians tiling a sphere of the given radius centered at the
/// origin, colored by latitude bands and longitude stripes. Values are
/// rounded to `f32` so the set survives a bundle roundtrip bitwise.
pub fn sphere_shell(n: usize, radius: f64, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // mean spacing between neighbours on the surface
    let spacing = (4.0 * PI * radius * radius / n.max(1) as f64).sqrt();
    let mut gs = GaussianSet::with_capacity(n);
    for _ in 0..n {
        let normal = unit_vector(&mut rng);
        let position = normal * radius * (1.0 + rng.random_range(-0.01..0.01));
        // flatten along the normal: local z maps onto it
        let align = UnitQuaternion::rotation_between(&Vec3::z(), &normal)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI));
        let spin = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), rng.random_range(0.0..2.0 * PI));
        let rotation = (align * spin).into_inner();
        let tangent = spacing * rng.random_range(0.5..0.9);
        let scale = Vec3::new(tangent, tangent * rng.random_range(0.5..1.0), spacing * 0.1);
        let lat = normal.z.asin();
        let lon = normal.y.atan2(normal.x);
        let band = (lat * 4.0).sin() * 0.5 + 0.5;
        let stripe = if (lon * 6.0 / PI).floor() as i64 % 2 == 0 { 1.0 } else { 0.35 };
        let color = Vec3::new(0.9 * band * stripe + 0.05, 0.3 + 0.5 * (1.0 - band), 0.8 * stripe * (1.0 - band) + 0.1);
        gs.push(Gaussian3D {
            position,
            scale,
            rotation,
            opacity: rng.random_range(0.6..0.95),
            color,
        });
    }
    quantize_set(&gs)
}

/// `n` Gaussians filling a ball of the given radius, denser toward the
/// center, colored by height and angle. Rounded to `f32` like
/// [`sphere_shell`].
pub fn blob(n: usize, radius: f64, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = radius * (4.0 / 3.0 * PI / n.max(1) as f64).cbrt();
    let mut gs = GaussianSet::with_capacity(n);
    for _ in 0..n {
        let dir = unit_vector(&mut rng);
        let position = dir * radius * rng.random::<f64>().powf(0.4);
        let q = unit_vector(&mut rng);
        let w: f64 = rng.random_range(-1.0..1.0);
        let rotation = Quaternion::new(w, q.x, q.y, q.z).normalize();
        let scale = Vec3::new(
            spacing * rng.random_range(0.15..0.4),
            spacing * rng.random_range(0.15..0.4),
            spacing * rng.random_range(0.1..0.25),
        );
        let h = 0.5 + 0.5 * position.z / radius;
        let angle = position.y.atan2(position.x);
        let speckle: f64 = rng.random_range(-0.25..0.25);
        let color = Vec3::new(
            0.15 + 0.5 * h * (0.5 + 0.5 * (3.0 * angle).cos()) + speckle,
            0.35 + 0.45 * (1.0 - h) + speckle,
            0.1 + 0.3 * h + 0.5 * speckle.abs(),
        )
        .map(|c| c.max(0.0));
        gs.push(Gaussian3D {
            position,
            scale,
            rotation,
            opacity: rng.random_range(0.5..0.95),
            color,
        });
    }
    quantize_set(&gs)
}

/// A `rows x cols` grid of instances of one asset on the `z = 0` plane,
/// centered on the origin, with a seeded random yaw and uniform scale in
/// `[0.8, 1.2]` per instance.
pub fn grid_scene(asset: &str, path: PathBuf, rows: usize, cols: usize, spacing: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let t = Vec3::new(
                (j as f64 - (cols as f64 - 1.0) / 2.0) * spacing,
                (i as f64 - (rows as f64 - 1.0) / 2.0) * spacing,
                0.0,
            );
            let yaw: f64 = rng.random_range(0.0..2.0 * PI);
            let q = Quaternion::new((yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin());
            let scale = rng.random_range(0.8..1.2);
            instances.push(Instance::new(asset, t, q, scale).expect("valid generated instance"));
        }
    }
    Scene {
        assets: [(asset.to_string(), path)].into(),
        instances,
    }
}

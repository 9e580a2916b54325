use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{BoundingSphere, Camera, Vec3};

/// Intrinsics and placement of the cameras used to fit a cluster group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoViewConfig {
    pub resolution: u32,
    /// Focal length in pixels; 115.2 makes a sphere seen from four radii
    /// away span about 90% of a 64 px frame.
    pub focal: f64,
    /// Camera distance from the sphere center, in sphere radii.
    pub distance_factor: f64,
}

impl Default for PseudoViewConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            focal: 115.2,
            distance_factor: 4.0,
        }
    }
}

/// `count` cameras on the sphere of radius `4r` around `sphere.center`,
/// directions uniform on the unit sphere, all looking at the center.
pub fn sample_pseudo_views(sphere: &BoundingSphere, count: usize, seed: u64) -> Result<Vec<Camera>> {
    sample_pseudo_views_with(sphere, count, seed, &PseudoViewConfig::default())
}

pub fn sample_pseudo_views_with(
    sphere: &BoundingSphere,
    count: usize,
    seed: u64,
    cfg: &PseudoViewConfig,
) -> Result<Vec<Camera>> {
    if !(sphere.radius > 0.0 && sphere.radius.is_finite()) {
        return Err(Error::Argument(format!(
            "pseudo-views need a positive finite radius, got {}",
            sphere.radius
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distance = cfg.distance_factor * sphere.radius;
    let mut cams = Vec::with_capacity(count);
    while cams.len() < count {
        let d = Vec3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let n = d.norm();
        if n < 1e-9 {
            continue;
        }
        let eye = sphere.center + d * (distance / n);
        cams.push(Camera::look_at(
            eye,
            sphere.center,
            Vec3::z(),
            cfg.resolution,
            cfg.resolution,
            cfg.focal,
            cfg.focal,
        )?);
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view_directions(sphere: &BoundingSphere, cams: &[Camera]) -> Vec<Vec3> {
        cams.iter().map(|c| (c.position() - sphere.center).normalize()).collect()
    }

    #[test]
    fn single_view_geometry() {
        let s = BoundingSphere::new(Vec3::new(1.0, -2.0, 0.5), 0.75);
        let cams = sample_pseudo_views(&s, 1, 42).unwrap();
        assert_eq!(cams.len(), 1);
        let cam = &cams[0];
        assert!(((cam.position() - s.center).norm() - 3.0).abs() < 1e-9);
        let to_center = (s.center - cam.position()).normalize();
        assert!((cam.forward() - to_center).norm() < 1e-9);
        assert_eq!((cam.width, cam.height), (64, 64));
        assert_eq!(cam.fx, 115.2);
    }

    #[test]
    fn directions_are_uniform() {
        let s = BoundingSphere::new(Vec3::zeros(), 1.0);
        let cams = sample_pseudo_views(&s, 10_000, 3).unwrap();
        let mean = view_directions(&s, &cams).iter().fold(Vec3::zeros(), |a, d| a + d) / 10_000.0;
        assert!(mean.norm() < 0.05);
    }

    #[test]
    fn full_view_set_is_distinct_and_reproducible() {
        let s = BoundingSphere::new(Vec3::new(0.0, 0.0, 2.0), 2.0);
        let cams = sample_pseudo_views(&s, 640, 9).unwrap();
        assert_eq!(cams.len(), 640);
        for c in &cams {
            assert!(((c.position() - s.center).norm() - 8.0).abs() < 1e-9);
        }
        let mut positions: Vec<[u64; 3]> = cams
            .iter()
            .map(|c| {
                let p = c.position();
                [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
            })
            .collect();
        positions.sort();
        positions.dedup();
        assert_eq!(positions.len(), 640);
        assert_eq!(cams, sample_pseudo_views(&s, 640, 9).unwrap());
    }

    #[test]
    fn zero_radius_rejected() {
        assert!(sample_pseudo_views(&BoundingSphere::new(Vec3::zeros(), 0.0), 4, 0).is_err());
    }
}

use crate::error::{Error, Result};
use crate::raster::ImageRGBA;

/// A scalar image loss with its gradient with respect to every pixel channel.
pub trait ImageLoss: Send + Sync {
    fn evaluate(&self, render: &ImageRGBA, target: &ImageRGBA) -> Result<(f64, ImageRGBA)>;
}

/// Mean absolute error over RGB plus a weighted mean absolute error over the
/// accumulated alpha channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Loss {
    pub alpha_weight: f64,
}

impl Default for L1Loss {
    fn default() -> Self {
        Self { alpha_weight: 0.1 }
    }
}

fn check_sizes(render: &ImageRGBA, target: &ImageRGBA) -> Result<()> {
    if render.width != target.width || render.height != target.height {
        return Err(Error::Argument(format!(
            "loss images differ in size: {}x{} vs {}x{}",
            render.width, render.height, target.width, target.height
        )));
    }
    Ok(())
}

impl ImageLoss for L1Loss {
    fn evaluate(&self, render: &ImageRGBA, target: &ImageRGBA) -> Result<(f64, ImageRGBA)> {
        check_sizes(render, target)?;
        let n = render.pixels.len().max(1) as f64;
        let rgb_norm = 1.0 / (3.0 * n);
        let alpha_norm = self.alpha_weight / n;
        let mut grad = ImageRGBA::new(render.width, render.height);
        let (mut rgb_sum, mut alpha_sum) = (0.0, 0.0);
        for ((r, t), g) in render.pixels.iter().zip(&target.pixels).zip(grad.pixels.iter_mut()) {
            for c in 0..3 {
                let d = r[c] - t[c];
                rgb_sum += d.abs();
                g[c] = sign(d) * rgb_norm;
            }
            let d = r[3] - t[3];
            alpha_sum += d.abs();
            g[3] = sign(d) * alpha_norm;
        }
        Ok((rgb_sum * rgb_norm + alpha_sum * alpha_norm, grad))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Default local-splatting loss: L1 on RGB + 0.1 L1 on alpha.
pub fn loss(render: &ImageRGBA, target: &ImageRGBA) -> Result<f64> {
    Ok(L1Loss::default().evaluate(render, target)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let img = ImageRGBA::filled(64, 64, [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(loss(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn alpha_offset_is_weighted() {
        let a = ImageRGBA::filled(64, 64, [0.1, 0.2, 0.3, 0.2]);
        let b = ImageRGBA::filled(64, 64, [0.1, 0.2, 0.3, 0.7]);
        assert!((loss(&a, &b).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_formula_and_gradient_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = ImageRGBA::new(64, 64);
        let mut b = ImageRGBA::new(64, 64);
        for p in a.pixels.iter_mut().chain(b.pixels.iter_mut()) {
            *p = [rng.random(), rng.random(), rng.random(), rng.random()];
        }
        let mut rgb = 0.0;
        let mut alpha = 0.0;
        for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
            rgb += (pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs() + (pa[2] - pb[2]).abs();
            alpha += (pa[3] - pb[3]).abs();
        }
        let expected = rgb / (3.0 * 4096.0) + 0.1 * alpha / 4096.0;
        let (value, grad) = L1Loss::default().evaluate(&a, &b).unwrap();
        assert!((value - expected).abs() < 1e-9);
        // L1 is piecewise linear: value equals grad . (a - b)
        let dot: f64 = grad
            .pixels
            .iter()
            .zip(a.pixels.iter().zip(&b.pixels))
            .map(|(g, (pa, pb))| (0..4).map(|c| g[c] * (pa[c] - pb[c])).sum::<f64>())
            .sum();
        assert!((dot - value).abs() < 1e-9);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(loss(&ImageRGBA::new(64, 64), &ImageRGBA::new(32, 64)).is_err());
    }
}

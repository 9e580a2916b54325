use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// PSNR reported for identical images instead of +inf.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Linear RGB premultiplied by coverage, plus accumulated alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 4]>,
}

impl ImageRGBA {
    /// Transparent black.
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 4])
    }

    pub fn filled(width: u32, height: u32, value: [f64; 4]) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 4] {
        self.pixels[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: [f64; 4]) {
        let i = self.index(x, y);
        self.pixels[i] = value;
    }

    fn same_size(&self, other: &ImageRGBA) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Argument(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Mean of every `k x k` block, all four channels.
    pub fn downsample_box(&self, k: u32) -> Result<ImageRGBA> {
        if k == 0 || self.width % k != 0 || self.height % k != 0 {
            return Err(Error::Argument(format!(
                "{}x{} is not divisible by {k}",
                self.width, self.height
            )));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / k, self.height / k);
        let norm = 1.0 / (k * k) as f64;
        let mut out = ImageRGBA::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 4];
                for dy in 0..k {
                    for dx in 0..k {
                        let p = self.get(x * k + dx, y * k + dy);
                        for c in 0..4 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set(x, y, acc.map(|v| v * norm));
            }
        }
        Ok(out)
    }

    /// RGB composited over a white background.
    pub fn over_white(&self, i: usize) -> [f64; 3] {
        let [r, g, b, a] = self.pixels[i];
        let bg = 1.0 - a;
        [r + bg, g + bg, b + bg]
    }

    /// 8-bit straight-alpha RGBA PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut bytes, self.width, self.height);
            encoder.set_color(png::ColorType::Rgba);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.to_rgba8())?;
        }
        Ok(bytes)
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut data = Vec::with_capacity(self.pixels.len() * 4);
        for &[r, g, b, a] in &self.pixels {
            let inv = if a > 0.0 { 1.0 / a } else { 0.0 };
            data.extend_from_slice(&[quantize(r * inv), quantize(g * inv), quantize(b * inv), quantize(a)]);
        }
        data
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        let mut file = std::fs::File::create(path).map_err(Error::at_path(path))?;
        file.write_all(&bytes).map_err(Error::at_path(path))?;
        Ok(())
    }

    /// Per-channel variance of the white-composited RGB values.
    pub fn rgb_variance(&self) -> f64 {
        let n = (self.pixels.len() * 3) as f64;
        let values = (0..self.pixels.len()).flat_map(|i| self.over_white(i));
        let mean = values.clone().sum::<f64>() / n;
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// Mean squared error of white-composited RGB.
pub fn mse(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    a.same_size(b)?;
    let mut sum = 0.0;
    for i in 0..a.pixels.len() {
        let (pa, pb) = (a.over_white(i), b.over_white(i));
        for c in 0..3 {
            let d = pa[c] - pb[c];
            sum += d * d;
        }
    }
    Ok(sum / (a.pixels.len() * 3).max(1) as f64)
}

/// `10 log10(1 / MSE)` over RGB composited onto white, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

//! select -> gather -> rasterize, in the modes the tools expose.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{Camera, GaussianSet};
use crate::raster::{radius_clip_filter, render_with, ImageRGBA, RasterConfig};
use crate::select::{gather, gather_layer_debug, select_scene, select_vanilla, CullMode, LoadedScene, SelectionResult, Tolerance};

/// Screen-space clip radius of the radius-clip baseline, in pixels.
pub const DEFAULT_CLIP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderMode {
    #[default]
    Lod,
    Vanilla,
    RadiusClip,
    LayerDebug,
}

impl RenderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Lod => "lod",
            RenderMode::Vanilla => "vanilla",
            RenderMode::RadiusClip => "radius-clip",
            RenderMode::LayerDebug => "layer-debug",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lod" => RenderMode::Lod,
            "vanilla" => RenderMode::Vanilla,
            "radius-clip" => RenderMode::RadiusClip,
            "layer-debug" => RenderMode::LayerDebug,
            other => {
                return Err(Error::Argument(format!(
                    "unknown mode `{other}` (expected lod, vanilla, radius-clip or layer-debug)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRequest {
    pub tolerance: Tolerance,
    pub mode: RenderMode,
    pub clip: f64,
    pub cull: CullMode,
}

impl Default for FrameRequest {
    fn default() -> Self {
        Self {
            tolerance: Tolerance::new(2048.0).unwrap(),
            mode: RenderMode::Lod,
            clip: DEFAULT_CLIP,
            cull: CullMode::Instance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: ImageRGBA,
    pub selection: SelectionResult,
    /// Gaussians handed to the rasterizer (differs from the selection only
    /// in radius-clip mode).
    pub rendered_count: usize,
    pub render_ms: f64,
}

impl Frame {
    pub fn percentage(&self) -> f64 {
        if self.selection.resident_count == 0 {
            return 0.0;
        }
        100.0 * self.rendered_count as f64 / self.selection.resident_count as f64
    }
}

/// The Gaussians a frame would draw, plus the selection behind them.
pub fn frame_gaussians(scene: &LoadedScene, cam: &Camera, req: &FrameRequest) -> Result<(SelectionResult, GaussianSet)> {
    Ok(match req.mode {
        RenderMode::Lod => {
            let sel = select_scene(scene, cam, req.tolerance, req.cull)?;
            let gs = gather(scene, &sel);
            (sel, gs)
        }
        RenderMode::LayerDebug => {
            let sel = select_scene(scene, cam, req.tolerance, req.cull)?;
            let gs = gather_layer_debug(scene, &sel);
            (sel, gs)
        }
        RenderMode::Vanilla => {
            let sel = select_vanilla(scene, cam, req.cull)?;
            let gs = gather(scene, &sel);
            (sel, gs)
        }
        RenderMode::RadiusClip => {
            if !(req.clip >= 0.0) {
                return Err(Error::Argument(format!("clip radius {} must be >= 0", req.clip)));
            }
            let sel = select_vanilla(scene, cam, req.cull)?;
            let gs = radius_clip_filter(&gather(scene, &sel), cam, req.clip);
            (sel, gs)
        }
    })
}

pub fn render_frame(scene: &LoadedScene, cam: &Camera, req: &FrameRequest, cfg: &RasterConfig) -> Result<Frame> {
    cam.validate()?;
    let (selection, gs) = frame_gaussians(scene, cam, req)?;
    let started = Instant::now();
    let image = render_with(&gs, cam, cfg);
    Ok(Frame {
        image,
        selection,
        rendered_count: gs.len(),
        render_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_roundtrip() {
        for m in [RenderMode::Lod, RenderMode::Vanilla, RenderMode::RadiusClip, RenderMode::LayerDebug] {
            assert_eq!(m.as_str().parse::<RenderMode>().unwrap(), m);
        }
        assert!("fast".parse::<RenderMode>().is_err());
    }
}

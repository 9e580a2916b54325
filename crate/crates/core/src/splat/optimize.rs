use std::sync::Arc;

use super::adam::{LearningRates, OptimizerState, RawParams};
use super::backward::backward;
use super::loss::{ImageLoss, L1Loss};
use super::views::{sample_pseudo_views_with, PseudoViewConfig};
use crate::error::{Error, Result};
use crate::model::{BoundingSphere, GaussianSet};
use crate::raster::{RasterConfig, Rasterization};

#[derive(Clone)]
pub struct OptimizeConfig {
    pub loss: Arc<dyn ImageLoss>,
    pub learning_rates: LearningRates,
    pub raster: RasterConfig,
    pub views: PseudoViewConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            loss: Arc::new(L1Loss::default()),
            learning_rates: LearningRates::default(),
            raster: RasterConfig::default(),
            views: PseudoViewConfig::default(),
        }
    }
}

impl std::fmt::Debug for OptimizeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimizeConfig")
            .field("learning_rates", &self.learning_rates)
            .field("raster", &self.raster)
            .field("views", &self.views)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub gaussians: GaussianSet,
    pub steps_run: usize,
    /// Set when a step produced non-finite parameters; `gaussians` then holds
    /// the last finite iterate.
    pub aborted: bool,
    /// Loss of the last completed step, `None` when no step ran.
    pub final_loss: Option<f64>,
}

/// Fit `init` to look like `original` from random views around `sphere`,
/// one view per iteration.
pub fn optimize_group(
    original: &GaussianSet,
    init: &GaussianSet,
    iterations: usize,
    seed: u64,
    sphere: &BoundingSphere,
) -> Result<OptimizeOutcome> {
    optimize_group_with(original, init, iterations, seed, sphere, &OptimizeConfig::default())
}

pub fn optimize_group_with(
    original: &GaussianSet,
    init: &GaussianSet,
    iterations: usize,
    seed: u64,
    sphere: &BoundingSphere,
    cfg: &OptimizeConfig,
) -> Result<OptimizeOutcome> {
    init.validate()?;
    let done = |gaussians: GaussianSet, steps_run, aborted, final_loss| OptimizeOutcome {
        gaussians,
        steps_run,
        aborted,
        final_loss,
    };
    if iterations == 0 || init.is_empty() {
        return Ok(done(init.clone(), 0, false, None));
    }
    if original.is_empty() {
        return Err(Error::Argument("cannot fit against an empty Gaussian set".into()));
    }

    let view_sphere = BoundingSphere::new(sphere.center, view_radius(sphere, original));
    let cams = sample_pseudo_views_with(&view_sphere, iterations, seed, &cfg.views)?;
    let mut params = RawParams::from_set(init);
    let mut opt = OptimizerState::new(&params, &cfg.learning_rates);
    let mut current = init.clone();
    let mut final_loss = None;

    for (step, cam) in cams.iter().enumerate() {
        let target = Rasterization::new(original, cam, &cfg.raster).composite();
        let raster = Rasterization::new(&current, cam, &cfg.raster);
        let (value, grad_image) = cfg.loss.evaluate(&raster.composite(), &target)?;
        let grads = backward(&raster, &current, cam, &grad_image);
        if !value.is_finite() || !grads.is_finite() {
            return Ok(done(current, step, true, final_loss));
        }
        let raw_grads = params.raw_gradients(&grads);
        let mut next = params.clone();
        opt.step(&mut next, &raw_grads);
        next.project_valid();
        if !next.is_finite() {
            return Ok(done(current, step, true, Some(value)));
        }
        params = next;
        current = params.to_set();
        final_loss = Some(value);
    }
    Ok(done(current, iterations, false, final_loss))
}

// A group sphere can be degenerate (one point-like cluster); fall back to the
// extent of the Gaussians themselves so the views still frame them.
fn view_radius(sphere: &BoundingSphere, gs: &GaussianSet) -> f64 {
    if sphere.radius > 0.0 && sphere.radius.is_finite() {
        return sphere.radius;
    }
    let extent = gs
        .positions
        .iter()
        .zip(&gs.scales)
        .map(|(p, s)| (p - sphere.center).norm() + 3.0 * s.max())
        .fold(0.0, f64::max);
    if extent > 0.0 && extent.is_finite() {
        extent
    } else {
        1.0
    }
}

//! Differentiable rendering for local splatting: pseudo-view sampling, the
//! image loss, the analytic backward pass and the per-group Adam loop.

mod adam;
mod backward;
mod loss;
mod optimize;
mod views;
pub mod gradcheck;

pub use adam::{AdamGroup, LearningRates, OptimizerState, RawParams};
pub use backward::{render_backward, backward, GaussianGrads};
pub use loss::{loss, ImageLoss, L1Loss};
pub use optimize::{optimize_group, optimize_group_with, OptimizeConfig, OptimizeOutcome};
pub use views::{sample_pseudo_views, PseudoViewConfig};

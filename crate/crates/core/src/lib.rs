//! Cluster-based level of detail for scenes composed of 3D Gaussian assets.
//!
//! The offline [`build`] stage cuts an asset into clusters and repeatedly
//! simplifies groups of adjacent clusters with local splatting
//! ([`splat`]), producing a multi-layer [`io::Bundle`]. The online
//! [`select`] stage picks, per frame and per instance, the clusters whose
//! projected footprint matches a pixel tolerance, and [`raster`] draws them.

pub mod bench;
pub mod build;
pub mod clustering;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod select;
pub mod splat;
pub mod synthetic;

pub use error::{Error, Result};

//! Evaluation protocol: orbit trajectories, supersampled references and
//! per-camera count, timing and PSNR records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{focal_from_fov, Camera, Vec3};
use crate::raster::{psnr, render_with, ImageRGBA, RasterConfig};
use crate::select::{gather, select_scene, select_vanilla, CullMode, LoadedScene, Tolerance};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub width: u32,
    pub height: u32,
    pub fov_x: f64,
    /// Azimuths in degrees on the ground plane.
    pub directions: Vec<f64>,
    pub elevations: Vec<f64>,
    /// Number of evenly spaced orbit radii in `(0, extent]`.
    pub distances: usize,
}

impl TrajectoryConfig {
    /// 1920x1080, 4 directions x 5 elevations x 20 distances.
    pub fn full() -> Self {
        Self {
            width: 1920,
            height: 1080,
            fov_x: std::f64::consts::FRAC_PI_4,
            directions: vec![0.0, 90.0, 180.0, 270.0],
            elevations: vec![15.0, 30.0, 45.0, 60.0, 75.0],
            distances: 20,
        }
    }

    /// 480x270 with 5 distances: the same protocol sized for a laptop core.
    pub fn desk() -> Self {
        Self {
            width: 480,
            height: 270,
            distances: 5,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCamera {
    pub camera: Camera,
    pub direction: usize,
    pub elevation: f64,
    pub distance_index: usize,
    pub distance: f64,
}

/// Cameras on orbits around the origin, all looking at it with `+z` up.
/// Radii are `extent * (i + 1) / distances`.
pub fn gen_trajectory(extent: f64, cfg: &TrajectoryConfig) -> Result<Vec<TrajectoryCamera>> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::Argument(format!("scene extent {extent} must be positive")));
    }
    let f = focal_from_fov(cfg.width, cfg.fov_x);
    let mut out = Vec::with_capacity(cfg.directions.len() * cfg.elevations.len() * cfg.distances);
    for (d, az) in cfg.directions.iter().enumerate() {
        for &el in &cfg.elevations {
            for i in 0..cfg.distances {
                let dist = extent * (i + 1) as f64 / cfg.distances as f64;
                let (az, elr) = (az.to_radians(), el.to_radians());
                let eye = Vec3::new(elr.cos() * az.cos(), elr.cos() * az.sin(), elr.sin()) * dist;
                let camera = Camera::look_at(eye, Vec3::zeros(), Vec3::z(), cfg.width, cfg.height, f, f)?;
                out.push(TrajectoryCamera {
                    camera,
                    direction: d,
                    elevation: el,
                    distance_index: i,
                    distance: dist,
                });
            }
        }
    }
    Ok(out)
}

/// All layer-0 Gaussians rendered at `k` times the resolution and box
/// filtered back down.
pub fn ssaa_reference(scene: &LoadedScene, cam: &Camera, k: u32, cfg: &RasterConfig) -> Result<ImageRGBA> {
    if k == 0 {
        return Err(Error::Argument("supersampling factor must be at least 1".into()));
    }
    let big = cam.supersampled(k);
    let sel = select_vanilla(scene, &big, CullMode::Instance)?;
    render_with(&gather(scene, &sel), &big, cfg).downsample_box(k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub direction: usize,
    pub elevation: f64,
    pub distance: usize,
    pub tau: f64,
    pub sel_count: usize,
    pub vanilla_count: usize,
    pub percentage: f64,
    pub ours_ms: f64,
    pub vanilla_ms: f64,
    pub ours_psnr: f64,
    pub vanilla_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub ssaa: u32,
    pub cull: CullMode,
    pub raster: RasterConfig,
    /// When set, every reference, vanilla and LOD image is written here.
    pub png_dir: Option<PathBuf>,
    /// Run cameras concurrently. Counts and PSNR are unchanged; timings
    /// become unreliable.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            ssaa: 2,
            cull: CullMode::Instance,
            raster: RasterConfig::default(),
            png_dir: None,
            parallel: false,
        }
    }
}

/// One record per (camera, tau), in trajectory order. Cameras run one after
/// another unless `opts.parallel` is set, so timings do not compete.
pub fn run_bench(
    scene: &LoadedScene,
    taus: &[f64],
    trajectory: &[TrajectoryCamera],
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    let taus = taus.iter().map(|&t| Tolerance::new(t)).collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &opts.png_dir {
        std::fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
    }
    let per_camera = |(ci, tc): (usize, &TrajectoryCamera)| bench_camera(scene, &taus, ci, tc, opts);
    let nested: Vec<Vec<BenchRecord>> = if opts.parallel {
        trajectory.par_iter().enumerate().map(per_camera).collect::<Result<_>>()?
    } else {
        trajectory.iter().enumerate().map(per_camera).collect::<Result<_>>()?
    };
    Ok(nested.into_iter().flatten().collect())
}

fn bench_camera(
    scene: &LoadedScene,
    taus: &[Tolerance],
    ci: usize,
    tc: &TrajectoryCamera,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    let cam = &tc.camera;
    let reference = ssaa_reference(scene, cam, opts.ssaa, &opts.raster)?;

    let started = Instant::now();
    let vanilla_sel = select_vanilla(scene, cam, opts.cull)?;
    let vanilla_img = render_with(&gather(scene, &vanilla_sel), cam, &opts.raster);
    let vanilla_ms = started.elapsed().as_secs_f64() * 1e3;
    let vanilla_psnr = psnr(&vanilla_img, &reference)?;
    if let Some(dir) = &opts.png_dir {
        reference.write_png(&dir.join(format!("cam{ci:04}_reference.png")))?;
        vanilla_img.write_png(&dir.join(format!("cam{ci:04}_vanilla.png")))?;
    }

    let mut out = Vec::with_capacity(taus.len());
    for tol in taus {
        let started = Instant::now();
        let sel = select_scene(scene, cam, *tol, opts.cull)?;
        let img = render_with(&gather(scene, &sel), cam, &opts.raster);
        let ours_ms = started.elapsed().as_secs_f64() * 1e3;
        if let Some(dir) = &opts.png_dir {
            img.write_png(&dir.join(format!("cam{ci:04}_tau{}.png", tol.get())))?;
        }
        let percentage = if vanilla_sel.selected_count == 0 {
            100.0
        } else {
            100.0 * sel.selected_count as f64 / vanilla_sel.selected_count as f64
        };
        out.push(BenchRecord {
            direction: tc.direction,
            elevation: tc.elevation,
            distance: tc.distance_index,
            tau: tol.get(),
            sel_count: sel.selected_count,
            vanilla_count: vanilla_sel.selected_count,
            percentage,
            ours_ms,
            vanilla_ms,
            ours_psnr: psnr(&img, &reference)?,
            vanilla_psnr,
        });
    }
    Ok(out)
}

pub const CSV_HEADER: &str =
    "direction,elevation,distance,tau,sel_count,vanilla_count,percentage,ours_ms,vanilla_ms,ours_psnr,vanilla_psnr";

pub fn write_csv(records: &[BenchRecord], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

/// Means over every camera at one (distance, tau).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistanceSummary {
    pub cameras: usize,
    pub sel_count: f64,
    pub vanilla_count: f64,
    pub percentage: f64,
    pub ours_ms: f64,
    pub vanilla_ms: f64,
    pub ours_psnr: f64,
    pub vanilla_psnr: f64,
}

/// Keyed by `(distance index, tau bits)`; iterate in distance order.
pub fn summarize(records: &[BenchRecord]) -> BTreeMap<(usize, u64), DistanceSummary> {
    let mut out: BTreeMap<(usize, u64), DistanceSummary> = BTreeMap::new();
    for r in records {
        let s = out.entry((r.distance, r.tau.to_bits())).or_default();
        s.cameras += 1;
        s.sel_count += r.sel_count as f64;
        s.vanilla_count += r.vanilla_count as f64;
        s.percentage += r.percentage;
        s.ours_ms += r.ours_ms;
        s.vanilla_ms += r.vanilla_ms;
        s.ours_psnr += r.ours_psnr;
        s.vanilla_psnr += r.vanilla_psnr;
    }
    for s in out.values_mut() {
        let n = s.cameras as f64;
        s.sel_count /= n;
        s.vanilla_count /= n;
        s.percentage /= n;
        s.ours_ms /= n;
        s.vanilla_ms /= n;
        s.ours_psnr /= n;
        s.vanilla_psnr /= n;
    }
    out
}

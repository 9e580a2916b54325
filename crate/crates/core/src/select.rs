//! Per-frame cluster selection by projected footprint.
//!
//! Every cluster carries the sphere of the group that produced it (own) and
//! of the group that contains it (parent). A cluster is drawn iff
//! `F(own) <= tau < F(parent)`, evaluated independently per cluster.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{load_scene, read_bundle, sphere_key, Bundle};
use crate::model::{BoundingSphere, Camera, GaussianSet, Instance, Scene, Vec3};

/// Projected area in pixels of `sphere` under `cam`: `pi r^2 fx fy / z^2`,
/// `0` for a point, `+inf` when the sphere reaches the camera plane.
pub fn footprint(sphere: &BoundingSphere, cam: &Camera) -> f64 {
    let r = sphere.radius;
    if r == 0.0 {
        return 0.0;
    }
    let z = cam.to_camera(&sphere.center).z;
    if !r.is_finite() || z < r {
        return f64::INFINITY;
    }
    std::f64::consts::PI * r * r * cam.fx * cam.fy / (z * z)
}

/// Footprint tolerance in pixels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Tolerance(f64);

impl Tolerance {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || tau.is_infinite() {
            return Err(Error::Argument("tolerance must be ≥ 0".into()));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Visibility culling applied after the footprint predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CullMode {
    Off,
    /// Drop whole instances whose bounds miss the view frustum.
    #[default]
    Instance,
    /// Drop individual clusters whose bounds miss the view frustum.
    Cluster,
}

/// A bundle plus conservative bounds that include each Gaussian's 3-sigma
/// extent, used only for frustum culling.
#[derive(Debug)]
pub struct LodAsset {
    pub bundle: Bundle,
    pub bounds: BoundingSphere,
    pub cluster_bounds: Vec<BoundingSphere>,
}

fn extent_sphere(gs: &GaussianSet) -> BoundingSphere {
    let Some(center) = gs.centroid() else {
        return BoundingSphere::new(Vec3::zeros(), 0.0);
    };
    let r = gs
        .positions
        .iter()
        .zip(&gs.scales)
        .map(|(p, s)| (p - center).norm() + 3.0 * s.max())
        .fold(0.0, f64::max);
    BoundingSphere::new(center, r)
}

impl LodAsset {
    pub fn new(bundle: Bundle) -> Self {
        let cluster_bounds = (0..bundle.clusters.len())
            .map(|i| extent_sphere(&bundle.cluster_gaussians(i)))
            .collect();
        let bounds = extent_sphere(&bundle.gaussians);
        Self {
            bundle,
            bounds,
            cluster_bounds,
        }
    }
}

/// A scene with every referenced bundle resident.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub assets: BTreeMap<String, Arc<LodAsset>>,
}

impl LoadedScene {
    pub fn new(scene: Scene, bundles: BTreeMap<String, Bundle>) -> Result<Self> {
        scene.validate()?;
        let mut assets = BTreeMap::new();
        for id in scene.assets.keys() {
            let bundle = bundles.get(id).ok_or_else(|| Error::Reference(id.clone()))?;
            assets.insert(id.clone(), Arc::new(LodAsset::new(bundle.clone())));
        }
        Ok(Self { scene, assets })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let scene = load_scene(path)?;
        let mut bundles = BTreeMap::new();
        for (id, p) in &scene.assets {
            bundles.insert(id.clone(), read_bundle(p)?);
        }
        Self::new(scene, bundles)
    }

    pub fn asset(&self, inst: &Instance) -> Result<&LodAsset> {
        self.assets
            .get(&inst.asset)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::Reference(inst.asset.clone()))
    }

    /// Layer-0 Gaussians over all instances.
    pub fn resident_count(&self) -> usize {
        self.scene
            .instances
            .iter()
            .map(|i| self.assets[&i.asset].bundle.layer_gaussian_count(0))
            .sum()
    }

    /// World-space bounds of every instance.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for inst in &self.scene.instances {
            let s = inst.transform_sphere(&self.assets[&inst.asset].bounds);
            lo = lo.inf(&(s.center - Vec3::repeat(s.radius)));
            hi = hi.sup(&(s.center + Vec3::repeat(s.radius)));
        }
        (!self.scene.instances.is_empty()).then_some((lo, hi))
    }
}

/// Clusters satisfying `F(own) <= tau < F(parent)` for one instance, in
/// cluster order. No culling.
pub fn select(bundle: &Bundle, inst: &Instance, cam: &Camera, tol: Tolerance) -> Vec<usize> {
    let tau = tol.get();
    bundle
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let fc = footprint(&inst.transform_sphere(&c.own), cam);
            let fp = footprint(&inst.transform_sphere(&c.parent), cam);
            fc <= tau && tau < fp
        })
        .map(|(i, _)| i)
        .collect()
}

/// Top-down reference traversal: starting from the top layer, a cluster is
/// emitted when its own footprint fits the tolerance, otherwise the group
/// that produced it is opened and its members are visited instead.
pub fn select_recursive(bundle: &Bundle, inst: &Instance, cam: &Camera, tol: Tolerance) -> Vec<usize> {
    let groups = bundle.groups();
    let mut opened = HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<usize> = bundle.layer_clusters(bundle.top_layer()).map(|(i, _)| i).collect();
    while let Some(i) = stack.pop() {
        let c = &bundle.clusters[i];
        if footprint(&inst.transform_sphere(&c.own), cam) <= tol.get() {
            out.push(i);
        } else if c.layer > 0 && opened.insert(sphere_key(&c.own)) {
            if let Some(members) = groups.get(&(c.layer - 1, sphere_key(&c.own))) {
                stack.extend(members);
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSelection {
    pub instance: usize,
    pub clusters: Vec<usize>,
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// One entry per scene instance, in scene order.
    pub instances: Vec<InstanceSelection>,
    pub selected_count: usize,
    pub resident_count: usize,
    pub select_ms: f64,
}

impl SelectionResult {
    pub fn percentage(&self) -> f64 {
        if self.resident_count == 0 {
            return 0.0;
        }
        100.0 * self.selected_count as f64 / self.resident_count as f64
    }
}

fn finish(
    scene: &LoadedScene,
    mut instances: Vec<InstanceSelection>,
    started: Instant,
) -> SelectionResult {
    for sel in &mut instances {
        let b = &scene.assets[&scene.scene.instances[sel.instance].asset].bundle;
        sel.gaussians = sel.clusters.iter().map(|&c| b.clusters[c].count as usize).sum();
    }
    SelectionResult {
        selected_count: instances.iter().map(|s| s.gaussians).sum(),
        resident_count: scene.resident_count(),
        instances,
        select_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

fn cull(asset: &LodAsset, inst: &Instance, cam: &Camera, mode: CullMode, clusters: Vec<usize>) -> Vec<usize> {
    let near = crate::raster::RasterConfig::default().near;
    match mode {
        CullMode::Off => clusters,
        CullMode::Instance => {
            if cam.sphere_visible(&inst.transform_sphere(&asset.bounds), near) {
                clusters
            } else {
                Vec::new()
            }
        }
        CullMode::Cluster => clusters
            .into_iter()
            .filter(|&c| cam.sphere_visible(&inst.transform_sphere(&asset.cluster_bounds[c]), near))
            .collect(),
    }
}

/// [`select`] over every instance, instances evaluated in parallel.
pub fn select_scene(scene: &LoadedScene, cam: &Camera, tol: Tolerance, mode: CullMode) -> Result<SelectionResult> {
    let started = Instant::now();
    let instances = scene
        .scene
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let asset = scene.asset(inst)?;
            let clusters = cull(asset, inst, cam, mode, select(&asset.bundle, inst, cam, tol));
            Ok(InstanceSelection {
                instance: i,
                clusters,
                gaussians: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(scene, instances, started))
}

/// Every layer-0 cluster of every instance: plain rendering without LOD.
pub fn select_vanilla(scene: &LoadedScene, cam: &Camera, mode: CullMode) -> Result<SelectionResult> {
    let started = Instant::now();
    let instances = scene
        .scene
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let asset = scene.asset(inst)?;
            let all = asset.bundle.layer_clusters(0).map(|(c, _)| c).collect();
            Ok(InstanceSelection {
                instance: i,
                clusters: cull(asset, inst, cam, mode, all),
                gaussians: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(scene, instances, started))
}

/// Selected clusters' Gaussians in world space, instance by instance.
pub fn gather(scene: &LoadedScene, result: &SelectionResult) -> GaussianSet {
    let mut out = GaussianSet::with_capacity(result.selected_count);
    for sel in &result.instances {
        let inst = &scene.scene.instances[sel.instance];
        let b = &scene.assets[&inst.asset].bundle;
        for &c in &sel.clusters {
            inst.transform_into(&b.gaussians, b.clusters[c].range(), &mut out);
        }
    }
    out
}

/// Fixed, high-contrast color per layer.
pub fn layer_color(layer: u32) -> Vec3 {
    const PALETTE: [[f64; 3]; 8] = [
        [0.90, 0.10, 0.10],
        [0.10, 0.70, 0.20],
        [0.15, 0.35, 0.95],
        [0.95, 0.75, 0.10],
        [0.70, 0.20, 0.85],
        [0.10, 0.80, 0.80],
        [0.95, 0.45, 0.10],
        [0.55, 0.55, 0.55],
    ];
    Vec3::from(PALETTE[layer as usize % PALETTE.len()])
}

/// Like [`gather`] but every Gaussian takes its cluster's [`layer_color`].
pub fn gather_layer_debug(scene: &LoadedScene, result: &SelectionResult) -> GaussianSet {
    let mut out = GaussianSet::with_capacity(result.selected_count);
    for sel in &result.instances {
        let inst = &scene.scene.instances[sel.instance];
        let b = &scene.assets[&inst.asset].bundle;
        for &c in &sel.clusters {
            let start = out.len();
            inst.transform_into(&b.gaussians, b.clusters[c].range(), &mut out);
            let color = layer_color(b.clusters[c].layer);
            out.colors[start..].iter_mut().for_each(|v| *v = color);
        }
    }
    out
}

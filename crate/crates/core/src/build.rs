//! Offline build: cluster the asset, then repeatedly group adjacent clusters,
//! halve each group and refit it with local splatting, until fewer clusters
//! remain than fit in one group.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::clustering::{group_clusters, median_split};
use crate::error::{Error, Result};
use crate::io::{quantize_set, sphere_key, Bundle, BundleParams, Cluster};
use crate::model::{BoundingSphere, GaussianSet, Vec3};
use crate::raster::render;
use crate::splat::{loss, optimize_group_with, sample_pseudo_views, OptimizeConfig};

#[derive(Debug, Clone)]
pub struct BuildParams {
    pub cluster_size: usize,
    pub group_size: usize,
    pub iterations: usize,
    pub scale_expansion: f64,
    pub seed: u64,
    pub optimize: OptimizeConfig,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            cluster_size: 4096,
            group_size: 2,
            iterations: 640,
            scale_expansion: 2f64.powf(1.0 / 6.0),
            seed: 0,
            optimize: OptimizeConfig::default(),
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_size == 0 || self.cluster_size > u32::MAX as usize {
            return Err(Error::Validation(format!("cluster size {} must be in 1..=2^32-1", self.cluster_size)));
        }
        if self.group_size < 2 || self.group_size > u32::MAX as usize {
            return Err(Error::Validation(format!("group size {} must be at least 2", self.group_size)));
        }
        if self.iterations > u32::MAX as usize {
            return Err(Error::Validation(format!("iteration count {} too large", self.iterations)));
        }
        if !(self.scale_expansion >= 1.0 && self.scale_expansion.is_finite()) {
            return Err(Error::Validation(format!("scale expansion {} must be >= 1", self.scale_expansion)));
        }
        Ok(())
    }
}

/// Build progress, reported once per finished group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    /// Layer being produced (1 for the first simplified layer).
    pub layer: u32,
    pub groups_done: usize,
    pub groups_total: usize,
}

/// Keep the `ceil(N/2)` Gaussians with the largest
/// `opacity * cbrt(sx * sy * sz)` (lower index wins ties), in their original
/// order, with every scale multiplied by `scale_expansion`.
pub fn downsample_half(gs: &GaussianSet, scale_expansion: f64) -> GaussianSet {
    let score: Vec<f64> = gs
        .opacities
        .iter()
        .zip(&gs.scales)
        .map(|(o, s)| o * (s.x * s.y * s.z).cbrt())
        .collect();
    let mut order: Vec<usize> = (0..gs.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order.truncate(gs.len().div_ceil(2));
    order.sort_unstable();
    let mut out = gs.select(&order);
    for s in &mut out.scales {
        *s *= scale_expansion;
    }
    out
}

/// Mean-position center, radius to the farthest member, then inflated so the
/// sphere encloses every child sphere and is strictly larger than each.
pub fn compute_group_sphere(members: &GaussianSet, children: &[BoundingSphere]) -> Result<BoundingSphere> {
    let center = members
        .centroid()
        .ok_or_else(|| Error::Argument("group sphere of an empty member set".into()))?;
    Ok(BoundingSphere::new(center, required_radius(&center, members, children)))
}

fn required_radius(center: &Vec3, members: &GaussianSet, children: &[BoundingSphere]) -> f64 {
    let mut r = members
        .positions
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    for c in children {
        r = r.max((center - c.center).norm() + c.radius).max(c.radius * (1.0 + 1e-4));
    }
    r
}

/// Round a group sphere to `f32` without losing enclosure: the center is
/// rounded, then the radius is raised until the enclosure tests pass exactly
/// on the stored values.
fn storable_sphere(members: &GaussianSet, children: &[BoundingSphere]) -> Result<BoundingSphere> {
    let s = compute_group_sphere(members, children)?;
    let center = s.center.map(|v| v as f32 as f64);
    let need = required_radius(&center, members, children).max(f32::MIN_POSITIVE as f64);
    let mut r = need as f32;
    let fits = |r: f64| {
        r >= need
            && children.iter().all(|c| (center - c.center).norm() + c.radius <= r && c.radius < r)
            && members.positions.iter().all(|p| (p - center).norm() <= r)
    };
    while !fits(r as f64) {
        r = r.next_up();
    }
    Ok(BoundingSphere::new(center, r as f64))
}

struct Pending {
    gaussians: GaussianSet,
    own: BoundingSphere,
}

/// Simplify one group: halve, refit against the original members from
/// pseudo-views around `sphere`, and cut the result into clusters.
pub fn simplify_group(
    members: &GaussianSet,
    sphere: &BoundingSphere,
    params: &BuildParams,
    group_seed: u64,
) -> Result<Vec<GaussianSet>> {
    let init = downsample_half(members, params.scale_expansion);
    let outcome = optimize_group_with(members, &init, params.iterations, group_seed, sphere, &params.optimize)?;
    if outcome.aborted {
        log::warn!(
            "group {group_seed:#x}: non-finite loss after {} steps, keeping last finite state",
            outcome.steps_run
        );
    }
    let simplified = quantize_set(&outcome.gaussians);
    simplified
        .validate()
        .map_err(|e| Error::Validation(format!("simplified group {group_seed:#x}: {e}")))?;
    let partition = median_split(&simplified.positions, params.cluster_size)?;
    Ok(partition.sets.iter().map(|s| simplified.select(s)).collect())
}

pub fn build_bundle(asset: &GaussianSet, params: &BuildParams) -> Result<Bundle> {
    build_bundle_with_progress(asset, params, &|_| {})
}

pub fn build_bundle_with_progress(
    asset: &GaussianSet,
    params: &BuildParams,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<Bundle> {
    params.validate()?;
    if asset.is_empty() {
        return Err(Error::Validation("cannot build a bundle from an empty asset".into()));
    }
    asset.validate()?;
    let asset = quantize_set(asset);
    asset.validate()?;

    // Finished clusters of all layers, parent spheres filled in as groups form.
    let mut done: Vec<(u32, Pending, BoundingSphere)> = Vec::new();
    let mut current: Vec<Pending> = median_split(&asset.positions, params.cluster_size)?
        .sets
        .iter()
        .map(|set| {
            let gaussians = asset.select(set);
            let c = gaussians.centroid().expect("non-empty leaf").map(|v| v as f32 as f64);
            Pending {
                gaussians,
                own: BoundingSphere::new(c, 0.0),
            }
        })
        .collect();
    let mut layer = 0u32;
    let mut group_id = 0u64;

    while current.len() >= params.group_size {
        let centroids: Vec<Vec3> = current.iter().map(|c| c.gaussians.centroid().unwrap()).collect();
        let groups = group_clusters(&centroids, params.group_size)?;
        let first_id = group_id;
        group_id += groups.len() as u64;
        let finished = AtomicUsize::new(0);
        let total = groups.len();

        let results: Vec<(BoundingSphere, Vec<GaussianSet>)> = groups
            .sets
            .par_iter()
            .enumerate()
            .map(|(g, set)| {
                let mut members = GaussianSet::new();
                for &i in set {
                    members.extend(&current[i].gaussians);
                }
                let children: Vec<BoundingSphere> = set.iter().map(|&i| current[i].own).collect();
                let sphere = storable_sphere(&members, &children)?;
                let out = simplify_group(&members, &sphere, params, params.seed ^ (first_id + g as u64))?;
                let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
                progress(Progress {
                    layer: layer + 1,
                    groups_done: n,
                    groups_total: total,
                });
                Ok((sphere, out))
            })
            .collect::<Result<_>>()?;

        let mut parents = vec![BoundingSphere::new(Vec3::zeros(), 0.0); current.len()];
        let mut next = Vec::new();
        for (set, (sphere, clusters)) in groups.sets.iter().zip(results) {
            for &i in set {
                parents[i] = sphere;
            }
            next.extend(clusters.into_iter().map(|gaussians| Pending { gaussians, own: sphere }));
        }
        for (c, parent) in current.into_iter().zip(parents) {
            done.push((layer, c, parent));
        }
        current = next;
        layer += 1;
    }
    for c in current {
        let parent = BoundingSphere::unbounded(c.own.center);
        done.push((layer, c, parent));
    }

    let mut gaussians = GaussianSet::with_capacity(done.iter().map(|(_, c, _)| c.gaussians.len()).sum());
    let mut clusters = Vec::with_capacity(done.len());
    for (l, c, parent) in done {
        clusters.push(Cluster {
            layer: l,
            offset: gaussians.len() as u64,
            count: c.gaussians.len() as u32,
            own: c.own,
            parent,
        });
        gaussians.extend(&c.gaussians);
    }
    let bundle = Bundle {
        params: BundleParams {
            cluster_size: params.cluster_size as u32,
            group_size: params.group_size as u32,
            iterations: params.iterations as u32,
            seed: params.seed,
            scale_expansion: params.scale_expansion as f32 as f64,
        },
        layer_count: layer + 1,
        gaussians,
        clusters,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Mean loss, over every group of `bundle`, between the clusters the group
/// produced and the layer-0 Gaussians beneath it, seen from `views` pseudo-views
/// per group drawn with `seed` (use a seed the build did not train with).
pub fn held_out_loss(bundle: &Bundle, views: usize, seed: u64) -> Result<f64> {
    let groups = bundle.groups();
    // layer-0 cluster ids beneath each cluster
    let mut leaves: Vec<Vec<usize>> = bundle
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| if c.layer == 0 { vec![i] } else { Vec::new() })
        .collect();
    let mut produced: BTreeMap<(u32, [u64; 4]), Vec<usize>> = BTreeMap::new();
    for (i, c) in bundle.clusters.iter().enumerate() {
        if c.layer > 0 {
            produced.entry((c.layer - 1, sphere_key(&c.own))).or_default().push(i);
        }
    }
    let mut scores = Vec::new();
    for (gid, (key, members)) in groups.iter().enumerate() {
        let below: Vec<usize> = members.iter().flat_map(|&m| leaves[m].clone()).collect();
        let outputs = produced
            .get(key)
            .ok_or_else(|| Error::Corruption("group without produced clusters".into()))?;
        for &o in outputs {
            leaves[o] = below.clone();
        }
        let mut original = GaussianSet::new();
        for &l in &below {
            original.extend(&bundle.cluster_gaussians(l));
        }
        let mut simplified = GaussianSet::new();
        for &o in outputs {
            simplified.extend(&bundle.cluster_gaussians(o));
        }
        let sphere = bundle.clusters[outputs[0]].own;
        let cams = sample_pseudo_views(&sphere, views, seed ^ gid as u64)?;
        let total: f64 = cams
            .par_iter()
            .map(|cam| loss(&render(&simplified, cam), &render(&original, cam)))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        scores.push(total / views as f64);
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

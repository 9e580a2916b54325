//! The `V3DG` bundle container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "V3DG"  u32 version
//! header  u32 cluster_size, u32 group_size, u32 iterations, u64 seed,
//!         f32 scale_expansion, u32 layer_count, u32 cluster_count,
//!         u64 gaussian_count, u32 crc32(magic..gaussian_count)
//! table   cluster_count x { u32 layer, u64 offset, u32 count,
//!                           f32 own[4], f32 parent[4] }          48 bytes
//! columns f32 positions[3N], scales[3N], rotations[4N] (w,x,y,z),
//!         opacities[N], colors[3N]                               56 bytes/Gaussian
//! u32     crc32(table..columns)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use nalgebra::Quaternion;

use crate::error::{Error, Result};
use crate::model::{BoundingSphere, GaussianSet, Vec3};

pub const MAGIC: &[u8; 4] = b"V3DG";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 8 + 40 + 4;
pub const CLUSTER_BYTES: usize = 48;
pub const GAUSSIAN_BYTES: usize = 56;

/// Encoded size of a bundle with `clusters` clusters and `gaussians` Gaussians.
pub fn encoded_size(clusters: usize, gaussians: usize) -> usize {
    HEADER_BYTES + clusters * CLUSTER_BYTES + gaussians * GAUSSIAN_BYTES + 4
}

/// Build parameters recorded alongside the data they produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleParams {
    pub cluster_size: u32,
    pub group_size: u32,
    pub iterations: u32,
    pub seed: u64,
    pub scale_expansion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub layer: u32,
    pub offset: u64,
    pub count: u32,
    /// Sphere of the group that produced this cluster (radius 0 on layer 0).
    pub own: BoundingSphere,
    /// Sphere of the group containing this cluster (radius +inf on the top layer).
    pub parent: BoundingSphere,
}

impl Cluster {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset as usize..self.offset as usize + self.count as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub params: BundleParams,
    pub layer_count: u32,
    /// Every layer's Gaussians, concatenated layer by layer.
    pub gaussians: GaussianSet,
    pub clusters: Vec<Cluster>,
}

fn f32_exact(v: f64) -> bool {
    v.is_nan() || (v as f32) as f64 == v
}

fn sphere_exact(s: &BoundingSphere) -> bool {
    s.center.iter().all(|&v| f32_exact(v)) && f32_exact(s.radius)
}

/// Round every attribute to the nearest `f32`, the precision bundles store.
pub fn quantize_set(gs: &GaussianSet) -> GaussianSet {
    let q = |v: f64| v as f32 as f64;
    let mut out = gs.clone();
    out.positions.iter_mut().for_each(|p| *p = p.map(q));
    out.scales.iter_mut().for_each(|s| *s = s.map(q));
    out.rotations.iter_mut().for_each(|r| *r = Quaternion::from(r.coords.map(q)));
    out.opacities.iter_mut().for_each(|o| *o = q(*o));
    out.colors.iter_mut().for_each(|c| *c = c.map(q));
    out
}

impl Bundle {
    pub fn layer_clusters(&self, layer: u32) -> impl Iterator<Item = (usize, &Cluster)> {
        self.clusters.iter().enumerate().filter(move |(_, c)| c.layer == layer)
    }

    pub fn layer_gaussian_count(&self, layer: u32) -> usize {
        self.layer_clusters(layer).map(|(_, c)| c.count as usize).sum()
    }

    pub fn top_layer(&self) -> u32 {
        self.layer_count.saturating_sub(1)
    }

    /// Layer-0 Gaussians, i.e. the unsimplified asset.
    pub fn base_gaussians(&self) -> GaussianSet {
        let end = self.layer_clusters(0).map(|(_, c)| c.range().end).max().unwrap_or(0);
        self.gaussians.slice(0..end)
    }

    pub fn cluster_gaussians(&self, id: usize) -> GaussianSet {
        self.gaussians.slice(self.clusters[id].range())
    }

    /// Check every structural invariant; the error names the first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Corruption(m));
        let p = &self.params;
        if p.cluster_size == 0 {
            return bad("cluster size must be at least 1".into());
        }
        if p.group_size < 2 {
            return bad("group size must be at least 2".into());
        }
        if !(p.scale_expansion >= 1.0 && p.scale_expansion.is_finite()) {
            return bad(format!("scale expansion {} must be >= 1", p.scale_expansion));
        }
        if self.layer_count == 0 || self.clusters.is_empty() {
            return bad("bundle has no layers".into());
        }
        self.gaussians
            .validate()
            .map_err(|e| Error::Corruption(format!("gaussian data: {e}")))?;

        // coverage: ranges sorted by offset must tile 0..N
        let mut order: Vec<usize> = (0..self.clusters.len()).collect();
        order.sort_by_key(|&i| self.clusters[i].offset);
        let mut next = 0u64;
        for &i in &order {
            let c = &self.clusters[i];
            if c.offset != next {
                return bad(format!("cluster {i}: gaussian ranges are not disjoint and covering at offset {next}"));
            }
            next += c.count as u64;
        }
        if next != self.gaussians.len() as u64 {
            return bad(format!(
                "gaussian ranges cover {next} of {} gaussians",
                self.gaussians.len()
            ));
        }

        let mut layer_sizes = vec![0usize; self.layer_count as usize];
        let top = self.top_layer();
        let own_spheres: HashSet<(u32, [u64; 4])> =
            self.clusters.iter().map(|c| (c.layer, sphere_key(&c.own))).collect();
        for (i, c) in self.clusters.iter().enumerate() {
            if c.layer >= self.layer_count {
                return bad(format!("cluster {i}: layer {} >= layer count {}", c.layer, self.layer_count));
            }
            layer_sizes[c.layer as usize] += 1;
            if c.count == 0 || c.count > p.cluster_size {
                return bad(format!("cluster {i}: count {} outside 1..={}", c.count, p.cluster_size));
            }
            let finite_center = |s: &BoundingSphere| s.center.iter().all(|v| v.is_finite());
            if !finite_center(&c.own) || !finite_center(&c.parent) || !(c.own.radius >= 0.0 && c.own.radius.is_finite()) {
                return bad(format!("cluster {i}: non-finite sphere"));
            }
            if !sphere_exact(&c.own) || !sphere_exact(&c.parent) {
                return bad(format!("cluster {i}: sphere not representable in f32"));
            }
            if c.layer == 0 && c.own.radius != 0.0 {
                return bad(format!("cluster {i}: layer-0 own sphere radius {} is not 0", c.own.radius));
            }
            if c.layer == top {
                if c.parent.radius != f64::INFINITY {
                    return bad(format!("cluster {i}: top-layer parent radius {} is not +inf", c.parent.radius));
                }
                continue;
            }
            if !(c.parent.radius.is_finite() && c.parent.radius > c.own.radius) {
                return bad(format!(
                    "cluster {i}: parent radius {} must exceed own radius {} (r_p > r_c)",
                    c.parent.radius, c.own.radius
                ));
            }
            if !c.parent.encloses(&c.own, 1e-6) {
                return bad(format!("cluster {i}: parent sphere does not enclose own sphere"));
            }
            if !own_spheres.contains(&(c.layer + 1, sphere_key(&c.parent))) {
                return bad(format!("cluster {i}: parent sphere matches no cluster of layer {}", c.layer + 1));
            }
        }
        if let Some(l) = layer_sizes.iter().position(|&n| n == 0) {
            return bad(format!("layer {l} has no clusters"));
        }
        if self
            .gaussians
            .positions
            .iter()
            .chain(&self.gaussians.scales)
            .chain(&self.gaussians.colors)
            .any(|v| !v.iter().all(|&x| f32_exact(x)))
            || !self.gaussians.opacities.iter().all(|&o| f32_exact(o))
            || !self.gaussians.rotations.iter().all(|q| q.coords.iter().all(|&x| f32_exact(x)))
        {
            return bad("gaussian attribute not representable in f32".into());
        }
        Ok(())
    }

    /// Clusters grouped by the sphere they share as parent, keyed by the
    /// producing cluster's layer. Each group is listed in cluster order.
    pub fn groups(&self) -> BTreeMap<(u32, [u64; 4]), Vec<usize>> {
        let mut out: BTreeMap<(u32, [u64; 4]), Vec<usize>> = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            if c.layer != self.top_layer() {
                out.entry((c.layer, sphere_key(&c.parent))).or_default().push(i);
            }
        }
        out
    }
}

/// Bitwise identity of a sphere, usable as a map key.
pub fn sphere_key(s: &BoundingSphere) -> [u64; 4] {
    [s.center.x.to_bits(), s.center.y.to_bits(), s.center.z.to_bits(), s.radius.to_bits()]
}

pub fn encode_bundle(b: &Bundle) -> Vec<u8> {
    let n = b.gaussians.len();
    let mut out = Vec::with_capacity(encoded_size(b.clusters.len(), n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let p = &b.params;
    out.extend_from_slice(&p.cluster_size.to_le_bytes());
    out.extend_from_slice(&p.group_size.to_le_bytes());
    out.extend_from_slice(&p.iterations.to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(p.scale_expansion as f32).to_le_bytes());
    out.extend_from_slice(&b.layer_count.to_le_bytes());
    out.extend_from_slice(&(b.clusters.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());

    let body = out.len();
    let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for c in &b.clusters {
        out.extend_from_slice(&c.layer.to_le_bytes());
        out.extend_from_slice(&c.offset.to_le_bytes());
        out.extend_from_slice(&c.count.to_le_bytes());
        for s in [&c.own, &c.parent] {
            for v in s.center.iter() {
                f(&mut out, *v);
            }
            f(&mut out, s.radius);
        }
    }
    let gs = &b.gaussians;
    for v in gs.positions.iter().chain(&gs.scales) {
        v.iter().for_each(|&x| f(&mut out, x));
    }
    for q in &gs.rotations {
        [q.w, q.i, q.j, q.k].into_iter().for_each(|x| f(&mut out, x));
    }
    gs.opacities.iter().for_each(|&x| f(&mut out, x));
    for v in &gs.colors {
        v.iter().for_each(|&x| f(&mut out, x));
    }
    let crc = crc32fast::hash(&out[body..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("bundle truncated at byte {} (need {n} more)", self.data.len()),
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f32()?, self.f32()?, self.f32()?))
    }
}

/// Decode and validate a bundle.
pub fn decode_bundle(data: &[u8]) -> Result<Bundle> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a V3DG bundle (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let params = BundleParams {
        cluster_size: cur.u32()?,
        group_size: cur.u32()?,
        iterations: cur.u32()?,
        seed: cur.u64()?,
        scale_expansion: cur.f32()?,
    };
    let layer_count = cur.u32()?;
    let cluster_count = cur.u32()? as usize;
    let n = cur.u64()?;
    let header_end = cur.pos;
    if cur.u32()? != crc32fast::hash(&data[..header_end]) {
        return Err(Error::Corruption("header checksum mismatch".into()));
    }
    let n = usize::try_from(n).map_err(|_| Error::Corruption(format!("gaussian count {n} too large")))?;
    let expected = cluster_count
        .checked_mul(CLUSTER_BYTES)
        .and_then(|t| n.checked_mul(GAUSSIAN_BYTES).and_then(|g| g.checked_add(t)))
        .and_then(|b| b.checked_add(4));
    let Some(expected) = expected else {
        return Err(Error::Corruption("section sizes overflow".into()));
    };
    let body = cur.pos;
    if data.len() - body < expected {
        // read what we can so the error is the usual truncation error
        cur.take(expected)?;
    }
    if data.len() - body > expected {
        return Err(Error::Corruption(format!("{} trailing bytes", data.len() - body - expected)));
    }
    let payload_end = body + expected - 4;
    let crc = u32::from_le_bytes(data[payload_end..].try_into().unwrap());
    if crc != crc32fast::hash(&data[body..payload_end]) {
        return Err(Error::Corruption("payload checksum mismatch".into()));
    }

    let mut clusters = Vec::with_capacity(cluster_count);
    for _ in 0..cluster_count {
        let layer = cur.u32()?;
        let offset = cur.u64()?;
        let count = cur.u32()?;
        let own = BoundingSphere::new(cur.vec3()?, cur.f32()?);
        let parent = BoundingSphere::new(cur.vec3()?, cur.f32()?);
        clusters.push(Cluster {
            layer,
            offset,
            count,
            own,
            parent,
        });
    }
    let mut gs = GaussianSet::with_capacity(n);
    for _ in 0..n {
        gs.positions.push(cur.vec3()?);
    }
    for _ in 0..n {
        gs.scales.push(cur.vec3()?);
    }
    for _ in 0..n {
        let (w, x, y, z) = (cur.f32()?, cur.f32()?, cur.f32()?, cur.f32()?);
        gs.rotations.push(Quaternion::new(w, x, y, z));
    }
    for _ in 0..n {
        gs.opacities.push(cur.f32()?);
    }
    for _ in 0..n {
        gs.colors.push(cur.vec3()?);
    }
    let bundle = Bundle {
        params,
        layer_count,
        gaussians: gs,
        clusters,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Validate, then write atomically (temp file in the same directory, renamed
/// into place).
pub fn write_bundle(bundle: &Bundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    write_bundle_unchecked(bundle, path)
}

/// Write without validating. Meant for producing deliberately broken files.
pub fn write_bundle_unchecked(bundle: &Bundle, path: &Path) -> Result<()> {
    write_atomic(path, &encode_bundle(bundle))
}

pub fn read_bundle(path: &Path) -> Result<Bundle> {
    let data = std::fs::read(path).map_err(Error::at_path(path))?;
    decode_bundle(&data)
}

/// Write `bytes` to a temporary sibling of `path` and rename it into place,
/// so a failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::at_path(dir))?;
    tmp.write_all(bytes).map_err(Error::at_path(path))?;
    tmp.as_file().sync_all().map_err(Error::at_path(path))?;
    tmp.persist(path).map_err(|e| Error::Path {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

//! Domain types shared by every stage: Gaussians, spheres, cameras and
//! scene instances, plus the rigid/similarity transform math between them.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::PathBuf;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Zeroth-order spherical-harmonic basis constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
///
/// Written out explicitly (rather than via `UnitQuaternion`) so the backward
/// pass can differentiate exactly the same expression.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn identity_quat() -> Quaternion<f64> {
    Quaternion::new(1.0, 0.0, 0.0, 0.0)
}

/// One splat primitive with activated attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub position: Vec3,
    /// Per-axis standard deviations.
    pub scale: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quaternion<f64>,
    pub opacity: f64,
    /// Linear RGB, degree-0 only.
    pub color: Vec3,
}

impl Gaussian3D {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.color.iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite attribute".into());
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {} is not 1", self.rotation.norm()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(format!("non-positive scale {:?}", self.scale.as_slice()));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(format!("opacity {} outside (0, 1)", self.opacity));
        }
        if self.color.iter().any(|&c| c < 0.0) {
            return Err("negative color component".into());
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = quat_to_matrix(&self.rotation.normalize());
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }
}

/// Columnar storage of many Gaussians.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    pub rotations: Vec<Quaternion<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl GaussianSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian3D) {
        self.positions.push(g.position);
        self.scales.push(g.scale);
        self.rotations.push(g.rotation);
        self.opacities.push(g.opacity);
        self.colors.push(g.color);
    }

    pub fn get(&self, i: usize) -> Gaussian3D {
        Gaussian3D {
            position: self.positions[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            color: self.colors[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Gaussian3D> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn slice(&self, range: Range<usize>) -> GaussianSet {
        GaussianSet {
            positions: self.positions[range.clone()].to_vec(),
            scales: self.scales[range.clone()].to_vec(),
            rotations: self.rotations[range.clone()].to_vec(),
            opacities: self.opacities[range.clone()].to_vec(),
            colors: self.colors[range].to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::with_capacity(indices.len());
        for &i in indices {
            out.push(self.get(i));
        }
        out
    }

    pub fn extend(&mut self, other: &GaussianSet) {
        self.positions.extend_from_slice(&other.positions);
        self.scales.extend_from_slice(&other.scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.opacities.extend_from_slice(&other.opacities);
        self.colors.extend_from_slice(&other.colors);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.scales.len() != n
            || self.rotations.len() != n
            || self.opacities.len() != n
            || self.colors.len() != n
        {
            return Err(Error::Validation("gaussian columns differ in length".into()));
        }
        for i in 0..n {
            self.get(i)
                .validate()
                .map_err(|message| Error::Data { row: i, message })?;
        }
        Ok(())
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.is_empty() {
            return None;
        }
        let sum = self.positions.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.len() as f64)
    }
}

impl FromIterator<Gaussian3D> for GaussianSet {
    fn from_iter<I: IntoIterator<Item = Gaussian3D>>(iter: I) -> Self {
        let mut set = GaussianSet::new();
        for g in iter {
            set.push(g);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl BoundingSphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Top-layer sentinel: a sphere no camera can ever see as "small enough".
    pub fn unbounded(center: Vec3) -> Self {
        Self { center, radius: f64::INFINITY }
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius
    }

    /// `|c_self - c_other| + r_other <= r_self + tol`.
    pub fn encloses(&self, other: &BoundingSphere, tol: f64) -> bool {
        (self.center - other.center).norm() + other.radius <= self.radius + tol
    }
}

/// Pinhole camera: world-to-camera pose plus pixel intrinsics.
///
/// Camera space is x right, y down, z forward; the principal point is the
/// image center and pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
}

pub fn focal_from_fov(width: u32, fov_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * fov_x).tan()
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is a hint and only needs to
    /// be non-parallel to the view direction (a fallback axis is used if it is).
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
    ) -> Result<Camera> {
        let forward = target - eye;
        if forward.norm() == 0.0 || !forward.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("camera eye and target coincide".into()));
        }
        let z = forward.normalize();
        let mut up = if up.norm() > 0.0 { up.normalize() } else { Vec3::z() };
        if z.dot(&up).abs() > 0.999 {
            up = if z.z.abs() < 0.9 { Vec3::z() } else { Vec3::y() };
        }
        let down = -up;
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let cam = Camera {
            rotation,
            translation: -(rotation * eye),
            width,
            height,
            fx,
            fy,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("image must be at least 1x1".into()));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Validation("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit viewing direction in world space.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn cx(&self) -> f64 {
        0.5 * self.width as f64
    }

    pub fn cy(&self) -> f64 {
        0.5 * self.height as f64
    }

    /// Same pose, `k` times the resolution and focal length.
    pub fn supersampled(&self, k: u32) -> Camera {
        Camera {
            width: self.width * k,
            height: self.height * k,
            fx: self.fx * k as f64,
            fy: self.fy * k as f64,
            ..*self
        }
    }

    /// Conservative sphere-vs-frustum test against the near plane and the
    /// four side planes (no far plane). False only if the sphere is entirely
    /// outside one plane.
    pub fn sphere_visible(&self, sphere: &BoundingSphere, near: f64) -> bool {
        if !sphere.radius.is_finite() {
            return true;
        }
        let c = self.to_camera(&sphere.center);
        let r = sphere.radius;
        if c.z < near - r {
            return false;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let (cx, cy) = (self.cx(), self.cy());
        let planes = [
            Vec3::new(self.fx, 0.0, cx),
            Vec3::new(-self.fx, 0.0, w - cx),
            Vec3::new(0.0, self.fy, cy),
            Vec3::new(0.0, -self.fy, h - cy),
        ];
        planes.iter().all(|n| n.dot(&c) / n.norm() >= -r)
    }
}

/// A placed copy of an asset: `x -> scale * R x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub asset: String,
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub scale: f64,
}

impl Instance {
    pub fn identity(asset: impl Into<String>) -> Self {
        Self {
            asset: asset.into(),
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
            scale: 1.0,
        }
    }

    pub fn new(
        asset: impl Into<String>,
        translation: Vec3,
        rotation: Quaternion<f64>,
        scale: f64,
    ) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Validation(format!("instance scale {scale} must be > 0")));
        }
        if rotation.norm() == 0.0 || !rotation.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("instance rotation must be a non-zero quaternion".into()));
        }
        Ok(Self {
            asset: asset.into(),
            translation,
            rotation: UnitQuaternion::from_quaternion(rotation),
            scale,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0
            && self.translation == Vec3::zeros()
            && self.rotation.quaternion() == &identity_quat()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.rotation.quaternion())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation_matrix() * p) + self.translation
    }

    pub fn transform_gaussian(&self, g: &Gaussian3D) -> Gaussian3D {
        if self.is_identity() {
            return *g;
        }
        Gaussian3D {
            position: self.transform_point(&g.position),
            scale: g.scale * self.scale,
            rotation: (self.rotation.quaternion() * g.rotation).normalize(),
            opacity: g.opacity,
            color: g.color,
        }
    }

    pub fn transform_sphere(&self, s: &BoundingSphere) -> BoundingSphere {
        if self.is_identity() {
            return *s;
        }
        BoundingSphere {
            center: self.transform_point(&s.center),
            radius: self.scale * s.radius,
        }
    }

    /// Transform every Gaussian of `gs`, appending to `out`.
    pub fn transform_into(&self, gs: &GaussianSet, range: Range<usize>, out: &mut GaussianSet) {
        if self.is_identity() {
            out.positions.extend_from_slice(&gs.positions[range.clone()]);
            out.scales.extend_from_slice(&gs.scales[range.clone()]);
            out.rotations.extend_from_slice(&gs.rotations[range.clone()]);
            out.opacities.extend_from_slice(&gs.opacities[range.clone()]);
            out.colors.extend_from_slice(&gs.colors[range]);
            return;
        }
        let r = self.rotation_matrix();
        let q = *self.rotation.quaternion();
        for i in range {
            out.positions.push(self.scale * (r * gs.positions[i]) + self.translation);
            out.scales.push(gs.scales[i] * self.scale);
            out.rotations.push((q * gs.rotations[i]).normalize());
            out.opacities.push(gs.opacities[i]);
            out.colors.push(gs.colors[i]);
        }
    }

    /// The instance equivalent to applying `self` first, then `then`.
    pub fn then(&self, then: &Instance) -> Instance {
        Instance {
            asset: self.asset.clone(),
            translation: then.scale * (then.rotation_matrix() * self.translation) + then.translation,
            rotation: then.rotation * self.rotation,
            scale: then.scale * self.scale,
        }
    }
}

/// A composed world: named assets (bundle paths) and their placed instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub assets: BTreeMap<String, PathBuf>,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            if !self.assets.contains_key(&inst.asset) {
                return Err(Error::Reference(inst.asset.clone()));
            }
            if !(inst.scale > 0.0) {
                return Err(Error::Validation(format!("instance scale {} must be > 0", inst.scale)));
            }
        }
        Ok(())
    }
}

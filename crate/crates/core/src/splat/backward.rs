//! Analytic gradients of an image-space loss with respect to every Gaussian
//! attribute, by reverse-mode through compositing, the 2D Gaussian falloff,
//! the EWA projection and the quaternion normalization.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, Vector2, Vector4};
use rayon::prelude::*;

use crate::model::{quat_to_matrix, Camera, GaussianSet, Vec3};
use crate::raster::{projection_jacobian, ImageRGBA, RasterConfig, Rasterization};

/// Gradients with the same layout as [`GaussianSet`]. Rotation gradients are
/// with respect to the raw `(w, x, y, z)` components before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    pub rotations: Vec<Vector4<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vec3::zeros(); n],
            scales: vec![Vec3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            opacities: vec![0.0; n],
            colors: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacities.iter().all(|x| x.is_finite())
            && self.colors.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Loss gradient with respect to one splat's 2D parameters.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: Vector2<f64>,
    /// Conic entries `(a, b, c)` of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    color: Vec3,
    opacity: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean += o.mean;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    falloff: f64,
    transmittance: f64,
    clamped: bool,
}

/// Forward render then backward in one call.
pub fn render_backward(gs: &GaussianSet, cam: &Camera, grad_image: &ImageRGBA) -> GaussianGrads {
    let raster = Rasterization::new(gs, cam, &RasterConfig::default());
    backward(&raster, gs, cam, grad_image)
}

/// Backward pass reusing the sorted/binned state of a forward pass.
///
/// `grad_image` holds `dL/d(pixel channel)` for premultiplied RGB and alpha.
/// Gaussians culled in the forward pass receive zero gradients.
pub fn backward(raster: &Rasterization, gs: &GaussianSet, cam: &Camera, grad_image: &ImageRGBA) -> GaussianGrads {
    assert_eq!((grad_image.width, grad_image.height), (raster.width, raster.height));

    // Per-tile partial sums, merged in tile order so the result does not
    // depend on scheduling.
    let partials: Vec<Vec<SplatGrad>> = (0..raster.tiles.len())
        .into_par_iter()
        .map(|t| backward_tile(raster, t, grad_image))
        .collect();
    let mut splat_grads = vec![SplatGrad::default(); raster.splats.len()];
    for (t, partial) in partials.iter().enumerate() {
        for (slot, g) in partial.iter().enumerate() {
            splat_grads[raster.tiles[t][slot] as usize].add(g);
        }
    }

    let per_splat: Vec<_> = raster
        .splats
        .par_iter()
        .zip(splat_grads.par_iter())
        .with_min_len(256)
        .map(|(s, g)| (s.source, project_backward(gs, s.source, cam, g)))
        .collect();

    let mut out = GaussianGrads::zeros(gs.len());
    for (i, g) in per_splat {
        out.positions[i] = g.position;
        out.scales[i] = g.scale;
        out.rotations[i] = g.rotation;
        out.opacities[i] = g.opacity;
        out.colors[i] = g.color;
    }
    out
}

fn backward_tile(raster: &Rasterization, tile: usize, grad_image: &ImageRGBA) -> Vec<SplatGrad> {
    let list = &raster.tiles[tile];
    let mut grads = vec![SplatGrad::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let cfg = &raster.config;
    let (x0, x1, y0, y1) = raster.tile_bounds(tile);
    let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dpix = grad_image.get(x, y);
            if dpix == [0.0; 4] {
                continue;
            }
            let d_color = Vec3::new(dpix[0], dpix[1], dpix[2]);
            let d_alpha = dpix[3];

            // replay the forward compositing for this pixel
            contribs.clear();
            let mut t = 1.0;
            for (slot, &id) in list.iter().enumerate() {
                let Some(e) = raster.eval(id, x, y) else { continue };
                let alpha = e.alpha;
                contribs.push(Contribution {
                    slot,
                    alpha,
                    falloff: e.falloff,
                    transmittance: t,
                    clamped: e.clamped,
                });
                t *= 1.0 - alpha;
                if t < cfg.transmittance_min {
                    break;
                }
            }

            // back to front; `behind_*` accumulate the terms of later splats
            let mut behind_color = Vec3::zeros();
            let mut behind_alpha = 0.0;
            for c in contribs.iter().rev() {
                let s = &raster.splats[list[c.slot] as usize];
                let w = c.transmittance * c.alpha;
                let g = &mut grads[c.slot];
                g.color += d_color * w;

                let inv = 1.0 / (1.0 - c.alpha);
                let dl_dalpha = d_color.dot(&(s.color * c.transmittance - behind_color * inv))
                    + d_alpha * (c.transmittance - behind_alpha * inv);
                behind_color += s.color * w;
                behind_alpha += w;

                if c.clamped {
                    continue;
                }
                g.opacity += dl_dalpha * c.falloff;
                let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - s.mean;
                let k = dl_dalpha * c.alpha;
                g.mean += s.conic * d * k;
                g.conic[0] += -0.5 * k * d.x * d.x;
                g.conic[1] += -k * d.x * d.y;
                g.conic[2] += -0.5 * k * d.y * d.y;
            }
        }
    }
    grads
}

struct GaussianGrad {
    position: Vec3,
    scale: Vec3,
    rotation: Vector4<f64>,
    opacity: f64,
    color: Vec3,
}

/// Chain a splat's 2D gradient back to its source Gaussian.
fn project_backward(gs: &GaussianSet, i: usize, cam: &Camera, g: &SplatGrad) -> GaussianGrad {
    let p = gs.positions[i];
    let s = gs.scales[i];
    let q_raw = gs.rotations[i];
    let q_norm = q_raw.norm();
    let q = q_raw / q_norm;

    let m = cam.to_camera(&p);
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / m.z;
    let j = projection_jacobian(&m, cam);
    let w = cam.rotation;
    let t = j * w;
    let r = quat_to_matrix(&q);
    let mmat = r * Matrix3::from_diagonal(&s);
    let sigma = mmat * mmat.transpose();
    let cov = t * sigma * t.transpose();
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;

    // conic -> 2D covariance
    let g_conic = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov = -(conic * g_conic * conic);

    // 2D covariance -> T = J W and the 3D covariance
    let g_t: Matrix2x3<f64> = 2.0 * g_cov * t * sigma;
    let g_sigma: Matrix3<f64> = t.transpose() * g_cov * t;
    let g_j = g_t * w.transpose();

    // camera-space mean, via the projected mean and via J
    let mut g_m = Vec3::new(
        g.mean.x * fx * iz,
        g.mean.y * fy * iz,
        -g.mean.x * fx * m.x * iz * iz - g.mean.y * fy * m.y * iz * iz,
    );
    g_m.x += g_j[(0, 2)] * (-fx * iz * iz);
    g_m.y += g_j[(1, 2)] * (-fy * iz * iz);
    g_m.z += g_j[(0, 0)] * (-fx * iz * iz)
        + g_j[(0, 2)] * (2.0 * fx * m.x * iz * iz * iz)
        + g_j[(1, 1)] * (-fy * iz * iz)
        + g_j[(1, 2)] * (2.0 * fy * m.y * iz * iz * iz);
    let position = w.transpose() * g_m;

    // 3D covariance -> M = R S -> (scale, rotation)
    let g_mmat = 2.0 * g_sigma * mmat;
    let mut scale = Vec3::zeros();
    let mut g_r = Matrix3::zeros();
    for a in 0..3 {
        for k in 0..3 {
            scale[k] += g_mmat[(a, k)] * r[(a, k)];
            g_r[(a, k)] = g_mmat[(a, k)] * s[k];
        }
    }
    let g_qhat = rotation_matrix_vjp(&q, &g_r);
    let qv = Vector4::new(q.w, q.i, q.j, q.k);
    let rotation = (g_qhat - qv * qv.dot(&g_qhat)) / q_norm;

    GaussianGrad {
        position,
        scale,
        rotation,
        opacity: g.opacity,
        color: g.color,
    }
}

/// `sum_ik G_ik dR_ik/dq` for the matrix of [`quat_to_matrix`], as `(w, x, y, z)`.
fn rotation_matrix_vjp(q: &Quaternion<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)] + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(gw, gx, gy, gz)
}

use nalgebra::Quaternion;

use super::backward::GaussianGrads;
use crate::model::{GaussianSet, Vec3, SH_C0};

/// Lower opacity bound kept after every optimizer step (upper is `1 - 1e-4`).
pub const OPACITY_EPS: f64 = 1e-4;
pub const MIN_SCALE: f64 = 1e-7;

/// Per-group Adam step sizes, in the units of [`RawParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-5,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

/// Optimizable parameters in their unconstrained (pre-activation) form:
/// positions, log-scales, raw quaternions `(w, x, y, z)`, opacity logits and
/// degree-0 SH coefficients. Flat, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh_dc: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RawParams {
    pub fn from_set(gs: &GaussianSet) -> Self {
        let mut p = RawParams {
            positions: Vec::with_capacity(gs.len() * 3),
            log_scales: Vec::with_capacity(gs.len() * 3),
            rotations: Vec::with_capacity(gs.len() * 4),
            opacity_logits: Vec::with_capacity(gs.len()),
            sh_dc: Vec::with_capacity(gs.len() * 3),
        };
        for g in gs.iter() {
            p.positions.extend(g.position.iter());
            p.log_scales.extend(g.scale.iter().map(|s| s.ln()));
            p.rotations.extend([g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
            p.opacity_logits.push(logit(g.opacity));
            p.sh_dc.extend(g.color.iter().map(|c| (c - 0.5) / SH_C0));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn to_set(&self) -> GaussianSet {
        let mut gs = GaussianSet::with_capacity(self.len());
        for i in 0..self.len() {
            let v3 = |a: &[f64]| Vec3::new(a[3 * i], a[3 * i + 1], a[3 * i + 2]);
            let r = &self.rotations[4 * i..4 * i + 4];
            gs.positions.push(v3(&self.positions));
            gs.scales.push(v3(&self.log_scales).map(f64::exp));
            gs.rotations.push(Quaternion::new(r[0], r[1], r[2], r[3]));
            gs.opacities.push(sigmoid(self.opacity_logits[i]));
            gs.colors.push(v3(&self.sh_dc).map(|f| (0.5 + SH_C0 * f).max(0.0)));
        }
        gs
    }

    /// Chain activated-attribute gradients through the activations.
    pub fn raw_gradients(&self, grads: &GaussianGrads) -> RawParams {
        let n = self.len();
        let mut out = RawParams {
            positions: Vec::with_capacity(3 * n),
            log_scales: Vec::with_capacity(3 * n),
            rotations: Vec::with_capacity(4 * n),
            opacity_logits: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(3 * n),
        };
        for i in 0..n {
            out.positions.extend(grads.positions[i].iter());
            for k in 0..3 {
                out.log_scales.push(grads.scales[i][k] * self.log_scales[3 * i + k].exp());
                // color is clamped at zero; no gradient flows through the clamp
                let active = 0.5 + SH_C0 * self.sh_dc[3 * i + k] > 0.0;
                out.sh_dc.push(if active { grads.colors[i][k] * SH_C0 } else { 0.0 });
            }
            out.rotations.extend(grads.rotations[i].iter());
            let o = sigmoid(self.opacity_logits[i]);
            out.opacity_logits.push(grads.opacities[i] * o * (1.0 - o));
        }
        out
    }

    /// Keep every row a valid Gaussian: unit quaternion, opacity inside
    /// `(1e-4, 1 - 1e-4)`, scales `>= 1e-7`, color `>= 0`.
    pub fn project_valid(&mut self) {
        let lo = logit(OPACITY_EPS);
        let hi = logit(1.0 - OPACITY_EPS);
        for v in &mut self.opacity_logits {
            *v = v.clamp(lo, hi);
        }
        let min_log = MIN_SCALE.ln();
        for v in &mut self.log_scales {
            *v = v.max(min_log);
        }
        let min_dc = -0.5 / SH_C0;
        for v in &mut self.sh_dc {
            *v = v.max(min_dc);
        }
        for q in self.rotations.chunks_exact_mut(4) {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                q.iter_mut().for_each(|v| *v /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.positions, &self.log_scales, &self.rotations, &self.opacity_logits, &self.sh_dc]
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

/// First and second moments for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamGroup {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamGroup {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], step: u64, beta1: f64, beta2: f64, eps: f64) {
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Adam over the five parameter groups of [`RawParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub positions: AdamGroup,
    pub scales: AdamGroup,
    pub rotations: AdamGroup,
    pub opacities: AdamGroup,
    pub colors: AdamGroup,
}

impl OptimizerState {
    pub fn new(params: &RawParams, lr: &LearningRates) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            positions: AdamGroup::new(lr.position, params.positions.len()),
            scales: AdamGroup::new(lr.scale, params.log_scales.len()),
            rotations: AdamGroup::new(lr.rotation, params.rotations.len()),
            opacities: AdamGroup::new(lr.opacity, params.opacity_logits.len()),
            colors: AdamGroup::new(lr.color, params.sh_dc.len()),
        }
    }

    pub fn step(&mut self, params: &mut RawParams, grads: &RawParams) {
        self.step += 1;
        let (t, b1, b2, eps) = (self.step, self.beta1, self.beta2, self.eps);
        self.positions.step(&mut params.positions, &grads.positions, t, b1, b2, eps);
        self.scales.step(&mut params.log_scales, &grads.log_scales, t, b1, b2, eps);
        self.rotations.step(&mut params.rotations, &grads.rotations, t, b1, b2, eps);
        self.opacities.step(&mut params.opacity_logits, &grads.opacity_logits, t, b1, b2, eps);
        self.colors.step(&mut params.sh_dc, &grads.sh_dc, t, b1, b2, eps);
    }
}

//! AdamW with decoupled weight decay, global-norm clipping and a linear
//! warmup / linear decay learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-3 }
    }
}

/// Linear warmup over the first `warmup_frac` of steps, then linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f32,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f32, total_steps: usize, warmup_frac: f32) -> Self {
        let warmup_steps = libm::ceilf(warmup_frac.clamp(0.0, 1.0) * total_steps as f32) as usize;
        LinearSchedule { peak, total_steps, warmup_steps }
    }

    /// Learning rate for 0-based `step`.
    pub fn lr(&self, step: usize) -> f32 {
        if self.total_steps == 0 {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f32 / self.warmup_steps as f32;
        }
        let decay = (self.total_steps - self.warmup_steps).max(1) as f32;
        let left = self.total_steps.saturating_sub(step) as f32;
        self.peak * (left / decay).min(1.0)
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f32], max_norm: f32) -> f32 {
    let norm = libm::sqrtf(grad.iter().map(|g| g * g).sum::<f32>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n: usize) -> Self {
        AdamW { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One update of `params` with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f32) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != params.len() {
            return Err(Error::invalid("optimizer state size mismatch"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - libm::powf(c.beta1, self.t as f32);
        let bc2 = 1.0 - libm::powf(c.beta2, self.t as f32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (libm::sqrtf(vhat) + c.eps) + c.weight_decay * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let s = LinearSchedule::new(1.0, 100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(0) - 0.1).abs() < 1e-6);
        assert!((s.lr(9) - 1.0).abs() < 1e-6);
        assert!((s.lr(10) - 1.0).abs() < 1e-6);
        assert!((s.lr(55) - 0.5).abs() < 1e-6);
        assert!(s.lr(99) > 0.0 && s.lr(99) < 0.02);
        assert_eq!(s.lr(100), 0.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = [3.0f32, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
        let mut small = [0.1f32, 0.0];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, [0.1, 0.0]);
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut x = [3.0f32, -2.0];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() }, 2);
        for _ in 0..500 {
            let g = [2.0 * x[0], 2.0 * x[1]];
            opt.step(&mut x, &g, 0.05).unwrap();
        }
        assert!(x[0].abs() < 0.05 && x[1].abs() < 0.05, "{x:?}");
    }

    #[test]
    fn adamw_rejects_nan_gradient() {
        let mut x = [1.0f32];
        let mut opt = AdamW::new(AdamWConfig::default(), 1);
        assert!(matches!(opt.step(&mut x, &[f32::NAN], 0.1), Err(Error::Numeric(_))));
    }
}

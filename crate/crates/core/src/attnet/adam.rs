use super::Params;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one flat parameter block. `step` is the
/// 1-based index of this update.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            step: 0,
            cfg: AdamConfig::default(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
        for (name, g) in grads.tensors() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: name.into() });
            }
        }
        self.step += 1;
        let step = self.step;
        let cfg = self.cfg;
        let blocks = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
            adam_update(
                p.as_mut_slice(),
                g.as_slice(),
                m.as_mut_slice(),
                v.as_mut_slice(),
                step,
                lr,
                cfg,
            );
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ParamSet, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Bias-corrected Adam. Moment slots follow the model's visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new<M: ParamSet + ?Sized>(config: AdamConfig, model: &M) -> Self {
        let mut m = Vec::new();
        model.visit(&mut |p| m.push(Tensor::zeros(p.value.shape())));
        let v = m.clone();
        Adam { config, step: 0, m, v }
    }

    /// Applies one update from the accumulated grads, then zeroes them.
    pub fn step<M: ParamSet + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut bad = None;
        let mut slots = 0;
        model.visit(&mut |p: &Parameter| {
            slots += 1;
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(p.name.clone());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Divergence(name));
        }
        if slots != self.m.len() {
            return Err(Error::dimension("adam slots", &[slots], &[self.m.len()]));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut slot = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut(&mut |p: &mut Parameter| {
            let (m, v) = (ms[slot].data_mut(), vs[slot].data_mut());
            let grad = p.grad.data();
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            p.zero_grad();
            slot += 1;
        });
        Ok(())
    }
}

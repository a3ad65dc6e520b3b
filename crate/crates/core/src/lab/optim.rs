//! Adam with bias correction and cosine-annealed learning rates.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const ALPHA: f64 = 0.001;
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.99;
    pub const EPS: f64 = 1e-8;

    /// Zero moments shaped like `params`.
    pub fn new(params: &[&DenseTensor]) -> Self {
        AdamState {
            alpha: Self::ALPHA,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update with the configured `alpha`.
    pub fn step(&mut self, params: &mut [&mut DenseTensor], grads: &[DenseTensor]) -> Result<()> {
        self.step_with_lr(params, grads, self.alpha)
    }

    pub fn step_with_lr(&mut self, params: &mut [&mut DenseTensor], grads: &[DenseTensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam state tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::invalid(format!("parameter {k} changed shape")));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2` for `0 <= t <= T`.
pub fn cosine_lr(t: u64, total: u64, eta_max: f64, eta_min: f64) -> Result<f64> {
    if t > total {
        return Err(Error::invalid(format!("step {t} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(eta_max);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + phase.cos()))
}

//! Bias-corrected Adam over every parameter tensor of the network.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::NetworkParams;

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
            lr: 1e-3,
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
        if !ok {
            return Err(Error::Invalid(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn for_network(config: AdamConfig, params: &NetworkParams) -> Result<Self> {
        Self::new(config, &params.tensors())
    }

    /// One update of every tensor in `params`. Nothing is modified when any
    /// gradient is non-finite or mis-shaped.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("tensor {i}"));
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "adam expects {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            g.expect_shape(&format!("gradient of {}", name(i)), p.shape())?;
            p.expect_shape(&format!("adam moments of {}", name(i)), self.m[i].shape())?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", name(i))));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let k = self.step as f64;
        let bc1 = 1.0 - beta1.powf(k);
        let bc2 = 1.0 - beta2.powf(k);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to all three parameter sets.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    let names = params.tensor_names();
    state.update(&mut params.tensors_mut(), grads, &names)
}

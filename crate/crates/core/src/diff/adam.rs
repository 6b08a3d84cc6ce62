use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::program::ParameterVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            t: 0,
            config,
        }
    }

    /// Updates `params` in place.
    pub fn step(&mut self, params: &mut ParameterVector, grads: &ParameterVector) -> Result<()> {
        let n = self.first.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::shape(format!(
                "adam state has {n} slots, params {} and grads {}",
                params.len(),
                grads.len()
            )));
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss("non-finite gradient passed to adam".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    params: &ParameterVector,
    grads: &ParameterVector,
    state: &AdamState,
) -> Result<(ParameterVector, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.step(&mut params, grads)?;
    Ok((params, state))
}

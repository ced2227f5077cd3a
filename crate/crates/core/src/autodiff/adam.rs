//! Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use super::graph::Params;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Step size used by the training protocol.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// Applies one Adam update to every parameter in place.
pub fn adam_step(params: &mut Params, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len()
        || state.first_moment.len() != params.len()
        || state.second_moment.len() != params.len()
    {
        return Err(dim_err!(
            "{} parameters, {} gradients, {}/{} moment tensors",
            params.len(),
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        ));
    }
    for (i, p) in params.tensors().enumerate() {
        for other in [&grads[i], &state.first_moment[i], &state.second_moment[i]] {
            p.check_same_shape(other)?;
        }
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.tensors_mut().enumerate() {
        let precision = p.precision();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((theta, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta = precision.round(*theta - learning_rate * m_hat / (v_hat.sqrt() + epsilon));
        }
    }
    Ok(())
}

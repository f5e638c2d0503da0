use super::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam moment state for one list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with zero moments, matching `params` shapes.
    /// beta1/beta2/epsilon default to 0.9 / 0.999 / 1e-8.
    pub fn new(params: &[Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::contract(format!("adam learning rate must be > 0, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract("adam parameter/gradient count mismatch"));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::contract(format!(
                "adam shape mismatch on tensor {i}: {:?} vs {:?}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = grads[i].data();
        let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
        for k in 0..g.len() {
            let gk = g[k];
            m.data_mut()[k] = b1 * m.data()[k] + (1.0 - b1) * gk;
            v.data_mut()[k] = b2 * v.data()[k] + (1.0 - b2) * gk * gk;
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            params[i].data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine decay: `lr_end + 0.5 (lr_start - lr_end)(1 + cos(pi step/total))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_start: f64, lr_end: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::contract("cosine_lr requires total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::contract(format!(
            "cosine_lr step {step} beyond total {total_steps}"
        )));
    }
    if !(lr_start > lr_end && lr_end > 0.0) {
        return Err(Error::contract("cosine_lr requires lr_start > lr_end > 0"));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_end + 0.5 * (lr_start - lr_end) * (1.0 + phase.cos()))
}

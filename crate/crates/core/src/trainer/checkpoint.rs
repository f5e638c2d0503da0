//! Typed checkpoints over the binary tensor container: field parameters,
//! the frozen prior geometry, optimizer moments, and run metadata.

use crate::autodiff::{AdamState, TensorFile, Tensor};
use crate::fields::{FieldConfig, FieldParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub step: u64,
    pub total_steps: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub config_digest: String,
    pub fields: FieldConfig,
    pub adam_step: u64,
}

/// Full training state at one step.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub meta: CheckpointMeta,
    pub params: FieldParams,
    /// Frozen pretrained geometry providing d' during joint training.
    pub prior_geometry: Option<Vec<Tensor>>,
    /// Optimizer moments aligned with [`flatten_params`] order.
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
}

/// Canonical flat ordering of all trainable tensors:
/// geometry, color, background, log sharpness.
pub fn flatten_params(p: &FieldParams) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(p.geometry.len() + p.color.len() + p.background.len() + 1);
    out.extend(p.geometry.iter().cloned());
    out.extend(p.color.iter().cloned());
    out.extend(p.background.iter().cloned());
    out.push(p.log_sharpness.clone());
    out
}

/// Rebuild grouped parameters from the flat ordering.
pub fn unflatten_params(cfg: &FieldConfig, flat: &[Tensor]) -> Result<FieldParams> {
    let ng = cfg.geometry_spec().param_shapes().len();
    let nc = cfg.color_spec().param_shapes().len();
    let nb = cfg.background_spec().param_shapes().len();
    if flat.len() != ng + nc + nb + 1 {
        return Err(Error::contract(format!(
            "parameter count {} does not match architecture ({} expected)",
            flat.len(),
            ng + nc + nb + 1
        )));
    }
    Ok(FieldParams {
        geometry: flat[..ng].to_vec(),
        color: flat[ng..ng + nc].to_vec(),
        background: flat[ng + nc..ng + nc + nb].to_vec(),
        log_sharpness: flat[ng + nc + nb].clone(),
    })
}

impl ModelCheckpoint {
    pub fn fresh(meta: CheckpointMeta, params: FieldParams) -> ModelCheckpoint {
        let flat = flatten_params(&params);
        let state = AdamState::new(&flat);
        ModelCheckpoint {
            meta,
            params,
            prior_geometry: None,
            adam_m: state.m,
            adam_v: state.v,
        }
    }

    pub fn adam_state(&self) -> AdamState {
        AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            step: self.meta.adam_step,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = TensorFile::new(serde_json::to_value(&self.meta)?);
        let push_group = |file: &mut TensorFile, prefix: &str, tensors: &[Tensor]| {
            for (i, t) in tensors.iter().enumerate() {
                file.push(format!("{prefix}/{i:03}"), t.clone());
            }
        };
        push_group(&mut file, "geometry", &self.params.geometry);
        push_group(&mut file, "color", &self.params.color);
        push_group(&mut file, "background", &self.params.background);
        file.push("log_sharpness", self.params.log_sharpness.clone());
        if let Some(prior) = &self.prior_geometry {
            push_group(&mut file, "prior_geometry", prior);
        }
        push_group(&mut file, "adam_m", &self.adam_m);
        push_group(&mut file, "adam_v", &self.adam_v);
        file.save(path)
    }

    pub fn load(path: &Path) -> Result<ModelCheckpoint> {
        let file = TensorFile::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(file.meta.clone())?;
        let geometry = file.group("geometry");
        let color = file.group("color");
        let background = file.group("background");
        let log_sharpness = file
            .get("log_sharpness")
            .ok_or_else(|| Error::Format { offset: 0, msg: "missing log_sharpness".into() })?
            .clone();
        let prior = file.group("prior_geometry");
        let params = FieldParams { geometry, color, background, log_sharpness };

        // Shape sanity against the stored architecture.
        let expect = meta.fields.geometry_spec().param_shapes();
        if params.geometry.len() != expect.len() {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "geometry group has {} tensors, architecture wants {}",
                    params.geometry.len(),
                    expect.len()
                ),
            });
        }
        for (t, &shape) in params.geometry.iter().zip(&expect) {
            if t.shape() != shape {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("geometry tensor {:?} vs spec {:?}", t.shape(), shape),
                });
            }
        }

        Ok(ModelCheckpoint {
            meta,
            params,
            prior_geometry: (!prior.is_empty()).then_some(prior),
            adam_m: file.group("adam_m"),
            adam_v: file.group("adam_v"),
        })
    }
}

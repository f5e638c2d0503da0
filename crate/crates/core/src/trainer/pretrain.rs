//! Stage one: supervise the geometry network on signed distances sampled
//! from the prior meshes, with an Eikonal term on random points. Color and
//! background parameters are left untouched.

use super::checkpoint::{CheckpointMeta, ModelCheckpoint};
use super::config::TrainConfig;
use crate::autodiff::{adam_step, cosine_lr, AdamState, Tape, Tensor, Var};
use crate::fields::{points_tensor, FieldParams, GeometryField};
use crate::geom::{Aabb, Vec3};
use crate::losses::{eikonal_loss, pretrain_nll};
use crate::mesh::{sample_training_points, SceneDistanceField, TriangleMesh};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of a pretraining run.
pub struct PretrainReport {
    pub checkpoint: ModelCheckpoint,
    /// Mean |d - d'| on held-out samples after the final step.
    pub holdout_mae: f64,
    pub final_loss: f64,
}

/// Fraction of the sample pool reserved for the held-out check.
const HOLDOUT_FRACTION: f64 = 0.05;

pub fn pretrain_geometry(config: &TrainConfig, priors: &[TriangleMesh]) -> Result<PretrainReport> {
    config.validate()?;
    let field = SceneDistanceField::new(priors)?;
    let bounds = pretrain_bounds(priors)?;

    let pool = sample_training_points(
        &field,
        config.pretrain_pool,
        (config.pretrain_sigma_near, config.pretrain_sigma_far),
        config.pretrain_uniform_fraction,
        &bounds,
        config.seed ^ 0x5eed_0001,
    )?;
    let holdout_count = ((pool.len() as f64) * HOLDOUT_FRACTION) as usize;
    // Interleaved holdout: every k-th sample, to cover all provenances.
    let stride = (pool.len() / holdout_count.max(1)).max(1);
    let mut train_idx = Vec::with_capacity(pool.len());
    let mut holdout_idx = Vec::with_capacity(holdout_count + 1);
    for i in 0..pool.len() {
        if i % stride == 0 {
            holdout_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let geometry = GeometryField::new(&config.fields);
    let mut params = FieldParams::init(&config.fields, config.seed);
    let mut adam = AdamState::new(&params.geometry);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);

    let mut final_loss = f64::NAN;
    for step in 0..config.pretrain_steps {
        let lr = cosine_lr(
            step,
            config.pretrain_steps,
            config.pretrain_lr_start,
            config.pretrain_lr_end,
        )?;

        // Batch of supervised samples.
        let batch: Vec<usize> = (0..config.pretrain_batch.min(train_idx.len()))
            .map(|_| train_idx[rng.gen_range(0..train_idx.len())])
            .collect();
        let pts: Vec<Vec3> = batch.iter().map(|&i| pool.points[i]).collect();
        let gt: Vec<f64> = batch.iter().map(|&i| pool.distances[i]).collect();

        // Random points for the Eikonal term.
        let eik_pts: Vec<Vec3> = (0..config.pretrain_eikonal_points)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(bounds.min[0]..bounds.max[0]),
                    rng.gen_range(bounds.min[1]..bounds.max[1]),
                    rng.gen_range(bounds.min[2]..bounds.max[2]),
                )
            })
            .collect();

        let mut tape = Tape::new();
        let vars: Vec<Var> = params.geometry.iter().map(|t| tape.param(t.clone())).collect();
        let pts_var = tape.constant(points_tensor(&pts));
        let eval = geometry.eval(&mut tape, &vars, pts_var, false)?;
        let nll = pretrain_nll(&mut tape, eval.d, eval.s_noise, &Tensor::column(&gt))?;

        let eik_var = tape.constant(points_tensor(&eik_pts));
        let eik_eval = geometry.eval(&mut tape, &vars, eik_var, true)?;
        let eik = eikonal_loss(&mut tape, eik_eval.gradient.expect("gradient requested"))?;

        let scaled_eik = tape.scale(eik, config.weights.eikonal);
        let total = tape.add(nll, scaled_eik);
        let loss_val = tape.value(total).item();
        if !loss_val.is_finite() {
            return Err(Error::numeric(format!(
                "pretraining diverged at step {step}: loss {loss_val} \
                 (nll {}, eikonal {})",
                tape.value(nll).item(),
                tape.value(eik).item()
            )));
        }
        final_loss = loss_val;

        let grads = tape.backward(total)?;
        let grad_tensors: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
        adam_step(&mut adam, &mut params.geometry, &grad_tensors, lr)?;

        if step % 500 == 0 || step + 1 == config.pretrain_steps {
            eprintln!("[pretrain] step {step:>6} lr {lr:.3e} loss {loss_val:.5}");
        }
    }

    // Held-out accuracy.
    let holdout_pts: Vec<Vec3> = holdout_idx.iter().map(|&i| pool.points[i]).collect();
    let holdout_gt: Vec<f64> = holdout_idx.iter().map(|&i| pool.distances[i]).collect();
    let (d_pred, _, _) = geometry.eval_f64(&params.geometry, &holdout_pts, false)?;
    let holdout_mae = d_pred
        .iter()
        .zip(&holdout_gt)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / d_pred.len().max(1) as f64;
    eprintln!("[pretrain] held-out mean |d - d'| = {holdout_mae:.5}");

    let meta = CheckpointMeta {
        stage: "pretrain".into(),
        step: config.pretrain_steps,
        total_steps: config.pretrain_steps,
        lr_start: config.pretrain_lr_start,
        lr_end: config.pretrain_lr_end,
        config_digest: config.digest(),
        fields: config.fields.clone(),
        adam_step: adam.step,
    };
    let mut checkpoint = ModelCheckpoint::fresh(meta, params);
    // Keep the pretraining moments for the geometry group only; the fresh
    // zero moments for color/background are already in place.
    for (slot, m) in checkpoint.adam_m.iter_mut().zip(adam.m) {
        *slot = m;
    }
    for (slot, v) in checkpoint.adam_v.iter_mut().zip(adam.v) {
        *slot = v;
    }
    checkpoint.meta.adam_step = 0; // joint stage restarts bias correction

    Ok(PretrainReport { checkpoint, holdout_mae, final_loss })
}

/// Sampling bounds: prior boxes inflated generously so uniform samples see
/// free space around the objects.
pub fn pretrain_bounds(priors: &[TriangleMesh]) -> Result<Aabb> {
    let mut union: Option<Aabb> = None;
    for m in priors {
        let b = crate::mesh::bounding_box(m, 0.0)?;
        union = Some(match union {
            Some(u) => u.union(&b),
            None => b,
        });
    }
    Ok(union
        .ok_or_else(|| Error::contract("no prior meshes"))?
        .inflated(0.4))
}

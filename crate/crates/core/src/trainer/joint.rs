//! Stage two: joint photometric optimization of all fields. Each step
//! draws a ray batch across training views (a quarter of it as 2x2
//! consistency patches), renders it differentiably, and applies one Adam
//! update from the weighted objective.

use super::checkpoint::{flatten_params, unflatten_params, CheckpointMeta, ModelCheckpoint};
use super::config::{PriorSource, TrainConfig};
use crate::autodiff::{adam_step, cosine_lr, Tape, Tensor};
use crate::fields::{points_tensor, FieldParams, GeometryField};
use crate::losses::{
    eikonal_loss, ray_consistency_loss, ray_density, reconstruction_loss, saturation_loss,
    sdf_consistency_loss, total_loss, LossBreakdown, LossComponents,
};
use crate::mesh::{DepthMap, SceneDistanceField};
use crate::renderer::{
    attach_params, query_world_sdf, sample_ray, shade_batch, FieldsBundle, RayJob, RenderSettings,
    SceneRenderer,
};
use crate::scene::Scene;
use crate::geom::{ray_from_pixel, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Source of the consistency target d'.
enum PriorProvider {
    Frozen(GeometryField, Vec<Tensor>),
    Mesh(Box<SceneDistanceField>),
    Disabled,
}

impl PriorProvider {
    fn query(&self, pts: &[Vec3]) -> Result<Option<Vec<f64>>> {
        match self {
            PriorProvider::Frozen(field, params) => {
                let (d, _, _) = field.eval_f64(params, pts, false)?;
                Ok(Some(d))
            }
            PriorProvider::Mesh(field) => {
                let d = pts
                    .iter()
                    .map(|&p| field.signed(p))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Some(d))
            }
            PriorProvider::Disabled => Ok(None),
        }
    }
}

pub struct JointReport {
    pub checkpoint: ModelCheckpoint,
    pub last_breakdown: Option<LossBreakdown>,
    /// Smoothed total loss early/late, for the decrease check.
    pub loss_history: Vec<f64>,
}

struct PatchPlan {
    corner_jobs: [usize; 4],
    sub_job: usize,
    weights: [f64; 4],
    interp_gt: [f64; 3],
    nearest_corner: usize,
}

fn mix_seed(seed: u64, step: u64, salt: u64) -> u64 {
    let mut h = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= step.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h.wrapping_mul(0xff51_afd7_ed55_8ccd)
}

pub fn train_joint(
    config: &TrainConfig,
    scene: &Scene,
    init: ModelCheckpoint,
) -> Result<JointReport> {
    config.validate()?;
    let n_train = config.views.unwrap_or(scene.cameras.len());
    let (train_views, test_views) = scene.split_views(n_train)?;
    if scene.images.is_empty() {
        return Err(Error::contract("joint training needs calibrated images"));
    }

    let fields = FieldsBundle::new(&config.fields);
    let mut params = init.params.clone();
    let mut adam = init.adam_state();

    let prior = if config.no_prior {
        PriorProvider::Disabled
    } else {
        match config.prior_source {
            PriorSource::FrozenNetwork => {
                let frozen = init
                    .prior_geometry
                    .clone()
                    .unwrap_or_else(|| init.params.geometry.clone());
                PriorProvider::Frozen(GeometryField::new(&config.fields), frozen)
            }
            PriorSource::MeshQuery => {
                PriorProvider::Mesh(Box::new(SceneDistanceField::new(&scene.priors)?))
            }
        }
    };
    let mut weights = config.weights;
    if config.no_prior {
        weights.sdf = 0.0;
    }
    if config.no_ray_loss {
        weights.ray = 0.0;
    }
    if config.no_saturation {
        weights.saturation = 0.0;
    }

    // Per-view prior depth maps at native resolution (the f1 feature).
    let depth_maps: Vec<DepthMap> = scene
        .cameras
        .iter()
        .map(|cam| {
            crate::mesh::rasterize_prior_depth(&scene.priors, cam, (cam.width, cam.height))
        })
        .collect::<Result<Vec<_>>>()?;

    let settings = RenderSettings {
        fallback_color: config.fallback_color,
        normalize_by_weight: config.normalize_composite,
    };
    let budget = config.budget.into();

    std::fs::create_dir_all(config.out_dir.join("ckpt"))?;
    std::fs::create_dir_all(config.out_dir.join("renders"))?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(
        config.out_dir.join("losses.csv"),
    )?);
    writeln!(csv, "step,lr,total,reconstruction,eikonal,sdf,ray,saturation")?;

    let n_patches = ((config.rays_per_batch as f64 * config.patch_fraction / 4.0).round() as usize)
        .min(config.rays_per_batch / 4);
    let n_singles = config.rays_per_batch - 4 * n_patches;

    let mut loss_history = Vec::with_capacity(config.joint_steps as usize);
    let mut last_breakdown = None;

    for step in 0..config.joint_steps {
        let lr = cosine_lr(step, config.joint_steps, config.lr_start, config.lr_end)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, step, 0xA11));

        // --- Batch assembly -------------------------------------------
        let mut jobs: Vec<RayJob> = Vec::with_capacity(config.rays_per_batch + n_patches);
        let mut gt_rows: Vec<[f64; 3]> = Vec::new();
        let mut gt_job_ids: Vec<usize> = Vec::new();
        let mut patches: Vec<PatchPlan> = Vec::with_capacity(n_patches);

        let push_pixel_ray =
            |jobs: &mut Vec<RayJob>,
             rng: &mut ChaCha8Rng,
             view: usize,
             px: u32,
             py: u32,
             offset: (f64, f64)|
             -> Result<usize> {
                let cam = &scene.cameras[view];
                let (u, v) = (px as f64 + offset.0, py as f64 + offset.1);
                let ray = ray_from_pixel(cam, (u, v), scene.near, scene.far)?;
                let geometry = &fields.geometry;
                let volume = &scene.volume;
                let gp = &params;
                let mut sdf =
                    |pts: &[Vec3]| -> Vec<f64> { query_world_sdf(geometry, gp, volume, pts) };
                let samples = sample_ray(&ray, volume, &budget, &mut sdf, rng);
                let f1 = depth_maps[view].normalized_feature(px, py, scene.near, scene.far);
                jobs.push(RayJob { ray, samples, f1 });
                Ok(jobs.len() - 1)
            };

        for _ in 0..n_singles {
            let view = train_views[rng.gen_range(0..train_views.len())];
            let cam = &scene.cameras[view];
            let px = rng.gen_range(0..cam.width);
            let py = rng.gen_range(0..cam.height);
            let id = push_pixel_ray(&mut jobs, &mut rng, view, px, py, (0.5, 0.5))?;
            gt_rows.push(scene.images[view][(py * cam.width + px) as usize]);
            gt_job_ids.push(id);
        }

        for _ in 0..n_patches {
            let view = train_views[rng.gen_range(0..train_views.len())];
            let cam = &scene.cameras[view];
            let px = rng.gen_range(0..cam.width - 1);
            let py = rng.gen_range(0..cam.height - 1);
            let mut corner_jobs = [0usize; 4];
            let mut corner_gt = [[0.0; 3]; 4];
            for (k, (dx, dy)) in [(0, 0), (1, 0), (0, 1), (1, 1)].iter().enumerate() {
                let id =
                    push_pixel_ray(&mut jobs, &mut rng, view, px + dx, py + dy, (0.5, 0.5))?;
                corner_jobs[k] = id;
                corner_gt[k] =
                    scene.images[view][((py + dy) * cam.width + (px + dx)) as usize];
                gt_rows.push(corner_gt[k]);
                gt_job_ids.push(id);
            }
            // One random bilinear sub-ray inside the patch.
            let du: f64 = rng.gen();
            let dv: f64 = rng.gen();
            let sub_job =
                push_pixel_ray(&mut jobs, &mut rng, view, px, py, (0.5 + du, 0.5 + dv))?;
            let w = [
                (1.0 - du) * (1.0 - dv),
                du * (1.0 - dv),
                (1.0 - du) * dv,
                du * dv,
            ];
            let mut interp = [0.0; 3];
            for k in 0..4 {
                for c in 0..3 {
                    interp[c] += w[k] * corner_gt[k][c];
                }
            }
            let nearest = (0..4).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            patches.push(PatchPlan {
                corner_jobs,
                sub_job,
                weights: w,
                interp_gt: interp,
                nearest_corner: nearest,
            });
        }

        // --- Differentiable rendering ---------------------------------
        let mut tape = Tape::new();
        let model = attach_params(&mut tape, &params, true);
        let batch = shade_batch(&mut tape, &fields, &model, &scene.volume, &jobs, &settings)?;

        // --- Losses ----------------------------------------------------
        let pred = tape.gather_rows(batch.colors, &gt_job_ids);
        let gt_tensor = Tensor::from_vec(
            gt_rows.len(),
            3,
            gt_rows.iter().flatten().copied().collect(),
        );
        let rec = reconstruction_loss(&mut tape, pred, &gt_tensor)?;

        let eikonal = match &batch.fg {
            Some(fg) => Some(eikonal_loss(&mut tape, fg.gradient)?),
            None => None,
        };

        let sat = if weights.saturation > 0.0 {
            Some(saturation_loss(&mut tape, pred, &gt_tensor)?)
        } else {
            None
        };

        let sdf = if weights.sdf > 0.0 {
            match (&batch.fg, &prior) {
                (Some(fg), provider) => {
                    // Background samples join the consistency pool with
                    // their own geometry evaluation (values + uncertainty
                    // only; no spatial gradient needed).
                    let mut bg_pts = Vec::new();
                    for job in &jobs {
                        for (i, &is_fg) in job.samples.foreground.iter().enumerate() {
                            if !is_fg {
                                bg_pts.push(job.samples.points[i]);
                            }
                        }
                    }
                    let (d_all, s_all, inside, pts_all) = if bg_pts.is_empty() {
                        (fg.d, fg.s_noise, fg.inside.clone(), fg.points.clone())
                    } else {
                        let bg_var = tape.constant(points_tensor(&bg_pts));
                        let bg_eval =
                            fields.geometry.eval(&mut tape, &model.geometry, bg_var, false)?;
                        let d = tape.concat_rows(&[fg.d, bg_eval.d]);
                        let s = tape.concat_rows(&[fg.s_noise, bg_eval.s_noise]);
                        let mut inside = fg.inside.clone();
                        inside.extend(std::iter::repeat(false).take(bg_pts.len()));
                        let mut pts = fg.points.clone();
                        pts.extend_from_slice(&bg_pts);
                        (d, s, inside, pts)
                    };
                    match provider.query(&pts_all)? {
                        Some(d_prior) => Some(sdf_consistency_loss(
                            &mut tape,
                            d_all,
                            s_all,
                            &Tensor::column(&d_prior),
                            &inside,
                            &config.sdf_loss,
                        )?),
                        None => None,
                    }
                }
                _ => None,
            }
        } else {
            None
        };

        let ray = if weights.ray > 0.0 && !patches.is_empty() {
            let mut terms = Vec::new();
            for plan in &patches {
                let sub = &batch.rays[plan.sub_job];
                let corner = &batch.rays[plan.corner_jobs[plan.nearest_corner]];
                let corner_alphas = tape.value(corner.alphas).data().to_vec();
                let sub_len = tape.value(sub.alphas).rows();
                if corner_alphas.len() != sub_len {
                    // Budget reallocation made the densities incomparable
                    // (one ray missed the boxes); skip the patch.
                    continue;
                }
                let density = ray_density(&corner_alphas);
                let _ = plan.weights;
                let term = ray_consistency_loss(
                    &mut tape,
                    sub.color,
                    plan.interp_gt,
                    &density,
                    sub.alphas,
                )?;
                terms.push(term);
            }
            if terms.is_empty() {
                None
            } else {
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = tape.add(acc, t);
                }
                Some(tape.scale(acc, 1.0 / terms.len() as f64))
            }
        } else {
            None
        };

        let parts = LossComponents {
            reconstruction: rec,
            eikonal,
            sdf,
            ray,
            saturation: sat,
        };
        let (total, breakdown) = total_loss(&mut tape, &parts, &weights)?;
        if !breakdown.total.is_finite() {
            return Err(Error::numeric(format!(
                "joint training diverged at step {step}"
            )));
        }

        // --- Update ----------------------------------------------------
        let grads = tape.backward(total)?;
        let mut flat = flatten_params(&params);
        let mut grad_list = Vec::with_capacity(flat.len());
        for &v in model
            .geometry
            .iter()
            .chain(&model.color)
            .chain(&model.background)
            .chain(std::iter::once(&model.log_sharpness))
        {
            grad_list.push(grads.wrt(&tape, v));
        }
        adam_step(&mut adam, &mut flat, &grad_list, lr)?;
        params = unflatten_params(&config.fields, &flat)?;

        writeln!(
            csv,
            "{step},{lr:.6e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            breakdown.total,
            breakdown.reconstruction,
            breakdown.eikonal,
            breakdown.sdf,
            breakdown.ray,
            breakdown.saturation
        )?;
        loss_history.push(breakdown.total);
        last_breakdown = Some(breakdown);

        if step % 100 == 0 || step + 1 == config.joint_steps {
            eprintln!(
                "[joint] step {step:>6} lr {lr:.3e} total {:.5} rec {:.5} s {:.2}",
                breakdown.total,
                breakdown.reconstruction,
                params.sharpness()
            );
        }

        let at_end = step + 1 == config.joint_steps;
        if config.validation_interval > 0
            && (step + 1) % config.validation_interval == 0
            && !test_views.is_empty()
        {
            validate_view(
                config, scene, &fields, &params, &settings, test_views[0], step + 1,
            )?;
        }
        if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0)
            || at_end
        {
            let ckpt = assemble_checkpoint(config, &params, &adam, &prior, &init, step + 1);
            ckpt.save(&config.out_dir.join("ckpt").join(format!("step_{:06}.ckpt", step + 1)))?;
            ckpt.save(&config.out_dir.join("ckpt").join("latest.ckpt"))?;
        }
    }
    csv.flush()?;

    let checkpoint = assemble_checkpoint(config, &params, &adam, &prior, &init, config.joint_steps);
    if config.joint_steps > 0 {
        checkpoint.save(&config.out_dir.join("ckpt").join("latest.ckpt"))?;
    }
    Ok(JointReport { checkpoint, last_breakdown, loss_history })
}

fn assemble_checkpoint(
    config: &TrainConfig,
    params: &FieldParams,
    adam: &crate::autodiff::AdamState,
    prior: &PriorProvider,
    init: &ModelCheckpoint,
    step: u64,
) -> ModelCheckpoint {
    let prior_geometry = match prior {
        PriorProvider::Frozen(_, tensors) => Some(tensors.clone()),
        PriorProvider::Mesh(_) => init.prior_geometry.clone(),
        PriorProvider::Disabled => None,
    };
    ModelCheckpoint {
        meta: CheckpointMeta {
            stage: "joint".into(),
            step,
            total_steps: config.joint_steps,
            lr_start: config.lr_start,
            lr_end: config.lr_end,
            config_digest: config.digest(),
            fields: config.fields.clone(),
            adam_step: adam.step,
        },
        params: params.clone(),
        prior_geometry,
        adam_m: adam.m.clone(),
        adam_v: adam.v.clone(),
    }
}

fn validate_view(
    config: &TrainConfig,
    scene: &Scene,
    fields: &FieldsBundle,
    params: &FieldParams,
    settings: &RenderSettings,
    view: usize,
    step: u64,
) -> Result<()> {
    let cam = &scene.cameras[view];
    let (qw, qh) = ((cam.width / 4).max(8), (cam.height / 4).max(8));
    let renderer = SceneRenderer {
        fields,
        params,
        volume: &scene.volume,
        priors: &scene.priors,
        near: scene.near,
        far: scene.far,
        budget: config.budget.into(),
        settings: settings.clone(),
    };
    let images = renderer.render(cam, (qw, qh), config.seed ^ step)?;
    let gt = downsample_rgb(&scene.images[view], cam.width, cam.height, qw, qh);
    let pred_flat: Vec<f64> = images.rgb.iter().flatten().copied().collect();
    let gt_flat: Vec<f64> = gt.iter().flatten().copied().collect();
    let psnr = crate::eval::psnr(&pred_flat, &gt_flat, 1.0)?;
    eprintln!("[joint] validation view {} at step {step}: psnr {psnr:.2} dB", cam.id);
    crate::renderer::save_rgb_png(
        &images,
        &config.out_dir.join("renders").join(format!("val_{step:06}.png")),
    )?;
    Ok(())
}

/// Box-filter downsample of an rgb buffer.
pub fn downsample_rgb(
    src: &[[f64; 3]],
    w: u32,
    h: u32,
    out_w: u32,
    out_h: u32,
) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; (out_w * out_h) as usize];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let x0 = (ox * w / out_w) as usize;
            let x1 = (((ox + 1) * w).div_ceil(out_w) as usize).min(w as usize);
            let y0 = (oy * h / out_h) as usize;
            let y1 = (((oy + 1) * h).div_ceil(out_h) as usize).min(h as usize);
            let mut acc = [0.0; 3];
            let mut count = 0.0_f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    for c in 0..3 {
                        acc[c] += src[y * w as usize + x][c];
                    }
                    count += 1.0;
                }
            }
            for c in 0..3 {
                acc[c] /= count.max(1.0);
            }
            out[(oy * out_w + ox) as usize] = acc;
        }
    }
    out
}

/// Load a run checkpoint, preferring `latest.ckpt` under `run_dir/ckpt`.
pub fn latest_checkpoint(run_dir: &Path) -> Result<ModelCheckpoint> {
    let path = run_dir.join("ckpt").join("latest.ckpt");
    if !path.exists() {
        return Err(Error::Scene(format!(
            "no checkpoint at {}; run pretrain/train first",
            path.display()
        )));
    }
    ModelCheckpoint::load(&path)
}

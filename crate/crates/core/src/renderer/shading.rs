//! Batched shading and compositing on the tape.
//!
//! Every sample is shaded by exactly one model, selected by its box
//! indicator: foreground opacity comes from consecutive SDF pairs through
//! the logistic CDF, background opacity from density times segment length.
//! Per-ray transmittances, weights and the weight-normalized color are
//! recorded as tape nodes so losses differentiate end to end.

use super::sampling::SampleSet;
use super::volume::ForegroundVolume;
use crate::autodiff::{Tape, Tensor, Var};
use crate::fields::{
    background_alpha_var, neus_alpha_var, points_tensor, BackgroundField, ColorField, FieldConfig,
    FieldParams, GeometryField, SharpnessParam,
};
use crate::geom::{Ray, Vec3};
use crate::{Error, Result};

/// Compositing options.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    /// Color returned for rays whose weights sum to zero.
    pub fallback_color: [f64; 3],
    /// Divide the accumulated color by the weight sum (the normalized
    /// form); disable to fall back to the plain accumulation for ablation.
    pub normalize_by_weight: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings { fallback_color: [0.0; 3], normalize_by_weight: true }
    }
}

/// Field definitions bundled for rendering.
pub struct FieldsBundle {
    pub cfg: FieldConfig,
    pub geometry: GeometryField,
    pub color: ColorField,
    pub background: BackgroundField,
}

impl FieldsBundle {
    pub fn new(cfg: &FieldConfig) -> FieldsBundle {
        FieldsBundle {
            cfg: cfg.clone(),
            geometry: GeometryField::new(cfg),
            color: ColorField::new(cfg),
            background: BackgroundField::new(cfg),
        }
    }
}

/// Parameter tensors attached to one tape.
pub struct AttachedModel {
    pub geometry: Vec<Var>,
    pub color: Vec<Var>,
    pub background: Vec<Var>,
    pub log_sharpness: Var,
    pub sharpness: Var,
}

/// Attach all model parameters; `trainable` controls gradient flow.
pub fn attach_params(tape: &mut Tape, params: &FieldParams, trainable: bool) -> AttachedModel {
    let mut leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
    let geometry = params.geometry.iter().map(&mut leaf).collect();
    let color = params.color.iter().map(&mut leaf).collect();
    let background = params.background.iter().map(&mut leaf).collect();
    let log_sharpness = leaf(&params.log_sharpness);
    let sharpness = tape.exp(log_sharpness);
    AttachedModel { geometry, color, background, log_sharpness, sharpness }
}

/// One ray to shade: its samples plus the per-ray prior depth feature.
pub struct RayJob {
    pub ray: Ray,
    pub samples: SampleSet,
    pub f1: f64,
}

/// Per-ray tape nodes and diagnostics produced by shading.
pub struct ShadedRay {
    /// Per-sample opacity `[k x 1]` in merged sample order.
    pub alphas: Var,
    /// Unnormalized weights `T_i alpha_i`, `[k x 1]`.
    pub weights: Var,
    /// `sum(W)`, `1 x 1`.
    pub weight_sum: Var,
    /// Final color `[1 x 3]` (normalized or fallback).
    pub color: Var,
    /// Plain accumulated color without weight normalization, `[1 x 3]`.
    pub unnormalized_color: Var,
    pub zero_opacity: bool,
    /// Transmittance values per sample (diagnostic).
    pub transmittance: Vec<f64>,
    /// Weight-average depth; falls back to `far` on zero opacity.
    pub expected_depth: f64,
    /// Weight-average world SDF gradient, unnormalized (zero if no
    /// foreground contribution).
    pub normal: Vec3,
}

pub struct ShadedBatch {
    pub rays: Vec<ShadedRay>,
    /// Stacked per-ray colors `[n x 3]`.
    pub colors: Var,
    /// Foreground geometry nodes for loss terms (empty tensors when the
    /// batch has no foreground samples).
    pub fg: Option<ForegroundNodes>,
}

/// Geometry network outputs at every foreground sample of the batch.
pub struct ForegroundNodes {
    pub d: Var,
    pub s_noise: Var,
    pub gradient: Var,
    /// World positions of the foreground samples.
    pub points: Vec<Vec3>,
    /// Whether each foreground sample sits inside the box union (always
    /// true by construction; kept for loss assembly symmetry).
    pub inside: Vec<bool>,
}

struct SampleRouting {
    // Canonical-frame foreground points with per-point edit scale.
    fg_points: Vec<Vec3>,
    fg_world_points: Vec<Vec3>,
    fg_dirs: Vec<Vec3>,
    fg_scale: Vec<f64>,
    fg_f1: Vec<f64>,
    fg_rotations: Vec<Option<crate::geom::Mat3>>,
    bg_points: Vec<Vec3>,
    bg_dirs: Vec<Vec3>,
    bg_seg: Vec<f64>,
    // Per ray, per merged sample: index into the stacked (fg then bg)
    // tensor rows.
    ray_sample_rows: Vec<Vec<usize>>,
    // NeuS pairs: (first, second) indices into the fg tensors, plus the
    // fg row the alpha lands on.
    pair_first: Vec<usize>,
    pair_second: Vec<usize>,
}

fn route_samples(jobs: &[RayJob], volume: &ForegroundVolume) -> SampleRouting {
    let mut r = SampleRouting {
        fg_points: Vec::new(),
        fg_world_points: Vec::new(),
        fg_dirs: Vec::new(),
        fg_scale: Vec::new(),
        fg_f1: Vec::new(),
        fg_rotations: Vec::new(),
        bg_points: Vec::new(),
        bg_dirs: Vec::new(),
        bg_seg: Vec::new(),
        ray_sample_rows: Vec::with_capacity(jobs.len()),
        pair_first: Vec::new(),
        pair_second: Vec::new(),
    };
    // First pass: global row ids. Foreground rows come first.
    let mut fg_rows_per_ray: Vec<Vec<Option<usize>>> = Vec::with_capacity(jobs.len());
    for job in jobs {
        let mut rows = Vec::with_capacity(job.samples.len());
        for (i, &is_fg) in job.samples.foreground.iter().enumerate() {
            if is_fg {
                let p = job.samples.points[i];
                let (canon, scale, rot) = match volume.containing_entry(p) {
                    Some(e) => {
                        let (c, s) = volume.canonical_point(e, p);
                        let rot = match &volume.entries()[e].edit {
                            super::volume::Edit::Transform(tf) => Some(tf.rotation_m()),
                            _ => None,
                        };
                        (c, s, rot)
                    }
                    None => (p, 1.0, None),
                };
                r.fg_points.push(canon);
                r.fg_world_points.push(p);
                r.fg_dirs.push(job.ray.direction);
                r.fg_scale.push(scale);
                r.fg_f1.push(job.f1);
                r.fg_rotations.push(rot);
                rows.push(Some(r.fg_points.len() - 1));
            } else {
                rows.push(None);
            }
        }
        fg_rows_per_ray.push(rows);
    }
    let n_fg = r.fg_points.len();
    for (job, fg_rows) in jobs.iter().zip(&fg_rows_per_ray) {
        let mut merged = Vec::with_capacity(job.samples.len());
        for (i, row) in fg_rows.iter().enumerate() {
            match row {
                Some(fg_idx) => {
                    merged.push(*fg_idx);
                    // Chain rule for pairs: consecutive merged samples that
                    // are both foreground; a background sample in between
                    // breaks the chain.
                    if let Some(Some(next)) = fg_rows.get(i + 1) {
                        r.pair_first.push(*fg_idx);
                        r.pair_second.push(*next);
                    }
                }
                None => {
                    r.bg_points.push(job.samples.points[i]);
                    r.bg_dirs.push(job.ray.direction);
                    r.bg_seg.push(job.samples.seg_len[i]);
                    merged.push(n_fg + r.bg_points.len() - 1);
                }
            }
        }
        r.ray_sample_rows.push(merged);
    }
    r
}

/// Shade a batch of rays on the tape.
pub fn shade_batch(
    tape: &mut Tape,
    fields: &FieldsBundle,
    model: &AttachedModel,
    volume: &ForegroundVolume,
    jobs: &[RayJob],
    settings: &RenderSettings,
) -> Result<ShadedBatch> {
    if jobs.is_empty() {
        return Err(Error::contract("shade_batch over an empty ray batch"));
    }
    let routing = route_samples(jobs, volume);
    let n_fg = routing.fg_points.len();
    let n_bg = routing.bg_points.len();

    // Foreground model.
    let mut fg_nodes = None;
    let (fg_alpha, fg_rgb, fg_grad_world) = if n_fg > 0 {
        let pts = tape.constant(points_tensor(&routing.fg_points));
        let eval = fields.geometry.eval(tape, &model.geometry, pts, true)?;
        let gradient = eval.gradient.expect("gradient requested");
        // World-correct SDF under scaled edits: d_world = k * d_canonical.
        let d_world = if routing.fg_scale.iter().any(|&s| s != 1.0) {
            let scale = tape.constant(Tensor::column(&routing.fg_scale));
            tape.mul(eval.d, scale)
        } else {
            eval.d
        };
        let dirs = tape.constant(points_tensor(&routing.fg_dirs));
        let f1 = tape.constant(Tensor::column(&routing.fg_f1));
        let rgb = fields.color.eval(tape, &model.color, pts, dirs, gradient, eval.feature, f1)?;

        // Pair opacities scattered back onto sample rows; rows without a
        // following foreground sample keep alpha 0.
        let alpha = if routing.pair_first.is_empty() {
            tape.constant(Tensor::zeros(n_fg, 1))
        } else {
            let d_first = tape.gather_rows(d_world, &routing.pair_first);
            let d_second = tape.gather_rows(d_world, &routing.pair_second);
            let pair_alpha = neus_alpha_var(tape, d_first, d_second, model.sharpness);
            tape.scatter_rows(pair_alpha, &routing.pair_first, n_fg)
        };
        fg_nodes = Some(ForegroundNodes {
            d: d_world,
            s_noise: eval.s_noise,
            gradient,
            points: routing.fg_world_points.clone(),
            inside: vec![true; n_fg],
        });
        (Some(alpha), Some(rgb), Some(gradient))
    } else {
        (None, None, None)
    };

    // Background model.
    let (bg_alpha, bg_rgb) = if n_bg > 0 {
        let pts = tape.constant(points_tensor(&routing.bg_points));
        let dirs = tape.constant(points_tensor(&routing.bg_dirs));
        let eval = fields.background.eval(tape, &model.background, pts, dirs)?;
        let seg = tape.constant(Tensor::column(&routing.bg_seg));
        let alpha = background_alpha_var(tape, eval.sigma, seg);
        (Some(alpha), Some(eval.rgb))
    } else {
        (None, None)
    };

    // Stack: fg rows first, bg rows after (matching route_samples ids).
    let stacked_alpha = match (fg_alpha, bg_alpha) {
        (Some(f), Some(b)) => tape.concat_rows(&[f, b]),
        (Some(f), None) => f,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::contract("batch has no samples")),
    };
    let stacked_rgb = match (fg_rgb, bg_rgb) {
        (Some(f), Some(b)) => tape.concat_rows(&[f, b]),
        (Some(f), None) => f,
        (None, Some(b)) => b,
        (None, None) => unreachable!(),
    };

    // Per-ray compositing.
    let fallback = settings.fallback_color;
    let mut rays = Vec::with_capacity(jobs.len());
    let mut ray_colors = Vec::with_capacity(jobs.len());
    for (job, rows) in jobs.iter().zip(&routing.ray_sample_rows) {
        if rows.is_empty() {
            let c = tape.constant(Tensor::row(&fallback));
            rays.push(ShadedRay {
                alphas: tape.constant(Tensor::zeros(0, 1)),
                weights: tape.constant(Tensor::zeros(0, 1)),
                weight_sum: tape.constant(Tensor::scalar(0.0)),
                color: c,
                unnormalized_color: c,
                zero_opacity: true,
                transmittance: vec![],
                expected_depth: job.ray.far,
                normal: Vec3::zeros(),
            });
            ray_colors.push(c);
            continue;
        }
        let alphas = tape.gather_rows(stacked_alpha, rows);
        let colors = tape.gather_rows(stacked_rgb, rows);
        let neg_a = tape.neg(alphas);
        let one_minus = tape.add_const(neg_a, 1.0);
        let transmittance = tape.cumprod_exclusive(one_minus);
        let weights = tape.mul(transmittance, alphas);
        let weight_sum = tape.sum_all(weights);
        let w_t = tape.transpose(weights);
        let accumulated = tape.matmul(w_t, colors);

        let sum_val = tape.value(weight_sum).item();
        let zero_opacity = sum_val < 1e-8;
        let color = if zero_opacity {
            tape.constant(Tensor::row(&fallback))
        } else if settings.normalize_by_weight {
            let safe = tape.clamp_min(weight_sum, 1e-12);
            let inv = tape.reciprocal(safe);
            tape.mul_scalar(accumulated, inv)
        } else {
            accumulated
        };

        // Diagnostics from values.
        let t_vals = tape.value(transmittance).data().to_vec();
        let w_vals = tape.value(weights).data().to_vec();
        let expected_depth = if zero_opacity {
            job.ray.far
        } else {
            w_vals
                .iter()
                .zip(&job.samples.t)
                .map(|(&w, &t)| w * t)
                .sum::<f64>()
                / sum_val
        };
        let normal = match &fg_grad_world {
            Some(g) if !zero_opacity => {
                let gt = tape.value(*g);
                let mut n = Vec3::zeros();
                for (row, &stacked_row) in rows.iter().enumerate() {
                    if stacked_row < n_fg {
                        let raw = Vec3::new(
                            gt.at(stacked_row, 0),
                            gt.at(stacked_row, 1),
                            gt.at(stacked_row, 2),
                        );
                        // Rotate gradients of edited objects back to world.
                        let world = match &routing.fg_rotations[stacked_row] {
                            Some(rot) => rot * raw,
                            None => raw,
                        };
                        n += world * w_vals[row];
                    }
                }
                n / sum_val
            }
            _ => Vec3::zeros(),
        };

        ray_colors.push(color);
        rays.push(ShadedRay {
            alphas,
            weights,
            weight_sum,
            color,
            unnormalized_color: accumulated,
            zero_opacity,
            transmittance: t_vals,
            expected_depth,
            normal,
        });
    }

    let colors = tape.concat_rows(&ray_colors);
    Ok(ShadedBatch { rays, colors, fg: fg_nodes })
}

/// Plain-f64 compositing for oracles and tests: transmittances, weights,
/// and the normalized color of one ray.
#[derive(Debug, Clone)]
pub struct CompositedRay {
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_sum: f64,
    pub color: [f64; 3],
    pub unnormalized_color: [f64; 3],
    pub zero_opacity: bool,
}

pub fn composite_f64(alphas: &[f64], colors: &[[f64; 3]], settings: &RenderSettings) -> CompositedRay {
    assert_eq!(alphas.len(), colors.len());
    let mut transmittance = Vec::with_capacity(alphas.len());
    let mut weights = Vec::with_capacity(alphas.len());
    let mut t = 1.0;
    for &a in alphas {
        transmittance.push(t);
        weights.push(t * a);
        t *= 1.0 - a;
    }
    let weight_sum: f64 = weights.iter().sum();
    let mut acc = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            acc[k] += w * c[k];
        }
    }
    let zero_opacity = weight_sum < 1e-8;
    let color = if zero_opacity {
        settings.fallback_color
    } else if settings.normalize_by_weight {
        [acc[0] / weight_sum, acc[1] / weight_sum, acc[2] / weight_sum]
    } else {
        acc
    };
    CompositedRay {
        transmittance,
        weights,
        weight_sum,
        color,
        unnormalized_color: acc,
        zero_opacity,
    }
}

/// Single-ray f64 shading for tests: per-sample `(alpha, color)` in merged
/// sample order, with parameters attached as constants.
pub fn shade_samples_f64(
    fields: &FieldsBundle,
    params: &FieldParams,
    volume: &ForegroundVolume,
    ray: Ray,
    samples: SampleSet,
    f1: f64,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let mut tape = Tape::new();
    let model = attach_params(&mut tape, params, false);
    let jobs = vec![RayJob { ray, samples, f1 }];
    let batch = shade_batch(&mut tape, fields, &model, volume, &jobs, &RenderSettings::default())?;
    let alphas = tape.value(batch.rays[0].alphas).data().to_vec();
    let per_sample = shade_sample_colors(fields, params, volume, &jobs)?;
    Ok((alphas, per_sample.into_iter().next().unwrap_or_default()))
}

/// Per-sample colors per ray (f64), matching `shade_batch` routing.
fn shade_sample_colors(
    fields: &FieldsBundle,
    params: &FieldParams,
    volume: &ForegroundVolume,
    jobs: &[RayJob],
) -> Result<Vec<Vec<[f64; 3]>>> {
    let mut tape = Tape::new();
    let model = attach_params(&mut tape, params, false);
    let routing = route_samples(jobs, volume);
    let n_fg = routing.fg_points.len();
    let fg_rgb = if n_fg > 0 {
        let pts = tape.constant(points_tensor(&routing.fg_points));
        let eval = fields.geometry.eval(&mut tape, &model.geometry, pts, true)?;
        let dirs = tape.constant(points_tensor(&routing.fg_dirs));
        let f1 = tape.constant(Tensor::column(&routing.fg_f1));
        Some(fields.color.eval(
            &mut tape,
            &model.color,
            pts,
            dirs,
            eval.gradient.unwrap(),
            eval.feature,
            f1,
        )?)
    } else {
        None
    };
    let bg_rgb = if routing.bg_points.is_empty() {
        None
    } else {
        let pts = tape.constant(points_tensor(&routing.bg_points));
        let dirs = tape.constant(points_tensor(&routing.bg_dirs));
        Some(fields.background.eval(&mut tape, &model.background, pts, dirs)?.rgb)
    };
    let stacked = match (fg_rgb, bg_rgb) {
        (Some(f), Some(b)) => tape.concat_rows(&[f, b]),
        (Some(f), None) => f,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::contract("no samples")),
    };
    let t = tape.value(stacked);
    Ok(routing
        .ray_sample_rows
        .iter()
        .map(|rows| {
            rows.iter()
                .map(|&r| [t.at(r, 0), t.at(r, 1), t.at(r, 2)])
                .collect()
        })
        .collect())
}

impl SharpnessParam {
    /// Current sharpness as a plain number (for importance sampling).
    pub fn from_params(params: &FieldParams) -> f64 {
        params.log_sharpness.item().exp()
    }
}

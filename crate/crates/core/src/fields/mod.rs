//! The trainable fields: a geometry network producing signed distance,
//! uncertainty and a feature vector; a foreground color network conditioned
//! on position, view direction, SDF gradient, feature and prior depth; and
//! a background density/color network. Plus the SDF-to-opacity mapping.

use crate::autodiff::{Activation, Mlp, MlpSpec, Tape, Tensor, Var};
use crate::geom::encoded_len;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Clamp range for the raw (log) uncertainty head: keeps the Gaussian NLL
/// well-conditioned once residuals get small.
const LOG_NOISE_MIN: f64 = -7.0;
const LOG_NOISE_MAX: f64 = 2.5;

/// Architecture settings for all three fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Positional-encoding frequency count for points (raw input included).
    pub point_freqs: usize,
    /// Frequency count for view directions (no raw passthrough).
    pub dir_freqs: usize,
    pub feature_dim: usize,
    pub geometry_width: usize,
    pub geometry_depth: usize,
    /// Hidden layer whose input gets the encoded point re-concatenated.
    pub geometry_skip: usize,
    pub color_width: usize,
    pub color_depth: usize,
    pub background_width: usize,
    pub background_depth: usize,
    /// Softplus sharpness for geometry hidden activations.
    pub softplus_beta: f64,
    /// Radius of the sphere the geometry net approximates at init.
    pub init_sphere_radius: f64,
    /// Initial 1/s of the logistic CDF, in scene units.
    pub init_inv_sharpness: f64,
    /// Initial SDF uncertainty (std, scene units).
    pub init_noise_std: f64,
}

impl FieldConfig {
    /// Full-scale architecture: 8x256 geometry with skip at 4, 4x256
    /// radiance, 64-wide geometry feature.
    pub fn full() -> FieldConfig {
        FieldConfig {
            point_freqs: 6,
            dir_freqs: 4,
            feature_dim: 64,
            geometry_width: 256,
            geometry_depth: 8,
            geometry_skip: 4,
            color_width: 256,
            color_depth: 4,
            background_width: 128,
            background_depth: 4,
            softplus_beta: 100.0,
            init_sphere_radius: 1.0,
            init_inv_sharpness: 0.3,
            init_noise_std: 0.3,
        }
    }

    /// Reduced widths for fast desk-scale experiments; same structure.
    /// Starts sharper than the full-scale default: desk runs begin from a
    /// trusted pretrained SDF, so the soft-surface warmup that random
    /// initialization needs would just leave silhouettes blurred within
    /// the short step budget.
    pub fn desk() -> FieldConfig {
        FieldConfig {
            feature_dim: 16,
            geometry_width: 64,
            geometry_depth: 4,
            geometry_skip: 2,
            color_width: 64,
            color_depth: 3,
            background_width: 48,
            background_depth: 2,
            init_inv_sharpness: 0.05,
            ..FieldConfig::full()
        }
    }

    pub fn point_enc_dim(&self) -> usize {
        encoded_len(3, self.point_freqs, true)
    }

    pub fn dir_enc_dim(&self) -> usize {
        encoded_len(3, self.dir_freqs, false)
    }

    pub fn geometry_spec(&self) -> MlpSpec {
        MlpSpec::uniform(
            self.point_enc_dim(),
            self.geometry_width,
            self.geometry_depth,
            2 + self.feature_dim,
            Activation::Softplus { beta: self.softplus_beta },
            Activation::None,
            vec![self.geometry_skip],
        )
        .expect("geometry spec is valid")
    }

    pub fn color_spec(&self) -> MlpSpec {
        let input = self.point_enc_dim() + self.dir_enc_dim() + 3 + self.feature_dim + 1;
        MlpSpec::uniform(
            input,
            self.color_width,
            self.color_depth,
            3,
            Activation::Relu,
            Activation::Sigmoid,
            vec![],
        )
        .expect("color spec is valid")
    }

    pub fn background_spec(&self) -> MlpSpec {
        let input = self.point_enc_dim() + self.dir_enc_dim();
        MlpSpec::uniform(
            input,
            self.background_width,
            self.background_depth,
            4,
            Activation::Relu,
            Activation::None,
            vec![],
        )
        .expect("background spec is valid")
    }

    pub fn initial_log_sharpness(&self) -> f64 {
        (1.0 / self.init_inv_sharpness).ln()
    }
}

/// Record the positional encoding of `[B x 3]` points on the tape,
/// keeping per-frequency sin/cos nodes for gradient mapping.
pub struct EncodedPoints {
    pub encoded: Var,
    sin: Vec<Var>,
    cos: Vec<Var>,
}

pub fn encode_points_var(tape: &mut Tape, points: Var, num_freqs: usize) -> EncodedPoints {
    let mut parts = vec![points];
    let mut sin = Vec::with_capacity(num_freqs);
    let mut cos = Vec::with_capacity(num_freqs);
    let mut freq = PI;
    for _ in 0..num_freqs {
        let scaled = tape.scale(points, freq);
        let s = tape.sin(scaled);
        let c = tape.cos(scaled);
        parts.push(s);
        parts.push(c);
        sin.push(s);
        cos.push(c);
        freq *= 2.0;
    }
    EncodedPoints { encoded: tape.concat_cols(&parts), sin, cos }
}

/// Encoding without raw passthrough (view directions).
pub fn encode_dirs_var(tape: &mut Tape, dirs: Var, num_freqs: usize) -> Var {
    let mut parts = Vec::with_capacity(2 * num_freqs);
    let mut freq = PI;
    for _ in 0..num_freqs {
        let scaled = tape.scale(dirs, freq);
        parts.push(tape.sin(scaled));
        parts.push(tape.cos(scaled));
        freq *= 2.0;
    }
    tape.concat_cols(&parts)
}

/// Map the gradient w.r.t. the encoding back to the raw 3-vector:
/// d enc_sin_k / d p = 2^k pi cos, d enc_cos_k / d p = -2^k pi sin.
fn encoding_grad_to_point_grad(tape: &mut Tape, g_enc: Var, enc: &EncodedPoints) -> Var {
    let mut grad = tape.slice_cols(g_enc, 0, 3);
    let mut freq = PI;
    for k in 0..enc.sin.len() {
        let g_sin = tape.slice_cols(g_enc, 3 + k * 6, 3);
        let g_cos = tape.slice_cols(g_enc, 3 + k * 6 + 3, 3);
        let via_sin = tape.mul(g_sin, enc.cos[k]);
        let via_cos = tape.mul(g_cos, enc.sin[k]);
        let diff = tape.sub(via_sin, via_cos);
        let scaled = tape.scale(diff, freq);
        grad = tape.add(grad, scaled);
        freq *= 2.0;
    }
    grad
}

/// Per-point geometry outputs on the tape.
pub struct GeometryEval {
    /// Signed distance, `[B x 1]`.
    pub d: Var,
    /// Uncertainty std, strictly positive, `[B x 1]`.
    pub s_noise: Var,
    /// Feature vector for the color network, `[B x k]`.
    pub feature: Var,
    /// Spatial gradient of `d`, `[B x 3]`; present when requested.
    pub gradient: Option<Var>,
}

/// The SDF network f(p) -> (d, s_noise, feature) with an optional
/// differentiable input gradient.
#[derive(Debug, Clone)]
pub struct GeometryField {
    pub mlp: Mlp,
    pub point_freqs: usize,
    pub feature_dim: usize,
}

impl GeometryField {
    pub fn new(cfg: &FieldConfig) -> GeometryField {
        GeometryField {
            mlp: Mlp::new(cfg.geometry_spec()),
            point_freqs: cfg.point_freqs,
            feature_dim: cfg.feature_dim,
        }
    }

    /// Geometric sphere initialization: the network starts out as an
    /// approximate SDF of a sphere with `cfg.init_sphere_radius`.
    pub fn init_params(&self, cfg: &FieldConfig, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let spec = &self.mlp.spec;
        let shapes = spec.param_shapes();
        let n_layers = spec.layers.len();
        let mut params = Vec::with_capacity(shapes.len());
        for l in 0..n_layers {
            let (rows, cols) = shapes[2 * l];
            let last = l == n_layers - 1;
            let mut w = Tensor::zeros(rows, cols);
            let mut b = Tensor::zeros(1, cols);
            if last {
                // d column: constant positive weights give radial growth;
                // bias shifts the zero level set to the sphere.
                let mean = PI.sqrt() / (rows as f64).sqrt();
                for r in 0..rows {
                    w.set(r, 0, mean + 1e-4 * gaussian(rng));
                }
                b.set(0, 0, -cfg.init_sphere_radius);
                // Uncertainty column: near-constant exp head at the
                // configured initial noise level.
                for r in 0..rows {
                    w.set(r, 1, 1e-4 * gaussian(rng));
                }
                b.set(0, 1, cfg.init_noise_std.ln());
                // Feature columns: ordinary fan-in init.
                let bound = 1.0 / (rows as f64).sqrt();
                for r in 0..rows {
                    for c in 2..cols {
                        w.set(r, c, rng.gen_range(-bound..bound));
                    }
                }
            } else {
                let std = (2.0 / cols as f64).sqrt();
                for r in 0..rows {
                    for c in 0..cols {
                        w.set(r, c, std * gaussian(rng));
                    }
                }
                // Positional-encoding rows start silent so the init sees
                // raw coordinates only; raw xyz rows stay active.
                let enc_dim = spec.input_dim;
                if l == 0 {
                    for r in 3..rows {
                        for c in 0..cols {
                            w.set(r, c, 0.0);
                        }
                    }
                } else if spec.skips.contains(&l) {
                    let skip_start = rows - enc_dim;
                    for r in skip_start + 3..rows {
                        for c in 0..cols {
                            w.set(r, c, 0.0);
                        }
                    }
                }
            }
            params.push(w);
            params.push(b);
        }
        params
    }

    /// Evaluate at `[B x 3]` points already on the tape.
    pub fn eval(
        &self,
        tape: &mut Tape,
        params: &[Var],
        points: Var,
        want_gradient: bool,
    ) -> Result<GeometryEval> {
        let enc = encode_points_var(tape, points, self.point_freqs);
        let (out, gradient) = if want_gradient {
            let (out, g_enc) = self.mlp.forward_with_input_grad(tape, params, enc.encoded, 0)?;
            let g = encoding_grad_to_point_grad(tape, g_enc, &enc);
            tape.check_finite(g, "geometry gradient")?;
            (out, Some(g))
        } else {
            (self.mlp.forward(tape, params, enc.encoded)?, None)
        };
        let d = tape.slice_cols(out, 0, 1);
        let raw = tape.slice_cols(out, 1, 1);
        let clamped_lo = tape.clamp_min(raw, LOG_NOISE_MIN);
        let clamped = tape.clamp_max(clamped_lo, LOG_NOISE_MAX);
        let s_noise = tape.exp(clamped);
        let feature = tape.slice_cols(out, 2, self.feature_dim);
        Ok(GeometryEval { d, s_noise, feature, gradient })
    }

    /// Convenience f64 evaluation on a throwaway tape.
    /// Returns `(d, s_noise, gradient)` per point.
    pub fn eval_f64(
        &self,
        params: &[Tensor],
        points: &[crate::geom::Vec3],
        want_gradient: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<crate::geom::Vec3>>)> {
        if points.is_empty() {
            return Ok((vec![], vec![], want_gradient.then(Vec::new)));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
        let pts = tape.constant(points_tensor(points));
        let eval = self.eval(&mut tape, &vars, pts, want_gradient)?;
        let d = tape.value(eval.d).data().to_vec();
        let s = tape.value(eval.s_noise).data().to_vec();
        let grad = eval.gradient.map(|g| {
            let t = tape.value(g);
            (0..t.rows())
                .map(|r| crate::geom::Vec3::new(t.at(r, 0), t.at(r, 1), t.at(r, 2)))
                .collect()
        });
        Ok((d, s, grad))
    }
}

/// Foreground color network per the hybrid-rendering formulation: input is
/// `concat(enc(p), enc(v), sdf_gradient, feature, prior_depth)`.
#[derive(Debug, Clone)]
pub struct ColorField {
    pub mlp: Mlp,
    pub point_freqs: usize,
    pub dir_freqs: usize,
}

impl ColorField {
    pub fn new(cfg: &FieldConfig) -> ColorField {
        ColorField {
            mlp: Mlp::new(cfg.color_spec()),
            point_freqs: cfg.point_freqs,
            dir_freqs: cfg.dir_freqs,
        }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        self.mlp.spec.init_fan_in(rng)
    }

    /// `points`, `view_dirs` are `[B x 3]`; `gradient` `[B x 3]`; `feature`
    /// `[B x k]`; `f1` `[B x 1]`. Returns rgb in `[0,1]^3`, `[B x 3]`.
    #[allow(clippy::too_many_arguments)]
    pub fn eval(
        &self,
        tape: &mut Tape,
        params: &[Var],
        points: Var,
        view_dirs: Var,
        gradient: Var,
        feature: Var,
        f1: Var,
    ) -> Result<Var> {
        let p_enc = encode_points_var(tape, points, self.point_freqs);
        let v_enc = encode_dirs_var(tape, view_dirs, self.dir_freqs);
        let input = tape.concat_cols(&[p_enc.encoded, v_enc, gradient, feature, f1]);
        let rgb = self.mlp.forward(tape, params, input)?;
        tape.check_finite(rgb, "color output")?;
        Ok(rgb)
    }
}

/// Density and color evaluated by the background network.
pub struct BackgroundEval {
    /// Non-negative density, `[B x 1]`.
    pub sigma: Var,
    /// Color in `[0,1]^3`, `[B x 3]`.
    pub rgb: Var,
}

/// Background radiance field: a small NeRF-style network over encoded
/// position and view direction, with a softplus density head and sigmoid
/// color head.
#[derive(Debug, Clone)]
pub struct BackgroundField {
    pub mlp: Mlp,
    pub point_freqs: usize,
    pub dir_freqs: usize,
}

impl BackgroundField {
    pub fn new(cfg: &FieldConfig) -> BackgroundField {
        BackgroundField {
            mlp: Mlp::new(cfg.background_spec()),
            point_freqs: cfg.point_freqs,
            dir_freqs: cfg.dir_freqs,
        }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        self.mlp.spec.init_fan_in(rng)
    }

    pub fn eval(
        &self,
        tape: &mut Tape,
        params: &[Var],
        points: Var,
        view_dirs: Var,
    ) -> Result<BackgroundEval> {
        let p_enc = encode_points_var(tape, points, self.point_freqs);
        let v_enc = encode_dirs_var(tape, view_dirs, self.dir_freqs);
        let input = tape.concat_cols(&[p_enc.encoded, v_enc]);
        let out = self.mlp.forward(tape, params, input)?;
        let raw_sigma = tape.slice_cols(out, 0, 1);
        let sigma = tape.softplus(raw_sigma, 1.0);
        let raw_rgb = tape.slice_cols(out, 1, 3);
        let rgb = tape.sigmoid(raw_rgb);
        Ok(BackgroundEval { sigma, rgb })
    }
}

/// Trainable sharpness of the logistic CDF, stored as log(s).
#[derive(Debug, Clone)]
pub struct SharpnessParam(pub Tensor);

impl SharpnessParam {
    pub fn new(cfg: &FieldConfig) -> SharpnessParam {
        SharpnessParam(Tensor::scalar(cfg.initial_log_sharpness()))
    }

    pub fn value(&self) -> f64 {
        self.0.item().exp()
    }

    /// Attach to a tape and return `(log_s leaf, positive sharpness node)`.
    pub fn attach(&self, tape: &mut Tape) -> (Var, Var) {
        let log_s = tape.param(self.0.clone());
        let s = tape.exp(log_s);
        (log_s, s)
    }
}

/// All trainable parameters of a scene model.
#[derive(Debug, Clone)]
pub struct FieldParams {
    pub geometry: Vec<Tensor>,
    pub color: Vec<Tensor>,
    pub background: Vec<Tensor>,
    pub log_sharpness: Tensor,
}

impl FieldParams {
    pub fn init(cfg: &FieldConfig, seed: u64) -> FieldParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geometry = GeometryField::new(cfg).init_params(cfg, &mut rng);
        let color = ColorField::new(cfg).init_params(&mut rng);
        let background = BackgroundField::new(cfg).init_params(&mut rng);
        FieldParams {
            geometry,
            color,
            background,
            log_sharpness: SharpnessParam::new(cfg).0,
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.log_sharpness.item().exp()
    }
}

/// Pack `[B x 3]` points into a tensor.
pub fn points_tensor(points: &[crate::geom::Vec3]) -> Tensor {
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    Tensor::from_vec(points.len(), 3, data)
}

// ---------------------------------------------------------------------------
// Scalar opacity math
// ---------------------------------------------------------------------------

/// CDF of the logistic distribution with sharpness `s`: `1/(1+exp(-s x))`.
pub fn logistic_cdf(x: f64, s: f64) -> f64 {
    debug_assert!(s > 0.0);
    let t = s * x;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// SDF-to-opacity over one ray segment:
/// `max((CDF(d_i) - CDF(d_next)) / CDF(d_i), 0)`.
///
/// Computed in log space so saturated CDF values cannot produce 0/0.
pub fn neus_alpha(d_i: f64, d_next: f64, s: f64) -> f64 {
    debug_assert!(s > 0.0);
    // ln CDF(x) = -softplus(-s x); the ratio CDF(d_next)/CDF(d_i)
    // exponentiates the difference.
    let log_ratio = softplus(-s * d_i) - softplus(-s * d_next);
    (1.0 - log_ratio.exp()).clamp(0.0, 1.0)
}

/// Density-to-opacity over a segment of length `seg_len`:
/// `1 - exp(-sigma seg_len)`.
pub fn background_alpha(sigma: f64, seg_len: f64) -> f64 {
    debug_assert!(sigma >= 0.0 && seg_len >= 0.0);
    -(-sigma * seg_len).exp_m1()
}

/// Tape version of [`neus_alpha`] over column vectors of consecutive SDF
/// pairs; `sharpness` is a `1x1` node.
pub fn neus_alpha_var(tape: &mut Tape, d_i: Var, d_next: Var, sharpness: Var) -> Var {
    let neg_di = tape.neg(d_i);
    let neg_dn = tape.neg(d_next);
    let sdi = tape.mul_scalar(neg_di, sharpness);
    let sdn = tape.mul_scalar(neg_dn, sharpness);
    let sp_i = tape.softplus(sdi, 1.0);
    let sp_n = tape.softplus(sdn, 1.0);
    let log_ratio = tape.sub(sp_i, sp_n);
    let ratio = tape.exp(log_ratio);
    let neg_ratio = tape.neg(ratio);
    let one_minus = tape.add_const(neg_ratio, 1.0);
    let lo = tape.clamp_min(one_minus, 0.0);
    tape.clamp_max(lo, 1.0)
}

/// Tape version of [`background_alpha`]; `seg_len` is a constant column.
pub fn background_alpha_var(tape: &mut Tape, sigma: Var, seg_len: Var) -> Var {
    let prod = tape.mul(sigma, seg_len);
    let neg = tape.neg(prod);
    let e = tape.exp(neg);
    let neg_e = tape.neg(e);
    tape.add_const(neg_e, 1.0)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

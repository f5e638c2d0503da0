//! Training objectives: L1 reconstruction, Eikonal, Gaussian-NLL
//! pretraining, uncertainty-gated SDF consistency, ray consistency with a
//! KL density term, HSV saturation, and the weighted total.
//!
//! Each loss has a tape builder (differentiable) and, where oracles need
//! one, a plain f64 form. Reductions use the tape's fixed pairwise order,
//! so values are deterministic across runs.

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor applied to both distributions before the KL term.
pub const KL_EPSILON: f64 = 1e-8;

/// Weights of the full objective
/// `L = L_rec + w_eik L_eik + w_sdf L_sdf + w_ray L_ray + w_sat L_sat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eikonal: f64,
    pub sdf: f64,
    pub ray: f64,
    pub saturation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { eikonal: 0.1, sdf: 1.0, ray: 0.01, saturation: 0.1 }
    }
}

/// Gates of the SDF consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfLossConfig {
    /// SDF magnitude gate (scene units).
    pub xi0: f64,
    /// Uncertainty gate (scene units).
    pub xi1: f64,
    /// Flip the uncertainty comparison (ablation of the printed gate).
    pub invert_uncertainty_gate: bool,
}

impl Default for SdfLossConfig {
    fn default() -> Self {
        SdfLossConfig { xi0: 0.2, xi1: 0.5, invert_uncertainty_gate: false }
    }
}

/// Mean absolute difference over rays and channels.
pub fn reconstruction_loss(tape: &mut Tape, pred_rgb: Var, gt_rgb: &Tensor) -> Result<Var> {
    let shape = tape.value(pred_rgb).shape();
    if shape.0 == 0 {
        return Err(Error::contract("reconstruction loss over an empty batch"));
    }
    if shape != gt_rgb.shape() {
        return Err(Error::contract(format!(
            "reconstruction shapes differ: {shape:?} vs {:?}",
            gt_rgb.shape()
        )));
    }
    let gt = tape.constant(gt_rgb.clone());
    let diff = tape.sub(pred_rgb, gt);
    let abs = tape.abs(diff);
    Ok(tape.mean_all(abs))
}

/// Mean squared deviation of gradient norms from 1: `mean((|g| - 1)^2)`.
pub fn eikonal_loss(tape: &mut Tape, gradients: Var) -> Result<Var> {
    let (m, n) = tape.value(gradients).shape();
    if m == 0 || n != 3 {
        return Err(Error::contract(format!(
            "eikonal loss wants a nonempty [m x 3] gradient batch, got {m}x{n}"
        )));
    }
    let sq = tape.square(gradients);
    let norm2 = tape.row_sum(sq);
    let safe = tape.clamp_min(norm2, 1e-20);
    let norm = tape.sqrt(safe);
    let dev = tape.add_const(norm, -1.0);
    let dev2 = tape.square(dev);
    Ok(tape.mean_all(dev2))
}

/// f64 Eikonal for oracle checks.
pub fn eikonal_loss_f64(gradients: &[crate::geom::Vec3]) -> f64 {
    assert!(!gradients.is_empty());
    gradients.iter().map(|g| (g.norm() - 1.0).powi(2)).sum::<f64>() / gradients.len() as f64
}

/// Gaussian negative log-likelihood against exact distances:
/// `mean(log(s^2) + (d - d')^2 / s^2)`.
pub fn pretrain_nll(tape: &mut Tape, d_pred: Var, s_pred: Var, d_gt: &Tensor) -> Result<Var> {
    let shape = tape.value(d_pred).shape();
    if shape.0 == 0 {
        return Err(Error::contract("pretrain nll over an empty batch"));
    }
    if tape.value(s_pred).shape() != shape || d_gt.shape() != shape {
        return Err(Error::contract("pretrain nll shape mismatch"));
    }
    if tape.value(s_pred).data().iter().any(|&s| s <= 0.0) {
        return Err(Error::contract("pretrain nll requires s > 0"));
    }
    let gt = tape.constant(d_gt.clone());
    let s2 = tape.square(s_pred);
    let log_s2 = tape.ln(s2);
    let resid = tape.sub(d_pred, gt);
    let r2 = tape.square(resid);
    let scaled = tape.div(r2, s2);
    let per_sample = tape.add(log_s2, scaled);
    Ok(tape.mean_all(per_sample))
}

/// f64 NLL for one residual/uncertainty pair.
pub fn gaussian_nll(residual: f64, s: f64) -> f64 {
    (s * s).ln() + residual * residual / (s * s)
}

/// Uncertainty-gated consistency against the frozen pretrained SDF.
///
/// A point contributes iff it is outside the foreground volume, OR its
/// predicted |d| exceeds `xi0`, OR its uncertainty exceeds `xi1`; gated
/// points accumulate `log(s^2) + (d' - d)^2 / s^2` and the mean is taken
/// over contributors (constant 0 when none contribute). The gate reads
/// current values and is treated as a constant selection.
pub fn sdf_consistency_loss(
    tape: &mut Tape,
    d_pred: Var,
    s_pred: Var,
    d_prior: &Tensor,
    inside_volume: &[bool],
    cfg: &SdfLossConfig,
) -> Result<Var> {
    let n = tape.value(d_pred).rows();
    if d_prior.rows() != n || inside_volume.len() != n || tape.value(s_pred).rows() != n {
        return Err(Error::contract("sdf consistency length mismatch"));
    }
    let d_vals = tape.value(d_pred).data().to_vec();
    let s_vals = tape.value(s_pred).data().to_vec();
    let mut gated = Vec::new();
    for i in 0..n {
        let s_gate = if cfg.invert_uncertainty_gate {
            s_vals[i] < cfg.xi1
        } else {
            s_vals[i] > cfg.xi1
        };
        if !inside_volume[i] || d_vals[i].abs() > cfg.xi0 || s_gate {
            gated.push(i);
        }
    }
    if gated.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let d_sel = tape.gather_rows(d_pred, &gated);
    let s_sel = tape.gather_rows(s_pred, &gated);
    let prior_sel: Vec<f64> = gated.iter().map(|&i| d_prior.data()[i]).collect();
    let prior = tape.constant(Tensor::column(&prior_sel));
    let s2 = tape.square(s_sel);
    let log_s2 = tape.ln(s2);
    let resid = tape.sub(d_sel, prior);
    let r2 = tape.square(resid);
    let scaled = tape.div(r2, s2);
    let per_point = tape.add(log_s2, scaled);
    Ok(tape.mean_all(per_point))
}

/// Floored KL divergence between two discrete densities of equal length:
/// `sum(max(p, eps) * (ln max(p, eps) - ln max(q, eps)))`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!(
            "kl length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pf = pi.max(KL_EPSILON);
            let qf = qi.max(KL_EPSILON);
            pf * (pf.ln() - qf.ln())
        })
        .sum())
}

/// Ray-density distribution `P(r) = alpha_i / sum(alpha)`.
pub fn ray_density(alphas: &[f64]) -> Vec<f64> {
    let total: f64 = alphas.iter().sum();
    if total <= 0.0 {
        return vec![0.0; alphas.len()];
    }
    alphas.iter().map(|&a| a / total).collect()
}

/// Photometric + density consistency of an interpolated sub-ray against
/// its pixel patch: L1 between the bilinearly interpolated ground-truth
/// patch color and the sub-ray's rendered color, plus
/// `KL(corner density || sub-ray density)` where the corner density is a
/// detached pseudo-ground-truth.
pub fn ray_consistency_loss(
    tape: &mut Tape,
    sub_color: Var,
    interp_gt: [f64; 3],
    corner_density: &[f64],
    sub_alphas: Var,
) -> Result<Var> {
    if tape.value(sub_color).shape() != (1, 3) {
        return Err(Error::contract("sub-ray color must be 1x3"));
    }
    let k = tape.value(sub_alphas).rows();
    if corner_density.len() != k {
        return Err(Error::contract(format!(
            "ray density length mismatch: corner {} vs sub-ray {k}",
            corner_density.len()
        )));
    }
    // L1 color term.
    let gt = tape.constant(Tensor::row(&interp_gt));
    let diff = tape.sub(sub_color, gt);
    let abs = tape.abs(diff);
    let l1 = tape.mean_all(abs);

    // Density term: normalize the sub-ray alphas on-tape, floor both.
    let total = tape.sum_all(sub_alphas);
    let safe_total = tape.clamp_min(total, 1e-12);
    let inv = tape.reciprocal(safe_total);
    let q = tape.mul_scalar(sub_alphas, inv);
    let q_floored = tape.clamp_min(q, KL_EPSILON);
    let log_q = tape.ln(q_floored);

    let p_floored: Vec<f64> = corner_density.iter().map(|&p| p.max(KL_EPSILON)).collect();
    let p_const = tape.constant(Tensor::column(&p_floored));
    let log_p: Vec<f64> = p_floored.iter().map(|&p| p.ln()).collect();
    let log_p_const = tape.constant(Tensor::column(&log_p));
    let log_ratio = tape.sub(log_p_const, log_q);
    let terms = tape.mul(p_const, log_ratio);
    let kl = tape.sum_all(terms);

    Ok(tape.add(l1, kl))
}

/// Standard RGB -> HSV. Saturation is `(max - min) / max`, defined as 0
/// for black; hue in degrees `[0, 360)`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, v)
}

/// Saturation channel of one color.
pub fn saturation(rgb: [f64; 3]) -> f64 {
    rgb_to_hsv(rgb).1
}

/// Saturation of each row of a `[n x 3]` color batch, on the tape.
fn saturation_var(tape: &mut Tape, rgb: Var) -> Var {
    let r = tape.slice_cols(rgb, 0, 1);
    let g = tape.slice_cols(rgb, 1, 1);
    let b = tape.slice_cols(rgb, 2, 1);
    let mx0 = tape.max2(r, g);
    let mx = tape.max2(mx0, b);
    let mn0 = tape.min2(r, g);
    let mn = tape.min2(mn0, b);
    let delta = tape.sub(mx, mn);
    let safe_mx = tape.clamp_min(mx, 1e-12);
    tape.div(delta, safe_mx)
}

/// L1 between predicted and ground-truth saturation channels.
pub fn saturation_loss(tape: &mut Tape, pred_rgb: Var, gt_rgb: &Tensor) -> Result<Var> {
    let shape = tape.value(pred_rgb).shape();
    if shape.0 == 0 {
        return Err(Error::contract("saturation loss over an empty batch"));
    }
    if shape != gt_rgb.shape() || shape.1 != 3 {
        return Err(Error::contract("saturation loss wants matching [n x 3] batches"));
    }
    let s_pred = saturation_var(tape, pred_rgb);
    let s_gt: Vec<f64> = (0..gt_rgb.rows())
        .map(|i| {
            let row = gt_rgb.row_slice(i);
            saturation([row[0], row[1], row[2]])
        })
        .collect();
    let gt = tape.constant(Tensor::column(&s_gt));
    let diff = tape.sub(s_pred, gt);
    let abs = tape.abs(diff);
    Ok(tape.mean_all(abs))
}

/// Per-term values of one training step, for the CSV log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub eikonal: f64,
    pub sdf: f64,
    pub ray: f64,
    pub saturation: f64,
}

/// Optional per-term nodes feeding the total.
pub struct LossComponents {
    pub reconstruction: Var,
    pub eikonal: Option<Var>,
    pub sdf: Option<Var>,
    pub ray: Option<Var>,
    pub saturation: Option<Var>,
}

/// Weighted sum of the loss terms; every present component must be finite.
pub fn total_loss(
    tape: &mut Tape,
    parts: &LossComponents,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let term_value = |tape: &Tape, v: Var, name: &str| -> Result<f64> {
        let x = tape.value(v).item();
        if !x.is_finite() {
            return Err(Error::numeric(format!("{name} loss is {x}")));
        }
        Ok(x)
    };
    let rec = term_value(tape, parts.reconstruction, "reconstruction")?;
    let mut total = parts.reconstruction;
    let mut breakdown = LossBreakdown {
        total: 0.0,
        reconstruction: rec,
        eikonal: 0.0,
        sdf: 0.0,
        ray: 0.0,
        saturation: 0.0,
    };
    let add_term = |tape: &mut Tape,
                        total: &mut Var,
                        v: Option<Var>,
                        w: f64,
                        name: &str,
                        slot: &mut f64|
     -> Result<()> {
        if let Some(v) = v {
            *slot = term_value(tape, v, name)?;
            let scaled = tape.scale(v, w);
            *total = tape.add(*total, scaled);
        }
        Ok(())
    };
    add_term(tape, &mut total, parts.eikonal, weights.eikonal, "eikonal", &mut breakdown.eikonal)?;
    add_term(tape, &mut total, parts.sdf, weights.sdf, "sdf", &mut breakdown.sdf)?;
    add_term(tape, &mut total, parts.ray, weights.ray, "ray", &mut breakdown.ray)?;
    add_term(
        tape,
        &mut total,
        parts.saturation,
        weights.saturation,
        "saturation",
        &mut breakdown.saturation,
    )?;
    breakdown.total = tape.value(total).item();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor_rows(rows: &[[f64; 3]]) -> Tensor {
        Tensor::from_vec(rows.len(), 3, rows.iter().flatten().copied().collect())
    }

    #[test]
    fn reconstruction_basics() {
        let gt = tensor_rows(&[[0.1, 0.5, 0.9], [0.3, 0.3, 0.3]]);
        let mut tape = Tape::new();
        let pred = tape.param(gt.clone());
        let l = reconstruction_loss(&mut tape, pred, &gt).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let mut tape = Tape::new();
        let shifted = tape.param(gt.map(|v| v + 0.1));
        let l = reconstruction_loss(&mut tape, shifted, &gt).unwrap();
        assert!((tape.value(l).item() - 0.1).abs() < 1e-12);

        // Subgradient: sign(residual) / (3 n) per element.
        let g = tape.backward(l).unwrap().wrt(&tape, shifted);
        for &v in g.data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_empty_batch_errors() {
        let mut tape = Tape::new();
        let pred = tape.param(Tensor::zeros(0, 3));
        assert!(reconstruction_loss(&mut tape, pred, &Tensor::zeros(0, 3)).is_err());
    }

    #[test]
    fn eikonal_basics() {
        // Exact sphere SDF gradients are unit-length.
        let pts = [Vec3::new(0.3, 0.4, 0.0), Vec3::new(-1.0, 2.0, 2.0)];
        let unit: Vec<Vec3> = pts.iter().map(|p| p.normalize()).collect();
        assert!(eikonal_loss_f64(&unit) < 1e-10);
        let zeros = vec![Vec3::zeros(); 4];
        assert!((eikonal_loss_f64(&zeros) - 1.0).abs() < 1e-12);

        let mut tape = Tape::new();
        let g = tape.param(crate::fields::points_tensor(&unit));
        let l = eikonal_loss(&mut tape, g).unwrap();
        assert!(tape.value(l).item() < 1e-10);
    }

    #[test]
    fn eikonal_gradient_matches_fd() {
        let base = crate::fields::points_tensor(&[
            Vec3::new(0.5, -0.25, 1.5),
            Vec3::new(2.0, 0.1, -0.7),
        ]);
        let mut tape = Tape::new();
        let g = tape.param(base.clone());
        let l = eikonal_loss(&mut tape, g).unwrap();
        let analytic = tape.backward(l).unwrap().wrt(&tape, g);
        let h = 1e-6;
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[k] += h;
            let mut minus = base.clone();
            minus.data_mut()[k] -= h;
            let eval = |t: &Tensor| {
                let mut tape = Tape::new();
                let g = tape.param(t.clone());
                let l = eikonal_loss(&mut tape, g).unwrap();
                tape.value(l).item()
            };
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!((analytic.data()[k] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn nll_hand_values() {
        // Residual 0.3 with s^2 = 0.09 sits at the NLL optimum for that
        // residual: log(0.09) + 1.
        assert!((gaussian_nll(0.3, 0.3) - (-1.4079456086518722)).abs() < 1e-12);
        assert_eq!(gaussian_nll(0.0, 1.0), 0.0);

        let mut tape = Tape::new();
        let d = tape.param(Tensor::column(&[0.3]));
        let s = tape.param(Tensor::column(&[0.3]));
        let l = pretrain_nll(&mut tape, d, s, &Tensor::column(&[0.0])).unwrap();
        assert!((tape.value(l).item() + 1.4079456086518722).abs() < 1e-12);
    }

    #[test]
    fn nll_minimizer_is_residual_squared() {
        // Golden-section search over s for fixed residual r: the optimum
        // satisfies s^2 = r^2 within 1e-6.
        let r: f64 = 0.3;
        let f = |s: f64| gaussian_nll(r, s);
        let (mut a, mut b) = (1e-3, 3.0);
        let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-10 {
            let c = b - (b - a) * inv_phi;
            let d = a + (b - a) * inv_phi;
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let s_opt = 0.5 * (a + b);
        assert!((s_opt * s_opt - r * r).abs() < 1e-6, "s^2 = {}", s_opt * s_opt);
    }

    #[test]
    fn sdf_consistency_gate_cases() {
        let cfg = SdfLossConfig::default();
        // Inside the volume, |d| below xi0, s below xi1: no contribution.
        let mut tape = Tape::new();
        let d = tape.param(Tensor::column(&[0.1]));
        let s = tape.param(Tensor::column(&[0.3]));
        let l = sdf_consistency_loss(&mut tape, d, s, &Tensor::column(&[0.5]), &[true], &cfg)
            .unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // Outside the volume with d = d' and s = 1: log 1 + 0 = 0.
        let mut tape = Tape::new();
        let d = tape.param(Tensor::column(&[0.7]));
        let s = tape.param(Tensor::column(&[1.0]));
        let l = sdf_consistency_loss(&mut tape, d, s, &Tensor::column(&[0.7]), &[false], &cfg)
            .unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn sdf_consistency_matches_brute_force_enumeration() {
        let cfg = SdfLossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 64;
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let prior: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let inside: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();

        let mut tape = Tape::new();
        let dv = tape.param(Tensor::column(&d));
        let sv = tape.param(Tensor::column(&s));
        let l = sdf_consistency_loss(&mut tape, dv, sv, &Tensor::column(&prior), &inside, &cfg)
            .unwrap();

        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if !inside[i] || d[i].abs() > cfg.xi0 || s[i] > cfg.xi1 {
                sum += gaussian_nll(prior[i] - d[i], s[i]);
                count += 1;
            }
        }
        assert!(count > 0);
        let want = sum / count as f64;
        assert!(
            (tape.value(l).item() - want).abs() < 1e-9,
            "{} vs {want}",
            tape.value(l).item()
        );
    }

    #[test]
    fn kl_hand_value_and_properties() {
        let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((kl - 0.14384103622589042).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let mut p: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut q: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sp: f64 = p.iter().sum();
            let sq: f64 = q.iter().sum();
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let kl = kl_divergence(&p, &q).unwrap();
            assert!(kl > -1e-12, "kl {kl}");
            let self_kl = kl_divergence(&p, &p).unwrap();
            assert_eq!(self_kl, 0.0);
        }
        assert!(kl_divergence(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn ray_consistency_corner_case_is_zero() {
        // Sub-ray exactly at a corner with an identical render: weights
        // (1,0,0,0) make the interpolated target the corner's own color
        // and density, so both terms vanish.
        let alphas = [0.4, 0.1, 0.25];
        let density = ray_density(&alphas);
        let color = [0.2, 0.7, 0.4];
        let mut tape = Tape::new();
        let sub_color = tape.param(Tensor::row(&color));
        let sub_alphas = tape.param(Tensor::column(&alphas));
        let l = ray_consistency_loss(&mut tape, sub_color, color, &density, sub_alphas).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn ray_consistency_length_mismatch_errors() {
        let mut tape = Tape::new();
        let sub_color = tape.param(Tensor::row(&[0.0, 0.0, 0.0]));
        let sub_alphas = tape.param(Tensor::column(&[0.5, 0.5]));
        assert!(
            ray_consistency_loss(&mut tape, sub_color, [0.0; 3], &[1.0, 0.0, 0.0], sub_alphas)
                .is_err()
        );
    }

    #[test]
    fn hsv_conversion_cases() {
        for g in [0.0, 0.25, 1.0] {
            let (_, s, v) = rgb_to_hsv([g, g, g]);
            assert_eq!(s, 0.0);
            assert_eq!(v, g);
        }
        let (h, s, v) = rgb_to_hsv([1.0, 0.5, 0.5]);
        assert_eq!(s, 0.5);
        assert_eq!(v, 1.0);
        assert_eq!(h, 0.0);
        // Black: the defined branch.
        assert_eq!(rgb_to_hsv([0.0, 0.0, 0.0]).1, 0.0);
        // Standard reference triplet: pure yellow-green.
        let (h, s, v) = rgb_to_hsv([0.5, 1.0, 0.0]);
        assert!((h - 90.0).abs() < 1e-9);
        assert_eq!(s, 1.0);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn saturation_loss_cases() {
        let gt = tensor_rows(&[[0.8, 0.4, 0.4], [0.1, 0.2, 0.3]]);
        let mut tape = Tape::new();
        let pred = tape.param(gt.clone());
        let l = saturation_loss(&mut tape, pred, &gt).unwrap();
        assert!(tape.value(l).item() < 1e-12);

        // Grayscale prediction against gt with saturation 0.5 -> loss 0.5.
        let gt = tensor_rows(&[[1.0, 0.5, 0.5]]);
        let mut tape = Tape::new();
        let pred = tape.param(tensor_rows(&[[0.3, 0.3, 0.3]]));
        let l = saturation_loss(&mut tape, pred, &gt).unwrap();
        assert!((tape.value(l).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturation_scale_invariance() {
        // (k max - k min) / (k max) cancels k exactly for unclipped input.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let rgb = [
                rng.gen_range(0.05..1.0),
                rng.gen_range(0.05..1.0),
                rng.gen_range(0.05..1.0),
            ];
            let k = rng.gen_range(1e-3..1.0);
            let scaled = [rgb[0] * k, rgb[1] * k, rgb[2] * k];
            assert!((saturation(rgb) - saturation(scaled)).abs() < 1e-9);
        }
    }

    #[test]
    fn total_loss_weighting() {
        // Unit components with weights (0.1, 1, 0.01, 0.1):
        // 1 + 0.1 + 1 + 0.01 + 0.1 = 2.21.
        let mut tape = Tape::new();
        let one = || Tensor::scalar(1.0);
        let parts = LossComponents {
            reconstruction: tape.param(one()),
            eikonal: Some(tape.param(one())),
            sdf: Some(tape.param(one())),
            ray: Some(tape.param(one())),
            saturation: Some(tape.param(one())),
        };
        let weights = LossWeights { eikonal: 0.1, sdf: 1.0, ray: 0.01, saturation: 0.1 };
        let (total, breakdown) = total_loss(&mut tape, &parts, &weights).unwrap();
        assert!((tape.value(total).item() - 2.21).abs() < 1e-12);
        assert_eq!(breakdown.reconstruction, 1.0);
        assert_eq!(breakdown.total, tape.value(total).item());

        // Zero weights leave only the reconstruction term.
        let mut tape = Tape::new();
        let parts = LossComponents {
            reconstruction: tape.param(Tensor::scalar(0.7)),
            eikonal: Some(tape.param(one())),
            sdf: Some(tape.param(one())),
            ray: Some(tape.param(one())),
            saturation: Some(tape.param(one())),
        };
        let zero = LossWeights { eikonal: 0.0, sdf: 0.0, ray: 0.0, saturation: 0.0 };
        let (total, _) = total_loss(&mut tape, &parts, &zero).unwrap();
        assert!((tape.value(total).item() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn total_loss_names_nonfinite_term() {
        let mut tape = Tape::new();
        let parts = LossComponents {
            reconstruction: tape.param(Tensor::scalar(1.0)),
            eikonal: Some(tape.param(Tensor::scalar(f64::NAN))),
            sdf: None,
            ray: None,
            saturation: None,
        };
        let err = total_loss(&mut tape, &parts, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("eikonal"), "{err}");
    }
}

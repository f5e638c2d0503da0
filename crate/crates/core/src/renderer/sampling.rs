//! Per-ray sample placement: stratified coarse samples inside the
//! box-union interval, inverse-CDF importance refinement, and background
//! samples over the complement of the interval.

use super::volume::ForegroundVolume;
use crate::fields::neus_alpha;
use crate::geom::{stratified_samples, Jitter, Ray, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-ray sample budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBudget {
    pub coarse: usize,
    pub fine: usize,
    pub background: usize,
    /// Importance rounds; each adds `fine / rounds` samples.
    pub rounds: usize,
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget { coarse: 64, fine: 64, background: 32, rounds: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Fine,
    Background,
}

/// Ordered samples along one ray with box classification.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub t: Vec<f64>,
    pub points: Vec<Vec3>,
    /// Distance to the next sample; the last entry extends to `far`.
    pub seg_len: Vec<f64>,
    /// Box-membership indicator b(p).
    pub foreground: Vec<bool>,
    pub stage: Vec<Stage>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn from_parts(ray: &Ray, fg_t: Vec<f64>, fg_stage: Vec<Stage>, bg_t: Vec<f64>, volume: &ForegroundVolume) -> SampleSet {
        let mut merged: Vec<(f64, Stage)> = fg_t
            .into_iter()
            .zip(fg_stage)
            .chain(bg_t.into_iter().map(|t| (t, Stage::Background)))
            .collect();
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        merged.dedup_by(|a, b| a.0 == b.0);
        let t: Vec<f64> = merged.iter().map(|&(t, _)| t).collect();
        let stage: Vec<Stage> = merged.iter().map(|&(_, s)| s).collect();
        let points: Vec<Vec3> = t.iter().map(|&ti| ray.at(ti)).collect();
        let foreground: Vec<bool> = points.iter().map(|&p| volume.classify_point(p)).collect();
        let mut seg_len = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let next = if i + 1 < t.len() { t[i + 1] } else { ray.far };
            seg_len.push((next - t[i]).max(1e-12));
        }
        SampleSet { t, points, seg_len, foreground, stage }
    }
}

/// Inverse-CDF draw of `count` samples from a piecewise-constant density
/// over the bins delimited by `edges` (ascending, `weights.len() + 1`
/// entries). Stratified uniforms keep the draw low-variance; output is
/// ascending.
pub fn importance_resample(
    edges: &[f64],
    weights: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1, "edges/weights mismatch");
    if count == 0 || weights.is_empty() {
        return Vec::new();
    }
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let uniform = total <= 1e-12;
    // CDF over bins; degenerate weights fall back to uniform.
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in weights {
        acc += if uniform { 1.0 / weights.len() as f64 } else { w.max(0.0) / total };
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let u = (i as f64 + rng.gen::<f64>()) / count as f64;
        let k = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(weights.len() - 1);
        let lo = cdf[k];
        let hi = cdf[k + 1];
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        out.push(edges[k] + frac * (edges[k + 1] - edges[k]));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Transmittance-weighted segment weights from SDF values at `t` points,
/// with a fixed sharpness; used by the hierarchical refinement rounds.
fn segment_weights(sdf: &[f64], sharpness: f64) -> Vec<f64> {
    let n = sdf.len();
    if n < 2 {
        return Vec::new();
    }
    let mut weights = Vec::with_capacity(n - 1);
    let mut transmittance = 1.0;
    for i in 0..n - 1 {
        let alpha = neus_alpha(sdf[i], sdf[i + 1], sharpness);
        weights.push(transmittance * alpha);
        transmittance *= 1.0 - alpha;
    }
    weights
}

/// Sample one ray: stratified coarse samples in the box-union interval,
/// `rounds` of importance refinement driven by `sdf` queries at fixed,
/// doubling sharpness, and stratified background samples over the
/// complement. A ray that misses every box gets its whole budget as
/// background samples.
pub fn sample_ray(
    ray: &Ray,
    volume: &ForegroundVolume,
    budget: &SampleBudget,
    sdf: &mut dyn FnMut(&[Vec3]) -> Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> SampleSet {
    match volume.ray_interval(ray) {
        Some((enter, exit)) if exit > enter => {
            let mut fg_t = stratified_samples(enter, exit, budget.coarse, Jitter::Rng(rng));
            let mut fg_stage = vec![Stage::Coarse; fg_t.len()];

            // Hierarchical refinement: re-weight with doubled sharpness
            // each round, as the coarse-to-fine strategy prescribes.
            let rounds = budget.rounds.max(1);
            let per_round = budget.fine / rounds;
            let mut remainder = budget.fine - per_round * rounds;
            let mut sharpness = 32.0;
            for _ in 0..rounds {
                let take = per_round + if remainder > 0 { remainder -= 1; 1 } else { 0 };
                if take == 0 || fg_t.len() < 2 {
                    break;
                }
                let pts: Vec<Vec3> = fg_t.iter().map(|&t| ray.at(t)).collect();
                let d = sdf(&pts);
                let w = segment_weights(&d, sharpness);
                let fresh = importance_resample(&fg_t, &w, take, rng);
                fg_t.extend_from_slice(&fresh);
                fg_stage.extend(std::iter::repeat(Stage::Fine).take(fresh.len()));
                // Keep (t, stage) pairs sorted together.
                let mut pairs: Vec<(f64, Stage)> = fg_t.iter().copied().zip(fg_stage.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                fg_t = pairs.iter().map(|&(t, _)| t).collect();
                fg_stage = pairs.iter().map(|&(_, s)| s).collect();
                sharpness *= 2.0;
            }

            // Background: complement segments, proportional allocation.
            let mut bg_t = Vec::new();
            let front = (enter - ray.near).max(0.0);
            let back = (ray.far - exit).max(0.0);
            let total = front + back;
            if budget.background > 0 && total > 1e-9 {
                let n_front = ((budget.background as f64) * front / total).round() as usize;
                let n_back = budget.background - n_front;
                if n_front > 0 && front > 1e-9 {
                    bg_t.extend(stratified_samples(ray.near, enter, n_front, Jitter::Rng(rng)));
                }
                if n_back > 0 && back > 1e-9 {
                    bg_t.extend(stratified_samples(exit, ray.far, n_back, Jitter::Rng(rng)));
                }
            }
            SampleSet::from_parts(ray, fg_t, fg_stage, bg_t, volume)
        }
        _ => {
            // Miss: the whole budget goes to the background.
            let n = budget.coarse + budget.fine + budget.background;
            let bg_t = stratified_samples(ray.near, ray.far, n, Jitter::Rng(rng));
            SampleSet::from_parts(ray, Vec::new(), Vec::new(), bg_t, volume)
        }
    }
}

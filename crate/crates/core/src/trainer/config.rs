//! Training configuration: TOML-serializable, with full-scale defaults
//! and a desk-scale preset for fast experiments.

use crate::fields::FieldConfig;
use crate::losses::{LossWeights, SdfLossConfig};
use crate::renderer::SampleBudget;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Where the consistency target d' comes from during joint training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// The frozen pretrained geometry network (default).
    FrozenNetwork,
    /// Re-query the prior meshes directly.
    MeshQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub coarse: usize,
    pub fine: usize,
    pub background: usize,
    pub rounds: usize,
}

impl From<BudgetConfig> for SampleBudget {
    fn from(b: BudgetConfig) -> SampleBudget {
        SampleBudget { coarse: b.coarse, fine: b.fine, background: b.background, rounds: b.rounds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Train-view count (uniform stride); all views when absent.
    pub views: Option<usize>,

    pub fields: FieldConfig,

    // Geometry pretraining on prior-mesh distance samples.
    pub pretrain_steps: u64,
    pub pretrain_batch: usize,
    pub pretrain_pool: usize,
    pub pretrain_sigma_near: f64,
    pub pretrain_sigma_far: f64,
    pub pretrain_uniform_fraction: f64,
    pub pretrain_lr_start: f64,
    pub pretrain_lr_end: f64,
    pub pretrain_eikonal_points: usize,

    // Joint photometric stage.
    pub joint_steps: u64,
    pub rays_per_batch: usize,
    /// Share of the batch spent on 2x2 ray-consistency patches.
    pub patch_fraction: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weights: LossWeights,
    pub sdf_loss: SdfLossConfig,
    pub budget: BudgetConfig,
    pub prior_source: PriorSource,
    /// Disable the geometry prior (no pretrained init, sdf weight zero).
    pub no_prior: bool,
    /// Drop the ray-consistency term.
    pub no_ray_loss: bool,
    /// Drop the saturation term.
    pub no_saturation: bool,
    /// Weight-normalized ray color (the default); plain accumulation when
    /// false, kept for ablation.
    pub normalize_composite: bool,
    pub fallback_color: [f64; 3],

    pub validation_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    /// Full-scale settings: 512-ray batches, 64+64 foreground and 32
    /// background samples, cosine 5e-4 -> 2.5e-5.
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("dataset"),
            out_dir: PathBuf::from("runs/run"),
            seed: 0,
            views: None,
            fields: FieldConfig::full(),
            pretrain_steps: 5_000,
            pretrain_batch: 10_000,
            pretrain_pool: 400_000,
            pretrain_sigma_near: 0.005,
            pretrain_sigma_far: 0.05,
            pretrain_uniform_fraction: 0.05,
            pretrain_lr_start: 5e-4,
            pretrain_lr_end: 2.5e-5,
            pretrain_eikonal_points: 1024,
            joint_steps: 50_000,
            rays_per_batch: 512,
            patch_fraction: 0.25,
            lr_start: 5e-4,
            lr_end: 2.5e-5,
            weights: LossWeights::default(),
            sdf_loss: SdfLossConfig::default(),
            budget: BudgetConfig { coarse: 64, fine: 64, background: 32, rounds: 2 },
            prior_source: PriorSource::FrozenNetwork,
            no_prior: false,
            no_ray_loss: false,
            no_saturation: false,
            normalize_composite: true,
            fallback_color: [0.0; 3],
            validation_interval: 500,
            checkpoint_interval: 1000,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: small networks and budgets sized for minutes-long
    /// CPU runs.
    pub fn desk_scale() -> TrainConfig {
        TrainConfig {
            fields: FieldConfig::desk(),
            pretrain_steps: 2_000,
            pretrain_batch: 2_048,
            pretrain_pool: 60_000,
            pretrain_eikonal_points: 256,
            joint_steps: 2_000,
            rays_per_batch: 128,
            budget: BudgetConfig { coarse: 24, fine: 16, background: 8, rounds: 2 },
            validation_interval: 500,
            checkpoint_interval: 1000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 {
            return Err(Error::contract("rays_per_batch must be >= 1"));
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::contract("learning rate schedule needs lr_start > lr_end > 0"));
        }
        if !(self.pretrain_lr_start > self.pretrain_lr_end && self.pretrain_lr_end > 0.0) {
            return Err(Error::contract("pretrain schedule needs lr_start > lr_end > 0"));
        }
        if !(0.0..=1.0).contains(&self.patch_fraction) {
            return Err(Error::contract("patch_fraction must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Scene(format!("config encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        toml::from_str(text).map_err(|e| Error::Scene(format!("config parse: {e}")))
    }

    /// Stable digest of the effective configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = self.to_toml().unwrap_or_default();
        let hash = Sha256::digest(text.as_bytes());
        hex_string(&hash[..8])
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::desk_scale();
        let text = cfg.to_toml().unwrap();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn digest_tracks_changes() {
        let a = TrainConfig::desk_scale();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 99;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn validation_catches_bad_schedules() {
        let mut cfg = TrainConfig::desk_scale();
        cfg.lr_end = cfg.lr_start * 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::desk_scale();
        cfg.rays_per_batch = 0;
        assert!(cfg.validate().is_err());
    }
}

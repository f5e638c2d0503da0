//! Surface extraction (marching cubes) and quantitative evaluation
//! (PSNR, SSIM, Chamfer distance).

mod marching_cubes;
mod mc_tables;
mod metrics;

pub use marching_cubes::{marching_cubes, marching_cubes_batched};
pub use metrics::{
    chamfer, luminance, psnr, sample_mesh_surface, ssim, ssim_luma, ChamferMode,
};

use serde::{Deserialize, Serialize};

/// Per-view and aggregate metrics of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_view: Vec<ViewMetrics>,
    /// Mean PSNR over views; +infinity serializes as the string "inf".
    #[serde(with = "inf_aware")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Chamfer ground-truth -> prediction, scene units; absent without a
    /// ground-truth mesh.
    pub chamfer_one_way: Option<f64>,
    pub chamfer_bidirectional: Option<f64>,
    /// Distances are unsquared means.
    pub chamfer_kind: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    #[serde(with = "inf_aware")]
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Recompute aggregates from the per-view list (they must agree).
    pub fn aggregates_consistent(&self) -> bool {
        if self.per_view.is_empty() {
            return true;
        }
        let mp = self.per_view.iter().map(|v| v.psnr).sum::<f64>() / self.per_view.len() as f64;
        let ms = self.per_view.iter().map(|v| v.ssim).sum::<f64>() / self.per_view.len() as f64;
        let psnr_ok = if mp.is_infinite() {
            self.mean_psnr.is_infinite()
        } else {
            (mp - self.mean_psnr).abs() < 1e-9
        };
        psnr_ok && (ms - self.mean_ssim).abs() < 1e-9
    }
}

/// JSON has no Inf; encode it as the string "inf".
mod inf_aware {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            "inf".serialize(s)
        } else {
            v.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum V {
            N(f64),
            S(String),
        }
        Ok(match V::deserialize(d)? {
            V::N(v) => v,
            V::S(s) if s.starts_with('-') => f64::NEG_INFINITY,
            V::S(_s) => f64::INFINITY,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_serializes_infinity() {
        let report = MetricReport {
            per_view: vec![ViewMetrics { view: "v0".into(), psnr: f64::INFINITY, ssim: 1.0 }],
            mean_psnr: f64::INFINITY,
            mean_ssim: 1.0,
            chamfer_one_way: None,
            chamfer_bidirectional: None,
            chamfer_kind: "unsquared-mean".into(),
            config_digest: "abc".into(),
        };
        assert!(report.aggregates_consistent());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert!(back.mean_psnr.is_infinite());
    }
}

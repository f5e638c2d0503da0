//! Dataset manifest, scene loading, normalization, and validation.
//!
//! A dataset directory holds `manifest.json`, a cameras JSON file, one
//! image per view, and an OBJ of prior meshes (one named group per
//! object). At load time the scene is normalized so the union of prior
//! boxes fits the canonical [-1, 1]^3 cube; the transform is kept with the
//! scene so outputs can be mapped back to the original units.

use crate::geom::{Aabb, Camera, CameraRecord, Vec3};
use crate::mesh::{bounding_box, load_obj, TriangleMesh, DEFAULT_BOX_MARGIN};
use crate::renderer::ForegroundVolume;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One view entry of the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEntry {
    pub file: String,
    pub camera: String,
}

/// `manifest.json` schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cameras: String,
    pub images: Vec<ImageEntry>,
    pub prior_meshes: String,
    #[serde(default)]
    pub gt_mesh: Option<String>,
    /// Near/far in original world units; derived from the scene when
    /// absent.
    #[serde(default)]
    pub near: Option<f64>,
    #[serde(default)]
    pub far: Option<f64>,
    /// Pinned train/test split by camera id; derived from `--views`
    /// selection when absent.
    #[serde(default)]
    pub train_views: Option<Vec<String>>,
    #[serde(default)]
    pub test_views: Option<Vec<String>>,
}

/// Cameras JSON file: a convention tag plus camera records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CamerasFile {
    /// "world_to_camera" (default) or "camera_to_world"; the latter is
    /// inverted at load time.
    #[serde(default = "default_convention")]
    pub convention: String,
    pub cameras: Vec<CameraRecord>,
}

fn default_convention() -> String {
    "world_to_camera".into()
}

/// Similarity mapping original world units to the normalized scene frame:
/// `p_scene = scale * (p_world - center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneNormalization {
    pub scale: f64,
    pub center: [f64; 3],
}

impl SceneNormalization {
    pub fn identity() -> SceneNormalization {
        SceneNormalization { scale: 1.0, center: [0.0; 3] }
    }

    pub fn to_scene(&self, p: Vec3) -> Vec3 {
        (p - Vec3::new(self.center[0], self.center[1], self.center[2])) * self.scale
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        p / self.scale + Vec3::new(self.center[0], self.center[1], self.center[2])
    }
}

/// A loaded, normalized scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub root: PathBuf,
    pub cameras: Vec<Camera>,
    /// Images as linear [0,1] rgb rows, aligned with `cameras`.
    pub images: Vec<Vec<[f64; 3]>>,
    pub priors: Vec<TriangleMesh>,
    pub gt_mesh: Option<Vec<TriangleMesh>>,
    pub volume: ForegroundVolume,
    pub near: f64,
    pub far: f64,
    pub normalization: SceneNormalization,
    pub manifest: DatasetManifest,
}

impl Scene {
    pub fn camera_index(&self, id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }

    /// Uniform-stride view selection over the camera ordering: `n` train
    /// views, the rest test views.
    pub fn split_views(&self, n_train: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let total = self.cameras.len();
        if n_train == 0 || n_train > total {
            return Err(Error::contract(format!(
                "cannot train on {n_train} of {total} views"
            )));
        }
        if let (Some(train), Some(test)) = (&self.manifest.train_views, &self.manifest.test_views) {
            // Manifest pins the split; honor it and ignore the stride.
            let resolve = |ids: &[String]| -> Result<Vec<usize>> {
                ids.iter()
                    .map(|id| {
                        self.camera_index(id)
                            .ok_or_else(|| Error::scene(format!("split names unknown camera {id}")))
                    })
                    .collect()
            };
            return Ok((resolve(train)?, resolve(test)?));
        }
        let mut train = Vec::with_capacity(n_train);
        for k in 0..n_train {
            train.push(k * total / n_train);
        }
        train.dedup();
        let test: Vec<usize> = (0..total).filter(|i| !train.contains(i)).collect();
        Ok((train, test))
    }
}

/// Load and normalize a dataset directory.
pub fn load_scene(root: &Path) -> Result<Scene> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json"))?)?;
    let cams_file: CamerasFile =
        serde_json::from_str(&std::fs::read_to_string(root.join(&manifest.cameras))?)?;
    let invert = match cams_file.convention.as_str() {
        "world_to_camera" => false,
        "camera_to_world" => true,
        other => {
            return Err(Error::scene(format!(
                "unknown extrinsics convention '{other}'"
            )))
        }
    };

    // Cameras in manifest image order.
    let mut cameras = Vec::new();
    let mut images = Vec::new();
    for entry in &manifest.images {
        let rec = cams_file
            .cameras
            .iter()
            .find(|c| c.id == entry.camera)
            .ok_or_else(|| {
                Error::scene(format!(
                    "image {} references missing camera {}",
                    entry.file, entry.camera
                ))
            })?;
        let cam = Camera::from_record(rec, invert)?;
        let img = image::open(root.join(&entry.file))
            .map_err(|e| Error::scene(format!("image {}: {e}", entry.file)))?
            .into_rgb8();
        if (img.width(), img.height()) != (cam.width, cam.height) {
            return Err(Error::scene(format!(
                "image {} is {}x{}, camera says {}x{}",
                entry.file,
                img.width(),
                img.height(),
                cam.width,
                cam.height
            )));
        }
        let pixels: Vec<[f64; 3]> = img
            .pixels()
            .map(|p| [
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ])
            .collect();
        cameras.push(cam);
        images.push(pixels);
    }

    let priors = load_obj(&root.join(&manifest.prior_meshes))?;
    let gt_mesh = match &manifest.gt_mesh {
        Some(rel) => Some(load_obj(&root.join(rel))?),
        None => None,
    };

    // Normalization from the union of margin-inflated prior boxes.
    let mut union: Option<Aabb> = None;
    for m in &priors {
        let b = bounding_box(m, DEFAULT_BOX_MARGIN)?;
        union = Some(match union {
            Some(u) => u.union(&b),
            None => b,
        });
    }
    let union = union.ok_or_else(|| Error::scene("no prior meshes"))?;
    let center = union.center();
    let extent = union.diagonal();
    let half = (extent.x.max(extent.y).max(extent.z)) * 0.5;
    // Leave breathing room inside the canonical cube.
    let scale = if half > 1e-9 { 0.9 / half } else { 1.0 };
    let normalization = if (scale - 1.0).abs() < 1e-9 && center.norm() < 1e-9 {
        SceneNormalization::identity()
    } else {
        SceneNormalization { scale, center: [center.x, center.y, center.z] }
    };

    // Apply: mesh vertices and camera extrinsics; pixels are unaffected.
    let norm_mesh = |m: &TriangleMesh| -> TriangleMesh {
        TriangleMesh {
            name: m.name.clone(),
            vertices: m.vertices.iter().map(|&v| normalization.to_scene(v)).collect(),
            faces: m.faces.clone(),
            watertight: m.watertight,
        }
    };
    let priors: Vec<TriangleMesh> = priors.iter().map(norm_mesh).collect();
    let gt_mesh = gt_mesh.map(|ms| ms.iter().map(norm_mesh).collect::<Vec<_>>());
    let cameras: Vec<Camera> = cameras
        .into_iter()
        .map(|c| {
            // x_cam' = s (R x_w + t) for x_w = x'/s + c:
            // R stays, t' = s (R c + t); projection is scale-invariant.
            let t_new = (c.rotation * center + c.translation) * normalization.scale;
            Camera::new(c.id, c.intrinsics, c.rotation, t_new, c.width, c.height)
        })
        .collect::<Result<Vec<_>>>()?;

    let volume = ForegroundVolume::from_priors(&priors)?;

    // Near/far: manifest values are original units; otherwise derive from
    // camera distances to the canonical cube.
    let (near, far) = match (manifest.near, manifest.far) {
        (Some(n), Some(f)) => (n * normalization.scale, f * normalization.scale),
        _ => {
            let mut near = f64::INFINITY;
            let mut far: f64 = 0.0;
            for c in &cameras {
                let dist = c.center().norm();
                near = near.min((dist - 2.0).max(0.05));
                far = far.max(dist + 2.0);
            }
            (near, far)
        }
    };

    Ok(Scene {
        root: root.to_path_buf(),
        cameras,
        images,
        priors,
        gt_mesh,
        volume,
        near,
        far,
        normalization,
        manifest,
    })
}

/// One validation finding: a named violation or a warning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: String,
    pub field: String,
    pub message: String,
}

/// Dataset validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub camera_count: usize,
    pub image_count: usize,
    pub prior_count: usize,
    pub watertight_priors: usize,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity == "error")
    }
}

/// Check manifest invariants, camera orthonormality, referenced files,
/// split disjointness, and prior watertightness without loading images.
pub fn validate_dataset(root: &Path) -> Result<ValidationReport> {
    let mut issues: Vec<ValidationIssue> = Vec::new();
    fn err(issues: &mut Vec<ValidationIssue>, field: &str, message: String) {
        issues.push(ValidationIssue { severity: "error".into(), field: field.into(), message });
    }

    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json"))?)?;

    let cams_file: Option<CamerasFile> =
        match std::fs::read_to_string(root.join(&manifest.cameras)) {
            Ok(text) => match serde_json::from_str(&text) {
                Ok(f) => Some(f),
                Err(e) => {
                    err(&mut issues, "cameras", format!("{}: {e}", manifest.cameras));
                    None
                }
            },
            Err(e) => {
                err(&mut issues, "cameras", format!("{}: {e}", manifest.cameras));
                None
            }
        };

    let mut camera_count = 0;
    if let Some(f) = &cams_file {
        camera_count = f.cameras.len();
        for rec in &f.cameras {
            match Camera::from_record(rec, f.convention == "camera_to_world") {
                Ok(c) => {
                    if let Err(e) = c.validate() {
                        err(&mut issues, "camera", format!("{}: {e}", rec.id));
                    }
                }
                Err(e) => err(&mut issues, "camera", format!("{}: {e}", rec.id)),
            }
        }
        for entry in &manifest.images {
            if !f.cameras.iter().any(|c| c.id == entry.camera) {
                err(&mut issues, "images", format!("{} references missing camera {}", entry.file, entry.camera));
            }
        }
    }
    for entry in &manifest.images {
        if !root.join(&entry.file).exists() {
            err(&mut issues, "images", format!("missing file {}", entry.file));
        }
    }

    if let (Some(train), Some(test)) = (&manifest.train_views, &manifest.test_views) {
        for id in train {
            if test.contains(id) {
                err(&mut issues, "split", format!("camera {id} is in both train and test sets"));
            }
        }
    }

    let mut prior_count = 0;
    let mut watertight = 0;
    match load_obj(&root.join(&manifest.prior_meshes)) {
        Ok(meshes) => {
            prior_count = meshes.len();
            for m in &meshes {
                if m.watertight {
                    watertight += 1;
                } else {
                    issues.push(ValidationIssue {
                        severity: "warning".into(),
                        field: "priors".into(),
                        message: format!(
                            "mesh '{}' is not watertight; signed queries unavailable (unsigned mode only)",
                            m.name
                        ),
                    });
                }
            }
        }
        Err(e) => err(&mut issues, "priors", e.to_string()),
    }

    if let Some(gt) = &manifest.gt_mesh {
        if !root.join(gt).exists() {
            err(&mut issues, "gt_mesh", format!("missing file {gt}"));
        }
    }

    Ok(ValidationReport {
        issues,
        camera_count,
        image_count: manifest.images.len(),
        prior_count,
        watertight_priors: watertight,
    })
}

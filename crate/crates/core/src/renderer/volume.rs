//! Foreground volume: the union of per-object margin-inflated boxes, with
//! optional post-training edits (omit / rigid transform) per object.

use crate::geom::{apply_rigid, slab_interval, Aabb, Ray, RigidTransform, Vec3};
use crate::mesh::{bounding_box, TriangleMesh, DEFAULT_BOX_MARGIN};
use crate::{Error, Result};

/// Post-training manipulation of one object.
#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    None,
    Omit,
    Transform(RigidTransform),
}

#[derive(Debug, Clone)]
pub struct VolumeEntry {
    pub id: String,
    pub bounds: Aabb,
    pub edit: Edit,
}

/// `B = union of B_j`, each box derived from one prior mesh.
#[derive(Debug, Clone)]
pub struct ForegroundVolume {
    entries: Vec<VolumeEntry>,
}

impl ForegroundVolume {
    pub fn new(entries: Vec<VolumeEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::contract("foreground volume needs at least one box"));
        }
        Ok(ForegroundVolume { entries })
    }

    /// Boxes from prior meshes with the standard margin.
    pub fn from_priors(meshes: &[TriangleMesh]) -> Result<Self> {
        Self::from_priors_with_margin(meshes, DEFAULT_BOX_MARGIN)
    }

    pub fn from_priors_with_margin(meshes: &[TriangleMesh], margin: f64) -> Result<Self> {
        let entries = meshes
            .iter()
            .map(|m| {
                Ok(VolumeEntry {
                    id: m.name.clone(),
                    bounds: bounding_box(m, margin)?,
                    edit: Edit::None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ForegroundVolume::new(entries)
    }

    pub fn entries(&self) -> &[VolumeEntry] {
        &self.entries
    }

    /// Replace the edit of object `id`; unknown ids are contract errors.
    pub fn set_edit(&mut self, id: &str, edit: Edit) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::contract(format!("unknown object id '{id}'")))?;
        entry.edit = edit;
        Ok(())
    }

    pub fn clear_edits(&mut self) {
        for e in &mut self.entries {
            e.edit = Edit::None;
        }
    }

    pub fn has_edits(&self) -> bool {
        self.entries.iter().any(|e| e.edit != Edit::None)
    }

    /// Index of the first active (non-omitted) box containing `p`, testing
    /// edited boxes through the inverse transform.
    pub fn containing_entry(&self, p: Vec3) -> Option<usize> {
        for (i, e) in self.entries.iter().enumerate() {
            match &e.edit {
                Edit::Omit => continue,
                Edit::None => {
                    if e.bounds.contains(p) {
                        return Some(i);
                    }
                }
                Edit::Transform(tf) => {
                    if e.bounds.contains(apply_rigid(&tf.inverse(), p)) {
                        return Some(i);
                    }
                }
            }
        }
        None
    }

    /// Box-membership indicator b(p): 1 inside any active box, else 0.
    pub fn classify_point(&self, p: Vec3) -> bool {
        self.containing_entry(p).is_some()
    }

    /// Map a world point into the canonical (pre-edit) frame of its
    /// containing entry, with the edit's scale factor for SDF correction.
    pub fn canonical_point(&self, entry: usize, p: Vec3) -> (Vec3, f64) {
        match &self.entries[entry].edit {
            Edit::Transform(tf) => (apply_rigid(&tf.inverse(), p), tf.scale),
            _ => (p, 1.0),
        }
    }

    /// Intersection of the ray with the union of active boxes, as the
    /// hull interval `(earliest entry, latest exit)` within the ray range.
    pub fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut enter = f64::INFINITY;
        let mut exit = f64::NEG_INFINITY;
        for e in &self.entries {
            let hit = match &e.edit {
                Edit::Omit => None,
                Edit::None => slab_interval(ray.origin, ray.direction, ray.near, ray.far, &e.bounds),
                Edit::Transform(tf) => {
                    // Intersect in the box's local frame; keeping the
                    // direction unnormalized preserves the world t units.
                    let inv = tf.inverse();
                    let o = apply_rigid(&inv, ray.origin);
                    let d = inv.rotation_m() * ray.direction * inv.scale;
                    slab_interval(o, d, ray.near, ray.far, &e.bounds)
                }
            };
            if let Some((t0, t1)) = hit {
                enter = enter.min(t0);
                exit = exit.max(t1);
            }
        }
        (enter <= exit).then_some((enter, exit))
    }
}

/// Parsed edit command from the CLI surface.
#[derive(Debug, Clone, PartialEq)]
pub enum EditCommand {
    Omit { id: String },
    Translate { id: String, offset: Vec3 },
    Rotate { id: String, axis: usize, degrees: f64 },
    Scale { id: String, factor: f64 },
}

impl EditCommand {
    pub fn id(&self) -> &str {
        match self {
            EditCommand::Omit { id }
            | EditCommand::Translate { id, .. }
            | EditCommand::Rotate { id, .. }
            | EditCommand::Scale { id, .. } => id,
        }
    }

    pub fn to_edit(&self) -> Result<Edit> {
        Ok(match self {
            EditCommand::Omit { .. } => Edit::Omit,
            EditCommand::Translate { offset, .. } => {
                Edit::Transform(RigidTransform::translation_of(*offset))
            }
            EditCommand::Rotate { axis, degrees, .. } => {
                Edit::Transform(RigidTransform::rotation_about_axis(*axis, *degrees)?)
            }
            EditCommand::Scale { factor, .. } => {
                if !(*factor > 0.0) {
                    return Err(Error::contract("scale factor must be positive"));
                }
                Edit::Transform(RigidTransform::scaling(*factor)?)
            }
        })
    }
}

/// Apply edit commands to a copy of the volume.
pub fn apply_edits(volume: &ForegroundVolume, edits: &[EditCommand]) -> Result<ForegroundVolume> {
    let mut out = volume.clone();
    for cmd in edits {
        out.set_edit(cmd.id(), cmd.to_edit()?)?;
    }
    Ok(out)
}

/// Prior meshes with edits applied (omitted objects dropped), for prior
/// depth rasterization of an edited scene.
pub fn edited_priors(priors: &[TriangleMesh], volume: &ForegroundVolume) -> Vec<TriangleMesh> {
    let mut out = Vec::new();
    for mesh in priors {
        match volume.entries.iter().find(|e| e.id == mesh.name) {
            Some(e) => match &e.edit {
                Edit::Omit => {}
                Edit::None => out.push(mesh.clone()),
                Edit::Transform(tf) => out.push(mesh.transformed(tf)),
            },
            None => out.push(mesh.clone()),
        }
    }
    out
}

use super::{Ray, Vec3};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned box with `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        for i in 0..3 {
            if !(min[i] <= max[i]) {
                return Err(Error::contract(format!(
                    "aabb min must be <= max, axis {i}: {} > {}",
                    min[i], max[i]
                )));
            }
        }
        Ok(Aabb {
            min: [min.x, min.y, min.z],
            max: [max.x, max.y, max.z],
        })
    }

    /// Smallest box containing all `points`; fails on an empty set.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut seen = false;
        for p in points {
            seen = true;
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        if !seen {
            return Err(Error::contract("aabb of an empty point set"));
        }
        Ok(Aabb { min, max })
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::new(self.min[0], self.min[1], self.min[2])
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::new(self.max[0], self.max[1], self.max[2])
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn diagonal(&self) -> Vec3 {
        self.max_v() - self.min_v()
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Grow by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            max: [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut min = self.min;
        let mut max = self.max;
        for i in 0..3 {
            min[i] = min[i].min(other.min[i]);
            max[i] = max[i].max(other.max[i]);
        }
        Aabb { min, max }
    }
}

/// Slab-method ray/box intersection, clipped to the ray's `[near, far]`.
///
/// Returns `Some((t_enter, t_exit))` when the clipped interval is nonempty.
pub fn ray_aabb_intersect(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    slab_interval(ray.origin, ray.direction, ray.near, ray.far, bounds)
}

/// Slab test with a raw (possibly unnormalized) direction; the returned
/// parameters are in the units of `dir`. Directions parallel to a face are
/// handled with an explicit origin-inside-slab check, avoiding the
/// division blow-up.
pub fn slab_interval(origin: Vec3, dir: Vec3, t_min: f64, t_max: f64, bounds: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = t_min;
    let mut t1 = t_max;
    for i in 0..3 {
        let o = origin[i];
        let d = dir[i];
        if d == 0.0 {
            // Parallel to this slab: either always inside it or never.
            if o < bounds.min[i] || o > bounds.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (bounds.min[i] - o) * inv;
        let mut tb = (bounds.max[i] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

use super::Vec3;
use crate::{Error, Result};

/// A ray with a unit direction and a valid `[near, far]` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// Origin in world units.
    pub origin: Vec3,
    /// Unit-length direction.
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    /// Build a ray, normalizing `direction`.
    ///
    /// Fails on a zero-length direction or `near >= far`.
    pub fn new(origin: Vec3, direction: Vec3, near: f64, far: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::contract("ray direction must be nonzero and finite"));
        }
        if !(near < far) {
            return Err(Error::contract(format!(
                "ray requires near < far, got {near} >= {far}"
            )));
        }
        Ok(Ray {
            origin,
            direction: direction / norm,
            near,
            far,
        })
    }

    /// Point at parameter `t`: `origin + t * direction`.
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_is_normalized() {
        let r = Ray::new(Vec3::zeros(), Vec3::new(3.0, 0.0, 4.0), 0.1, 10.0).unwrap();
        assert!((r.direction.norm() - 1.0).abs() < 1e-9);
        assert!((r.direction - Vec3::new(0.6, 0.0, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_range() {
        assert!(Ray::new(Vec3::zeros(), Vec3::x(), 2.0, 1.0).is_err());
        assert!(Ray::new(Vec3::zeros(), Vec3::zeros(), 0.0, 1.0).is_err());
    }
}

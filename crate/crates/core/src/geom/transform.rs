use super::{Mat3, Vec3};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Similarity transform `p -> scale * R * p + t` with `det(R) = +1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Row-major 3x3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3, scale: f64) -> Result<Self> {
        let tf = RigidTransform {
            rotation: [
                [rotation[(0, 0)], rotation[(0, 1)], rotation[(0, 2)]],
                [rotation[(1, 0)], rotation[(1, 1)], rotation[(1, 2)]],
                [rotation[(2, 0)], rotation[(2, 1)], rotation[(2, 2)]],
            ],
            translation: [translation.x, translation.y, translation.z],
            scale,
        };
        tf.validate()?;
        Ok(tf)
    }

    pub fn translation_of(t: Vec3) -> Self {
        RigidTransform {
            translation: [t.x, t.y, t.z],
            ..RigidTransform::identity()
        }
    }

    /// Rotation of `degrees` about a principal axis (0 = x, 1 = y, 2 = z).
    pub fn rotation_about_axis(axis: usize, degrees: f64) -> Result<Self> {
        let r = degrees.to_radians();
        let (s, c) = r.sin_cos();
        let m = match axis {
            0 => Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            1 => Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            2 => Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            _ => return Err(Error::contract(format!("axis must be 0..3, got {axis}"))),
        };
        RigidTransform::new(m, Vec3::zeros(), 1.0)
    }

    pub fn scaling(k: f64) -> Result<Self> {
        RigidTransform::new(Mat3::identity(), Vec3::zeros(), k)
    }

    pub fn rotation_m(&self) -> Mat3 {
        Mat3::new(
            self.rotation[0][0], self.rotation[0][1], self.rotation[0][2],
            self.rotation[1][0], self.rotation[1][1], self.rotation[1][2],
            self.rotation[2][0], self.rotation[2][1], self.rotation[2][2],
        )
    }

    pub fn translation_v(&self) -> Vec3 {
        Vec3::new(self.translation[0], self.translation[1], self.translation[2])
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_m();
        let dev = (r.transpose() * r - Mat3::identity()).norm();
        if dev > 1e-6 {
            return Err(Error::contract(format!(
                "rotation not orthonormal (|R'R - I| = {dev:.2e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::contract("rotation must have det +1"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::contract("scale must be positive"));
        }
        Ok(())
    }

    /// Composition `self . other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let r = self.rotation_m() * other.rotation_m();
        let t = self.rotation_m() * other.translation_v() * self.scale + self.translation_v();
        RigidTransform {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            scale: self.scale * other.scale,
        }
    }

    /// Inverse transform: `p -> R'/scale * (p - t)`.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation_m().transpose();
        let t = -(rt * self.translation_v()) / self.scale;
        RigidTransform {
            rotation: [
                [rt[(0, 0)], rt[(0, 1)], rt[(0, 2)]],
                [rt[(1, 0)], rt[(1, 1)], rt[(1, 2)]],
                [rt[(2, 0)], rt[(2, 1)], rt[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            scale: 1.0 / self.scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        self == &RigidTransform::identity()
    }
}

/// Apply the transform: `scale * R * p + t`.
///
/// The identity transform returns `p` bitwise.
pub fn apply_rigid(tf: &RigidTransform, p: Vec3) -> Vec3 {
    if tf.is_identity() {
        return p;
    }
    tf.rotation_m() * p * tf.scale + tf.translation_v()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_is_bitwise() {
        let p = Vec3::new(0.1 + 0.2, -7.3e11, f64::MIN_POSITIVE);
        let q = apply_rigid(&RigidTransform::identity(), p);
        assert_eq!(p.x.to_bits(), q.x.to_bits());
        assert_eq!(p.y.to_bits(), q.y.to_bits());
        assert_eq!(p.z.to_bits(), q.z.to_bits());
    }

    #[test]
    fn pure_translation() {
        let tf = RigidTransform::translation_of(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(apply_rigid(&tf, Vec3::zeros()), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let tf = RigidTransform::rotation_about_axis(2, 90.0).unwrap();
        let q = apply_rigid(&tf, Vec3::new(1.0, 0.0, 0.0));
        assert!((q - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = RigidTransform::new(
            RigidTransform::rotation_about_axis(2, 40.0).unwrap().rotation_m(),
            Vec3::new(1.0, -2.0, 0.5),
            1.3,
        )
        .unwrap();
        let b = RigidTransform::new(
            RigidTransform::rotation_about_axis(0, -25.0).unwrap().rotation_m(),
            Vec3::new(-0.2, 0.7, 2.0),
            0.8,
        )
        .unwrap();
        let p = Vec3::new(0.3, -0.6, 1.1);
        let sequential = apply_rigid(&a, apply_rigid(&b, p));
        let composed = apply_rigid(&a.compose(&b), p);
        assert!((sequential - composed).norm() < 1e-12);
        // Composing with the inverse lands on a near-exact identity.
        let round = a.compose(&a.inverse());
        let q = apply_rigid(&round, p);
        assert!((q - p).norm() < 1e-12);
    }

    #[test]
    fn inverse_round_trips() {
        let tf = RigidTransform::new(
            RigidTransform::rotation_about_axis(1, 33.0).unwrap().rotation_m(),
            Vec3::new(0.3, -0.7, 2.0),
            1.7,
        )
        .unwrap();
        let inv = tf.inverse();
        let p = Vec3::new(0.2, 0.4, -0.9);
        let back = apply_rigid(&inv, apply_rigid(&tf, p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn preserves_distances_up_to_scale() {
        let mut rng = StdRng::seed_from_u64(11);
        let tf = RigidTransform::new(
            RigidTransform::rotation_about_axis(0, 71.0).unwrap().rotation_m(),
            Vec3::new(5.0, -1.0, 0.25),
            0.6,
        )
        .unwrap();
        for _ in 0..200 {
            let a = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let b = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let d0 = (a - b).norm();
            let d1 = (apply_rigid(&tf, a) - apply_rigid(&tf, b)).norm();
            assert!((d1 - tf.scale * d0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_reflection() {
        let m = Mat3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vec3::zeros(), 1.0).is_err());
    }
}

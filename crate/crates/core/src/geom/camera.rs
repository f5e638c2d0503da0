use super::{Mat3, Ray, Vec3};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A calibrated pinhole camera.
///
/// Extrinsics are world-to-camera: `x_cam = R * x_world + t`. Datasets that
/// store camera-to-world matrices are inverted at load time (see
/// [`crate::scene`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    /// Intrinsics in pixels; zero skew unless the dataset provides one.
    pub intrinsics: Mat3,
    /// World-to-camera rotation (orthonormal).
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

/// On-disk camera record: one entry of the cameras JSON array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    /// 3x3 intrinsics, row-major.
    pub k: Vec<f64>,
    /// 4x4 extrinsics, row-major.
    pub world_to_camera: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Mat3,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            id: id.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Check the type invariants: orthonormal rotation, positive focal
    /// lengths, nonzero resolution.
    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        let dev = (rtr - Mat3::identity()).norm();
        if dev > 1e-6 {
            return Err(Error::contract(format!(
                "camera {}: rotation not orthonormal (|R'R - I| = {dev:.2e})",
                self.id
            )));
        }
        if !(self.intrinsics[(0, 0)] > 0.0 && self.intrinsics[(1, 1)] > 0.0) {
            return Err(Error::contract(format!(
                "camera {}: focal entries must be positive",
                self.id
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract(format!(
                "camera {}: resolution must be positive",
                self.id
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates: `-R' * t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Same pose at a different resolution; intrinsics rescale with it.
    pub fn scaled_to(&self, width: u32, height: u32) -> Result<Camera> {
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut k = self.intrinsics;
        k[(0, 0)] *= sx;
        k[(0, 1)] *= sx;
        k[(0, 2)] *= sx;
        k[(1, 1)] *= sy;
        k[(1, 2)] *= sy;
        Camera::new(self.id.clone(), k, self.rotation, self.translation, width, height)
    }

    /// Project a world point to continuous pixel coordinates and camera depth.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let pc = self.rotation * p + self.translation;
        let uvw = self.intrinsics * pc;
        (uvw.x / uvw.z, uvw.y / uvw.z, pc.z)
    }

    pub fn from_record(rec: &CameraRecord, invert_extrinsics: bool) -> Result<Self> {
        if rec.k.len() != 9 {
            return Err(Error::contract(format!(
                "camera {}: K must have 9 entries, got {}",
                rec.id,
                rec.k.len()
            )));
        }
        if rec.world_to_camera.len() != 16 {
            return Err(Error::contract(format!(
                "camera {}: extrinsics must have 16 entries, got {}",
                rec.id,
                rec.world_to_camera.len()
            )));
        }
        let k = Mat3::from_row_slice(&rec.k);
        let m = super::Mat4::from_row_slice(&rec.world_to_camera);
        let m = if invert_extrinsics {
            m.try_inverse().ok_or_else(|| {
                Error::contract(format!("camera {}: extrinsics not invertible", rec.id))
            })?
        } else {
            m
        };
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Camera::new(rec.id.clone(), k, rotation, translation, rec.width, rec.height)
    }

    pub fn to_record(&self) -> CameraRecord {
        let mut w2c = vec![0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                w2c[r * 4 + c] = self.rotation[(r, c)];
            }
            w2c[r * 4 + 3] = self.translation[r];
        }
        w2c[15] = 1.0;
        // nalgebra is column-major; records are row-major.
        let mut k = vec![0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                k[r * 3 + c] = self.intrinsics[(r, c)];
            }
        }
        CameraRecord {
            id: self.id.clone(),
            k,
            world_to_camera: w2c,
            width: self.width,
            height: self.height,
        }
    }
}

/// Back-project continuous pixel coordinates `(u, v)` to a world ray.
///
/// `(u, v)` are used as-is: callers generating per-pixel rays pass
/// `(i + 0.5, j + 0.5)` for pixel index `(i, j)` so rays go through pixel
/// centers. Fails when the coordinates fall outside `[0, w) x [0, h)`.
pub fn ray_from_pixel(camera: &Camera, pixel: (f64, f64), near: f64, far: f64) -> Result<Ray> {
    let (u, v) = pixel;
    if !(u >= 0.0 && u < camera.width as f64 && v >= 0.0 && v < camera.height as f64) {
        return Err(Error::contract(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    let k_inv = camera
        .intrinsics
        .try_inverse()
        .ok_or_else(|| Error::contract("singular camera intrinsics"))?;
    let dir_cam = k_inv * Vec3::new(u, v, 1.0);
    let dir_world = camera.rotation.transpose() * dir_cam;
    Ray::new(camera.center(), dir_world, near, far)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_camera(f: f64, w: u32, h: u32, rotation: Mat3, translation: Vec3) -> Camera {
        let k = Mat3::new(f, 0.0, w as f64 / 2.0, 0.0, f, h as f64 / 2.0, 0.0, 0.0, 1.0);
        Camera::new("cam", k, rotation, translation, w, h).unwrap()
    }

    #[test]
    fn principal_axis_through_image_center() {
        let cam = test_camera(50.0, 64, 64, Mat3::identity(), Vec3::zeros());
        let ray = ray_from_pixel(&cam, (32.0, 32.0), 0.1, 10.0).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(ray.origin.norm() < 1e-12);
    }

    #[test]
    fn translated_camera_moves_origin_only() {
        // World-to-camera translation t = -R*c with c = (0,0,-5).
        let cam = test_camera(50.0, 64, 64, Mat3::identity(), Vec3::new(0.0, 0.0, 5.0));
        let ray = ray_from_pixel(&cam, (32.0, 32.0), 0.1, 10.0).unwrap();
        assert!((ray.origin - Vec3::new(0.0, 0.0, -5.0)).norm() < 1e-12);
        assert!((ray.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn off_center_pixel_back_projects_through_k_inverse() {
        // Hand back-projection: K^{-1} (cx + f, cy, 1) = (1, 0, 1).
        let f = 50.0;
        let cam = test_camera(f, 200, 200, Mat3::identity(), Vec3::zeros());
        let (cx, cy) = (100.0, 100.0);
        let ray = ray_from_pixel(&cam, (cx + f, cy), 0.1, 10.0).unwrap();
        let expect = Vec3::new(1.0, 0.0, 1.0).normalize();
        assert!((ray.direction - expect).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_errors() {
        let cam = test_camera(50.0, 64, 64, Mat3::identity(), Vec3::zeros());
        assert!(ray_from_pixel(&cam, (64.0, 1.0), 0.1, 10.0).is_err());
        assert!(ray_from_pixel(&cam, (-0.1, 1.0), 0.1, 10.0).is_err());
    }

    #[test]
    fn project_recovers_pixel() {
        // Round trip through a rotated + translated camera.
        let angle = 0.35_f64;
        let rot = Mat3::new(
            angle.cos(), 0.0, angle.sin(),
            0.0, 1.0, 0.0,
            -angle.sin(), 0.0, angle.cos(),
        );
        let cam = test_camera(80.0, 128, 96, rot, Vec3::new(0.2, -0.1, 4.0));
        for &(u, v) in &[(10.25, 20.5), (63.5, 47.5), (100.0, 90.0)] {
            let ray = ray_from_pixel(&cam, (u, v), 0.1, 50.0).unwrap();
            for &t in &[0.7, 2.0, 19.0] {
                let (pu, pv, depth) = cam.project(ray.at(t));
                assert!(depth > 0.0);
                assert!((pu - u).abs() < 1e-6, "u: {pu} vs {u}");
                assert!((pv - v).abs() < 1e-6, "v: {pv} vs {v}");
            }
        }
    }

    #[test]
    fn record_round_trip_and_inversion() {
        let angle = 1.1_f64;
        let rot = Mat3::new(
            angle.cos(), -angle.sin(), 0.0,
            angle.sin(), angle.cos(), 0.0,
            0.0, 0.0, 1.0,
        );
        let cam = test_camera(42.0, 32, 32, rot, Vec3::new(1.0, 2.0, 3.0));
        let rec = cam.to_record();
        let back = Camera::from_record(&rec, false).unwrap();
        assert!((back.rotation - cam.rotation).norm() < 1e-12);
        assert!((back.translation - cam.translation).norm() < 1e-12);

        // Feeding the inverse matrix with the invert flag recovers the camera.
        let mut c2w = super::super::Mat4::identity();
        c2w.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation.transpose());
        let c = cam.center();
        c2w[(0, 3)] = c.x;
        c2w[(1, 3)] = c.y;
        c2w[(2, 3)] = c.z;
        let mut rec2 = rec.clone();
        rec2.world_to_camera = (0..16).map(|i| c2w[(i / 4, i % 4)]).collect();
        let back2 = Camera::from_record(&rec2, true).unwrap();
        assert!((back2.rotation - cam.rotation).norm() < 1e-9);
        assert!((back2.translation - cam.translation).norm() < 1e-9);
    }
}

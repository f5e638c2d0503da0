//! Deterministic geometry primitives: cameras, rays, boxes, rigid
//! transforms, positional encoding, stratified sampling.
//!
//! Everything here is a pure function over immutable inputs and safe for
//! unrestricted parallel use.

mod aabb;
mod camera;
mod encoding;
mod ray;
mod sampling;
mod transform;

pub use aabb::{ray_aabb_intersect, slab_interval, Aabb};
pub use camera::{ray_from_pixel, Camera, CameraRecord};
pub use encoding::{encoded_len, positional_encode, positional_encode_into};
pub use ray::Ray;
pub use sampling::{stratified_samples, Jitter};
pub use transform::{apply_rigid, RigidTransform};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;

//! Prior triangle meshes: loading, signed-distance queries, pretraining
//! sample generation, depth rasterization, and foreground box derivation.

mod bvh;
mod obj;
mod raster;
mod sample;
mod sdf;
pub mod shapes;

pub use bvh::TriBvh;
pub use obj::{load_obj, save_obj};
pub use raster::{rasterize_prior_depth, DepthMap};
pub use sample::{sample_training_points, Provenance, SdfSampleSet};
pub use sdf::{
    mesh_signed_distance, point_triangle_closest, ray_triangle_intersect, winding_number,
    MeshDistanceField, SceneDistanceField,
};

use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};
use std::collections::HashMap;

/// Indexed triangle mesh; one per object in a scene.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub name: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Every edge shared by exactly two faces. Required for sign queries.
    pub watertight: bool,
}

impl TriangleMesh {
    pub fn new(name: impl Into<String>, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() || vertices.is_empty() {
            return Err(Error::contract("empty mesh"));
        }
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::contract(format!(
                        "face {i} references vertex {v}, mesh has {}",
                        vertices.len()
                    )));
                }
            }
        }
        let mut mesh = TriangleMesh {
            name: name.into(),
            vertices,
            faces,
            watertight: false,
        };
        mesh.watertight = mesh.check_watertight();
        Ok(mesh)
    }

    /// True iff every undirected edge is shared by exactly two faces.
    pub fn check_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        edges.values().all(|&c| c == 2)
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, i: usize) -> f64 {
        0.5 * self.face_normal(i).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    /// Number of face-connected components (union-find over shared
    /// vertices). Isolated vertices do not count.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            let a = find(&mut parent, f[0]);
            let b = find(&mut parent, f[1]);
            let c = find(&mut parent, f[2]);
            parent[b] = a;
            parent[c] = a;
        }
        let mut roots = std::collections::HashSet::new();
        for f in &self.faces {
            roots.insert(find(&mut parent, f[0]));
        }
        roots.len()
    }

    /// Apply a similarity transform to all vertices.
    pub fn transformed(&self, tf: &crate::geom::RigidTransform) -> TriangleMesh {
        TriangleMesh {
            name: self.name.clone(),
            vertices: self.vertices.iter().map(|&v| crate::geom::apply_rigid(tf, v)).collect(),
            faces: self.faces.clone(),
            watertight: self.watertight,
        }
    }
}

/// Vertex bounds inflated by `margin` on every side.
pub fn bounding_box(mesh: &TriangleMesh, margin: f64) -> Result<Aabb> {
    if mesh.vertices.is_empty() {
        return Err(Error::contract("bounding box of an empty mesh"));
    }
    Ok(Aabb::from_points(&mesh.vertices)?.inflated(margin))
}

/// Default spatial margin for foreground boxes, in normalized scene units.
pub const DEFAULT_BOX_MARGIN: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn unit_cube_is_watertight() {
        let cube = shapes::unit_cube();
        assert_eq!(cube.vertices.len(), 8);
        assert_eq!(cube.faces.len(), 12);
        assert!(cube.watertight);
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut cube = shapes::unit_cube();
        cube.faces.pop();
        assert!(!cube.check_watertight());
    }

    #[test]
    fn bounding_box_margins() {
        let cube = shapes::unit_cube(); // centered at origin, side 1
        let b = bounding_box(&cube, 0.1).unwrap();
        for i in 0..3 {
            assert!((b.min[i] + 0.6).abs() < 1e-12);
            assert!((b.max[i] - 0.6).abs() < 1e-12);
        }
        let tight = bounding_box(&cube, 0.0).unwrap();
        for i in 0..3 {
            assert!((tight.min[i] + 0.5).abs() < 1e-12);
            assert!((tight.max[i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn box_contains_vertices_with_slack() {
        let sphere = shapes::icosphere(0.7, 2);
        let margin = 0.25;
        let b = bounding_box(&sphere, margin).unwrap();
        let tight = bounding_box(&sphere, 0.0).unwrap();
        for v in &sphere.vertices {
            assert!(b.contains(*v));
        }
        for i in 0..3 {
            assert!(tight.min[i] - b.min[i] >= margin - 1e-12);
            assert!(b.max[i] - tight.max[i] >= margin - 1e-12);
        }
    }

    #[test]
    fn out_of_range_face_rejected() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new("bad", verts, vec![[0, 1, 5]]).is_err());
    }

    #[test]
    fn icosphere_area_approaches_analytic() {
        let r = 0.8;
        let sphere = shapes::icosphere(r, 4);
        assert!(sphere.watertight);
        let analytic = 4.0 * std::f64::consts::PI * r * r;
        let rel = (sphere.surface_area() - analytic).abs() / analytic;
        assert!(rel < 0.01, "area off by {rel}");
    }
}

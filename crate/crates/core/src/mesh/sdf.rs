//! Signed distance to watertight meshes: magnitude from the closest
//! triangle, sign from the generalized winding number.

use super::{TriBvh, TriangleMesh};
use crate::geom::Vec3;
use crate::{Error, Result};

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn point_triangle_closest(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Moller-Trumbore ray/triangle intersection; returns the ray parameter.
pub fn ray_triangle_intersect(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > 0.0).then_some(t)
}

/// Generalized winding number of `p` w.r.t. the mesh: sum of signed solid
/// angles over all faces divided by 4 pi. Inside a watertight mesh iff
/// the value exceeds 1/2 (van Oosterom-Strackee for each triangle).
pub fn winding_number(mesh: &TriangleMesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for f in &mesh.faces {
        let a = mesh.vertices[f[0]] - p;
        let b = mesh.vertices[f[1]] - p;
        let c = mesh.vertices[f[2]] - p;
        let la = a.norm();
        let lb = b.norm();
        let lc = c.norm();
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Accelerated distance queries against one mesh.
#[derive(Debug, Clone)]
pub struct MeshDistanceField {
    mesh: TriangleMesh,
    bvh: TriBvh,
    signed_ok: bool,
}

impl MeshDistanceField {
    /// Signed-capable field; fails unless the mesh is watertight.
    pub fn new(mesh: TriangleMesh) -> Result<MeshDistanceField> {
        if !mesh.watertight {
            return Err(Error::contract(format!(
                "mesh '{}' is not watertight; signed queries undefined (use new_unsigned)",
                mesh.name
            )));
        }
        Ok(MeshDistanceField {
            bvh: TriBvh::from_mesh(&mesh),
            mesh,
            signed_ok: true,
        })
    }

    /// Unsigned-only field for open meshes.
    pub fn new_unsigned(mesh: TriangleMesh) -> MeshDistanceField {
        MeshDistanceField {
            bvh: TriBvh::from_mesh(&mesh),
            mesh,
            signed_ok: false,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn bvh(&self) -> &TriBvh {
        &self.bvh
    }

    pub fn unsigned(&self, p: Vec3) -> f64 {
        self.bvh.nearest(p).0
    }

    /// Negative inside (winding number > 1/2), positive outside.
    pub fn signed(&self, p: Vec3) -> Result<f64> {
        if !self.signed_ok {
            return Err(Error::contract(format!(
                "mesh '{}' opened in unsigned mode",
                self.mesh.name
            )));
        }
        let d = self.unsigned(p);
        Ok(if winding_number(&self.mesh, p) > 0.5 { -d } else { d })
    }
}

/// Distance to a union of objects: the minimum of per-mesh signed fields.
/// Exact for disjoint objects, which is the scene construction here.
#[derive(Debug, Clone)]
pub struct SceneDistanceField {
    fields: Vec<MeshDistanceField>,
}

impl SceneDistanceField {
    pub fn new(meshes: &[TriangleMesh]) -> Result<SceneDistanceField> {
        if meshes.is_empty() {
            return Err(Error::contract("scene distance field needs meshes"));
        }
        let fields = meshes
            .iter()
            .map(|m| MeshDistanceField::new(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneDistanceField { fields })
    }

    pub fn fields(&self) -> &[MeshDistanceField] {
        &self.fields
    }

    pub fn signed(&self, p: Vec3) -> Result<f64> {
        let mut best = f64::INFINITY;
        for f in &self.fields {
            best = best.min(f.signed(p)?);
        }
        Ok(best)
    }
}

/// Signed distance against a single mesh; convenience wrapper that builds
/// the acceleration structure per call. Use [`MeshDistanceField`] for
/// repeated queries.
pub fn mesh_signed_distance(mesh: &TriangleMesh, p: Vec3) -> Result<f64> {
    MeshDistanceField::new(mesh.clone())?.signed(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cube_center_is_half_inside() {
        let cube = shapes::unit_cube();
        let d = mesh_signed_distance(&cube, Vec3::zeros()).unwrap();
        assert!((d + 0.5).abs() < 1e-12, "center of unit cube: {d}");
    }

    #[test]
    fn point_on_vertex_is_zero() {
        let cube = shapes::unit_cube();
        let v = cube.vertices[3];
        let d = mesh_signed_distance(&cube, v).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn icosphere_outside_point() {
        // Distance from (2,0,0) to a radius-1 icosphere is 1 up to facet
        // tolerance, verified against brute force over all triangles +
        // the winding sign.
        let sphere = shapes::icosphere(1.0, 3);
        let p = Vec3::new(2.0, 0.0, 0.0);
        let field = MeshDistanceField::new(sphere.clone()).unwrap();
        let d = field.signed(p).unwrap();
        let brute: f64 = (0..sphere.faces.len())
            .map(|i| {
                let [a, b, c] = sphere.triangle(i);
                (p - point_triangle_closest(p, a, b, c)).norm()
            })
            .fold(f64::INFINITY, f64::min);
        let w = winding_number(&sphere, p);
        assert!(w < 0.5);
        assert!((d - brute).abs() < 1e-12);
        assert!((d - 1.0).abs() < 5e-3, "facet tolerance: {d}");
    }

    #[test]
    fn non_watertight_rejected_unless_unsigned() {
        let mut cube = shapes::unit_cube();
        cube.faces.pop();
        let open = TriangleMesh::new("open", cube.vertices.clone(), cube.faces.clone()).unwrap();
        assert!(!open.watertight);
        assert!(mesh_signed_distance(&open, Vec3::zeros()).is_err());
        let field = MeshDistanceField::new_unsigned(open);
        assert!(field.unsigned(Vec3::zeros()) > 0.0);
    }

    #[test]
    fn fine_sphere_matches_analytic_sdf() {
        // 20k-face sphere: |mesh sdf - analytic| < 1e-3 * r at random points.
        let r = 0.9;
        let sphere = shapes::icosphere(r, 5);
        assert_eq!(sphere.faces.len(), 20480);
        let field = MeshDistanceField::new(sphere).unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let analytic = p.norm() - r;
            let d = field.signed(p).unwrap();
            assert!(
                (d - analytic).abs() < 1e-3 * r,
                "at {p:?}: mesh {d} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn sign_flips_exactly_at_ray_crossings() {
        let sphere = shapes::icosphere(0.75, 3);
        let field = MeshDistanceField::new(sphere.clone()).unwrap();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..50 {
            let origin = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), -2.5);
            let dir = (Vec3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                1.0,
            ))
            .normalize();
            // Collect all crossings along the ray.
            let mut crossings: Vec<f64> = (0..sphere.faces.len())
                .filter_map(|i| {
                    let [a, b, c] = sphere.triangle(i);
                    ray_triangle_intersect(origin, dir, a, b, c)
                })
                .filter(|&t| t > 0.0 && t < 6.0)
                .collect();
            crossings.sort_by(f64::total_cmp);
            // Walk sample points between crossings; parity determines sign.
            let mut stops = vec![0.0];
            stops.extend(&crossings);
            stops.push(6.0);
            for seg in 0..stops.len() - 1 {
                let lo = stops[seg];
                let hi = stops[seg + 1];
                if hi - lo < 1e-4 {
                    continue;
                }
                let mid = origin + dir * (0.5 * (lo + hi));
                let expect_inside = seg % 2 == 1;
                let d = field.signed(mid).unwrap();
                assert_eq!(
                    d < 0.0,
                    expect_inside,
                    "segment {seg}: d = {d}, crossings = {}",
                    crossings.len()
                );
            }
        }
    }
}

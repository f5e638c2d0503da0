//! Procedural test meshes: cube, box, icosphere.

use super::TriangleMesh;
use crate::geom::Vec3;

/// Axis-aligned box from `min` to `max`, 12 triangles, outward-facing.
pub fn box_mesh(min: Vec3, max: Vec3) -> TriangleMesh {
    let (x0, y0, z0) = (min.x, min.y, min.z);
    let (x1, y1, z1) = (max.x, max.y, max.z);
    let vertices = vec![
        Vec3::new(x0, y0, z0), // 0
        Vec3::new(x1, y0, z0), // 1
        Vec3::new(x1, y1, z0), // 2
        Vec3::new(x0, y1, z0), // 3
        Vec3::new(x0, y0, z1), // 4
        Vec3::new(x1, y0, z1), // 5
        Vec3::new(x1, y1, z1), // 6
        Vec3::new(x0, y1, z1), // 7
    ];
    let faces = vec![
        // -z
        [0, 2, 1],
        [0, 3, 2],
        // +z
        [4, 5, 6],
        [4, 6, 7],
        // -y
        [0, 1, 5],
        [0, 5, 4],
        // +y
        [3, 6, 2],
        [3, 7, 6],
        // -x
        [0, 4, 7],
        [0, 7, 3],
        // +x
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriangleMesh::new("box", vertices, faces).expect("box mesh is valid")
}

/// Unit cube centered at the origin (side 1).
pub fn unit_cube() -> TriangleMesh {
    box_mesh(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5))
}

/// Icosphere of the given radius. Subdivision `s` yields `20 * 4^s` faces.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    icosphere_at(radius, subdivisions, Vec3::zeros())
}

/// Icosphere centered at `center`.
pub fn icosphere_at(radius: f64, subdivisions: u32, center: Vec3) -> TriangleMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint_cache: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint_cache.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * 0.5).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }

    let vertices = vertices.into_iter().map(|v| v * radius + center).collect();
    TriangleMesh::new("icosphere", vertices, faces).expect("icosphere is valid")
}

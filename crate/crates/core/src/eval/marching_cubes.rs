//! Grid-based isosurface extraction with the classic 256-case table and
//! linear edge interpolation. Grid slabs run in parallel; vertex welding
//! is a deterministic pass over global edge keys.

use super::mc_tables::TRI_TABLE;
use crate::geom::{Aabb, Vec3};
use crate::mesh::TriangleMesh;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::HashMap;

/// Corner offsets in the standard order (bit i of the case index).
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// The two corners each of the 12 edges connects.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extract the `iso` level set of a scalar field sampled on a
/// `resolution^3`-cell grid over `bounds`. Orientation follows the field:
/// triangle normals point along increasing values (+gradient). No
/// crossings yields an empty face list, not an error.
pub fn marching_cubes(
    sdf: &(impl Fn(Vec3) -> f64 + Sync),
    resolution: [usize; 3],
    bounds: &Aabb,
    iso: f64,
) -> Result<TriangleMesh> {
    marching_cubes_batched(
        &|pts: &[Vec3]| pts.iter().map(|&p| sdf(p)).collect(),
        resolution,
        bounds,
        iso,
    )
}

/// [`marching_cubes`] with slab-batched field queries; the right entry
/// point when each evaluation is a network forward pass.
pub fn marching_cubes_batched(
    sdf: &(impl Fn(&[Vec3]) -> Vec<f64> + Sync),
    resolution: [usize; 3],
    bounds: &Aabb,
    iso: f64,
) -> Result<TriangleMesh> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::contract("marching cubes needs at least 2 cells per axis"));
    }
    let [nx, ny, nz] = resolution;
    let min = bounds.min_v();
    let diag = bounds.diagonal();
    let step = Vec3::new(diag.x / nx as f64, diag.y / ny as f64, diag.z / nz as f64);
    let grid_pos = |i: usize, j: usize, k: usize| {
        min + Vec3::new(step.x * i as f64, step.y * j as f64, step.z * k as f64)
    };

    // Sample the field at grid corners, one batch per z-slab.
    let (gx, gy, gz) = (nx + 1, ny + 1, nz + 1);
    let values: Vec<f64> = (0..gz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let pts: Vec<Vec3> = (0..gy * gx)
                .map(|rest| grid_pos(rest % gx, rest / gx, k))
                .collect();
            sdf(&pts)
        })
        .collect();
    let value = |i: usize, j: usize, k: usize| values[(k * gy + j) * gx + i];

    // Global edge key: (corner linear index, axis).
    let edge_key = |i: usize, j: usize, k: usize, corner_a: usize, corner_b: usize| -> (usize, u8) {
        let ca = CORNERS[corner_a];
        let cb = CORNERS[corner_b];
        let (pa, pb) = (
            [i + ca[0], j + ca[1], k + ca[2]],
            [i + cb[0], j + cb[1], k + cb[2]],
        );
        let (lo, axis) = if pa[0] != pb[0] {
            (if pa[0] < pb[0] { pa } else { pb }, 0u8)
        } else if pa[1] != pb[1] {
            (if pa[1] < pb[1] { pa } else { pb }, 1u8)
        } else {
            (if pa[2] < pb[2] { pa } else { pb }, 2u8)
        };
        ((lo[2] * gy + lo[1]) * gx + lo[0], axis)
    };

    // Per z-slab triangle emission (edge keys + interpolated positions).
    let slabs: Vec<Vec<([(usize, u8); 3], [Vec3; 3])>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    let mut case = 0usize;
                    let mut corner_vals = [0.0; 8];
                    for (c, off) in CORNERS.iter().enumerate() {
                        let v = value(i + off[0], j + off[1], k + off[2]);
                        corner_vals[c] = v;
                        if v < iso {
                            case |= 1 << c;
                        }
                    }
                    let row = &TRI_TABLE[case];
                    let mut e = 0;
                    while e < 16 && row[e] >= 0 {
                        let mut keys = [(0usize, 0u8); 3];
                        let mut pts = [Vec3::zeros(); 3];
                        for v in 0..3 {
                            let edge = row[e + v] as usize;
                            let [ca, cb] = EDGES[edge];
                            let va = corner_vals[ca];
                            let vb = corner_vals[cb];
                            let t = if (vb - va).abs() < 1e-30 {
                                0.5
                            } else {
                                ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                            };
                            let oa = CORNERS[ca];
                            let ob = CORNERS[cb];
                            let pa = grid_pos(i + oa[0], j + oa[1], k + oa[2]);
                            let pb = grid_pos(i + ob[0], j + ob[1], k + ob[2]);
                            keys[v] = edge_key(i, j, k, ca, cb);
                            pts[v] = pa + (pb - pa) * t;
                        }
                        tris.push((keys, pts));
                        e += 3;
                    }
                }
            }
            tris
        })
        .collect();

    // Deterministic weld: first occurrence of an edge key defines the
    // vertex, in slab-then-emission order.
    let mut vertex_of: HashMap<(usize, u8), usize> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for slab in slabs {
        for (keys, pts) in slab {
            let mut tri = [0usize; 3];
            for v in 0..3 {
                tri[v] = *vertex_of.entry(keys[v]).or_insert_with(|| {
                    vertices.push(pts[v]);
                    vertices.len() - 1
                });
            }
            // Degenerate (repeated-vertex) triangles can appear when the
            // isolevel grazes a corner; drop them. The table's winding is
            // reversed here so normals follow the field's +gradient.
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                faces.push([tri[0], tri[2], tri[1]]);
            }
        }
    }

    if faces.is_empty() {
        return Ok(TriangleMesh {
            name: "isosurface".into(),
            vertices: Vec::new(),
            faces: Vec::new(),
            watertight: false,
        });
    }
    TriangleMesh::new("isosurface", vertices, faces)
}

//! Median-split AABB tree over triangles, shared by distance queries and
//! ray casting.

use super::sdf::{point_triangle_closest, ray_triangle_intersect};
use super::TriangleMesh;
use crate::geom::{Aabb, Vec3};

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Child node indices; meaningful only when `count == 0`.
    left: usize,
    right: usize,
    /// Leaf range into `order`; `count > 0` marks a leaf.
    start: usize,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct TriBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

const LEAF_SIZE: usize = 4;

impl TriBvh {
    pub fn from_mesh(mesh: &TriangleMesh) -> TriBvh {
        TriBvh::from_triangles((0..mesh.faces.len()).map(|i| mesh.triangle(i)).collect())
    }

    /// One tree over all meshes; triangle indices are global in
    /// concatenation order.
    pub fn from_meshes(meshes: &[TriangleMesh]) -> TriBvh {
        let mut tris = Vec::new();
        for m in meshes {
            for i in 0..m.faces.len() {
                tris.push(m.triangle(i));
            }
        }
        TriBvh::from_triangles(tris)
    }

    pub fn from_triangles(tris: Vec<[Vec3; 3]>) -> TriBvh {
        assert!(!tris.is_empty(), "bvh over an empty triangle set");
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut nodes = Vec::with_capacity(tris.len() * 2);
        build(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        TriBvh { nodes, order, tris }
    }

    pub fn triangle(&self, i: usize) -> &[Vec3; 3] {
        &self.tris[i]
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest surface point to `p`: `(distance, point, triangle index)`.
    pub fn nearest(&self, p: Vec3) -> (f64, Vec3, usize) {
        let mut best = (f64::INFINITY, Vec3::zeros(), usize::MAX);
        self.nearest_rec(0, p, &mut best);
        (best.0.sqrt(), best.1, best.2)
    }

    fn nearest_rec(&self, node: usize, p: Vec3, best: &mut (f64, Vec3, usize)) {
        let n = &self.nodes[node];
        if box_dist2(&n.bounds, p) >= best.0 {
            return;
        }
        if n.count > 0 {
            for k in n.start..n.start + n.count {
                let ti = self.order[k];
                let t = &self.tris[ti];
                let q = point_triangle_closest(p, t[0], t[1], t[2]);
                let d2 = (p - q).norm_squared();
                if d2 < best.0 {
                    *best = (d2, q, ti);
                }
            }
            return;
        }
        // Visit the nearer child first for tighter pruning.
        let (l, r) = (n.left, n.right);
        let dl = box_dist2(&self.nodes[l].bounds, p);
        let dr = box_dist2(&self.nodes[r].bounds, p);
        if dl <= dr {
            self.nearest_rec(l, p, best);
            self.nearest_rec(r, p, best);
        } else {
            self.nearest_rec(r, p, best);
            self.nearest_rec(l, p, best);
        }
    }

    /// Nearest ray hit in `(t_min, t_max)`: `(t, triangle index)`.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        self.ray_rec(0, origin, dir, inv, t_min, t_max, &mut best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn ray_rec(
        &self,
        node: usize,
        origin: Vec3,
        dir: Vec3,
        inv: Vec3,
        t_min: f64,
        mut t_max: f64,
        best: &mut Option<(f64, usize)>,
    ) {
        if let Some((t, _)) = best {
            t_max = t_max.min(*t);
        }
        let n = &self.nodes[node];
        if !slab_hit(&n.bounds, origin, inv, t_min, t_max) {
            return;
        }
        if n.count > 0 {
            for k in n.start..n.start + n.count {
                let ti = self.order[k];
                let t = &self.tris[ti];
                if let Some(hit) = ray_triangle_intersect(origin, dir, t[0], t[1], t[2]) {
                    if hit > t_min && hit < t_max && best.map_or(true, |(b, _)| hit < b) {
                        *best = Some((hit, ti));
                    }
                }
            }
            return;
        }
        self.ray_rec(n.left, origin, dir, inv, t_min, t_max, best);
        self.ray_rec(n.right, origin, dir, inv, t_min, t_max, best);
    }
}

fn build(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let slice = &order[start..start + count];
    let mut bounds = Aabb::from_points(tris[slice[0]].iter()).unwrap();
    for &ti in slice.iter().skip(1) {
        bounds = bounds.union(&Aabb::from_points(tris[ti].iter()).unwrap());
    }
    let idx = nodes.len();
    nodes.push(Node { bounds, left: 0, right: 0, start, count });
    if count <= LEAF_SIZE {
        return idx;
    }
    // Split at the centroid median of the longest axis.
    let diag = bounds.diagonal();
    let axis = if diag.x >= diag.y && diag.x >= diag.z {
        0
    } else if diag.y >= diag.z {
        1
    } else {
        2
    };
    let mid = count / 2;
    order[start..start + count]
        .select_nth_unstable_by(mid, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
    let left = build(tris, centroids, order, start, mid, nodes);
    let right = build(tris, centroids, order, start + mid, count - mid, nodes);
    nodes[idx].left = left;
    nodes[idx].right = right;
    nodes[idx].count = 0;
    idx
}

fn box_dist2(b: &Aabb, p: Vec3) -> f64 {
    let mut d2 = 0.0;
    for i in 0..3 {
        let v = if p[i] < b.min[i] {
            b.min[i] - p[i]
        } else if p[i] > b.max[i] {
            p[i] - b.max[i]
        } else {
            0.0
        };
        d2 += v * v;
    }
    d2
}

fn slab_hit(b: &Aabb, origin: Vec3, inv: Vec3, t_min: f64, t_max: f64) -> bool {
    let mut t0 = t_min;
    let mut t1 = t_max;
    for i in 0..3 {
        let mut ta = (b.min[i] - origin[i]) * inv[i];
        let mut tb = (b.max[i] - origin[i]) * inv[i];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        // NaN (0 * inf) falls through conservatively.
        if ta.is_nan() || tb.is_nan() {
            continue;
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn nearest_matches_brute_force() {
        let mesh = shapes::icosphere(0.8, 2);
        let bvh = TriBvh::from_mesh(&mesh);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..300 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (d, _, _) = bvh.nearest(p);
            let brute = (0..mesh.faces.len())
                .map(|i| {
                    let [a, b, c] = mesh.triangle(i);
                    (p - point_triangle_closest(p, a, b, c)).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d - brute).abs() < 1e-12, "bvh {d} vs brute {brute}");
        }
    }

    #[test]
    fn ray_hits_match_brute_force() {
        let mesh = shapes::unit_cube();
        let bvh = TriBvh::from_mesh(&mesh);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..300 {
            let origin = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let target = Vec3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            );
            let dir = (target - origin).normalize();
            let got = bvh.ray_hit(origin, dir, 1e-9, 100.0).map(|(t, _)| t);
            let brute = (0..mesh.faces.len())
                .filter_map(|i| {
                    let [a, b, c] = mesh.triangle(i);
                    ray_triangle_intersect(origin, dir, a, b, c)
                })
                .filter(|&t| t > 1e-9 && t < 100.0)
                .fold(f64::INFINITY, f64::min);
            match got {
                Some(t) => assert!((t - brute).abs() < 1e-9),
                None => assert_eq!(brute, f64::INFINITY),
            }
        }
    }
}

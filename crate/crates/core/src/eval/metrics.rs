//! Image and geometry metrics: PSNR, SSIM, Chamfer distance.

use crate::geom::Vec3;
use crate::{Error, Result};
use rayon::prelude::*;

/// Peak signal-to-noise ratio in dB; identical images report +infinity.
pub fn psnr(img: &[f64], reference: &[f64], max_val: f64) -> Result<f64> {
    if img.len() != reference.len() || img.is_empty() {
        return Err(Error::contract("psnr wants equal nonempty buffers"));
    }
    let mse: f64 = img
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / img.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Rec. 601 luma of interleaved RGB.
pub fn luminance(rgb: &[[f64; 3]]) -> Vec<f64> {
    rgb.iter()
        .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
        .collect()
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Mean local SSIM over a single-channel image: 11x11 Gaussian window
/// (sigma 1.5), stabilizers K1 = 0.01, K2 = 0.03, dynamic range 1,
/// valid-region average (no padding).
pub fn ssim_luma(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::contract("ssim buffer size mismatch"));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "image {width}x{height} smaller than the {SSIM_WINDOW}-pixel ssim window"
        )));
    }
    let kernel = gaussian_kernel();
    let half = SSIM_WINDOW / 2;
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    // Separable Gaussian filtering of the five moment maps.
    let filter = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; src.len()];
        for y in 0..height {
            for x in half..width - half {
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    acc += w * src[y * width + x + k - half];
                }
                tmp[y * width + x] = acc;
            }
        }
        let mut out = vec![0.0; src.len()];
        for y in half..height - half {
            for x in 0..width {
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    acc += w * tmp[(y + k - half) * width + x];
                }
                out[y * width + x] = acc;
            }
        }
        out
    };

    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter(a);
    let mu_b = filter(b);
    let m_aa = filter(&aa);
    let m_bb = filter(&bb);
    let m_ab = filter(&ab);

    let mut total = 0.0;
    let mut count = 0usize;
    for y in half..height - half {
        for x in half..width - half {
            let i = y * width + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of RGB images after luminance conversion.
pub fn ssim(a: &[[f64; 3]], b: &[[f64; 3]], width: usize, height: usize) -> Result<f64> {
    ssim_luma(&luminance(a), &luminance(b), width, height)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferMode {
    OneWay,
    Bidirectional,
}

/// Uniform spatial hash grid for exact nearest-neighbor queries.
struct PointGrid {
    cell: f64,
    min: Vec3,
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
    points: Vec<Vec3>,
}

impl PointGrid {
    fn new(points: &[Vec3]) -> PointGrid {
        let bounds = crate::geom::Aabb::from_points(points).expect("nonempty");
        let diag = bounds.diagonal();
        let extent = diag.x.max(diag.y).max(diag.z).max(1e-9);
        // About one point per cell on average.
        let target = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = extent / target;
        let dims = [
            ((diag.x / cell).floor() as usize + 1).max(1),
            ((diag.y / cell).floor() as usize + 1).max(1),
            ((diag.z / cell).floor() as usize + 1).max(1),
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let min = bounds.min_v();
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, min, cell, dims);
            cells[c].push(i);
        }
        PointGrid { cell, min, dims, cells, points: points.to_vec() }
    }

    fn cell_of(p: &Vec3, min: Vec3, cell: f64, dims: [usize; 3]) -> usize {
        let ix = (((p.x - min.x) / cell).floor() as isize).clamp(0, dims[0] as isize - 1) as usize;
        let iy = (((p.y - min.y) / cell).floor() as isize).clamp(0, dims[1] as isize - 1) as usize;
        let iz = (((p.z - min.z) / cell).floor() as isize).clamp(0, dims[2] as isize - 1) as usize;
        (iz * dims[1] + iy) * dims[0] + ix
    }

    /// Exact nearest distance: expand rings until the found distance is
    /// certified by the ring bound.
    ///
    /// The walk starts from the query's cell clamped into the grid; the
    /// `(ring - 1) * cell` certification bound stays valid because a
    /// clamped query lies on the far side of its start cell from every
    /// grid cell along each clamped axis.
    fn nearest_distance(&self, q: Vec3) -> f64 {
        let clamp_axis = |v: f64, min: f64, dim: usize| -> isize {
            (((v - min) / self.cell).floor() as isize).clamp(0, dim as isize - 1)
        };
        let ix = clamp_axis(q.x, self.min.x, self.dims[0]);
        let iy = clamp_axis(q.y, self.min.y, self.dims[1]);
        let iz = clamp_axis(q.z, self.min.z, self.dims[2]);
        let max_ring = *self.dims.iter().max().unwrap() as isize + 2;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // Once a candidate is found, any point in a farther ring is at
            // least (ring - 1) * cell away from q.
            if best.is_finite() && ((ring - 1).max(0) as f64) * self.cell > best {
                break;
            }
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (cx, cy, cz) = (ix + dx, iy + dy, iz + dz);
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0] as isize
                            || cy >= self.dims[1] as isize
                            || cz >= self.dims[2] as isize
                        {
                            continue;
                        }
                        let cell_idx =
                            (cz as usize * self.dims[1] + cy as usize) * self.dims[0] + cx as usize;
                        for &pi in &self.cells[cell_idx] {
                            let d = (self.points[pi] - q).norm();
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn one_way_chamfer(from: &[Vec3], to: &[Vec3]) -> f64 {
    let grid = PointGrid::new(to);
    // Collect then reduce in fixed order; a parallel sum would make the
    // result depend on thread scheduling.
    let dists: Vec<f64> = from.par_iter().map(|&q| grid.nearest_distance(q)).collect();
    crate::autodiff::Tensor::column(&dists).sum() / from.len() as f64
}

/// Mean nearest-neighbor distance between point sets (unsquared).
/// One-way: `a -> b`; bidirectional: symmetric mean of both directions.
pub fn chamfer(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("chamfer needs nonempty point sets"));
    }
    Ok(match mode {
        ChamferMode::OneWay => one_way_chamfer(a, b),
        ChamferMode::Bidirectional => 0.5 * (one_way_chamfer(a, b) + one_way_chamfer(b, a)),
    })
}

/// Area-weighted surface samples for mesh-to-mesh Chamfer evaluation.
pub fn sample_mesh_surface(mesh: &crate::mesh::TriangleMesh, n: usize, seed: u64) -> Vec<Vec3> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for i in 0..mesh.faces.len() {
        total += mesh.face_area(i);
        cumulative.push(total);
    }
    (0..n)
        .map(|_| {
            let pick = rng.gen_range(0.0..total);
            let fi = cumulative.partition_point(|&acc| acc < pick).min(mesh.faces.len() - 1);
            let [a, b, c] = mesh.triangle(fi);
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_cases() {
        let img = vec![0.5; 100];
        assert!(psnr(&img, &img, 1.0).unwrap().is_infinite());
        // MSE 0.01 -> 20 dB.
        let noisy: Vec<f64> = img.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&noisy, &img, 1.0).unwrap() - 20.0).abs() < 1e-12);
        // MSE 1 -> 0 dB.
        let off: Vec<f64> = img.iter().map(|v| v + 1.0).collect();
        assert!(psnr(&off, &img, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img: Vec<f64> = (0..4096).map(|_| rng.gen_range(0.0..1.0)).collect();
        let noise: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let amp = k as f64 * 0.02;
            let noisy: Vec<f64> = img.iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            let p = psnr(&noisy, &img, 1.0).unwrap();
            assert!(p < prev, "amplitude {amp}: psnr {p} not below {prev}");
            prev = p;
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img: Vec<[f64; 3]> = (0..32 * 32).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let s = ssim(&img, &img, 32, 32).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..24 * 24).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..24 * 24).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s_ab = ssim_luma(&a, &b, 24, 24).unwrap();
        let s_ba = ssim_luma(&b, &a, 24, 24).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-9);
    }

    #[test]
    fn ssim_negative_image_scores_low() {
        // High-contrast checkerboard vs its negative: structure term flips
        // sign, the score collapses.
        let w = 32;
        let a: Vec<f64> = (0..w * w)
            .map(|i| if ((i / w) + (i % w)) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let s = ssim_luma(&a, &b, w, w).unwrap();
        assert!(s < 0.1, "ssim of negative pair: {s}");
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance_term() {
        let (w, h) = (16, 16);
        let mu1 = 0.3;
        let mu2 = 0.7;
        let a = vec![mu1; w * h];
        let b = vec![mu2; w * h];
        let s = ssim_luma(&a, &b, w, h).unwrap();
        let c1 = 0.01f64.powi(2);
        let hand = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
        assert!((s - hand).abs() < 1e-9, "{s} vs luminance-only {hand}");
    }

    #[test]
    fn ssim_too_small_errors() {
        let img = vec![0.0; 10 * 10];
        assert!(ssim_luma(&img, &img, 10, 10).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0)];
        let b = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &a, ChamferMode::OneWay).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b, ChamferMode::OneWay).unwrap(), 1.0);
        assert_eq!(chamfer(&a, &b, ChamferMode::Bidirectional).unwrap(), 1.0);
        assert!(chamfer(&a, &[], ChamferMode::OneWay).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut random_points = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    )
                })
                .collect()
        };
        let a = random_points(1000);
        let b = random_points(1000);
        // Per-point nearest distances must be bitwise identical to the
        // O(n^2) scan; the mean only differs by summation order.
        let grid = PointGrid::new(&b);
        for p in &a {
            let fast = grid.nearest_distance(*p);
            let brute = b
                .iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(fast.to_bits(), brute.to_bits(), "fast {fast} vs brute {brute}");
        }
        let mean_fast = chamfer(&a, &b, ChamferMode::OneWay).unwrap();
        let mean_brute: f64 = a
            .iter()
            .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64;
        assert!((mean_fast - mean_brute).abs() < 1e-12);
    }

    #[test]
    fn removing_target_points_never_decreases_one_way() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let b: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let full = chamfer(&a, &b, ChamferMode::OneWay).unwrap();
        let pruned = chamfer(&a, &b[..50], ChamferMode::OneWay).unwrap();
        assert!(pruned >= full - 1e-15);
    }
}

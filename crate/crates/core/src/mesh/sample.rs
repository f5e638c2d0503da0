//! Pretraining sample generation: surface points perturbed by Gaussian
//! noise at two scales plus a uniform fill of the scene box, each carrying
//! its exact signed distance.

use super::sdf::SceneDistanceField;
use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    NearSurface,
    FarSurface,
    Uniform,
}

/// Points with ground-truth signed distances for SDF regression.
#[derive(Debug, Clone)]
pub struct SdfSampleSet {
    pub points: Vec<Vec3>,
    pub distances: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Generate `n` supervision samples.
///
/// The non-uniform share is split evenly between perturbation scales
/// `sigmas.0` (near) and `sigmas.1` (far); `uniform_fraction` of the
/// samples are drawn uniformly in `bounds`. Deterministic for a seed.
pub fn sample_training_points(
    field: &SceneDistanceField,
    n: usize,
    sigmas: (f64, f64),
    uniform_fraction: f64,
    bounds: &Aabb,
    seed: u64,
) -> Result<SdfSampleSet> {
    if n == 0 {
        return Err(Error::contract("sample_training_points needs n >= 1"));
    }
    if !(sigmas.0 > 0.0 && sigmas.1 > 0.0) {
        return Err(Error::contract("perturbation sigmas must be positive"));
    }
    if !(0.0..=1.0).contains(&uniform_fraction) {
        return Err(Error::contract("uniform_fraction must be in [0, 1]"));
    }

    let n_uniform = ((n as f64) * uniform_fraction).round() as usize;
    let n_surface = n - n_uniform;
    let n_near = n_surface / 2;
    let n_far = n_surface - n_near;

    // Area-weighted cumulative table over (mesh, face).
    let mut cumulative = Vec::new();
    let mut total_area = 0.0;
    for (mi, f) in field.fields().iter().enumerate() {
        let mesh = f.mesh();
        for fi in 0..mesh.faces.len() {
            total_area += mesh.face_area(fi);
            cumulative.push((total_area, mi, fi));
        }
    }
    if total_area <= 0.0 {
        return Err(Error::contract("priors have zero surface area"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);

    let surface_sample = |rng: &mut ChaCha8Rng, sigma: f64| -> Vec3 {
        let pick = rng.gen_range(0.0..total_area);
        let idx = cumulative.partition_point(|&(acc, _, _)| acc < pick);
        let (_, mi, fi) = cumulative[idx.min(cumulative.len() - 1)];
        let [a, b, c] = field.fields()[mi].mesh().triangle(fi);
        // Uniform barycentric draw.
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        // Isotropic Gaussian perturbation.
        let noise = Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * sigma;
        p + noise
    };

    for _ in 0..n_near {
        points.push(surface_sample(&mut rng, sigmas.0));
        provenance.push(Provenance::NearSurface);
    }
    for _ in 0..n_far {
        points.push(surface_sample(&mut rng, sigmas.1));
        provenance.push(Provenance::FarSurface);
    }
    for _ in 0..n_uniform {
        let p = Vec3::new(
            rng.gen_range(bounds.min[0]..bounds.max[0]),
            rng.gen_range(bounds.min[1]..bounds.max[1]),
            rng.gen_range(bounds.min[2]..bounds.max[2]),
        );
        points.push(p);
        provenance.push(Provenance::Uniform);
    }

    let distances = points
        .par_iter()
        .map(|&p| field.signed(p))
        .collect::<Result<Vec<f64>>>()?;

    Ok(SdfSampleSet { points, distances, provenance })
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

//! Full-frame rendering (rgb / depth / normal) and image file output.

use super::sampling::{sample_ray, SampleBudget};
use super::shading::{attach_params, shade_batch, FieldsBundle, RayJob, RenderSettings};
use super::volume::{apply_edits, edited_priors, EditCommand, ForegroundVolume};
use crate::autodiff::Tape;
use crate::fields::FieldParams;
use crate::geom::{ray_from_pixel, Camera, Vec3};
use crate::mesh::{rasterize_prior_depth, TriangleMesh};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// Which frame buffers a render produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOutputs {
    pub rgb: bool,
    pub depth: bool,
    pub normal: bool,
}

impl Default for RenderOutputs {
    fn default() -> Self {
        RenderOutputs { rgb: true, depth: false, normal: false }
    }
}

/// Frame buffers of one render.
#[derive(Debug, Clone)]
pub struct RenderedImages {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    /// Weight-averaged SDF gradients (unnormalized; normalize on save).
    pub normal: Vec<Vec3>,
}

/// Everything needed to render views of a trained (or initialized) scene.
pub struct SceneRenderer<'a> {
    pub fields: &'a FieldsBundle,
    pub params: &'a FieldParams,
    pub volume: &'a ForegroundVolume,
    pub priors: &'a [TriangleMesh],
    pub near: f64,
    pub far: f64,
    pub budget: SampleBudget,
    pub settings: RenderSettings,
}

/// Deterministic per-pixel stream id.
fn pixel_seed(seed: u64, x: u32, y: u32) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x as u64, y as u64] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    h
}

impl SceneRenderer<'_> {
    /// Render one camera at `resolution`. Deterministic for a seed.
    pub fn render(
        &self,
        camera: &Camera,
        resolution: (u32, u32),
        seed: u64,
    ) -> Result<RenderedImages> {
        self.render_volume(self.volume, self.priors, camera, resolution, seed)
    }

    /// Render with per-object edits applied: sampling uses the transformed
    /// boxes, field queries map edited points back to the canonical frame,
    /// and the prior depth feature is rasterized from the edited priors.
    pub fn render_edited(
        &self,
        edits: &[EditCommand],
        camera: &Camera,
        resolution: (u32, u32),
        seed: u64,
    ) -> Result<RenderedImages> {
        let volume = apply_edits(self.volume, edits)?;
        let priors = edited_priors(self.priors, &volume);
        self.render_volume(&volume, &priors, camera, resolution, seed)
    }

    fn render_volume(
        &self,
        volume: &ForegroundVolume,
        priors: &[TriangleMesh],
        camera: &Camera,
        resolution: (u32, u32),
        seed: u64,
    ) -> Result<RenderedImages> {
        let (width, height) = resolution;
        let cam = camera.scaled_to(width, height)?;
        let depth_map = rasterize_prior_depth(priors, &cam, resolution)?;

        let rows: Vec<u32> = (0..height).collect();
        let results: Result<Vec<Vec<(usize, [f64; 3], f64, Vec3)>>> = rows
            .par_chunks(8.max(height as usize / (rayon::current_num_threads() * 2).max(1)))
            .map(|chunk| {
                let mut out = Vec::with_capacity(chunk.len() * width as usize);
                let mut jobs = Vec::with_capacity(chunk.len() * width as usize);
                let mut pixel_ids = Vec::with_capacity(chunk.len() * width as usize);
                for &y in chunk {
                    for x in 0..width {
                        let ray = ray_from_pixel(
                            &cam,
                            (x as f64 + 0.5, y as f64 + 0.5),
                            self.near,
                            self.far,
                        )?;
                        let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(seed, x, y));
                        let geometry = &self.fields.geometry;
                        let params = self.params;
                        let mut sdf = |pts: &[Vec3]| -> Vec<f64> {
                            query_world_sdf(geometry, params, volume, pts)
                        };
                        let samples =
                            sample_ray(&ray, volume, &self.budget, &mut sdf, &mut rng);
                        let f1 = depth_map.normalized_feature(x, y, self.near, self.far);
                        jobs.push(RayJob { ray, samples, f1 });
                        pixel_ids.push((y * width + x) as usize);
                    }
                }
                let mut tape = Tape::new();
                let model = attach_params(&mut tape, self.params, false);
                let batch = shade_batch(
                    &mut tape,
                    self.fields,
                    &model,
                    volume,
                    &jobs,
                    &self.settings,
                )?;
                for (i, shaded) in batch.rays.iter().enumerate() {
                    let c = tape.value(shaded.color);
                    out.push((
                        pixel_ids[i],
                        [c.at(0, 0), c.at(0, 1), c.at(0, 2)],
                        shaded.expected_depth,
                        shaded.normal,
                    ));
                }
                Ok(out)
            })
            .collect();

        let mut rgb = vec![[0.0; 3]; (width * height) as usize];
        let mut depth = vec![0.0; (width * height) as usize];
        let mut normal = vec![Vec3::zeros(); (width * height) as usize];
        for chunk in results? {
            for (idx, c, d, n) in chunk {
                rgb[idx] = c;
                depth[idx] = d;
                normal[idx] = n;
            }
        }
        Ok(RenderedImages { width, height, rgb, depth, normal })
    }
}

/// SDF of the (possibly edited) scene at world points, evaluated through
/// the geometry network with edits folded in. Used by importance sampling.
pub fn query_world_sdf(
    geometry: &crate::fields::GeometryField,
    params: &FieldParams,
    volume: &ForegroundVolume,
    pts: &[Vec3],
) -> Vec<f64> {
    let mut canonical = Vec::with_capacity(pts.len());
    let mut scales = Vec::with_capacity(pts.len());
    for &p in pts {
        match volume.containing_entry(p) {
            Some(e) => {
                let (c, k) = volume.canonical_point(e, p);
                canonical.push(c);
                scales.push(k);
            }
            None => {
                canonical.push(p);
                scales.push(1.0);
            }
        }
    }
    match geometry.eval_f64(&params.geometry, &canonical, false) {
        Ok((d, _, _)) => d.into_iter().zip(scales).map(|(di, k)| di * k).collect(),
        Err(_) => vec![f64::INFINITY; pts.len()],
    }
}

// ---------------------------------------------------------------------------
// File output
// ---------------------------------------------------------------------------

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB PNG of the color buffer.
pub fn save_rgb_png(images: &RenderedImages, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(images.width, images.height);
    for (i, px) in images.rgb.iter().enumerate() {
        let x = (i as u32) % images.width;
        let y = (i as u32) / images.width;
        img.put_pixel(x, y, image::Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]));
    }
    img.save(path).map_err(|e| crate::Error::Scene(format!("png save: {e}")))?;
    Ok(())
}

/// Normals mapped to `[0,1]^3` (n/2 + 0.5) for viewing.
pub fn save_normal_png(images: &RenderedImages, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(images.width, images.height);
    for (i, n) in images.normal.iter().enumerate() {
        let x = (i as u32) % images.width;
        let y = (i as u32) / images.width;
        let unit = if n.norm() > 1e-9 { n.normalize() } else { Vec3::zeros() };
        img.put_pixel(
            x,
            y,
            image::Rgb([
                to_u8(unit.x * 0.5 + 0.5),
                to_u8(unit.y * 0.5 + 0.5),
                to_u8(unit.z * 0.5 + 0.5),
            ]),
        );
    }
    img.save(path).map_err(|e| crate::Error::Scene(format!("png save: {e}")))?;
    Ok(())
}

/// Depth normalized by `[near, far]` for viewing.
pub fn save_depth_png(images: &RenderedImages, near: f64, far: f64, path: &Path) -> Result<()> {
    let mut img = image::GrayImage::new(images.width, images.height);
    for (i, &d) in images.depth.iter().enumerate() {
        let x = (i as u32) % images.width;
        let y = (i as u32) / images.width;
        let v = ((d - near) / (far - near)).clamp(0.0, 1.0);
        img.put_pixel(x, y, image::Luma([to_u8(v)]));
    }
    img.save(path).map_err(|e| crate::Error::Scene(format!("png save: {e}")))?;
    Ok(())
}

/// Raw float sidecar: `u32` little-endian header length, a JSON header
/// `{width, height, channels, dtype}`, then `f32` little-endian samples in
/// row-major, channel-interleaved order.
pub fn save_float_sidecar(
    path: &Path,
    width: u32,
    height: u32,
    channels: u32,
    data: impl Iterator<Item = f64>,
) -> Result<()> {
    use std::io::Write;
    let header = serde_json::json!({
        "width": width,
        "height": height,
        "channels": channels,
        "dtype": "f32le",
    });
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    let mut count = 0usize;
    for v in data {
        f.write_all(&(v as f32).to_le_bytes())?;
        count += 1;
    }
    debug_assert_eq!(count, (width * height * channels) as usize);
    Ok(())
}

/// Read back a float sidecar: `(width, height, channels, data)`.
pub fn load_float_sidecar(path: &Path) -> Result<(u32, u32, u32, Vec<f32>)> {
    use std::io::Read;
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut header)?;
    let meta: serde_json::Value = serde_json::from_slice(&header)?;
    let width = meta["width"].as_u64().unwrap_or(0) as u32;
    let height = meta["height"].as_u64().unwrap_or(0) as u32;
    let channels = meta["channels"].as_u64().unwrap_or(0) as u32;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, channels, data))
}

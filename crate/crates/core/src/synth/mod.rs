//! Synthetic calibrated scenes with analytic ground truth: textured
//! Lambertian spheres over a smooth directional background, exact
//! ray-traced reference images, icosphere prior/ground-truth meshes, and
//! a dataset writer in the on-disk format the loaders consume.

use crate::geom::{ray_from_pixel, Camera, Mat3, Ray, Vec3};
use crate::mesh::{save_obj, shapes, TriangleMesh};
use crate::scene::{CamerasFile, DatasetManifest};
use crate::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SphereSpec {
    pub center: Vec3,
    pub radius: f64,
    /// Per-channel phase of the smooth albedo pattern.
    pub phase: [f64; 3],
    /// Spatial frequency of the albedo pattern.
    pub freq: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spheres: Vec<SphereSpec>,
    pub light_dir: Vec3,
    pub ambient: f64,
    pub bg_top: [f64; 3],
    pub bg_bottom: [f64; 3],
}

impl SyntheticScene {
    /// The standard two-sphere desk scene, pre-normalized to fit the
    /// canonical [-1, 1]^3 cube with box margins.
    pub fn two_spheres() -> SyntheticScene {
        SyntheticScene {
            spheres: vec![
                SphereSpec {
                    center: Vec3::new(-0.42, 0.02, 0.05),
                    radius: 0.36,
                    phase: [0.0, 2.1, 4.2],
                    freq: 2.4,
                },
                SphereSpec {
                    center: Vec3::new(0.44, -0.05, -0.08),
                    radius: 0.31,
                    phase: [1.2, 3.6, 5.0],
                    freq: 3.1,
                },
            ],
            light_dir: Vec3::new(0.4, 0.8, -0.45).normalize(),
            ambient: 0.35,
            bg_top: [0.62, 0.70, 0.82],
            bg_bottom: [0.30, 0.26, 0.24],
        }
    }

    pub fn one_sphere() -> SyntheticScene {
        let mut s = SyntheticScene::two_spheres();
        s.spheres.truncate(1);
        s.spheres[0].center = Vec3::new(0.0, 0.0, 0.0);
        s.spheres[0].radius = 0.4;
        s
    }

    /// Exact signed distance of the sphere union.
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.spheres
            .iter()
            .map(|s| (p - s.center).norm() - s.radius)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smooth position-driven albedo of sphere `i` at surface point `p`.
    pub fn albedo(&self, i: usize, p: Vec3) -> [f64; 3] {
        let s = &self.spheres[i];
        let local = (p - s.center) * s.freq;
        let mut c = [0.0; 3];
        let basis = [
            local.x + 0.7 * local.y,
            local.y - 0.6 * local.z,
            local.z + 0.5 * local.x,
        ];
        for k in 0..3 {
            c[k] = 0.42 + 0.28 * (basis[k] * std::f64::consts::PI + s.phase[k]).sin();
        }
        c
    }

    /// Lambertian radiance at a surface point of sphere `i`.
    pub fn shade(&self, i: usize, p: Vec3) -> [f64; 3] {
        let normal = (p - self.spheres[i].center).normalize();
        let diffuse = normal.dot(&self.light_dir).max(0.0);
        let gain = self.ambient + (1.0 - self.ambient) * diffuse;
        let albedo = self.albedo(i, p);
        [albedo[0] * gain, albedo[1] * gain, albedo[2] * gain]
    }

    /// Smooth vertical-gradient background by ray direction.
    pub fn background(&self, dir: Vec3) -> [f64; 3] {
        let t = (dir.y * 0.5 + 0.5).clamp(0.0, 1.0);
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = self.bg_bottom[k] + t * (self.bg_top[k] - self.bg_bottom[k]);
        }
        c
    }

    /// Nearest analytic ray-sphere hit: `(t, sphere index)`.
    pub fn hit(&self, ray: &Ray) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.spheres.iter().enumerate() {
            let oc = ray.origin - s.center;
            let b = oc.dot(&ray.direction);
            let disc = b * b - (oc.norm_squared() - s.radius * s.radius);
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for t in [-b - sq, -b + sq] {
                if t > ray.near && t < ray.far && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Exact reference color along one ray.
    pub fn trace(&self, ray: &Ray) -> [f64; 3] {
        match self.hit(ray) {
            Some((t, i)) => self.shade(i, ray.at(t)),
            None => self.background(ray.direction),
        }
    }

    /// Reference render; `brightness` models per-view illumination drift
    /// (1.0 = clean).
    pub fn render_view(&self, camera: &Camera, near: f64, far: f64, brightness: f64) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity((camera.width * camera.height) as usize);
        for y in 0..camera.height {
            for x in 0..camera.width {
                let ray = ray_from_pixel(camera, (x as f64 + 0.5, y as f64 + 0.5), near, far)?;
                let c = self.trace(&ray);
                out.push([
                    (c[0] * brightness).clamp(0.0, 1.0),
                    (c[1] * brightness).clamp(0.0, 1.0),
                    (c[2] * brightness).clamp(0.0, 1.0),
                ]);
            }
        }
        Ok(out)
    }

    /// Icosphere stand-ins for the analytic spheres.
    pub fn meshes(&self, subdivisions: u32) -> Vec<TriangleMesh> {
        self.spheres
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut m = shapes::icosphere_at(s.radius, subdivisions, s.center);
                m.name = format!("sphere_{i}");
                m
            })
            .collect()
    }
}

/// Cameras on a tilted ring looking at the origin.
pub fn ring_cameras(
    count: usize,
    ring_radius: f64,
    height: f64,
    focal: f64,
    resolution: (u32, u32),
) -> Vec<Camera> {
    let (w, h) = resolution;
    (0..count)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let pos = Vec3::new(ring_radius * theta.cos(), height, ring_radius * theta.sin());
            let target = Vec3::zeros();
            let up = Vec3::new(0.0, 1.0, 0.0);
            // Camera frame: +z toward the target, y down-ish image axis.
            let z_axis = (target - pos).normalize();
            let x_axis = up.cross(&z_axis).normalize();
            let y_axis = z_axis.cross(&x_axis);
            let rotation = Mat3::from_rows(&[
                x_axis.transpose(),
                y_axis.transpose(),
                z_axis.transpose(),
            ]);
            let translation = -(rotation * pos);
            let k = Mat3::new(
                focal, 0.0, w as f64 / 2.0,
                0.0, focal, h as f64 / 2.0,
                0.0, 0.0, 1.0,
            );
            Camera::new(format!("cam_{i:03}"), k, rotation, translation, w, h)
                .expect("ring camera is valid")
        })
        .collect()
}

/// Options for [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub views: usize,
    pub resolution: (u32, u32),
    pub ring_radius: f64,
    pub ring_height: f64,
    pub focal: f64,
    pub near: f64,
    pub far: f64,
    /// Prior mesh tessellation (icosphere subdivisions).
    pub prior_subdivisions: u32,
    /// Ground-truth mesh tessellation.
    pub gt_subdivisions: u32,
    /// Peak-to-peak per-view brightness jitter (0 = consistent views).
    pub brightness_jitter: f64,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            views: 10,
            resolution: (64, 64),
            ring_radius: 2.3,
            ring_height: 0.45,
            focal: 72.0,
            near: 0.6,
            far: 4.5,
            prior_subdivisions: 3,
            gt_subdivisions: 4,
            brightness_jitter: 0.0,
            seed: 0,
        }
    }
}

/// Write a complete dataset directory: manifest, cameras, PNG views,
/// prior meshes, and the ground-truth mesh.
pub fn write_dataset(scene: &SyntheticScene, dir: &Path, opts: &DatasetOptions) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;
    std::fs::create_dir_all(dir.join("images"))?;
    let cameras = ring_cameras(
        opts.views,
        opts.ring_radius,
        opts.ring_height,
        opts.focal,
        opts.resolution,
    );

    let cams_file = CamerasFile {
        convention: "world_to_camera".into(),
        cameras: cameras.iter().map(|c| c.to_record()).collect(),
    };
    std::fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&cams_file)?)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut images = Vec::new();
    for cam in &cameras {
        let brightness = if opts.brightness_jitter > 0.0 {
            1.0 + rng.gen_range(-opts.brightness_jitter..opts.brightness_jitter)
        } else {
            1.0
        };
        let pixels = scene.render_view(cam, opts.near, opts.far, brightness)?;
        let mut img = image::RgbImage::new(cam.width, cam.height);
        for (idx, px) in pixels.iter().enumerate() {
            let x = idx as u32 % cam.width;
            let y = idx as u32 / cam.width;
            img.put_pixel(
                x,
                y,
                image::Rgb([
                    (px[0] * 255.0).round() as u8,
                    (px[1] * 255.0).round() as u8,
                    (px[2] * 255.0).round() as u8,
                ]),
            );
        }
        let file = format!("images/{}.png", cam.id);
        img.save(dir.join(&file))
            .map_err(|e| Error::Scene(format!("png save: {e}")))?;
        images.push(crate::scene::ImageEntry { file, camera: cam.id.clone() });
    }

    save_obj(&scene.meshes(opts.prior_subdivisions), &dir.join("priors.obj"))?;
    save_obj(&scene.meshes(opts.gt_subdivisions), &dir.join("gt_mesh.obj"))?;

    let manifest = DatasetManifest {
        cameras: "cameras.json".into(),
        images,
        prior_meshes: "priors.obj".into(),
        gt_mesh: Some("gt_mesh.obj".into()),
        near: Some(opts.near),
        far: Some(opts.far),
        train_views: None,
        test_views: None,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

//! Subcommand implementations.

use crate::rundir::{echo_config, effective_config, RunLock};
use anyhow::{bail, Context, Result};
use sparseshape_core::eval::{
    chamfer, marching_cubes_batched, psnr, sample_mesh_surface, ssim, ChamferMode, MetricReport,
    ViewMetrics,
};
use sparseshape_core::geom::{Camera, CameraRecord, Vec3};
use sparseshape_core::mesh::{save_obj, TriangleMesh};
use sparseshape_core::renderer::{
    save_depth_png, save_float_sidecar, save_normal_png, save_rgb_png, EditCommand, FieldsBundle,
    SceneRenderer,
};
use sparseshape_core::scene::{load_scene, validate_dataset, Scene};
use sparseshape_core::trainer::{
    latest_checkpoint, pretrain_geometry, train_joint, ModelCheckpoint, TrainConfig,
};
use std::path::{Path, PathBuf};

pub fn validate(dataset: &Path) -> Result<()> {
    let report = validate_dataset(dataset)
        .with_context(|| format!("validating {}", dataset.display()))?;
    println!(
        "cameras: {}  images: {}  priors: {} ({} watertight)",
        report.camera_count, report.image_count, report.prior_count, report.watertight_priors
    );
    for issue in &report.issues {
        println!("[{}] {}: {}", issue.severity, issue.field, issue.message);
    }
    if report.has_errors() {
        bail!("dataset validation failed");
    }
    println!("ok");
    Ok(())
}

pub fn pretrain(config_path: &Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let config = effective_config(config_path, seed, out)?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    echo_config(&config)?;
    let scene = load_scene(&config.dataset)?;
    let report = pretrain_geometry(&config, &scene.priors)?;
    std::fs::create_dir_all(config.out_dir.join("ckpt"))?;
    let path = config.out_dir.join("ckpt").join("pretrain.ckpt");
    report.checkpoint.save(&path)?;
    println!(
        "pretrained {} steps; held-out mean |d - d'| = {:.5}; checkpoint at {}",
        config.pretrain_steps,
        report.holdout_mae,
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
    views: Option<usize>,
    no_prior: bool,
    no_rayloss: bool,
    no_saturation: bool,
) -> Result<()> {
    let mut config = effective_config(config_path, seed, out)?;
    if views.is_some() {
        config.views = views;
    }
    config.no_prior |= no_prior;
    config.no_ray_loss |= no_rayloss;
    config.no_saturation |= no_saturation;
    let _lock = RunLock::acquire(&config.out_dir)?;
    echo_config(&config)?;
    let scene = load_scene(&config.dataset)?;

    let init = if config.no_prior {
        fresh_checkpoint(&config)
    } else {
        let path = config.out_dir.join("ckpt").join("pretrain.ckpt");
        if !path.exists() {
            bail!(
                "no pretrain checkpoint at {} (run `sparseshape pretrain` first, or pass --no-prior)",
                path.display()
            );
        }
        let mut ckpt = ModelCheckpoint::load(&path)?;
        // The pretrained geometry is the frozen consistency target.
        ckpt.prior_geometry = Some(ckpt.params.geometry.clone());
        ckpt
    };

    let report = train_joint(&config, &scene, init)?;
    println!(
        "trained {} steps; final loss {:.5}; checkpoint at {}",
        config.joint_steps,
        report.last_breakdown.map(|b| b.total).unwrap_or(f64::NAN),
        config.out_dir.join("ckpt").join("latest.ckpt").display()
    );
    Ok(())
}

fn fresh_checkpoint(config: &TrainConfig) -> ModelCheckpoint {
    use sparseshape_core::fields::FieldParams;
    use sparseshape_core::trainer::CheckpointMeta;
    ModelCheckpoint::fresh(
        CheckpointMeta {
            stage: "init".into(),
            step: 0,
            total_steps: 0,
            lr_start: config.lr_start,
            lr_end: config.lr_end,
            config_digest: config.digest(),
            fields: config.fields.clone(),
            adam_step: 0,
        },
        FieldParams::init(&config.fields, config.seed),
    )
}

fn parse_resolution(res: &Option<String>, cam: &Camera) -> Result<(u32, u32)> {
    match res {
        None => Ok((cam.width, cam.height)),
        Some(text) => {
            let (w, h) = text
                .split_once(['x', 'X'])
                .with_context(|| format!("--res wants WxH, got {text}"))?;
            Ok((w.trim().parse()?, h.trim().parse()?))
        }
    }
}

fn pick_camera(scene: &Scene, camera: &Option<String>, pose: &Option<PathBuf>) -> Result<Camera> {
    if let Some(path) = pose {
        let rec: CameraRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        return Ok(Camera::from_record(&rec, false)?);
    }
    match camera {
        Some(id) => scene
            .cameras
            .iter()
            .find(|c| &c.id == id)
            .cloned()
            .with_context(|| format!("no camera '{id}' in the dataset")),
        None => Ok(scene.cameras[0].clone()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn render(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
    camera: &Option<String>,
    pose: &Option<PathBuf>,
    res: &Option<String>,
    outputs: &str,
    edits: &[EditCommand],
) -> Result<()> {
    let config = effective_config(config_path, seed, out)?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    let scene = load_scene(&config.dataset)?;
    let ckpt = latest_checkpoint(&config.out_dir)?;
    let cam = pick_camera(&scene, camera, pose)?;
    let resolution = parse_resolution(res, &cam)?;

    let fields = FieldsBundle::new(&ckpt.meta.fields);
    let renderer = SceneRenderer {
        fields: &fields,
        params: &ckpt.params,
        volume: &scene.volume,
        priors: &scene.priors,
        near: scene.near,
        far: scene.far,
        budget: config.budget.into(),
        settings: sparseshape_core::renderer::RenderSettings {
            fallback_color: config.fallback_color,
            normalize_by_weight: config.normalize_composite,
        },
    };
    let images = if edits.is_empty() {
        renderer.render(&cam, resolution, config.seed)?
    } else {
        renderer.render_edited(edits, &cam, resolution, config.seed)?
    };

    let dir = config.out_dir.join("renders");
    std::fs::create_dir_all(&dir)?;
    let tag = if edits.is_empty() { "view" } else { "edited" };
    let stem = format!("{tag}_{}", cam.id);
    for kind in outputs.split(',') {
        match kind.trim() {
            "rgb" => {
                save_rgb_png(&images, &dir.join(format!("{stem}_rgb.png")))?;
            }
            "normal" => {
                save_normal_png(&images, &dir.join(format!("{stem}_normal.png")))?;
                save_float_sidecar(
                    &dir.join(format!("{stem}_normal.bin")),
                    images.width,
                    images.height,
                    3,
                    images.normal.iter().flat_map(|n| [n.x, n.y, n.z]),
                )?;
            }
            "depth" => {
                save_depth_png(&images, scene.near, scene.far, &dir.join(format!("{stem}_depth.png")))?;
                save_float_sidecar(
                    &dir.join(format!("{stem}_depth.bin")),
                    images.width,
                    images.height,
                    1,
                    images.depth.iter().copied(),
                )?;
            }
            other => bail!("unknown output '{other}' (expected rgb, normal, depth)"),
        }
    }
    println!("rendered {} at {}x{} into {}", cam.id, resolution.0, resolution.1, dir.display());
    Ok(())
}

pub fn extract(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
    grid: usize,
) -> Result<()> {
    let config = effective_config(config_path, seed, out)?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    let scene = load_scene(&config.dataset)?;
    let ckpt = latest_checkpoint(&config.out_dir)?;
    let mesh = extract_mesh(&scene, &ckpt, grid)?;

    // Back to the dataset's original units for interoperability.
    let denorm = TriangleMesh {
        name: "reconstruction".into(),
        vertices: mesh
            .vertices
            .iter()
            .map(|&v| scene.normalization.to_world(v))
            .collect(),
        faces: mesh.faces.clone(),
        watertight: mesh.watertight,
    };
    std::fs::create_dir_all(config.out_dir.join("mesh"))?;
    let path = config.out_dir.join("mesh").join("mesh.obj");
    save_obj(std::slice::from_ref(&denorm), &path)?;
    println!(
        "extracted {} vertices / {} faces into {}",
        denorm.vertices.len(),
        denorm.faces.len(),
        path.display()
    );
    Ok(())
}

/// Marching cubes over the checkpoint's geometry network, bounded by the
/// foreground boxes inflated by the standard margin.
pub fn extract_mesh(scene: &Scene, ckpt: &ModelCheckpoint, grid: usize) -> Result<TriangleMesh> {
    let fields = FieldsBundle::new(&ckpt.meta.fields);
    let mut bounds = scene.volume.entries()[0].bounds;
    for e in scene.volume.entries() {
        bounds = bounds.union(&e.bounds);
    }
    let bounds = bounds.inflated(0.1);
    let geometry = fields.geometry;
    let params = ckpt.params.geometry.clone();
    let sdf = move |pts: &[Vec3]| -> Vec<f64> {
        geometry
            .eval_f64(&params, pts, false)
            .map(|(d, _, _)| d)
            .unwrap_or_else(|_| vec![f64::INFINITY; pts.len()])
    };
    Ok(marching_cubes_batched(&sdf, [grid, grid, grid], &bounds, 0.0)?)
}

pub fn eval(config_path: &Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let config = effective_config(config_path, seed, out)?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    let scene = load_scene(&config.dataset)?;
    let ckpt = latest_checkpoint(&config.out_dir)?;
    let fields = FieldsBundle::new(&ckpt.meta.fields);
    let renderer = SceneRenderer {
        fields: &fields,
        params: &ckpt.params,
        volume: &scene.volume,
        priors: &scene.priors,
        near: scene.near,
        far: scene.far,
        budget: config.budget.into(),
        settings: sparseshape_core::renderer::RenderSettings {
            fallback_color: config.fallback_color,
            normalize_by_weight: config.normalize_composite,
        },
    };

    let n_train = config.views.unwrap_or(scene.cameras.len().max(1) - 1);
    let (_, test_views) = scene.split_views(n_train.min(scene.cameras.len() - 1).max(1))?;
    let mut per_view = Vec::new();
    for &view in &test_views {
        let cam = &scene.cameras[view];
        let images = renderer.render(cam, (cam.width, cam.height), config.seed)?;
        let pred: Vec<f64> = images.rgb.iter().flatten().copied().collect();
        let gt: Vec<f64> = scene.images[view].iter().flatten().copied().collect();
        let view_psnr = psnr(&pred, &gt, 1.0)?;
        let view_ssim = ssim(
            &images.rgb,
            &scene.images[view],
            cam.width as usize,
            cam.height as usize,
        )?;
        println!("view {}: psnr {view_psnr:.2} dB  ssim {view_ssim:.4}", cam.id);
        per_view.push(ViewMetrics { view: cam.id.clone(), psnr: view_psnr, ssim: view_ssim });
    }
    let mean_psnr = per_view.iter().map(|v| v.psnr).sum::<f64>() / per_view.len().max(1) as f64;
    let mean_ssim = per_view.iter().map(|v| v.ssim).sum::<f64>() / per_view.len().max(1) as f64;

    // Geometry error against the ground-truth mesh, in scene units.
    let (mut one_way, mut bidir) = (None, None);
    if let Some(gt_meshes) = &scene.gt_mesh {
        let reconstructed = extract_mesh(&scene, &ckpt, 128)?;
        if !reconstructed.faces.is_empty() {
            let mut gt_points = Vec::new();
            for m in gt_meshes {
                gt_points.extend(sample_mesh_surface(m, 100_000 / gt_meshes.len(), config.seed));
            }
            let pred_points = sample_mesh_surface(&reconstructed, 100_000, config.seed ^ 1);
            one_way = Some(chamfer(&gt_points, &pred_points, ChamferMode::OneWay)?);
            bidir = Some(chamfer(&gt_points, &pred_points, ChamferMode::Bidirectional)?);
            println!(
                "chamfer (scene units): one-way {:.5}, bidirectional {:.5}",
                one_way.unwrap(),
                bidir.unwrap()
            );
        }
    }

    let report = MetricReport {
        per_view,
        mean_psnr,
        mean_ssim,
        chamfer_one_way: one_way,
        chamfer_bidirectional: bidir,
        chamfer_kind: "unsquared-mean".into(),
        config_digest: config.digest(),
    };
    std::fs::write(
        config.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "mean psnr {mean_psnr:.2} dB, mean ssim {mean_ssim:.4}; wrote {}",
        config.out_dir.join("metrics.json").display()
    );
    Ok(())
}

/// Parse the edit flags into typed commands.
pub fn parse_edits(
    omit: &[String],
    translate: &[String],
    rotate: &[String],
    scale: &[String],
) -> Result<Vec<EditCommand>> {
    let mut edits = Vec::new();
    for id in omit {
        edits.push(EditCommand::Omit { id: id.clone() });
    }
    for spec in translate {
        let (id, rest) = spec
            .split_once(':')
            .with_context(|| format!("--translate wants ID:x,y,z, got {spec}"))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("--translate wants ID:x,y,z, got {spec}"))?;
        if nums.len() != 3 {
            bail!("--translate wants ID:x,y,z, got {spec}");
        }
        edits.push(EditCommand::Translate {
            id: id.to_string(),
            offset: Vec3::new(nums[0], nums[1], nums[2]),
        });
    }
    for spec in rotate {
        let (id, rest) = spec
            .split_once(':')
            .with_context(|| format!("--rotate wants ID:axis,deg, got {spec}"))?;
        let (axis, deg) = rest
            .split_once(',')
            .with_context(|| format!("--rotate wants ID:axis,deg, got {spec}"))?;
        let axis = match axis.trim() {
            "x" | "X" => 0,
            "y" | "Y" => 1,
            "z" | "Z" => 2,
            other => bail!("--rotate axis must be x, y or z, got {other}"),
        };
        edits.push(EditCommand::Rotate {
            id: id.to_string(),
            axis,
            degrees: deg.trim().parse()?,
        });
    }
    for spec in scale {
        let (id, k) = spec
            .split_once(':')
            .with_context(|| format!("--scale wants ID:k, got {spec}"))?;
        edits.push(EditCommand::Scale { id: id.to_string(), factor: k.trim().parse()? });
    }
    Ok(edits)
}

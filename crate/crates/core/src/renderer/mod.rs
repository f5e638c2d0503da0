//! Volume rendering: ray sampling (coarse + importance + background), box
//! classification, exclusive foreground/background shading, transmittance
//! compositing with weight normalization, full-frame rendering, and scene
//! editing.
//!
//! Rendering is a parallel map over pixels against an immutable parameter
//! snapshot; each worker owns its tape, and image assembly is a
//! disjoint-write gather.

mod images;
mod sampling;
mod shading;
mod volume;

pub use images::{
    load_float_sidecar, query_world_sdf, save_depth_png, save_float_sidecar, save_normal_png,
    save_rgb_png, RenderOutputs, RenderedImages, SceneRenderer,
};
pub use sampling::{importance_resample, sample_ray, SampleBudget, SampleSet, Stage};
pub use shading::{
    attach_params, composite_f64, shade_batch, shade_samples_f64, AttachedModel, CompositedRay,
    FieldsBundle, ForegroundNodes, RayJob, RenderSettings, ShadedBatch, ShadedRay,
};
pub use volume::{apply_edits, edited_priors, Edit, EditCommand, ForegroundVolume, VolumeEntry};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::fields::{neus_alpha, FieldConfig, FieldParams};
    use crate::geom::{Aabb, Ray, Vec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_setup() -> (FieldsBundle, FieldParams, ForegroundVolume) {
        let cfg = FieldConfig::desk();
        let fields = FieldsBundle::new(&cfg);
        let params = FieldParams::init(&cfg, 1234);
        let volume = ForegroundVolume::new(vec![VolumeEntry {
            id: "obj".into(),
            bounds: Aabb::new(Vec3::new(-0.6, -0.6, -0.6), Vec3::new(0.6, 0.6, 0.6)).unwrap(),
            edit: Edit::None,
        }])
        .unwrap();
        (fields, params, volume)
    }

    fn sample_test_ray(
        volume: &ForegroundVolume,
        fields: &FieldsBundle,
        params: &FieldParams,
        seed: u64,
    ) -> (Ray, SampleSet) {
        let ray = Ray::new(Vec3::new(0.0, 0.0, -2.5), Vec3::z(), 0.05, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = SampleBudget { coarse: 12, fine: 8, background: 6, rounds: 2 };
        let geometry = fields.geometry.clone();
        let gp = params.geometry.clone();
        let mut sdf = move |pts: &[Vec3]| {
            geometry.eval_f64(&gp, pts, false).map(|(d, _, _)| d).unwrap_or_default()
        };
        let samples = sample_ray(&ray, volume, &budget, &mut sdf, &mut rng);
        (ray, samples)
    }

    /// Mixed ray: every sample's (alpha, color) equals the value computed
    /// by running the corresponding single model independently and
    /// splicing by the box indicator.
    #[test]
    fn mixed_ray_matches_spliced_single_models() {
        let (fields, params, volume) = desk_setup();
        let (ray, samples) = sample_test_ray(&volume, &fields, &params, 5);
        assert!(samples.foreground.iter().any(|&b| b));
        assert!(samples.foreground.iter().any(|&b| !b));
        let f1 = 0.4;
        let (alphas, colors) =
            shade_samples_f64(&fields, &params, &volume, ray, samples.clone(), f1).unwrap();

        // Independent foreground model: geometry + color nets on fg
        // samples only, chained pairs within the merged order.
        let fg_idx: Vec<usize> =
            (0..samples.len()).filter(|&i| samples.foreground[i]).collect();
        let fg_pts: Vec<Vec3> = fg_idx.iter().map(|&i| samples.points[i]).collect();
        let (d, _, _) = fields.geometry.eval_f64(&params.geometry, &fg_pts, false).unwrap();
        let s = params.sharpness();
        for (k, &i) in fg_idx.iter().enumerate() {
            let expected = if k + 1 < fg_idx.len() && fg_idx[k + 1] == i + 1 {
                neus_alpha(d[k], d[k + 1], s)
            } else {
                0.0
            };
            assert!(
                (alphas[i] - expected).abs() < 1e-9,
                "fg sample {i}: alpha {} vs spliced {expected}",
                alphas[i]
            );
        }

        // Independent background model on bg samples.
        let bg_idx: Vec<usize> =
            (0..samples.len()).filter(|&i| !samples.foreground[i]).collect();
        let bg_pts: Vec<Vec3> = bg_idx.iter().map(|&i| samples.points[i]).collect();
        let mut tape = Tape::new();
        let vars: Vec<_> =
            params.background.iter().map(|t| tape.constant(t.clone())).collect();
        let pts_var = tape.constant(crate::fields::points_tensor(&bg_pts));
        let dirs_var = tape.constant(crate::fields::points_tensor(&vec![
            ray.direction;
            bg_pts.len()
        ]));
        let out = fields.background.eval(&mut tape, &vars, pts_var, dirs_var).unwrap();
        for (k, &i) in bg_idx.iter().enumerate() {
            let sigma = tape.value(out.sigma).at(k, 0);
            let expected = crate::fields::background_alpha(sigma, samples.seg_len[i]);
            assert!(
                (alphas[i] - expected).abs() < 1e-9,
                "bg sample {i}: alpha {} vs spliced {expected}",
                alphas[i]
            );
            for c in 0..3 {
                assert!((colors[i][c] - tape.value(out.rgb).at(k, c)).abs() < 1e-9);
            }
        }
    }

    /// Tape compositing agrees with the f64 reference path.
    #[test]
    fn tape_composite_matches_f64_reference() {
        let (fields, params, volume) = desk_setup();
        let (ray, samples) = sample_test_ray(&volume, &fields, &params, 6);
        let f1 = 0.2;
        let (alphas, colors) =
            shade_samples_f64(&fields, &params, &volume, ray, samples.clone(), f1).unwrap();
        let reference = composite_f64(&alphas, &colors, &RenderSettings::default());

        let mut tape = Tape::new();
        let model = attach_params(&mut tape, &params, false);
        let jobs = vec![RayJob { ray, samples, f1 }];
        let batch = shade_batch(
            &mut tape,
            &fields,
            &model,
            &volume,
            &jobs,
            &RenderSettings::default(),
        )
        .unwrap();
        let shaded = &batch.rays[0];
        for c in 0..3 {
            assert!(
                (tape.value(shaded.color).at(0, c) - reference.color[c]).abs() < 1e-9,
                "channel {c}"
            );
        }
        assert!((tape.value(shaded.weight_sum).item() - reference.weight_sum).abs() < 1e-12);
        for (a, b) in shaded.transmittance.iter().zip(&reference.transmittance) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// T starts at 1, never increases; unnormalized weights sum <= 1;
    /// normalized weights sum to 1 whenever the weight mass is positive.
    #[test]
    fn compositing_invariants_through_tape() {
        let (fields, params, volume) = desk_setup();
        let mut tape = Tape::new();
        let model = attach_params(&mut tape, &params, false);
        let mut jobs = Vec::new();
        for k in 0..16 {
            let (ray, samples) = sample_test_ray(&volume, &fields, &params, 100 + k);
            jobs.push(RayJob { ray, samples, f1: 0.1 });
        }
        let batch =
            shade_batch(&mut tape, &fields, &model, &volume, &jobs, &RenderSettings::default())
                .unwrap();
        for shaded in &batch.rays {
            assert_eq!(shaded.transmittance[0], 1.0);
            for w in shaded.transmittance.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
            let alphas = tape.value(shaded.alphas);
            assert!(alphas.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
            let wsum = tape.value(shaded.weight_sum).item();
            assert!(wsum <= 1.0 + 1e-12);
            if !shaded.zero_opacity {
                let w = tape.value(shaded.weights);
                let norm: f64 = w.data().iter().map(|v| v / wsum).sum();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    /// For a ray crossing a linear SDF once, the argmax-weight sample lies
    /// within one segment of the true zero-crossing, and sharper s never
    /// lowers the peak weight.
    #[test]
    fn weights_concentrate_at_sdf_crossing() {
        let t: Vec<f64> = (0..64).map(|i| i as f64 * 0.05).collect();
        let crossing = 1.57;
        let sdf: Vec<f64> = t.iter().map(|&ti| crossing - ti).collect();
        let mut prev_peak = 0.0;
        for &s in &[4.0, 8.0, 16.0, 32.0] {
            let alphas: Vec<f64> = (0..t.len())
                .map(|i| {
                    if i + 1 < t.len() {
                        neus_alpha(sdf[i], sdf[i + 1], s)
                    } else {
                        0.0
                    }
                })
                .collect();
            let colors = vec![[1.0, 1.0, 1.0]; t.len()];
            let r = composite_f64(&alphas, &colors, &RenderSettings::default());
            let (argmax, peak) = r
                .weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &w)| (i, w))
                .unwrap();
            let t_peak = t[argmax];
            assert!(
                (t_peak - crossing).abs() <= 0.05 + 1e-12,
                "s = {s}: peak at {t_peak}, crossing {crossing}"
            );
            assert!(peak >= prev_peak - 1e-12, "s = {s}: peak {peak} < {prev_peak}");
            prev_peak = peak;
        }
    }

    #[test]
    fn render_is_deterministic() {
        let (fields, params, volume) = desk_setup();
        let cam = {
            let k = crate::geom::Mat3::new(
                20.0, 0.0, 8.0,
                0.0, 20.0, 8.0,
                0.0, 0.0, 1.0,
            );
            crate::geom::Camera::new(
                "c",
                k,
                crate::geom::Mat3::identity(),
                Vec3::new(0.0, 0.0, 2.5),
                16,
                16,
            )
            .unwrap()
        };
        let renderer = SceneRenderer {
            fields: &fields,
            params: &params,
            volume: &volume,
            priors: &[],
            near: 0.05,
            far: 6.0,
            budget: SampleBudget { coarse: 8, fine: 4, background: 4, rounds: 2 },
            settings: RenderSettings::default(),
        };
        let a = renderer.render(&cam, (16, 16), 7).unwrap();
        let b = renderer.render(&cam, (16, 16), 7).unwrap();
        for (pa, pb) in a.rgb.iter().zip(&b.rgb) {
            for c in 0..3 {
                assert_eq!(pa[c].to_bits(), pb[c].to_bits());
            }
        }
    }

    /// Applying an edit composed with its inverse renders identically to
    /// the unedited scene (within floating-point identity).
    #[test]
    fn edit_composed_with_inverse_is_identity_render() {
        let (fields, params, volume) = desk_setup();
        let cam = {
            let k = crate::geom::Mat3::new(20.0, 0.0, 8.0, 0.0, 20.0, 8.0, 0.0, 0.0, 1.0);
            crate::geom::Camera::new(
                "c",
                k,
                crate::geom::Mat3::identity(),
                Vec3::new(0.0, 0.0, 2.5),
                16,
                16,
            )
            .unwrap()
        };
        let tf = crate::geom::RigidTransform::new(
            crate::geom::RigidTransform::rotation_about_axis(1, 30.0)
                .unwrap()
                .rotation_m(),
            Vec3::new(0.2, -0.1, 0.3),
            1.2,
        )
        .unwrap();
        let round_trip = tf.compose(&tf.inverse());
        let mut edited_volume = volume.clone();
        edited_volume.set_edit("obj", Edit::Transform(round_trip)).unwrap();

        let make = |vol: &ForegroundVolume| -> RenderedImages {
            let renderer = SceneRenderer {
                fields: &fields,
                params: &params,
                volume: vol,
                priors: &[],
                near: 0.05,
                far: 6.0,
                budget: SampleBudget { coarse: 8, fine: 4, background: 4, rounds: 2 },
                settings: RenderSettings::default(),
            };
            renderer.render(&cam, (16, 16), 12).unwrap()
        };
        let base = make(&volume);
        let edited = make(&edited_volume);
        for (pa, pb) in base.rgb.iter().zip(&edited.rgb) {
            for c in 0..3 {
                assert!((pa[c] - pb[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identity_edit_reproduces_base_render() {
        let (fields, params, volume) = desk_setup();
        let cam = {
            let k = crate::geom::Mat3::new(20.0, 0.0, 8.0, 0.0, 20.0, 8.0, 0.0, 0.0, 1.0);
            crate::geom::Camera::new(
                "c",
                k,
                crate::geom::Mat3::identity(),
                Vec3::new(0.0, 0.0, 2.5),
                16,
                16,
            )
            .unwrap()
        };
        let renderer = SceneRenderer {
            fields: &fields,
            params: &params,
            volume: &volume,
            priors: &[],
            near: 0.05,
            far: 6.0,
            budget: SampleBudget { coarse: 8, fine: 4, background: 4, rounds: 2 },
            settings: RenderSettings::default(),
        };
        let base = renderer.render(&cam, (16, 16), 3).unwrap();
        let edited = renderer
            .render_edited(
                &[EditCommand::Translate { id: "obj".into(), offset: Vec3::zeros() }],
                &cam,
                (16, 16),
                3,
            )
            .unwrap();
        for (pa, pb) in base.rgb.iter().zip(&edited.rgb) {
            for c in 0..3 {
                assert!((pa[c] - pb[c]).abs() < 1e-6);
            }
        }
    }
}

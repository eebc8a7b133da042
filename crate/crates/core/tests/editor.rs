use nalgebra::Vector3;
use nerfedit_core::editor::{
    background_preservation_loss, edit_scene, train_reconstruction, EditConfig, EditOutcome,
    EditRun, EditScene, ReconstructionConfig,
};
use nerfedit_core::field::{write_checkpoint, Gradients};
use nerfedit_core::guidance::{
    make_target_oracle, GuidanceProvider, PerfectPredictor, PromptBundle, SdsConfig, Stage,
    ViewFrame,
};
use nerfedit_core::render::{all_pixels, generate_rays, render, Ray, RayBounds};
use nerfedit_core::scene_io::{make_synthetic_scene, SyntheticSpec};
use nerfedit_core::{
    CameraPose, FieldConfig, FieldParameters, HashGridConfig, Image, RenderMode, RenderSettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 2,
            base_resolution: 4,
            growth_factor: 2.0,
            table_size: 256,
            ..HashGridConfig::default()
        },
        hidden_width: 8,
        geo_features: 3,
        ..FieldConfig::default()
    }
}

fn randomized<T: nerfedit_core::Real>(seed: u64) -> FieldParameters<T> {
    let mut p = FieldParameters::<T>::init(tiny_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = p.layout().grid_range();
    for v in &mut p.as_mut_slice()[range] {
        *v = T::lit(rng.gen_range(-1.0..1.0));
    }
    p.tensor_mut("density.b1").unwrap()[0] = T::lit(0.5);
    p
}

fn front_rays(side: u32) -> Vec<Ray> {
    let cam = CameraPose::look_at(
        Vector3::new(0.3, 1.0, -3.0),
        Vector3::zeros(),
        Vector3::y(),
        1.6 * side as f64,
        side,
        side,
    )
    .unwrap();
    generate_rays(
        &cam,
        &all_pixels(side, side),
        RayBounds {
            near: 1.0,
            far: 5.0,
        },
    )
    .unwrap()
}

fn settings(n_samples: usize) -> RenderSettings {
    RenderSettings {
        n_samples,
        stratified: false,
        ..RenderSettings::default()
    }
}

#[test]
fn identical_fields_have_zero_background_loss() {
    let field = randomized::<f64>(2);
    let rays = front_rays(8);
    let mut grads = Gradients::zeros_like(&field);
    let loss = background_preservation_loss(
        &field,
        &field.clone(),
        &rays,
        &settings(16),
        0,
        1000.0,
        Some(&mut grads),
    )
    .unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.data.iter().all(|&g| g == 0.0));
}

/// One dense grid level whose two features drive density and the editing
/// logit directly.
fn two_box_config() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 1,
            base_resolution: 8,
            growth_factor: 2.0,
            table_size: 1024,
            features_per_entry: 2,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
        },
        hidden_width: 4,
        geo_features: 2,
        edit_view_dependent: false,
    }
}

type Cells = [std::ops::RangeInclusive<u32>; 3];

fn contains(cells: &Cells, v: [u32; 3], grow: u32) -> bool {
    (0..3).all(|k| v[k] + grow >= *cells[k].start() && v[k] <= cells[k].end() + grow)
}

/// Box `a` is marked for editing with a margin of one lattice step, so every
/// point where its density is non-zero has an editing probability of one.
fn two_box_field(a: &Cells, b: &Cells, a_density: f64) -> FieldParameters<f64> {
    let mut p = FieldParameters::<f64>::zeros(two_box_config()).unwrap();
    let grid = p.tensor_mut("grid.level0").unwrap();
    for z in 0..=8u32 {
        for y in 0..=8u32 {
            for x in 0..=8u32 {
                let row = 2 * (x + 9 * (y + 9 * z)) as usize;
                let v = [x, y, z];
                grid[row] = if contains(a, v, 0) {
                    a_density
                } else if contains(b, v, 0) {
                    1.0
                } else {
                    0.0
                };
                grid[row + 1] = if contains(a, v, 1) { 1.0 } else { 0.0 };
            }
        }
    }
    // hidden0 = density feature, hidden1 = edit feature
    let w0 = p.tensor_mut("density.w0").unwrap();
    w0[0] = 1.0;
    w0[3] = 1.0;
    p.tensor_mut("density.w1").unwrap()[0] = 30.0;
    p.tensor_mut("density.b1").unwrap()[0] = -10.0;
    // first geometry feature copies the edit feature
    p.tensor_mut("density.w1").unwrap()[4 + 1] = 1.0;
    p.tensor_mut("edit.w0").unwrap()[0] = 1.0;
    p.tensor_mut("edit.w1").unwrap()[0] = 400.0;
    p.tensor_mut("edit.b1").unwrap()[0] = -200.0;
    p
}

#[test]
fn edits_inside_the_certain_foreground_keep_background_loss_near_zero() {
    let a: Cells = [1..=3, 3..=5, 3..=5];
    let b: Cells = [6..=7, 3..=5, 3..=5];
    let original = two_box_field(&a, &b, 1.0);
    let edited = two_box_field(&a, &b, 0.4);
    let rays = front_rays(16);
    let s = RenderSettings {
        sharpness: 1000.0,
        ..settings(64)
    };
    let full_a = render(&original, &rays, RenderMode::Full, &s, 0).unwrap();
    let full_b = render(&edited, &rays, RenderMode::Full, &s, 0).unwrap();
    let visible = full_a
        .pixels
        .iter()
        .zip(&full_b.pixels)
        .map(|(x, y)| (x.opacity - y.opacity).abs())
        .fold(0.0, f64::max);
    assert!(
        visible > 0.1,
        "the edit must change the full render, max opacity change {visible}"
    );
    let bg = render(&original, &rays, RenderMode::Background, &s, 0).unwrap();
    assert!(
        bg.pixels.iter().any(|p| p.opacity > 0.5),
        "box b must be visible"
    );

    let mut grads = Gradients::zeros_like(&edited);
    let loss =
        background_preservation_loss(&edited, &original, &rays, &s, 0, 1000.0, Some(&mut grads))
            .unwrap();
    assert!(loss < 1e-12, "loss {loss}");
    assert!(grads.data.iter().all(|g| g.abs() < 1e-6));
}

#[test]
fn background_gradient_flows_only_to_the_edited_field() {
    let original = randomized::<f64>(3);
    let snapshot = original.clone();
    let mut edited = original.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for v in edited.as_mut_slice() {
        *v += rng.gen_range(-0.05..0.05);
    }
    let rays = front_rays(6);
    let s = settings(12);
    let mut grads = Gradients::zeros_like(&edited);
    background_preservation_loss(&edited, &original, &rays, &s, 0, 2.0, Some(&mut grads)).unwrap();
    assert_eq!(original.as_slice(), snapshot.as_slice());

    let loss = |p: &FieldParameters<f64>| {
        background_preservation_loss(p, &original, &rays, &s, 0, 1.0, None).unwrap()
    };
    let mut checked = 0;
    for i in (0..edited.len()).step_by(97) {
        let h = 1e-6;
        let mut plus = edited.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = edited.clone();
        minus.as_mut_slice()[i] -= h;
        let fd = 2.0 * (loss(&plus) - loss(&minus)) / (2.0 * h);
        let g = grads.data[i];
        assert!(
            (fd - g).abs() <= 1e-5 * (1.0 + fd.abs()),
            "param {i}: fd {fd} vs {g}"
        );
        checked += 1;
    }
    assert!(checked > 10);
}

struct Fixture {
    cameras: Vec<CameraPose>,
    bounds: RayBounds,
    original: FieldParameters<f32>,
    bundle: PromptBundle,
    frame: ViewFrame,
}

impl Fixture {
    fn new() -> Self {
        let spec = SyntheticSpec {
            n_views: 4,
            width: 16,
            height: 16,
            ..SyntheticSpec::default()
        };
        let ds = make_synthetic_scene(&spec, 0).unwrap();
        let cameras = ds.cameras();
        let frame = ViewFrame::from_cameras(&cameras, Vector3::from(spec.sphere_center)).unwrap();
        let mut original = FieldParameters::<f32>::init(tiny_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let range = original.layout().grid_range();
        for v in &mut original.as_mut_slice()[range] {
            *v = rng.gen_range(-1.0..1.0);
        }
        Self {
            cameras,
            bounds: ds.ray_bounds(),
            original,
            bundle: PromptBundle {
                subject_token: Some("V*".into()),
                ..PromptBundle::default()
            },
            frame,
        }
    }

    fn scene<'a>(&'a self, provider: &'a dyn GuidanceProvider) -> EditScene<'a> {
        EditScene {
            original: &self.original,
            cameras: &self.cameras,
            bounds: self.bounds,
            bundle: &self.bundle,
            provider,
            classifier: None,
            view_frame: self.frame.clone(),
        }
    }
}

fn small_edit(iterations: usize) -> EditConfig {
    EditConfig {
        max_iterations: iterations,
        render_size: [8, 8],
        n_samples: 12,
        bg_rays: 32,
        image_driven: true,
        ..EditConfig::default()
    }
}

fn run(
    fx: &Fixture,
    provider: &dyn GuidanceProvider,
    cfg: &EditConfig,
    seed: u64,
    start: usize,
) -> EditOutcome {
    run_with(fx, provider, cfg, &settings(12), seed, start)
}

fn run_with(
    fx: &Fixture,
    provider: &dyn GuidanceProvider,
    cfg: &EditConfig,
    render_settings: &RenderSettings,
    seed: u64,
    start: usize,
) -> EditOutcome {
    let run = EditRun {
        start_iteration: start,
        ..EditRun::default()
    };
    edit_scene(
        &fx.scene(provider),
        cfg,
        &SdsConfig::default(),
        render_settings,
        seed,
        run,
    )
    .unwrap()
}

fn red_oracle() -> impl GuidanceProvider {
    make_target_oracle(Image::filled(8, 8, &[0.9, 0.1, 0.1])).unwrap()
}

#[test]
fn zero_iteration_reconstruction_returns_the_initial_field() {
    let ds = make_synthetic_scene(
        &SyntheticSpec {
            n_views: 3,
            width: 8,
            height: 8,
            ..SyntheticSpec::default()
        },
        0,
    )
    .unwrap();
    let cfg = ReconstructionConfig {
        iterations: 0,
        ..ReconstructionConfig::default()
    };
    let out =
        train_reconstruction(&ds, &tiny_config(), &cfg, &settings(8), 7, None, &mut ()).unwrap();
    let init = FieldParameters::<f32>::init(tiny_config(), 7).unwrap();
    assert_eq!(out.params.as_slice(), init.as_slice());
    assert_eq!(out.original.as_slice(), init.as_slice());
}

#[test]
fn editing_is_deterministic() {
    let fx = Fixture::new();
    let oracle = red_oracle();
    let cfg = small_edit(4);
    let a = run(&fx, &oracle, &cfg, 3, 0);
    let b = run(&fx, &oracle, &cfg, 3, 0);
    assert_eq!(a.params.as_slice(), b.params.as_slice());
    assert_eq!(a.records, b.records);
    let c = run(&fx, &oracle, &cfg, 4, 0);
    assert_ne!(a.params.as_slice(), c.params.as_slice());
}

#[test]
fn stages_alternate_one_to_one() {
    let fx = Fixture::new();
    let out = run(&fx, &PerfectPredictor, &small_edit(10), 0, 0);
    let stages: String = out
        .records
        .iter()
        .map(|r| match r.stage {
            Stage::Local => 'L',
            Stage::Global => 'G',
        })
        .collect();
    assert_eq!(stages, "LGLGLGLGLG");
    for r in &out.records {
        match r.stage {
            Stage::Local => assert!(!r.prompt.contains("V*"), "{}", r.prompt),
            Stage::Global => assert!(r.prompt.contains("V*"), "{}", r.prompt),
        }
    }
}

#[test]
fn perfect_predictor_without_background_term_changes_nothing() {
    let fx = Fixture::new();
    let cfg = EditConfig {
        lambda_bg: 0.0,
        ..small_edit(6)
    };
    let out = run(&fx, &PerfectPredictor, &cfg, 1, 0);
    assert_eq!(out.params.as_slice(), fx.original.as_slice());
    assert!(out.records.iter().all(|r| r.loss_sds == 0.0));
}

#[test]
fn the_original_field_is_never_modified() {
    let fx = Fixture::new();
    let mut before = Vec::new();
    write_checkpoint(&mut before, &fx.original).unwrap();
    let out = run(&fx, &red_oracle(), &small_edit(4), 2, 0);
    let mut after = Vec::new();
    write_checkpoint(&mut after, &fx.original).unwrap();
    assert_eq!(before, after);
    assert_ne!(out.params.as_slice(), fx.original.as_slice());
}

#[test]
fn global_pixels_outside_the_edit_region_give_no_gradient() {
    let mut fx = Fixture::new();
    fx.original.tensor_mut("edit.w1").unwrap().fill(0.0);
    let cfg = EditConfig {
        lambda_bg: 0.0,
        ..small_edit(2)
    };
    assert_eq!(cfg.stage(1), Stage::Global);

    // a steep soft mask maps a zero editing probability to exactly zero
    let sharp = RenderSettings {
        sharpness: 1000.0,
        ..settings(12)
    };
    fx.original.tensor_mut("edit.b1").unwrap()[0] = -200.0;
    let cam = fx.cameras[0].resized(8, 8);
    let rays = generate_rays(&cam, &all_pixels(8, 8), fx.bounds).unwrap();
    let probe = render(&fx.original, &rays, RenderMode::Full, &sharp, 0).unwrap();
    assert!(probe.pixels.iter().all(|p| p.edit_prob == 0.0));
    assert!(probe.pixels.iter().any(|p| p.opacity > 0.1));

    let out = run_with(&fx, &red_oracle(), &cfg, &sharp, 0, 1);
    assert_eq!(out.records[0].stage, Stage::Global);
    assert!(out.records[0].loss_sds > 0.0);
    assert_eq!(out.params.as_slice(), fx.original.as_slice());

    let hard = EditConfig {
        hard_gate: true,
        ..cfg.clone()
    };
    let out = run_with(&fx, &red_oracle(), &hard, &sharp, 0, 1);
    assert_eq!(out.params.as_slice(), fx.original.as_slice());

    // the same step moves the field once the region is marked
    fx.original.tensor_mut("edit.b1").unwrap()[0] = 200.0;
    let out = run_with(&fx, &red_oracle(), &cfg, &sharp, 0, 1);
    assert_ne!(out.params.as_slice(), fx.original.as_slice());
}

#[test]
fn frozen_edit_head_is_left_alone() {
    let fx = Fixture::new();
    let cfg = EditConfig {
        freeze_edit_head: true,
        ..small_edit(3)
    };
    let out = run(&fx, &red_oracle(), &cfg, 0, 0);
    let range = fx.original.layout().edit_head_range();
    assert_eq!(
        out.params.as_slice()[range.clone()],
        fx.original.as_slice()[range]
    );
}

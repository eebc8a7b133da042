//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits non-zero when any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Vector3;
use nerfedit_core::editor::{
    adam_step, edit_scene, train_reconstruction, AdamConfig, AdamState, EditConfig, EditRun,
    EditScene, ReconstructionConfig,
};
use nerfedit_core::field::{read_checkpoint, write_checkpoint, FieldResponse};
use nerfedit_core::guidance::{
    make_target_oracle, sds_gradient, PerfectPredictor, PromptBundle, SdsConfig, Stage, ViewFrame,
    ViewTarget, ViewTargetOracle,
};
use nerfedit_core::image::{psnr, Image};
use nerfedit_core::render::{
    all_pixels, generate_rays, render, render_backward, render_source, soft_mask, split_density,
    FieldSource, PixelGrad, RayBounds,
};
use nerfedit_core::scene_io::{make_synthetic_scene, SyntheticSpec};
use nerfedit_core::{
    CameraPose, FieldConfig, FieldParameters, Gradients, HashGridConfig, Ray, RenderMode,
    RenderSettings, SceneDataset,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: f64) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    ensure!(s < limit, "took {s:.2} s, limit {limit} s");
    Ok(s)
}

fn decomposition_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field = FieldParameters::<f64>::init(FieldConfig::default(), 1).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100_000 {
        let (sigma, m) = if i % 10 == 0 {
            let p = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ];
            let r = field.query(p, [0.0, 0.0, 1.0]).unwrap();
            (r.sigma, r.edit_prob)
        } else {
            (rng.gen_range(0.0..100.0), rng.gen())
        };
        let s = rng.gen_range(1.0..1000.0);
        let (fg, bg) = split_density(sigma, soft_mask(m, s));
        ensure!(fg >= 0.0 && bg >= 0.0, "negative component at sample {i}");
        worst = worst.max((fg + bg - sigma).abs());
    }
    ensure!(worst <= 1e-6, "max |σ_f + σ_b − σ| = {worst:e}");
    let t = within(start, 5.0)?;
    Ok(format!(
        "max deviation {worst:.1e} over 1e5 samples in {t:.2} s"
    ))
}

/// Homogeneous slab `z ∈ [z0, z1]` seen along +Z.
struct Slab {
    z0: f64,
    z1: f64,
    sigma: f64,
    color: [f64; 3],
}

impl FieldSource<f64> for Slab {
    type Scratch = ();

    fn scratch(&self) {}

    fn respond_batch(
        &self,
        points: &[[f64; 3]],
        _: &[[f64; 3]],
        _: &mut (),
        out: &mut Vec<FieldResponse<f64>>,
    ) {
        out.clear();
        out.extend(points.iter().map(|p| FieldResponse {
            sigma: if (self.z0..=self.z1).contains(&p[2]) {
                self.sigma
            } else {
                0.0
            },
            color: self.color,
            edit_prob: 1.0,
        }));
    }
}

fn slab_quadrature() -> Outcome {
    let start = Instant::now();
    let slab = Slab {
        z0: 0.0,
        z1: 1.0,
        sigma: 2.0,
        color: [0.7; 3],
    };
    let exact = 0.7 * (1.0 - (-2.0f64).exp());
    let ray = [Ray {
        origin: [0.0; 3],
        direction: [0.0, 0.0, 1.0],
        near: 0.0,
        far: 1.5,
    }];
    let mut errors = Vec::new();
    for n in [8, 16, 32, 64, 128, 256] {
        let settings = RenderSettings {
            n_samples: n,
            stratified: false,
            ..RenderSettings::default()
        };
        let c = render_source(&slab, &ray, RenderMode::Full, &settings, 0)
            .unwrap()
            .pixels[0]
            .color[0];
        errors.push((c - exact).abs());
    }
    ensure!(
        errors.windows(2).all(|w| w[1] < w[0]),
        "error not monotone: {errors:?}"
    );
    let at_256 = errors[errors.len() - 1];
    ensure!(at_256 < 1e-3, "error {at_256:e} at 256 samples");
    let t = within(start, 1.0)?;
    Ok(format!(
        "error {at_256:.2e} at 256 samples, monotone from 8, {t:.3} s"
    ))
}

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

fn structured_field(seed: u64) -> FieldParameters<f64> {
    let mut p = FieldParameters::<f64>::init(tiny_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = p.layout().grid_range();
    for v in &mut p.as_mut_slice()[range] {
        *v = rng.gen_range(-1.0..1.0);
    }
    p.tensor_mut("density.b1").unwrap()[0] = 0.5;
    p
}

fn camera_rays(side: u32) -> Vec<Ray> {
    let cam = CameraPose::look_at(
        Vector3::new(0.4, 1.2, -3.0),
        Vector3::zeros(),
        Vector3::y(),
        2.5 * side as f64,
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

fn exact_endpoints() -> Outcome {
    let start = Instant::now();
    let rays = camera_rays(16);
    let settings = RenderSettings {
        n_samples: 32,
        sharpness: 1000.0,
        stratified: false,
        ..RenderSettings::default()
    };
    let mut params = structured_field(4);
    params.tensor_mut("edit.w1").unwrap().fill(0.0);

    params.tensor_mut("edit.b1").unwrap()[0] = 60.0;
    let full = render(&params, &rays, RenderMode::Full, &settings, 0).unwrap();
    let fg = render(
        &params,
        &rays,
        RenderMode::Foreground { bg_color: [0.0; 3] },
        &settings,
        0,
    )
    .unwrap();
    ensure!(
        full.color_image(16, 16) == fg.color_image(16, 16),
        "m̃ ≡ 1: foreground differs from full"
    );
    ensure!(
        full.pixels.iter().any(|p| p.opacity > 0.5),
        "test field is empty"
    );

    params.tensor_mut("edit.b1").unwrap()[0] = -60.0;
    let full = render(&params, &rays, RenderMode::Full, &settings, 0).unwrap();
    let bg = render(&params, &rays, RenderMode::Background, &settings, 0).unwrap();
    ensure!(
        full.color_image(16, 16) == bg.color_image(16, 16),
        "m̃ ≡ 0: background differs from full"
    );

    let empty = Slab {
        z0: 0.0,
        z1: 0.0,
        sigma: 0.0,
        color: [0.3; 3],
    };
    let color = [0.1, 0.6, 0.9];
    let out = render_source(
        &empty,
        &rays,
        RenderMode::Foreground { bg_color: color },
        &settings,
        0,
    )
    .unwrap();
    ensure!(
        out.pixels.iter().all(|p| p.color == color),
        "σ ≡ 0: foreground is not the background color"
    );
    let t = within(start, 1.0)?;
    Ok(format!("all three endpoints bitwise exact, {t:.3} s"))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let params = structured_field(9);
    let rays = camera_rays(5);
    let settings = RenderSettings {
        n_samples: 16,
        stratified: true,
        ..RenderSettings::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let up: Vec<PixelGrad<f64>> = rays
        .iter()
        .map(|_| PixelGrad {
            color: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
            edit_prob: rng.gen_range(-1.0..1.0),
        })
        .collect();
    let objective = |p: &FieldParameters<f64>, mode: RenderMode| -> f64 {
        let out = render(p, &rays, mode, &settings, 3).unwrap();
        out.pixels
            .iter()
            .zip(&up)
            .map(|(px, g)| {
                (0..3).map(|k| px.color[k] * g.color[k]).sum::<f64>() + px.edit_prob * g.edit_prob
            })
            .sum()
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for mode in [
        RenderMode::Full,
        RenderMode::Foreground {
            bg_color: [0.2, 0.5, 0.9],
        },
        RenderMode::Background,
    ] {
        let mut grads = Gradients::zeros_like(&params);
        render_backward(&params, &rays, mode, &settings, 3, |i, _| up[i], &mut grads).unwrap();
        let live: Vec<usize> = (0..params.len())
            .filter(|&i| grads.data[i].abs() > 1e-6)
            .collect();
        ensure!(
            live.len() > 100,
            "{mode:?}: only {} parameters receive gradient",
            live.len()
        );
        for &i in live.iter().step_by((live.len() / 60).max(1)) {
            let h = 1e-6;
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (objective(&plus, mode) - objective(&minus, mode)) / (2.0 * h);
            let g = grads.data[i];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
            checked += 1;
        }
    }
    ensure!(worst < 1e-3, "max relative error {worst:e}");
    let t = within(start, 30.0)?;
    Ok(format!(
        "max relative error {worst:.1e} over {checked} parameters in 3 modes, {t:.2} s"
    ))
}

fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> Image {
    Image::from_data(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn sds_fixed_points() -> Outcome {
    let start = Instant::now();
    let cfg = SdsConfig::default();
    let schedule = cfg.schedule().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let img = random_image(rng.gen_range(1..16), rng.gen_range(1..16), &mut rng);
        let s = sds_gradient(&PerfectPredictor, &img, "p", &schedule, &cfg, case, None).unwrap();
        ensure!(
            s.gradient.data.iter().all(|&g| g == 0.0),
            "perfect predictor case {case} non-zero"
        );
    }
    let mut worst = 0.0f64;
    for case in 0..100 {
        let target = random_image(8, 8, &mut rng);
        let oracle = make_target_oracle(target.clone()).unwrap();
        let at = sds_gradient(&oracle, &target, "p", &schedule, &cfg, case, None).unwrap();
        ensure!(
            at.gradient.data.iter().all(|g| g.abs() < 1e-12),
            "oracle at its target, case {case}"
        );
        let x = random_image(8, 8, &mut rng);
        let s = sds_gradient(&oracle, &x, "p", &schedule, &cfg, case, None).unwrap();
        let diff: Vec<f64> = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| a - b)
            .collect();
        let dot: f64 = diff.iter().zip(&s.gradient.data).map(|(a, b)| a * b).sum();
        let (nd, ng) = (
            diff.iter().map(|v| v * v).sum::<f64>().sqrt(),
            s.gradient.data.iter().map(|v| v * v).sum::<f64>().sqrt(),
        );
        worst = worst.max(1.0 - dot / (nd * ng));
    }
    ensure!(
        worst < 1e-12,
        "oracle gradient off the (x − target) direction by 1 − cos = {worst:e}"
    );
    let t = within(start, 5.0)?;
    Ok(format!(
        "zero and collinear in all cases, 1 − cos ≤ {worst:.1e}, {t:.2} s"
    ))
}

struct Trained {
    dataset: SceneDataset,
    spec: SyntheticSpec,
    params: FieldParameters<f32>,
}

fn eval_settings() -> RenderSettings {
    RenderSettings {
        stratified: false,
        ..RenderSettings::default()
    }
}

/// Mean PSNR and foreground IoU of Full renders against the training views.
fn evaluate(params: &FieldParameters<f32>, ds: &SceneDataset) -> (f64, f64) {
    let (mut mse, mut inter, mut union) = (0.0, 0.0, 0.0);
    for f in &ds.frames {
        let (w, h) = (f.camera.width, f.camera.height);
        let rays = generate_rays(&f.camera, &all_pixels(w, h), ds.ray_bounds()).unwrap();
        let out = render(params, &rays, RenderMode::Full, &eval_settings(), 0).unwrap();
        mse += out.color_image(w as usize, h as usize).mse(&f.image);
        for (p, m) in out.pixels.iter().zip(&f.mask.as_ref().unwrap().data) {
            let (a, b) = (p.edit_prob > 0.5, *m > 0.5);
            inter += f64::from(u8::from(a && b));
            union += f64::from(u8::from(a || b));
        }
    }
    (psnr(mse / ds.frames.len() as f64), inter / union.max(1.0))
}

fn reconstruct(iterations: usize) -> (Trained, f64) {
    let spec = SyntheticSpec::default();
    let dataset = make_synthetic_scene(&spec, 0).unwrap();
    let cfg = ReconstructionConfig {
        iterations,
        rays_per_batch: 1024,
        learning_rate: 5e-4,
        n_samples: 64,
        ..ReconstructionConfig::default()
    };
    let settings = RenderSettings {
        stratified: true,
        ..RenderSettings::default()
    };
    let start = Instant::now();
    let r = train_reconstruction(
        &dataset,
        &FieldConfig::default(),
        &cfg,
        &settings,
        0,
        None,
        &mut (),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        Trained {
            dataset,
            spec,
            params: r.params,
        },
        secs,
    )
}

fn reconstruction_smoke() -> Outcome {
    let (t, secs) = reconstruct(500);
    let (p, iou) = evaluate(&t.params, &t.dataset);
    ensure!(p >= 18.0, "PSNR {p:.2} dB after 500 iterations");
    Ok(format!(
        "500 iterations: PSNR {p:.2} dB, IoU {iou:.3}, {secs:.0} s"
    ))
}

fn reconstruction(slot: &mut Option<Trained>) -> Outcome {
    let (t, secs) = reconstruct(3000);
    let (p, iou) = evaluate(&t.params, &t.dataset);
    *slot = Some(t);
    ensure!(p >= 25.0 && iou >= 0.9, "PSNR {p:.2} dB, IoU {iou:.3}");
    Ok(format!(
        "3000 iterations: PSNR {p:.2} dB, IoU {iou:.3}, {secs:.0} s"
    ))
}

fn edit(trained: Option<&Trained>) -> Outcome {
    let Some(t) = trained else {
        return Err("no reconstructed field to edit".into());
    };
    let ds = &t.dataset;
    let cameras = ds.cameras();
    let red = SyntheticSpec {
        sphere_color: [0.85, 0.15, 0.1],
        ..t.spec.clone()
    };
    let cfg = EditConfig {
        max_iterations: 200,
        lambda_sds: 0.01,
        lambda_bg: 1000.0,
        alternation: [1, 1],
        image_driven: true,
        render_size: [64, 64],
        n_samples: 48,
        bg_rays: 1024,
        ..EditConfig::default()
    };
    let [w, h] = cfg.render_size;
    let targets = cameras
        .iter()
        .map(|c| {
            let (full, alpha) = red.render_view(&c.resized(w, h));
            ViewTarget {
                alpha,
                foreground: Image::filled(w as usize, h as usize, &red.sphere_color),
                full,
            }
        })
        .collect();
    let oracle = ViewTargetOracle::new(targets).unwrap();
    let bundle = PromptBundle {
        subject_token: Some("V*".into()),
        ..PromptBundle::default()
    };
    let scene = EditScene {
        original: &t.params,
        cameras: &cameras,
        bounds: ds.ray_bounds(),
        bundle: &bundle,
        provider: &oracle,
        classifier: None,
        view_frame: ViewFrame::from_cameras(&cameras, Vector3::from(t.spec.sphere_center)).unwrap(),
    };
    let settings = RenderSettings {
        stratified: true,
        ..RenderSettings::default()
    };
    let start = Instant::now();
    let out = edit_scene(
        &scene,
        &cfg,
        &SdsConfig::default(),
        &settings,
        0,
        EditRun::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();

    let (mut fg_before, mut fg_after, mut bg, mut bg_only) = (0.0, 0.0, 0.0, 0.0);
    for c in &cameras {
        let (target, mask) = red.render_view(c);
        let rays = generate_rays(c, &all_pixels(c.width, c.height), ds.ray_bounds()).unwrap();
        let (cw, ch) = (c.width as usize, c.height as usize);
        let orig = render(&t.params, &rays, RenderMode::Full, &eval_settings(), 0)
            .unwrap()
            .color_image(cw, ch);
        let edited = render(&out.params, &rays, RenderMode::Full, &eval_settings(), 0)
            .unwrap()
            .color_image(cw, ch);
        let inside = |i: usize| mask.data[i] > 0.5;
        fg_before += orig.masked_mse(&target, inside);
        fg_after += edited.masked_mse(&target, inside);
        bg += edited.masked_mse(&orig, |i| !inside(i));
        let orig_bg = render(
            &t.params,
            &rays,
            RenderMode::Background,
            &eval_settings(),
            0,
        )
        .unwrap();
        let edited_bg = render(
            &out.params,
            &rays,
            RenderMode::Background,
            &eval_settings(),
            0,
        )
        .unwrap();
        bg_only += edited_bg
            .color_image(cw, ch)
            .mse(&orig_bg.color_image(cw, ch));
    }
    let n = cameras.len() as f64;
    let (fg_before, fg_after, bg, bg_only) = (fg_before / n, fg_after / n, bg / n, bg_only / n);
    let drop = 1.0 - fg_after / fg_before;

    let locals: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.stage == Stage::Local)
        .collect();
    let globals = out.records.len() - locals.len();
    ensure!(
        out.records.len() == cfg.max_iterations,
        "{} iterations logged",
        out.records.len()
    );
    ensure!(
        out.records.iter().all(|r| r.stage == cfg.stage(r.iter)),
        "stage order does not follow the alternation"
    );
    let [l, g] = cfg.alternation;
    ensure!(
        locals.len() * g == globals * l,
        "local:global = {}:{globals}, configured {l}:{g}",
        locals.len()
    );
    ensure!(
        locals.iter().all(|r| !r.prompt.contains("V*")),
        "a local prompt contains the subject token"
    );
    ensure!(
        drop >= 0.5,
        "foreground MSE {fg_before:.4} -> {fg_after:.4} ({:.1}% drop)",
        100.0 * drop
    );
    ensure!(bg < 1e-3, "full-render MSE outside the sphere {bg:.2e}");
    ensure!(bg_only < 1e-3, "background-only render MSE {bg_only:.2e}");
    Ok(format!(
        "{} iterations ({}L:{globals}G): foreground MSE {fg_before:.4} -> {fg_after:.4} ({:.1}% drop), background MSE {bg_only:.1e} (outside sphere {bg:.1e}), {secs:.0} s",
        cfg.max_iterations,
        locals.len(),
        100.0 * drop
    ))
}

fn adam_reference() -> Outcome {
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let mut x = vec![1.0f64];
    let mut state = AdamState::new(1, AdamConfig::default());
    let (mut rx, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for t in 1..=100 {
        let g = 2.0 * x[0];
        adam_step(&mut x, &[g], &mut state, lr).unwrap();
        let rg = 2.0 * rx;
        m = b1 * m + (1.0 - b1) * rg;
        v = b2 * v + (1.0 - b2) * rg * rg;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        rx -= lr * m_hat / (v_hat.sqrt() + eps);
        worst = worst.max((x[0] - rx).abs());
    }
    ensure!(worst <= 1e-10, "max deviation {worst:e}");
    Ok(format!(
        "100 steps on x², max deviation {worst:.1e}, final x = {:.6}",
        x[0]
    ))
}

fn checkpoint_bitwise() -> Outcome {
    let mut params = FieldParameters::<f32>::init(FieldConfig::default(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for v in params.as_mut_slice() {
        *v += rng.gen_range(-1e-3..1e-3);
    }
    let mut first = Vec::new();
    write_checkpoint(&mut first, &params).unwrap();
    let loaded: FieldParameters<f32> = read_checkpoint(&mut first.as_slice()).unwrap();
    let mut second = Vec::new();
    write_checkpoint(&mut second, &loaded).unwrap();
    ensure!(first == second, "re-saved checkpoint differs");
    ensure!(
        loaded
            .as_slice()
            .iter()
            .zip(params.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "loaded parameters differ"
    );
    Ok(format!("{} bytes identical", first.len()))
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() {
    let mut trained = None;
    let results = [
        report("decomposition identity", decomposition_identity),
        report("slab quadrature", slab_quadrature),
        report("exact mask endpoints", exact_endpoints),
        report("render gradient fidelity", gradient_fidelity),
        report("score distillation fixed points", sds_fixed_points),
        report("reconstruction smoke", reconstruction_smoke),
        report("reconstruction", || reconstruction(&mut trained)),
        report("local-global edit", || edit(trained.as_ref())),
        report("adam reference sequence", adam_reference),
        report("checkpoint round trip", checkpoint_bitwise),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

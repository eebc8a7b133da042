use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use nerfedit_core::editor::{
    edit_scene, load_resume_state, train_reconstruction, EditRun, EditScene, ReconstructionLosses,
    TrainingObserver,
};
use nerfedit_core::field::{load_checkpoint, save_checkpoint, FieldParameters};
use nerfedit_core::guidance::{
    make_target_oracle, GuidanceProvider, RemoteProvider, TargetOracle, ViewClassifier, ViewFrame,
};
use nerfedit_core::image::psnr;
use nerfedit_core::render::{all_pixels, generate_rays, render, RenderMode, RenderSettings};
use nerfedit_core::scene_io::{load_rgb, parse_config, save_npy, save_png, ProviderSelection};
use nerfedit_core::RunConfig;

use crate::failure::Failure;
use crate::{ring, Command, Mode, RunArgs};

pub const FIELD_FILE: &str = "field.nefc";
pub const EDITED_FILE: &str = "edited.nefc";
pub const EDIT_LOG_FILE: &str = "edit_log.jsonl";
pub const RECONSTRUCT_LOG_FILE: &str = "reconstruct_log.jsonl";

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Reconstruct { run } => reconstruct(&run),
        Command::Edit {
            run,
            checkpoint,
            provider,
            resume,
        } => edit(&run, &checkpoint, provider, resume),
        Command::Render {
            run,
            checkpoint,
            mode,
            views,
            width,
            height,
            elevation,
            bg,
            samples,
            sharpness,
        } => {
            let ring = RingArgs {
                views,
                width,
                height,
                elevation,
                samples,
                sharpness,
            };
            render_ring(&run, &checkpoint, mode, bg, &ring)
        }
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    }
}

fn cli_io(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new("cli", format!("{}: {e}", path.display()))
}

fn load_config(run: &RunArgs) -> Result<RunConfig, Failure> {
    match &run.config {
        Some(path) => Ok(parse_config(path)?),
        None => Ok(RunConfig::default()),
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(cli_io(path, "no such file"))
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| cli_io(dir, e))
}

struct ProgressLog {
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl TrainingObserver for ProgressLog {
    fn iteration(&mut self, iteration: usize, l: &ReconstructionLosses) {
        if iteration % 100 == 0 {
            info!(
                "iteration {iteration}: mse {:.5} (psnr {:.2}) bce {:.4}",
                l.mse,
                psnr(l.mse),
                l.bce
            );
        }
        if self.error.is_none() {
            let line = serde_json::json!({ "iter": iteration, "mse": l.mse, "bce": l.bce });
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
            }
        }
    }
}

fn reconstruct(run: &RunArgs) -> Result<(), Failure> {
    let config = load_config(run)?;
    prepare_out(&run.out)?;
    let dataset = config.dataset.load(run.seed)?;
    info!("reconstructing from {} views", dataset.frames.len());
    let log_path = run.out.join(RECONSTRUCT_LOG_FILE);
    let mut progress = ProgressLog {
        out: BufWriter::new(File::create(&log_path).map_err(|e| cli_io(&log_path, e))?),
        error: None,
    };
    let result = train_reconstruction(
        &dataset,
        &config.field_config(),
        &config.reconstruction,
        &config.render_settings(),
        run.seed,
        Some(run.out.join("diverged.nefc")),
        &mut progress,
    )?;
    if let Some(e) = progress.error.take() {
        return Err(cli_io(&log_path, e));
    }
    progress.out.flush().map_err(|e| cli_io(&log_path, e))?;
    let path = run.out.join(FIELD_FILE);
    save_checkpoint(&path, &result.params)?;
    info!(
        "final mse {:.5} bce {:.4}; wrote {}",
        result.last_losses.mse,
        result.last_losses.bce,
        path.display()
    );
    Ok(())
}

enum Provider {
    Oracle(TargetOracle),
    Remote(RemoteProvider),
}

impl Provider {
    fn guidance(&self) -> &dyn GuidanceProvider {
        match self {
            Provider::Oracle(p) => p,
            Provider::Remote(p) => p,
        }
    }

    fn classifier(&self) -> Option<&dyn ViewClassifier> {
        match self {
            Provider::Oracle(_) => None,
            Provider::Remote(p) => Some(p),
        }
    }
}

fn open_provider(selection: ProviderSelection, config: &RunConfig) -> Result<Provider, Failure> {
    match selection {
        ProviderSelection::Oracle(path) => {
            let target = load_rgb(&path)?;
            let [w, h] = config.edit.render_size;
            if (target.width, target.height) != (w as usize, h as usize) {
                return Err(Failure::new(
                    "guidance",
                    format!(
                        "oracle target {} is {}x{} but edit.render_size is {w}x{h}",
                        path.display(),
                        target.width,
                        target.height
                    ),
                ));
            }
            Ok(Provider::Oracle(make_target_oracle(target)?))
        }
        ProviderSelection::Remote(url) => Ok(Provider::Remote(RemoteProvider::connect(
            &url,
            config.provider.remote_options(),
        )?)),
    }
}

fn edit(
    run: &RunArgs,
    checkpoint: &Path,
    provider: Option<ProviderSelection>,
    resume: bool,
) -> Result<(), Failure> {
    let config = load_config(run)?;
    require_file(checkpoint)?;
    let selection = match provider {
        Some(s) => s,
        None => config.provider_selection()?.ok_or_else(|| {
            Failure::new(
                "guidance",
                "no guidance provider; pass --provider or set provider.selection",
            )
        })?,
    };
    prepare_out(&run.out)?;
    let out_ckpt = run.out.join(EDITED_FILE);
    let (start_iteration, initial) = if resume {
        match load_resume_state(&out_ckpt)? {
            Some(state) => (state.iteration, Some(load_checkpoint::<f32>(&out_ckpt)?)),
            None => {
                return Err(Failure::new(
                    "editor",
                    format!(
                        "nothing to resume: {} has no saved state",
                        out_ckpt.display()
                    ),
                ))
            }
        }
    } else {
        (0, None)
    };

    let original: FieldParameters<f32> = load_checkpoint(checkpoint)?;
    let dataset = config.dataset.load(run.seed)?;
    let cameras = dataset.cameras();
    let (center, _) = dataset.camera_ring();
    let view_frame = ViewFrame::from_cameras(&cameras, center)?;
    let provider = open_provider(selection, &config)?;

    let log_path = run.out.join(EDIT_LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .map_err(|e| cli_io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    if start_iteration > 0 {
        info!("resuming at iteration {start_iteration}");
    }
    if start_iteration >= config.edit.max_iterations {
        warn!(
            "checkpoint already reached max_iterations = {}",
            config.edit.max_iterations
        );
    }

    let scene = EditScene {
        original: &original,
        cameras: &cameras,
        bounds: dataset.ray_bounds(),
        bundle: &config.prompt,
        provider: provider.guidance(),
        classifier: provider.classifier(),
        view_frame,
    };
    let outcome = edit_scene(
        &scene,
        &config.edit,
        &config.guidance,
        &config.render_settings(),
        run.seed,
        EditRun {
            start_iteration,
            initial,
            checkpoint: Some(out_ckpt.clone()),
            log: Some(&mut log),
        },
    )?;
    log.flush().map_err(|e| cli_io(&log_path, e))?;
    if let Some(last) = outcome.records.last() {
        info!(
            "last iteration {}: sds {:.3e} bg {:.3e}",
            last.iter, last.loss_sds, last.loss_bg
        );
    }
    info!("wrote {}", out_ckpt.display());
    Ok(())
}

struct RingArgs {
    views: usize,
    width: u32,
    height: u32,
    elevation: Option<f64>,
    samples: usize,
    sharpness: Option<f64>,
}

fn render_ring(
    run: &RunArgs,
    checkpoint: &Path,
    mode: Mode,
    bg: [f64; 3],
    ring: &RingArgs,
) -> Result<(), Failure> {
    let config = load_config(run)?;
    require_file(checkpoint)?;
    if ring.views == 0 || ring.width == 0 || ring.height == 0 {
        return Err(Failure::new(
            "cli",
            "views, width and height must be positive",
        ));
    }
    prepare_out(&run.out)?;
    let params: FieldParameters<f32> = load_checkpoint(checkpoint)?;
    let dataset = config.dataset.load(run.seed)?;
    let cameras = ring::turntable(
        &dataset,
        ring.views,
        ring.width,
        ring.height,
        ring.elevation,
    )?;
    let mut settings = RenderSettings {
        n_samples: ring.samples,
        stratified: false,
        ..config.render_settings()
    };
    if let Some(s) = ring.sharpness {
        if !(s > 0.0) {
            return Err(Failure::new("cli", "sharpness must be positive"));
        }
        settings.sharpness = s;
    }
    let (render_mode, stem) = match mode {
        Mode::Full => (RenderMode::Full, "full"),
        Mode::Foreground => (RenderMode::Foreground { bg_color: bg }, "foreground"),
        Mode::Background => (RenderMode::Background, "background"),
        Mode::Editprob => (RenderMode::Full, "editprob"),
    };
    let (w, h) = (ring.width as usize, ring.height as usize);
    let pixels = all_pixels(ring.width, ring.height);
    for (i, camera) in cameras.iter().enumerate() {
        let rays = generate_rays(camera, &pixels, dataset.ray_bounds())?;
        let out = render(&params, &rays, render_mode, &settings, run.seed)?;
        let image = match mode {
            Mode::Editprob => out.edit_prob_image(w, h),
            _ => out.color_image(w, h),
        };
        let base: PathBuf = run.out.join(format!("{stem}_{i:03}"));
        save_png(&base.with_extension("png"), &image)?;
        save_npy(&base.with_extension("npy"), &image)?;
    }
    info!(
        "rendered {} {stem} views into {}",
        cameras.len(),
        run.out.display()
    );
    Ok(())
}

fn inspect(checkpoint: &Path) -> Result<(), Failure> {
    require_file(checkpoint)?;
    let params: FieldParameters<f32> = load_checkpoint(checkpoint)?;
    let config =
        serde_json::to_string_pretty(params.config()).map_err(|e| Failure::new("cli", e))?;
    println!("config: {config}");
    let layout = params.layout();
    for t in &layout.tensors {
        println!("{:<20} {:>10}  {:?}", t.name, t.len(), t.dims);
    }
    let grid = layout.grid_range().len();
    println!("grid parameters: {grid}");
    println!("network parameters: {}", params.len() - grid);
    println!("total parameters: {}", params.len());
    Ok(())
}

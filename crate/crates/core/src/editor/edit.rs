use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::losses::background_preservation_loss;
use super::{iteration_seed, EditorError};
use crate::field::{save_checkpoint, FieldParameters, Gradients};
use crate::guidance::{
    assemble_prompt, assign_view_word, sds_gradient, GuidanceProvider, PromptBundle, SdsConfig,
    Stage, ViewClassifier, ViewContext, ViewFrame,
};
use crate::render::{
    all_pixels, generate_rays, render, render_backward, PixelGrad, RayBounds, RenderMode,
    RenderSettings,
};
use crate::scene_io::CameraPose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub lambda_sds: f64,
    pub lambda_bg: f64,
    /// Local then global iterations per cycle.
    pub alternation: [usize; 2],
    pub image_driven: bool,
    /// Width and height of guidance renders.
    pub render_size: [u32; 2],
    pub n_samples: usize,
    /// Rays per iteration for the background term, drawn across all views.
    pub bg_rays: usize,
    /// Gate global-stage guidance by `M̂ > 0.5` instead of by `M̂` itself.
    pub hard_gate: bool,
    pub freeze_edit_head: bool,
    pub view_words_in_global: bool,
    /// Writes a checkpoint every this many iterations; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            learning_rate: 5e-4,
            lambda_sds: 0.01,
            lambda_bg: 1000.0,
            alternation: [1, 1],
            image_driven: false,
            render_size: [64, 64],
            n_samples: 48,
            bg_rays: 1024,
            hard_gate: false,
            freeze_edit_head: false,
            view_words_in_global: true,
            checkpoint_every: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), EditorError> {
        let bad = |m: &str| Err(EditorError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_sds > 0.0) {
            return bad("lambda_sds must be positive");
        }
        if !(self.lambda_bg >= 0.0 && self.lambda_bg.is_finite()) {
            return bad("lambda_bg must be finite and not negative");
        }
        if self.alternation.contains(&0) {
            return bad("alternation counts must be at least 1");
        }
        if self.render_size.contains(&0) {
            return bad("render_size must be positive");
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        Ok(())
    }

    /// Stage of zero-based iteration `iter`.
    pub fn stage(&self, iter: usize) -> Stage {
        let [local, global] = self.alternation;
        if iter % (local + global) < local {
            Stage::Local
        } else {
            Stage::Global
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub stage: Stage,
    pub loss_sds: f64,
    pub loss_bg: f64,
    pub prompt: String,
    pub t: usize,
    pub lr: f64,
}

/// Progress saved next to a checkpoint so a run can continue from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub iteration: usize,
}

pub fn resume_state_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".state.json");
    PathBuf::from(name)
}

pub fn save_resume_state(checkpoint: &Path, state: &ResumeState) -> Result<(), EditorError> {
    let path = resume_state_path(checkpoint);
    let text = serde_json::to_string(state).expect("state serializes");
    fs::write(&path, text).map_err(|e| EditorError::Io { path, source: e })
}

pub fn load_resume_state(checkpoint: &Path) -> Result<Option<ResumeState>, EditorError> {
    let path = resume_state_path(checkpoint);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| EditorError::Io {
        path: path.clone(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| EditorError::InvalidConfig(format!("{}: {e}", path.display())))
}

/// What is being edited and what guides it.
pub struct EditScene<'a> {
    pub original: &'a FieldParameters<f32>,
    /// Training cameras at dataset resolution.
    pub cameras: &'a [CameraPose],
    pub bounds: RayBounds,
    pub bundle: &'a PromptBundle,
    pub provider: &'a dyn GuidanceProvider,
    pub classifier: Option<&'a dyn ViewClassifier>,
    pub view_frame: ViewFrame,
}

/// Run bookkeeping: where to start, where to checkpoint, where to log.
#[derive(Default)]
pub struct EditRun<'a> {
    pub start_iteration: usize,
    /// Parameters to continue from; a copy of the original otherwise.
    pub initial: Option<FieldParameters<f32>>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<&'a mut dyn Write>,
}

#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub params: FieldParameters<f32>,
    pub records: Vec<LogRecord>,
}

fn write_checkpoint_with_state(
    path: &Path,
    params: &FieldParameters<f32>,
    iteration: usize,
) -> Result<(), EditorError> {
    save_checkpoint(path, params)?;
    save_resume_state(path, &ResumeState { iteration })
}

/// Alternates local (foreground-only) and global (full-image) guidance
/// steps, each combined with the background-preservation term, starting
/// from a copy of the original field.
pub fn edit_scene(
    scene: &EditScene<'_>,
    config: &EditConfig,
    sds: &SdsConfig,
    render_settings: &RenderSettings,
    seed: u64,
    mut run: EditRun<'_>,
) -> Result<EditOutcome, EditorError> {
    config.validate()?;
    sds.validate()?;
    scene.bundle.validate()?;
    if scene.cameras.is_empty() {
        return Err(EditorError::InvalidConfig(
            "editing needs at least one camera".into(),
        ));
    }
    let schedule = sds.schedule()?;
    let mut params = run.initial.take().unwrap_or_else(|| scene.original.clone());
    if params.config() != scene.original.config() {
        return Err(EditorError::InvalidConfig(
            "resumed field architecture differs from the original".into(),
        ));
    }
    let frozen_range = scene.original.layout().edit_head_range();
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut grads = Gradients::zeros_like(&params);
    let settings = RenderSettings {
        n_samples: config.n_samples,
        ..render_settings.clone()
    };
    let [rw, rh] = config.render_size;
    let pixels = all_pixels(rw, rh);
    let mut records = Vec::new();
    let lambda_sds = config.lambda_sds as f32;

    for iter in run.start_iteration..config.max_iterations {
        let stage = config.stage(iter);
        let iter_seed = iteration_seed(seed, iter as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
        let cam_index = rng.gen_range(0..scene.cameras.len());
        let camera = scene.cameras[cam_index].resized(rw, rh);
        let rays = generate_rays(&camera, &pixels, scene.bounds)?;
        let (mode, bg_color) = match stage {
            Stage::Local => {
                let bg: [f64; 3] = rng.gen();
                (RenderMode::Foreground { bg_color: bg }, Some(bg))
            }
            Stage::Global => (RenderMode::Full, None),
        };
        let render_seed = rng.gen::<u64>();
        let sds_seed = rng.gen::<u64>();
        let bg_seed = rng.gen::<u64>();

        let image = render(&params, &rays, mode, &settings, render_seed)?
            .color_image(rw as usize, rh as usize);
        let view = (stage == Stage::Local || config.view_words_in_global).then(|| {
            assign_view_word(
                &scene.cameras[cam_index],
                &scene.view_frame,
                scene.classifier.map(|c| (c, &image)),
            )
        });
        let prompt = assemble_prompt(scene.bundle, stage, config.image_driven, view.as_deref());
        let context = ViewContext {
            camera_index: cam_index,
            stage,
            bg_color,
        };
        let sample = match sds_gradient(
            scene.provider,
            &image,
            &prompt,
            &schedule,
            sds,
            sds_seed,
            Some(context),
        ) {
            Ok(s) => s,
            Err(source) => {
                let checkpoint = match &run.checkpoint {
                    Some(path) => {
                        write_checkpoint_with_state(path, &params, iter)?;
                        Some(path.clone())
                    }
                    None => None,
                };
                return Err(EditorError::Guidance {
                    iteration: iter,
                    source,
                    checkpoint,
                });
            }
        };

        grads.data.fill(0.0);
        let g = &sample.gradient;
        let hard = config.hard_gate;
        render_backward(
            &params,
            &rays,
            mode,
            &settings,
            render_seed,
            |i, px| {
                let gate = match stage {
                    Stage::Local => 1.0,
                    Stage::Global if hard => f32::from(px.edit_prob > 0.5),
                    Stage::Global => px.edit_prob,
                };
                let scale = lambda_sds * gate;
                PixelGrad {
                    color: std::array::from_fn(|k| scale * g.data[3 * i + k] as f32),
                    edit_prob: 0.0,
                }
            },
            &mut grads,
        )?;
        if let Some(index) = grads.first_non_finite() {
            return Err(EditorError::NonFiniteGradient {
                iteration: iter,
                term: "sds".into(),
                index,
            });
        }

        let mut loss_bg = 0.0;
        if config.lambda_bg > 0.0 && config.bg_rays > 0 {
            let mut bg_rays = Vec::with_capacity(config.bg_rays);
            for _ in 0..config.bg_rays {
                let cam = &scene.cameras[rng.gen_range(0..scene.cameras.len())];
                let px = (rng.gen_range(0..cam.width), rng.gen_range(0..cam.height));
                bg_rays.extend(generate_rays(cam, &[px], scene.bounds)?);
            }
            loss_bg = background_preservation_loss(
                &params,
                scene.original,
                &bg_rays,
                &settings,
                bg_seed,
                config.lambda_bg,
                Some(&mut grads),
            )?;
            if let Some(index) = grads.first_non_finite() {
                return Err(EditorError::NonFiniteGradient {
                    iteration: iter,
                    term: "background".into(),
                    index,
                });
            }
        }

        if config.freeze_edit_head {
            grads.data[frozen_range.clone()].fill(0.0);
        }
        adam_step(
            params.as_mut_slice(),
            &grads.data,
            &mut adam,
            config.learning_rate,
        )
        .map_err(|index| EditorError::NonFiniteGradient {
            iteration: iter,
            term: "total".into(),
            index,
        })?;

        let record = LogRecord {
            iter,
            stage,
            loss_sds: sample.loss(),
            loss_bg,
            prompt,
            t: sample.t,
            lr: config.learning_rate,
        };
        if let Some(log) = run.log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(log, "{line}").map_err(|e| EditorError::Io {
                path: PathBuf::from("<log>"),
                source: e,
            })?;
        }
        log::debug!(
            "edit {iter} {}: sds {:.3e} bg {:.3e} t {}",
            stage.as_str(),
            record.loss_sds,
            loss_bg,
            sample.t
        );
        records.push(record);

        if let Some(path) = &run.checkpoint {
            if config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0 {
                write_checkpoint_with_state(path, &params, iter + 1)?;
            }
        }
    }
    if let Some(path) = &run.checkpoint {
        write_checkpoint_with_state(
            path,
            &params,
            config.max_iterations.max(run.start_iteration),
        )?;
    }
    Ok(EditOutcome { params, records })
}

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::losses::{reconstruction_losses, reconstruction_pixel_grad, ReconstructionLosses};
use super::{iteration_seed, EditorError};
use crate::field::{save_checkpoint, FieldConfig, FieldParameters, Gradients};
use crate::render::{
    all_pixels, generate_rays, render_backward, Ray, RayBounds, RenderMode, RenderSettings,
};
use crate::scene_io::SceneDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub learning_rate: f64,
    pub mask_loss_weight: f64,
    pub bce_clamp_eps: f64,
    pub n_samples: usize,
    /// Calls the validation hook every this many iterations; 0 disables it.
    pub validation_every: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            rays_per_batch: 4096,
            learning_rate: 5e-4,
            mask_loss_weight: 1.0,
            bce_clamp_eps: 1e-5,
            n_samples: 64,
            validation_every: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), EditorError> {
        let bad = |m: &str| Err(EditorError::InvalidConfig(m.into()));
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.mask_loss_weight >= 0.0) {
            return bad("mask_loss_weight must not be negative");
        }
        if !(self.bce_clamp_eps > 0.0 && self.bce_clamp_eps < 0.5) {
            return bad("bce_clamp_eps must lie in (0, 0.5)");
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        Ok(())
    }
}

/// Every pixel of a dataset as a ray with its color and mask label.
#[derive(Clone, Debug, Default)]
pub struct TrainingRays {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f64; 3]>,
    pub masks: Vec<f64>,
}

impl TrainingRays {
    pub fn from_dataset(dataset: &SceneDataset, bounds: RayBounds) -> Result<Self, EditorError> {
        let mut out = Self::default();
        for frame in &dataset.frames {
            let cam = &frame.camera;
            let pixels = all_pixels(cam.width, cam.height);
            out.rays.extend(generate_rays(cam, &pixels, bounds)?);
            out.colors
                .extend(frame.image.data.chunks(3).map(|c| [c[0], c[1], c[2]]));
            match &frame.mask {
                Some(m) => out.masks.extend_from_slice(&m.data),
                None => out.masks.extend(std::iter::repeat(0.0).take(pixels.len())),
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Callbacks from the training loop.
pub trait TrainingObserver {
    fn iteration(&mut self, _iteration: usize, _losses: &ReconstructionLosses) {}
    fn validation(&mut self, _iteration: usize, _params: &FieldParameters<f32>) {}
}

impl TrainingObserver for () {}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub params: FieldParameters<f32>,
    /// Copy kept unchanged as the reference for editing.
    pub original: FieldParameters<f32>,
    pub last_losses: ReconstructionLosses,
}

/// Fits a field to the dataset's images and masks with Adam over random
/// ray batches.
///
/// On a non-finite loss or gradient the last finite parameters are written
/// to `divergence_checkpoint` when one is given.
pub fn train_reconstruction(
    dataset: &SceneDataset,
    field: &FieldConfig,
    config: &ReconstructionConfig,
    render: &RenderSettings,
    seed: u64,
    divergence_checkpoint: Option<PathBuf>,
    observer: &mut dyn TrainingObserver,
) -> Result<Reconstruction, EditorError> {
    config.validate()?;
    if dataset.frames.len() < 2 {
        return Err(EditorError::InvalidConfig(
            "reconstruction needs at least two views".into(),
        ));
    }
    dataset.validate(true)?;
    let data = TrainingRays::from_dataset(dataset, dataset.ray_bounds())?;
    let mut params = FieldParameters::<f32>::init(field.clone(), seed)?;
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut grads = Gradients::zeros_like(&params);
    let settings = RenderSettings {
        n_samples: config.n_samples,
        ..render.clone()
    };
    let batch = config.rays_per_batch.min(data.len());
    let mut last = ReconstructionLosses::default();
    let mut rays = Vec::with_capacity(batch);
    let mut index = Vec::with_capacity(batch);
    for iter in 0..config.iterations {
        let iter_seed = iteration_seed(seed, iter as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
        index.clear();
        index.extend((0..batch).map(|_| rng.gen_range(0..data.len())));
        rays.clear();
        rays.extend(index.iter().map(|&i| data.rays[i]));

        grads.data.fill(0.0);
        let eps = config.bce_clamp_eps;
        let out = render_backward(
            &params,
            &rays,
            RenderMode::Full,
            &settings,
            iter_seed,
            |j, px| {
                let i = index[j];
                reconstruction_pixel_grad(
                    px,
                    &data.colors[i],
                    data.masks[i],
                    batch,
                    config.mask_loss_weight,
                    eps,
                )
            },
            &mut grads,
        );
        let diverged =
            |term: &str, params: &FieldParameters<f32>| -> Result<Reconstruction, EditorError> {
                let checkpoint = match &divergence_checkpoint {
                    Some(path) => {
                        save_checkpoint(path, params)?;
                        Some(path.clone())
                    }
                    None => None,
                };
                Err(EditorError::Diverged {
                    iteration: iter,
                    term: term.into(),
                    checkpoint,
                })
            };
        let out = match out {
            Ok(o) => o,
            Err(crate::render::RenderError::NonFiniteDensity { .. }) => {
                return diverged("density", &params)
            }
            Err(e) => return Err(e.into()),
        };
        let colors: Vec<[f64; 3]> = index.iter().map(|&i| data.colors[i]).collect();
        let masks: Vec<f64> = index.iter().map(|&i| data.masks[i]).collect();
        last = reconstruction_losses(&out.pixels, &colors, &masks, eps);
        if !last.mse.is_finite() {
            return diverged("photometric", &params);
        }
        if !last.bce.is_finite() {
            return diverged("mask", &params);
        }
        if grads.first_non_finite().is_some() {
            return diverged("photometric+mask", &params);
        }
        adam_step(
            params.as_mut_slice(),
            &grads.data,
            &mut adam,
            config.learning_rate,
        )
        .map_err(|index| EditorError::NonFiniteGradient {
            iteration: iter,
            term: "photometric+mask".into(),
            index,
        })?;
        observer.iteration(iter, &last);
        if config.validation_every > 0 && (iter + 1) % config.validation_every == 0 {
            observer.validation(iter + 1, &params);
        }
    }
    Ok(Reconstruction {
        original: params.clone(),
        params,
        last_losses: last,
    })
}

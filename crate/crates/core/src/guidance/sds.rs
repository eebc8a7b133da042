use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DiffusionSchedule, GuidanceError, Stage};
use crate::image::Image;

/// Which training view and stage a request belongs to. Remote providers
/// ignore it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewContext {
    pub camera_index: usize,
    pub stage: Stage,
    pub bg_color: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug)]
pub struct NoiseRequest<'a> {
    pub image: &'a Image,
    pub prompt: &'a str,
    pub t: usize,
    pub alpha_bar: f64,
    pub noised: &'a Image,
    pub context: Option<ViewContext>,
}

/// Predicts the noise that was added to `noised`.
pub trait GuidanceProvider: Send + Sync {
    fn predict_noise(&self, request: &NoiseRequest<'_>) -> Result<Image, GuidanceError>;
}

impl<P: GuidanceProvider + ?Sized> GuidanceProvider for Box<P> {
    fn predict_noise(&self, request: &NoiseRequest<'_>) -> Result<Image, GuidanceError> {
        (**self).predict_noise(request)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `ω(t) = 1 − ᾱ_t`.
    OneMinusAlphaBar,
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdsConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub weighting: Weighting,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            t_min_frac: 0.02,
            t_max_frac: 0.98,
            weighting: Weighting::OneMinusAlphaBar,
        }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(0.0 <= self.t_min_frac && self.t_min_frac < self.t_max_frac && self.t_max_frac <= 1.0)
        {
            return Err(GuidanceError::InvalidConfig(format!(
                "need 0 <= t_min_frac < t_max_frac <= 1, got {}, {}",
                self.t_min_frac, self.t_max_frac
            )));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule, GuidanceError> {
        DiffusionSchedule::linear(self.num_steps, self.beta_start, self.beta_end)
    }

    /// Inclusive timestep range.
    pub fn timestep_range(&self, schedule: &DiffusionSchedule) -> (usize, usize) {
        let n = schedule.num_steps();
        let lo = ((self.t_min_frac * n as f64).ceil() as usize).min(n - 1);
        let hi = ((self.t_max_frac * n as f64).floor() as usize).clamp(lo, n - 1);
        (lo, hi)
    }

    pub fn weight(&self, alpha_bar: f64) -> f64 {
        match self.weighting {
            Weighting::OneMinusAlphaBar => 1.0 - alpha_bar,
            Weighting::Unit => 1.0,
        }
    }
}

/// The noise that maps `x` to `noised` at `ᾱ`: `(noised − √ᾱ·x) / √(1 − ᾱ)`.
pub fn implied_noise(noised: &Image, x: &Image, alpha_bar: f64) -> Image {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = noised
        .data
        .iter()
        .zip(&x.data)
        .map(|(n, x)| (n - a * x) / b)
        .collect();
    Image::from_data(x.width, x.height, x.channels, data).expect("same shape")
}

#[derive(Clone, Debug)]
pub struct SdsSample {
    /// `ω(t)·(ε̂ − ε)`, the gradient with respect to the image.
    pub gradient: Image,
    pub t: usize,
    pub alpha_bar: f64,
    pub weight: f64,
    pub noise: Image,
    pub noised: Image,
}

impl SdsSample {
    /// Mean squared gradient, logged as the guidance loss.
    pub fn loss(&self) -> f64 {
        let n = self.gradient.data.len().max(1) as f64;
        self.gradient.data.iter().map(|g| g * g).sum::<f64>() / n
    }
}

/// Draws `t` and `ε` from `seed`, queries `provider` and returns the
/// score-distillation gradient for `image`.
///
/// The residual uses the noise implied by the noised image rather than the
/// raw draw so that a provider which recovers the noise exactly yields a
/// gradient of exactly zero.
pub fn sds_gradient(
    provider: &dyn GuidanceProvider,
    image: &Image,
    prompt: &str,
    schedule: &DiffusionSchedule,
    config: &SdsConfig,
    seed: u64,
    context: Option<ViewContext>,
) -> Result<SdsSample, GuidanceError> {
    if !image.is_finite() {
        return Err(GuidanceError::NonFinite("rendered image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = config.timestep_range(schedule);
    let t = rng.gen_range(lo..=hi);
    let alpha_bar = schedule.alpha_bar(t);
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let draw: Vec<f64> = (0..image.data.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let noised_data = image
        .data
        .iter()
        .zip(&draw)
        .map(|(x, e)| a * x + b * e)
        .collect();
    let noised = Image::from_data(image.width, image.height, image.channels, noised_data)
        .expect("same shape");
    let predicted = provider.predict_noise(&NoiseRequest {
        image,
        prompt,
        t,
        alpha_bar,
        noised: &noised,
        context,
    })?;
    if !predicted.same_shape(image) {
        return Err(GuidanceError::ShapeMismatch {
            expected: [image.height, image.width, image.channels],
            got: [predicted.height, predicted.width, predicted.channels],
        });
    }
    if !predicted.is_finite() {
        return Err(GuidanceError::NonFinite("predicted noise".into()));
    }
    let noise = implied_noise(&noised, image, alpha_bar);
    let weight = config.weight(alpha_bar);
    let data = predicted
        .data
        .iter()
        .zip(&noise.data)
        .map(|(p, e)| weight * (p - e))
        .collect();
    Ok(SdsSample {
        gradient: Image::from_data(image.width, image.height, image.channels, data)
            .expect("same shape"),
        t,
        alpha_bar,
        weight,
        noise,
        noised,
    })
}

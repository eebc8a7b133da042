use super::{implied_noise, GuidanceError, GuidanceProvider, NoiseRequest, Stage};
use crate::image::Image;

/// Predicts the noise that would turn `target` into the noised input, so
/// score distillation pulls renders toward `target`. Prompts are ignored.
#[derive(Clone, Debug)]
pub struct TargetOracle {
    target: Image,
}

pub fn make_target_oracle(target: Image) -> Result<TargetOracle, GuidanceError> {
    if !target.is_finite() || target.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(GuidanceError::InvalidConfig(
            "oracle target must lie in [0, 1]".into(),
        ));
    }
    Ok(TargetOracle { target })
}

impl TargetOracle {
    pub fn target(&self) -> &Image {
        &self.target
    }
}

fn check_shape(expected: &Image, got: &Image) -> Result<(), GuidanceError> {
    if expected.same_shape(got) {
        Ok(())
    } else {
        Err(GuidanceError::ShapeMismatch {
            expected: [expected.height, expected.width, expected.channels],
            got: [got.height, got.width, got.channels],
        })
    }
}

impl GuidanceProvider for TargetOracle {
    fn predict_noise(&self, r: &NoiseRequest<'_>) -> Result<Image, GuidanceError> {
        check_shape(r.noised, &self.target)?;
        Ok(implied_noise(r.noised, &self.target, r.alpha_bar))
    }
}

/// Always recovers the injected noise exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectPredictor;

impl GuidanceProvider for PerfectPredictor {
    fn predict_noise(&self, r: &NoiseRequest<'_>) -> Result<Image, GuidanceError> {
        Ok(implied_noise(r.noised, r.image, r.alpha_bar))
    }
}

/// Desired appearance of one training view.
#[derive(Clone, Debug)]
pub struct ViewTarget {
    /// Foreground coverage, one channel.
    pub alpha: Image,
    /// Foreground color, composited over the request's background in the
    /// local stage.
    pub foreground: Image,
    /// Whole image for the global stage.
    pub full: Image,
}

/// Target oracle with one target per training view and stage.
#[derive(Clone, Debug)]
pub struct ViewTargetOracle {
    views: Vec<ViewTarget>,
}

impl ViewTargetOracle {
    pub fn new(views: Vec<ViewTarget>) -> Result<Self, GuidanceError> {
        for v in &views {
            if v.alpha.channels != 1
                || v.alpha.width != v.full.width
                || v.alpha.height != v.full.height
            {
                return Err(GuidanceError::InvalidConfig(
                    "alpha must be one channel matching the target".into(),
                ));
            }
            check_shape(&v.full, &v.foreground)?;
        }
        Ok(Self { views })
    }

    /// The image that requests from this view and stage are pulled toward.
    pub fn target_for(
        &self,
        camera_index: usize,
        stage: Stage,
        bg: [f64; 3],
    ) -> Result<Image, GuidanceError> {
        let v = self.views.get(camera_index).ok_or_else(|| {
            GuidanceError::InvalidConfig(format!("no target for view {camera_index}"))
        })?;
        Ok(match stage {
            Stage::Global => v.full.clone(),
            Stage::Local => {
                let mut out = v.foreground.clone();
                for (px, a) in out.data.chunks_mut(3).zip(&v.alpha.data) {
                    for (c, b) in px.iter_mut().zip(bg) {
                        *c = a * *c + (1.0 - a) * b;
                    }
                }
                out
            }
        })
    }
}

impl GuidanceProvider for ViewTargetOracle {
    fn predict_noise(&self, r: &NoiseRequest<'_>) -> Result<Image, GuidanceError> {
        let ctx = r.context.ok_or(GuidanceError::MissingContext)?;
        let target = self.target_for(
            ctx.camera_index,
            ctx.stage,
            ctx.bg_color.unwrap_or([0.0; 3]),
        )?;
        check_shape(r.noised, &target)?;
        Ok(implied_noise(r.noised, &target, r.alpha_bar))
    }
}

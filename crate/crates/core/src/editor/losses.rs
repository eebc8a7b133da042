use crate::field::{FieldParameters, Gradients};
use crate::real::Real;
use crate::render::{
    render, render_backward, PixelGrad, PixelOutput, Ray, RenderError, RenderMode, RenderSettings,
};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconstructionLosses {
    /// Mean squared error over all color channels.
    pub mse: f64,
    /// Mean binary cross-entropy of the rendered editing probability.
    pub bce: f64,
}

/// Binary cross-entropy of prediction `p` against label `y`, with `p`
/// clamped to `[eps, 1 − eps]`.
pub fn bce(p: f64, y: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn reconstruction_losses<T: Real>(
    pixels: &[PixelOutput<T>],
    gt_color: &[[f64; 3]],
    gt_mask: &[f64],
    eps: f64,
) -> ReconstructionLosses {
    assert_eq!(pixels.len(), gt_color.len());
    assert_eq!(pixels.len(), gt_mask.len());
    let n = pixels.len().max(1) as f64;
    let mut mse = 0.0;
    let mut ce = 0.0;
    for ((px, c), &m) in pixels.iter().zip(gt_color).zip(gt_mask) {
        for k in 0..3 {
            mse += (px.color[k].as_f64() - c[k]).powi(2);
        }
        ce += bce(px.edit_prob.as_f64(), m, eps);
    }
    ReconstructionLosses {
        mse: mse / (3.0 * n),
        bce: ce / n,
    }
}

/// Gradient of `mse + mask_weight · bce` with respect to one of `n` pixels.
/// The clamp is treated as the identity so saturated predictions still
/// receive a gradient.
pub fn reconstruction_pixel_grad<T: Real>(
    px: &PixelOutput<T>,
    gt_color: &[f64; 3],
    gt_mask: f64,
    n: usize,
    mask_weight: f64,
    eps: f64,
) -> PixelGrad<T> {
    let n = n as f64;
    let color =
        std::array::from_fn(|k| T::lit(2.0 * (px.color[k].as_f64() - gt_color[k]) / (3.0 * n)));
    let p = px.edit_prob.as_f64().clamp(eps, 1.0 - eps);
    let edit_prob = T::lit(mask_weight * (p - gt_mask) / (p * (1.0 - p) * n));
    PixelGrad { color, edit_prob }
}

/// Mean squared difference between background-only renders of `edited` and
/// the frozen `original`. When `grads` is given, `weight` times the
/// gradient with respect to `edited` is added to it.
pub fn background_preservation_loss<T: Real>(
    edited: &FieldParameters<T>,
    original: &FieldParameters<T>,
    rays: &[Ray],
    settings: &RenderSettings,
    seed: u64,
    weight: f64,
    grads: Option<&mut Gradients<T>>,
) -> Result<f64, RenderError> {
    let reference = render(original, rays, RenderMode::Background, settings, seed)?;
    let n = rays.len().max(1) as f64;
    let out = match grads {
        Some(g) => render_backward(
            edited,
            rays,
            RenderMode::Background,
            settings,
            seed,
            |i, px| PixelGrad {
                color: std::array::from_fn(|k| {
                    T::lit(
                        weight * 2.0 * (px.color[k] - reference.pixels[i].color[k]).as_f64()
                            / (3.0 * n),
                    )
                }),
                edit_prob: T::zero(),
            },
            g,
        )?,
        None => render(edited, rays, RenderMode::Background, settings, seed)?,
    };
    let mut sum = 0.0;
    for (a, b) in out.pixels.iter().zip(&reference.pixels) {
        for k in 0..3 {
            sum += (a.color[k] - b.color[k]).as_f64().powi(2);
        }
    }
    Ok(sum / (3.0 * n))
}

//! Quadrature volume rendering of the field in full, foreground-only and
//! background-only modes, with an exact reverse pass into field parameters.
//!
//! Per sample the effective density is `σ` (full), `m̃·σ` (foreground) or
//! `(1 − m̃)·σ` (background), where `m̃ = soft_mask(m)`. Weights follow the
//! exponential-transmittance rule `w_i = T_i (1 − e^{−s_i δ_i})`. The pixel
//! editing probability is always composited with full-mode weights.

mod ray;
mod sampling;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{
    FieldError, FieldParameters, FieldResponse, Gradients, ResponseGrad, SampleBatch,
};
use crate::image::Image;
use crate::real::{sigmoid, Real};

pub use ray::{all_pixels, generate_rays, Ray, RayBounds};
pub use sampling::{ray_seed, sample_along_ray, RaySamples};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera rotation is not a proper rotation (det = {0})")]
    SingularRotation(f64),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("pixel ({x}, {y}) lies outside the image")]
    PixelOutOfBounds { x: u32, y: u32 },
    #[error("non-finite density at ray {ray}, sample {sample}; training has diverged")]
    NonFiniteDensity { ray: usize, sample: usize },
    #[error("upstream gradient count {got} does not match {expected} rays")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenderMode {
    Full,
    /// Foreground density only, composited over a solid color.
    Foreground {
        bg_color: [f64; 3],
    },
    Background,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub n_samples: usize,
    pub stratified: bool,
    /// Sharpness `s` of the soft mask `sigmoid(s·(m − 0.5))`.
    pub sharpness: f64,
    /// Rays stop once transmittance falls below this; zero marches every sample.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            n_samples: 64,
            stratified: false,
            sharpness: DEFAULT_SHARPNESS,
            min_transmittance: 0.0,
        }
    }
}

pub const DEFAULT_SHARPNESS: f64 = 10.0;

/// Pushes an editing probability toward 0 or 1: `sigmoid(s·(m − 0.5))`.
#[inline(always)]
pub fn soft_mask<T: Real>(m: T, sharpness: T) -> T {
    sigmoid(sharpness * (m - T::lit(0.5)))
}

/// Foreground and background densities `(m̃·σ, (1 − m̃)·σ)` for soft mask `m̃`.
#[inline(always)]
pub fn split_density<T: Real>(sigma: T, soft: T) -> (T, T) {
    (soft * sigma, (T::one() - soft) * sigma)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelOutput<T> {
    pub color: [T; 3],
    pub edit_prob: T,
    pub opacity: T,
}

/// Upstream gradient for one pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelGrad<T> {
    pub color: [T; 3],
    pub edit_prob: T,
}

impl<T: Real> PixelGrad<T> {
    fn is_zero(&self) -> bool {
        self.edit_prob == T::zero() && self.color.iter().all(|c| *c == T::zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub pixels: Vec<PixelOutput<T>>,
}

impl<T: Real> RenderOutput<T> {
    pub fn color_image(&self, width: usize, height: usize) -> Image {
        assert_eq!(width * height, self.pixels.len());
        let data = self
            .pixels
            .iter()
            .flat_map(|p| p.color.map(|c| c.as_f64()))
            .collect();
        Image::from_data(width, height, 3, data).unwrap()
    }

    pub fn edit_prob_image(&self, width: usize, height: usize) -> Image {
        assert_eq!(width * height, self.pixels.len());
        let data = self.pixels.iter().map(|p| p.edit_prob.as_f64()).collect();
        Image::from_data(width, height, 1, data).unwrap()
    }

    pub fn opacity_image(&self, width: usize, height: usize) -> Image {
        assert_eq!(width * height, self.pixels.len());
        let data = self.pixels.iter().map(|p| p.opacity.as_f64()).collect();
        Image::from_data(width, height, 1, data).unwrap()
    }
}

/// Anything that can be queried for `(σ, c, m)` at a batch of points.
pub trait FieldSource<T: Real>: Sync {
    type Scratch: Send;

    fn scratch(&self) -> Self::Scratch;
    fn respond_batch(
        &self,
        points: &[[T; 3]],
        dirs: &[[T; 3]],
        scratch: &mut Self::Scratch,
        out: &mut Vec<FieldResponse<T>>,
    );
}

impl<T: Real> FieldSource<T> for FieldParameters<T> {
    type Scratch = SampleBatch<T>;

    fn scratch(&self) -> SampleBatch<T> {
        SampleBatch::new(self.config())
    }

    fn respond_batch(
        &self,
        points: &[[T; 3]],
        dirs: &[[T; 3]],
        batch: &mut SampleBatch<T>,
        out: &mut Vec<FieldResponse<T>>,
    ) {
        self.forward_batch(points, dirs, batch, out)
    }
}

/// Per-sample quantities kept for the reverse pass.
#[derive(Clone, Copy, Debug, Default)]
struct SampleRecord<T> {
    delta: T,
    sigma: T,
    color: [T; 3],
    soft: T,
    /// Transmittance before the sample and `e^{−s δ}` under the render mode.
    trans: T,
    decay: T,
    /// Same under full-mode density.
    trans_full: T,
    decay_full: T,
}

#[derive(Clone, Copy, Debug)]
struct Compositor<T> {
    mode: RenderMode,
    bg: [T; 3],
    sharpness: T,
    cutoff: T,
}

impl<T: Real> Compositor<T> {
    fn new(mode: RenderMode, settings: &RenderSettings) -> Self {
        let bg = match mode {
            RenderMode::Foreground { bg_color } => bg_color.map(T::lit),
            _ => [T::zero(); 3],
        };
        Self {
            mode,
            bg,
            sharpness: T::lit(settings.sharpness),
            cutoff: T::lit(settings.min_transmittance),
        }
    }

    #[inline]
    fn effective_density(&self, sigma: T, soft: T) -> T {
        match self.mode {
            RenderMode::Full => sigma,
            RenderMode::Foreground { .. } => split_density(sigma, soft).0,
            RenderMode::Background => split_density(sigma, soft).1,
        }
    }

    /// Composites the responses of one ray's samples; stops early once
    /// both transmittances fall below the cutoff.
    fn march(
        &self,
        ray_index: usize,
        deltas: &[f64],
        responses: &[FieldResponse<T>],
        records: &mut Vec<SampleRecord<T>>,
    ) -> Result<(PixelOutput<T>, T), RenderError> {
        records.clear();
        let mut trans = T::one();
        let mut trans_full = T::one();
        let mut color = [T::zero(); 3];
        let mut edit = T::zero();
        for (i, (r, &delta)) in responses.iter().zip(deltas).enumerate() {
            if !r.sigma.is_finite()
                || !r.edit_prob.is_finite()
                || r.color.iter().any(|c| !c.is_finite())
            {
                return Err(RenderError::NonFiniteDensity {
                    ray: ray_index,
                    sample: i,
                });
            }
            let delta = T::lit(delta);
            let soft = soft_mask(r.edit_prob, self.sharpness);
            let s = self.effective_density(r.sigma, soft);
            let decay = (-s * delta).exp();
            let decay_full = (-r.sigma * delta).exp();
            let w = trans * (T::one() - decay);
            let w_full = trans_full * (T::one() - decay_full);
            for c in 0..3 {
                color[c] += w * r.color[c];
            }
            edit += w_full * soft;
            records.push(SampleRecord {
                delta,
                sigma: r.sigma,
                color: r.color,
                soft,
                trans,
                decay,
                trans_full,
                decay_full,
            });
            trans *= decay;
            trans_full *= decay_full;
            if trans < self.cutoff && trans_full < self.cutoff {
                break;
            }
        }
        for c in 0..3 {
            color[c] += trans * self.bg[c];
        }
        Ok((
            PixelOutput {
                color,
                edit_prob: edit,
                opacity: T::one() - trans,
            },
            trans,
        ))
    }

    /// Gradients with respect to each marched sample's `(σ, c, m)`.
    fn backward(
        &self,
        records: &[SampleRecord<T>],
        final_trans: T,
        g: &PixelGrad<T>,
        out: &mut Vec<ResponseGrad<T>>,
    ) {
        out.clear();
        out.resize(records.len(), ResponseGrad::default());
        let gc = |c: &[T; 3]| g.color[0] * c[0] + g.color[1] * c[1] + g.color[2] * c[2];
        // g · (color contributed behind sample k), and the same for the editing probability
        let mut behind = final_trans * gc(&self.bg);
        let mut behind_edit = T::zero();
        for (k, rec) in records.iter().enumerate().rev() {
            let w = rec.trans * (T::one() - rec.decay);
            let w_full = rec.trans_full * (T::one() - rec.decay_full);
            let g_c = gc(&rec.color);

            let d_s = rec.delta * (rec.trans * rec.decay * g_c - behind);
            let (mut d_sigma, mut d_soft) = match self.mode {
                RenderMode::Full => (d_s, T::zero()),
                RenderMode::Foreground { .. } => (rec.soft * d_s, rec.sigma * d_s),
                RenderMode::Background => ((T::one() - rec.soft) * d_s, -rec.sigma * d_s),
            };
            if g.edit_prob != T::zero() {
                d_sigma += g.edit_prob
                    * rec.delta
                    * (rec.trans_full * rec.decay_full * rec.soft - behind_edit);
                d_soft += g.edit_prob * w_full;
            }
            out[k] = ResponseGrad {
                sigma: d_sigma,
                color: g.color.map(|c| c * w),
                edit_prob: d_soft * self.sharpness * rec.soft * (T::one() - rec.soft),
            };
            behind += w * g_c;
            behind_edit += w_full * rec.soft;
        }
    }
}

const CHUNK_RAYS: usize = 256;
/// Rays whose samples are evaluated as one batch.
const GROUP_RAYS: usize = 16;

fn check_rays(rays: &[Ray], settings: &RenderSettings) -> Result<(), RenderError> {
    if settings.n_samples < 2 {
        return Err(RenderError::InvalidRay(
            "n_samples must be at least 2".into(),
        ));
    }
    if !(settings.sharpness > 0.0) {
        return Err(RenderError::InvalidRay(
            "soft-mask sharpness must be positive".into(),
        ));
    }
    rays.iter().try_for_each(Ray::validate)
}

/// Sample positions and directions of a group of rays, flattened ray-major.
#[derive(Default)]
struct GroupSamples<T> {
    samples: Vec<RaySamples>,
    points: Vec<[T; 3]>,
    dirs: Vec<[T; 3]>,
}

impl<T: Real> GroupSamples<T> {
    fn fill(&mut self, rays: &[Ray], first_index: usize, settings: &RenderSettings, seed: u64) {
        self.samples.resize_with(rays.len(), RaySamples::default);
        self.points.clear();
        self.dirs.clear();
        for (j, (ray, s)) in rays.iter().zip(&mut self.samples).enumerate() {
            sampling::fill_samples(
                ray,
                settings.n_samples,
                settings.stratified,
                ray_seed(seed, first_index + j),
                s,
            );
            let d = ray.direction.map(T::lit);
            for &k in &s.positions {
                self.points.push(ray.at(k).map(T::lit));
                self.dirs.push(d);
            }
        }
    }
}

/// Renders `rays` through any field source.
pub fn render_source<T: Real, S: FieldSource<T>>(
    source: &S,
    rays: &[Ray],
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RenderOutput<T>, RenderError> {
    check_rays(rays, settings)?;
    let comp = Compositor::new(mode, settings);
    let n = settings.n_samples;
    let chunks: Vec<Result<Vec<PixelOutput<T>>, RenderError>> = rays
        .par_chunks(CHUNK_RAYS)
        .enumerate()
        .map(|(c, chunk)| {
            let mut scratch = source.scratch();
            let mut group = GroupSamples::default();
            let mut responses = Vec::new();
            let mut records = Vec::with_capacity(n);
            let mut pixels = Vec::with_capacity(chunk.len());
            for (g, group_rays) in chunk.chunks(GROUP_RAYS).enumerate() {
                let first = c * CHUNK_RAYS + g * GROUP_RAYS;
                group.fill(group_rays, first, settings, seed);
                source.respond_batch(&group.points, &group.dirs, &mut scratch, &mut responses);
                for (j, s) in group.samples.iter().enumerate() {
                    let (px, _) = comp.march(
                        first + j,
                        &s.deltas,
                        &responses[j * n..(j + 1) * n],
                        &mut records,
                    )?;
                    pixels.push(px);
                }
            }
            Ok(pixels)
        })
        .collect();
    let mut pixels = Vec::with_capacity(rays.len());
    for chunk in chunks {
        pixels.extend(chunk?);
    }
    Ok(RenderOutput { pixels })
}

/// Renders `rays` through the field.
pub fn render<T: Real>(
    params: &FieldParameters<T>,
    rays: &[Ray],
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RenderOutput<T>, RenderError> {
    render_source(params, rays, mode, settings, seed)
}

/// Renders `rays` and backpropagates `upstream(ray_index, pixel)` into `grads`.
///
/// Rays are processed in fixed chunks whose partial gradients are summed in
/// chunk order, so the result does not depend on the thread count.
pub fn render_backward<T: Real>(
    params: &FieldParameters<T>,
    rays: &[Ray],
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
    upstream: impl Fn(usize, &PixelOutput<T>) -> PixelGrad<T> + Sync,
    grads: &mut Gradients<T>,
) -> Result<RenderOutput<T>, RenderError> {
    check_rays(rays, settings)?;
    if grads.len() != params.len() {
        return Err(FieldError::ShapeMismatch {
            expected: params.len(),
            got: grads.len(),
        }
        .into());
    }
    let comp = Compositor::new(mode, settings);
    let n = settings.n_samples;
    let chunks: Vec<Result<(Vec<PixelOutput<T>>, Gradients<T>), RenderError>> = rays
        .par_chunks(CHUNK_RAYS)
        .enumerate()
        .map(|(c, chunk)| {
            let mut local = Gradients::zeros_like(params);
            let mut batch = SampleBatch::new(params.config());
            let mut group = GroupSamples::default();
            let mut responses = Vec::new();
            let mut records = Vec::with_capacity(n);
            let mut ray_grads = Vec::with_capacity(n);
            let mut sample_grads = Vec::new();
            let mut pixels = Vec::with_capacity(chunk.len());
            for (g, group_rays) in chunk.chunks(GROUP_RAYS).enumerate() {
                let first = c * CHUNK_RAYS + g * GROUP_RAYS;
                group.fill(group_rays, first, settings, seed);
                params.forward_batch(&group.points, &group.dirs, &mut batch, &mut responses);
                sample_grads.clear();
                sample_grads.resize(responses.len(), ResponseGrad::default());
                let mut any = false;
                for (j, s) in group.samples.iter().enumerate() {
                    let index = first + j;
                    let (px, final_trans) = comp.march(
                        index,
                        &s.deltas,
                        &responses[j * n..(j + 1) * n],
                        &mut records,
                    )?;
                    let g = upstream(index, &px);
                    if !g.is_zero() {
                        comp.backward(&records, final_trans, &g, &mut ray_grads);
                        sample_grads[j * n..j * n + ray_grads.len()].copy_from_slice(&ray_grads);
                        any = true;
                    }
                    pixels.push(px);
                }
                if any {
                    params.backward_batch(&mut batch, &sample_grads, &mut local.data);
                }
            }
            Ok((pixels, local))
        })
        .collect();
    let mut pixels = Vec::with_capacity(rays.len());
    for chunk in chunks {
        let (px, local) = chunk?;
        pixels.extend(px);
        grads.add_assign(&local);
    }
    Ok(RenderOutput { pixels })
}

/// Upstream gradients given per ray, in ray order.
pub fn render_backward_with<T: Real>(
    params: &FieldParameters<T>,
    rays: &[Ray],
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
    upstream: &[PixelGrad<T>],
    grads: &mut Gradients<T>,
) -> Result<RenderOutput<T>, RenderError> {
    if upstream.len() != rays.len() {
        return Err(RenderError::ShapeMismatch {
            expected: rays.len(),
            got: upstream.len(),
        });
    }
    render_backward(
        params,
        rays,
        mode,
        settings,
        seed,
        |i, _| upstream[i],
        grads,
    )
}

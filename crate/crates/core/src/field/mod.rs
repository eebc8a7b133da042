//! Trainable radiance field: hash-grid encoding feeding a density MLP, a
//! view-dependent color head and an editing-probability head.

mod batch;
mod checkpoint;
mod config;
pub mod encoding;
mod layout;
mod sh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::real::{axpy, dot, sigmoid, softplus, Real};

pub use batch::SampleBatch;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{FieldConfig, HashGridConfig, EDIT_HIDDEN, SH_FEATURES};
pub use encoding::encode_position;
pub use layout::{Layout, TensorInfo};
pub use sh::sh_encode;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite field output; training has diverged")]
    NonFinite,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Initial density after activation, before any training.
pub const INITIAL_DENSITY: f64 = 0.1;
const GRID_INIT_SCALE: f64 = 1e-4;

/// All trainable state of the field as one flat vector with named views.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParameters<T> {
    config: FieldConfig,
    layout: Layout,
    data: Vec<T>,
}

/// Point response of the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldResponse<T> {
    pub sigma: T,
    pub color: [T; 3],
    pub edit_prob: T,
}

impl<T: Real> FieldResponse<T> {
    pub fn is_finite(&self) -> bool {
        self.sigma.is_finite()
            && self.edit_prob.is_finite()
            && self.color.iter().all(|c| c.is_finite())
    }
}

/// Upstream gradient with respect to one [`FieldResponse`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResponseGrad<T> {
    pub sigma: T,
    pub color: [T; 3],
    pub edit_prob: T,
}

/// Gradient buffer laid out like [`FieldParameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub data: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn zeros_like(params: &FieldParameters<T>) -> Self {
        Self::zeros(params.len())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == T::zero())
    }
}

/// Activations recorded by a forward pass, consumed by [`FieldParameters::backward_tape`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    pos: [T; 3],
    enc: Vec<T>,
    hidden: Vec<T>,
    head_in: Vec<T>,
    color_hidden: Vec<T>,
    edit_hidden: Vec<T>,
    sigma_raw: T,
    rgb: [T; 3],
    m: T,
}

impl<T: Real> Tape<T> {
    pub fn new(config: &FieldConfig) -> Self {
        Self {
            pos: [T::zero(); 3],
            enc: vec![T::zero(); config.grid.encoding_dim()],
            hidden: vec![T::zero(); config.hidden_width],
            head_in: vec![T::zero(); config.head_input_dim()],
            color_hidden: vec![T::zero(); config.hidden_width],
            edit_hidden: vec![T::zero(); EDIT_HIDDEN],
            sigma_raw: T::zero(),
            rgb: [T::zero(); 3],
            m: T::zero(),
        }
    }
}

/// Reusable buffers for the reverse pass.
#[derive(Clone, Debug)]
pub struct BackwardScratch<T> {
    d_head_in: Vec<T>,
    d_color_hidden: Vec<T>,
    d_edit_hidden: Vec<T>,
    d_out: Vec<T>,
    d_hidden: Vec<T>,
    d_enc: Vec<T>,
}

impl<T: Real> BackwardScratch<T> {
    pub fn new(config: &FieldConfig) -> Self {
        Self {
            d_head_in: vec![T::zero(); config.head_input_dim()],
            d_color_hidden: vec![T::zero(); config.hidden_width],
            d_edit_hidden: vec![T::zero(); EDIT_HIDDEN],
            d_out: vec![T::zero(); 1 + config.geo_features],
            d_hidden: vec![T::zero(); config.hidden_width],
            d_enc: vec![T::zero(); config.grid.encoding_dim()],
        }
    }
}

#[inline]
fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (o, v) in out.iter_mut().enumerate() {
        *v = b[o] + dot(&w[o * n_in..(o + 1) * n_in], x);
    }
}

/// Accumulates weight/bias gradients and, when `dx` is given, overwrites it with `Wᵀ·dout`.
#[inline]
fn dense_backward<T: Real>(
    w: &[T],
    x: &[T],
    dout: &[T],
    grads: &mut [T],
    w_at: usize,
    b_at: usize,
    mut dx: Option<&mut [T]>,
) {
    let n_in = x.len();
    if let Some(dx) = dx.as_deref_mut() {
        dx.iter_mut().for_each(|v| *v = T::zero());
    }
    for (o, &g) in dout.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        grads[b_at + o] += g;
        axpy(g, x, &mut grads[w_at + o * n_in..w_at + (o + 1) * n_in]);
        if let Some(dx) = dx.as_deref_mut() {
            axpy(g, &w[o * n_in..(o + 1) * n_in], dx);
        }
    }
}

#[inline]
fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

#[inline]
fn relu_mask<T: Real>(post: &[T], d: &mut [T]) {
    for (g, h) in d.iter_mut().zip(post) {
        if *h <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Real> FieldParameters<T> {
    /// Randomly initialized parameters. Deterministic for a given seed.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = params.layout.clone();
        for t in &layout.tensors {
            let range = t.range();
            let slice = &mut params.data[range];
            if t.name.starts_with("grid.") {
                for v in slice.iter_mut() {
                    *v = T::lit(rng.gen_range(-GRID_INIT_SCALE..GRID_INIT_SCALE));
                }
            } else if t.dims.len() == 2 {
                let bound = (6.0 / t.dims[1] as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = T::lit(rng.gen_range(-bound..bound));
                }
            }
        }
        // softplus(b) = INITIAL_DENSITY
        let bias = INITIAL_DENSITY.exp_m1().ln();
        params.data[layout.density_b1] = T::lit(bias);
        Ok(params)
    }

    /// All-zero parameters; useful for constructing analytic fields.
    pub fn zeros(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![T::zero(); layout.total];
        Ok(Self {
            config,
            layout,
            data,
        })
    }

    pub fn from_data(config: FieldConfig, data: Vec<T>) -> Result<Self, FieldError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(FieldError::ShapeMismatch {
                expected: layout.total,
                got: data.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            data,
        })
    }

    /// Closed-form parameter count for `config`.
    pub fn parameter_count(config: &FieldConfig) -> usize {
        Layout::new(config).total
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.tensor(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.tensor(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> FieldParameters<U> {
        FieldParameters {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Evaluates the field at one point, recording activations into `tape`.
    pub fn forward(&self, p: [T; 3], d: [T; 3], tape: &mut Tape<T>) -> FieldResponse<T> {
        let cfg = &self.config;
        let lay = &self.layout;
        let w = &self.data;
        let h = cfg.hidden_width;
        let g = cfg.geo_features;
        let enc_dim = cfg.grid.encoding_dim();
        let head_in = cfg.head_input_dim();
        let edit_in = cfg.edit_input_dim();

        tape.pos = p;
        encode_position(self, p, &mut tape.enc);

        dense_forward(
            &w[lay.density_w0..lay.density_w0 + h * enc_dim],
            &w[lay.density_b0..lay.density_b0 + h],
            &tape.enc,
            &mut tape.hidden,
        );
        relu_in_place(&mut tape.hidden);

        // row 0 is the raw density, rows 1.. are geometry features fed to the heads
        tape.sigma_raw =
            w[lay.density_b1] + dot(&w[lay.density_w1..lay.density_w1 + h], &tape.hidden);
        dense_forward(
            &w[lay.density_w1 + h..lay.density_w1 + (1 + g) * h],
            &w[lay.density_b1 + 1..lay.density_b1 + 1 + g],
            &tape.hidden,
            &mut tape.head_in[..g],
        );

        let mut sh = [T::zero(); SH_FEATURES];
        sh_encode(d, &mut sh);
        tape.head_in[g..].copy_from_slice(&sh);

        dense_forward(
            &w[lay.color_w0..lay.color_w0 + h * head_in],
            &w[lay.color_b0..lay.color_b0 + h],
            &tape.head_in,
            &mut tape.color_hidden,
        );
        relu_in_place(&mut tape.color_hidden);
        for k in 0..3 {
            let row = &w[lay.color_w1 + k * h..lay.color_w1 + (k + 1) * h];
            tape.rgb[k] = sigmoid(w[lay.color_b1 + k] + dot(row, &tape.color_hidden));
        }

        dense_forward(
            &w[lay.edit_w0..lay.edit_w0 + EDIT_HIDDEN * edit_in],
            &w[lay.edit_b0..lay.edit_b0 + EDIT_HIDDEN],
            &tape.head_in[..edit_in],
            &mut tape.edit_hidden,
        );
        relu_in_place(&mut tape.edit_hidden);
        tape.m = sigmoid(
            w[lay.edit_b1]
                + dot(
                    &w[lay.edit_w1..lay.edit_w1 + EDIT_HIDDEN],
                    &tape.edit_hidden,
                ),
        );

        FieldResponse {
            sigma: softplus(tape.sigma_raw),
            color: tape.rgb,
            edit_prob: tape.m,
        }
    }

    /// Reverse pass for one recorded sample; accumulates into `grads`.
    pub fn backward_tape(
        &self,
        tape: &Tape<T>,
        up: &ResponseGrad<T>,
        scratch: &mut BackwardScratch<T>,
        grads: &mut [T],
    ) {
        let cfg = &self.config;
        let lay = &self.layout;
        let w = &self.data;
        let h = cfg.hidden_width;
        let g = cfg.geo_features;
        let enc_dim = cfg.grid.encoding_dim();
        let head_in = cfg.head_input_dim();
        let edit_in = cfg.edit_input_dim();

        scratch.d_head_in.iter_mut().for_each(|v| *v = T::zero());

        // color head
        let mut d_rgb = [T::zero(); 3];
        for k in 0..3 {
            d_rgb[k] = up.color[k] * tape.rgb[k] * (T::one() - tape.rgb[k]);
        }
        if d_rgb.iter().any(|v| *v != T::zero()) {
            dense_backward(
                &w[lay.color_w1..lay.color_w1 + 3 * h],
                &tape.color_hidden,
                &d_rgb,
                grads,
                lay.color_w1,
                lay.color_b1,
                Some(&mut scratch.d_color_hidden),
            );
            relu_mask(&tape.color_hidden, &mut scratch.d_color_hidden);
            dense_backward_accumulate(
                &w[lay.color_w0..lay.color_w0 + h * head_in],
                &tape.head_in,
                &scratch.d_color_hidden,
                grads,
                lay.color_w0,
                lay.color_b0,
                &mut scratch.d_head_in,
            );
        }

        // editing-probability head
        let d_m = up.edit_prob * tape.m * (T::one() - tape.m);
        if d_m != T::zero() {
            dense_backward(
                &w[lay.edit_w1..lay.edit_w1 + EDIT_HIDDEN],
                &tape.edit_hidden,
                &[d_m],
                grads,
                lay.edit_w1,
                lay.edit_b1,
                Some(&mut scratch.d_edit_hidden),
            );
            relu_mask(&tape.edit_hidden, &mut scratch.d_edit_hidden);
            dense_backward_accumulate(
                &w[lay.edit_w0..lay.edit_w0 + EDIT_HIDDEN * edit_in],
                &tape.head_in[..edit_in],
                &scratch.d_edit_hidden,
                grads,
                lay.edit_w0,
                lay.edit_b0,
                &mut scratch.d_head_in[..edit_in],
            );
        }

        // density MLP
        scratch.d_out[0] = up.sigma * sigmoid(tape.sigma_raw);
        scratch.d_out[1..].copy_from_slice(&scratch.d_head_in[..g]);
        if scratch.d_out.iter().all(|v| *v == T::zero()) {
            return;
        }
        dense_backward(
            &w[lay.density_w1..lay.density_w1 + (1 + g) * h],
            &tape.hidden,
            &scratch.d_out,
            grads,
            lay.density_w1,
            lay.density_b1,
            Some(&mut scratch.d_hidden),
        );
        relu_mask(&tape.hidden, &mut scratch.d_hidden);
        dense_backward(
            &w[lay.density_w0..lay.density_w0 + h * enc_dim],
            &tape.enc,
            &scratch.d_hidden,
            grads,
            lay.density_w0,
            lay.density_b0,
            Some(&mut scratch.d_enc),
        );
        encoding::encode_backward(self, tape.pos, &scratch.d_enc, grads);
    }

    /// Evaluates the field at one point.
    pub fn query(&self, p: [T; 3], d: [T; 3]) -> Result<FieldResponse<T>, FieldError> {
        let mut tape = Tape::new(&self.config);
        let r = self.forward(p, d, &mut tape);
        if r.is_finite() {
            Ok(r)
        } else {
            Err(FieldError::NonFinite)
        }
    }

    /// Parameter gradients of `Σ upstream_i · query(p_i, d_i)`.
    pub fn backward(
        &self,
        batch: &[([T; 3], [T; 3])],
        upstream: &[ResponseGrad<T>],
    ) -> Result<Gradients<T>, FieldError> {
        if batch.len() != upstream.len() {
            return Err(FieldError::ShapeMismatch {
                expected: batch.len(),
                got: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut tape = Tape::new(&self.config);
        let mut scratch = BackwardScratch::new(&self.config);
        for ((p, d), up) in batch.iter().zip(upstream) {
            self.forward(*p, *d, &mut tape);
            self.backward_tape(&tape, up, &mut scratch, &mut grads.data);
        }
        Ok(grads)
    }
}

/// Like [`dense_backward`] but adds `Wᵀ·dout` into `dx` instead of overwriting it.
#[inline]
fn dense_backward_accumulate<T: Real>(
    w: &[T],
    x: &[T],
    dout: &[T],
    grads: &mut [T],
    w_at: usize,
    b_at: usize,
    dx: &mut [T],
) {
    let n_in = x.len();
    for (o, &g) in dout.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        grads[b_at + o] += g;
        axpy(g, x, &mut grads[w_at + o * n_in..w_at + (o + 1) * n_in]);
        axpy(g, &w[o * n_in..(o + 1) * n_in], dx);
    }
}

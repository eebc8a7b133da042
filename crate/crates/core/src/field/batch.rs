//! Many-sample evaluation: the three MLPs run as matrix products over a
//! batch of points.

use crate::real::{gemm, sigmoid, softplus, Mat, Real};

use super::config::{EDIT_HIDDEN, SH_FEATURES};
use super::encoding::{encode_backward, encode_position};
use super::{sh_encode, FieldConfig, FieldParameters, FieldResponse, ResponseGrad};

/// Activations and gradient buffers for a batch of samples, reused across
/// calls.
#[derive(Clone, Debug)]
pub struct SampleBatch<T> {
    len: usize,
    pos: Vec<[T; 3]>,
    enc: Vec<T>,
    hidden: Vec<T>,
    out: Vec<T>,
    head_in: Vec<T>,
    color_hidden: Vec<T>,
    rgb: Vec<T>,
    edit_hidden: Vec<T>,
    m: Vec<T>,
    d_small: Vec<T>,
    d_color_hidden: Vec<T>,
    d_edit_hidden: Vec<T>,
    d_head_in: Vec<T>,
    d_out: Vec<T>,
    d_hidden: Vec<T>,
    d_enc: Vec<T>,
    dims: Dims,
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    enc: usize,
    hidden: usize,
    geo: usize,
    head_in: usize,
    edit_in: usize,
}

impl Dims {
    fn new(c: &FieldConfig) -> Self {
        Self {
            enc: c.grid.encoding_dim(),
            hidden: c.hidden_width,
            geo: c.geo_features,
            head_in: c.head_input_dim(),
            edit_in: c.edit_input_dim(),
        }
    }
}

impl<T: Real> SampleBatch<T> {
    pub fn new(config: &FieldConfig) -> Self {
        Self {
            len: 0,
            pos: Vec::new(),
            enc: Vec::new(),
            hidden: Vec::new(),
            out: Vec::new(),
            head_in: Vec::new(),
            color_hidden: Vec::new(),
            rgb: Vec::new(),
            edit_hidden: Vec::new(),
            m: Vec::new(),
            d_small: Vec::new(),
            d_color_hidden: Vec::new(),
            d_edit_hidden: Vec::new(),
            d_head_in: Vec::new(),
            d_out: Vec::new(),
            d_hidden: Vec::new(),
            d_enc: Vec::new(),
            dims: Dims::new(config),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn resize(&mut self, n: usize) {
        let d = self.dims;
        self.len = n;
        let z = T::zero();
        self.pos.resize(n, [z; 3]);
        for (buf, width) in [
            (&mut self.enc, d.enc),
            (&mut self.hidden, d.hidden),
            (&mut self.out, 1 + d.geo),
            (&mut self.head_in, d.head_in),
            (&mut self.color_hidden, d.hidden),
            (&mut self.rgb, 3),
            (&mut self.edit_hidden, EDIT_HIDDEN),
            (&mut self.m, 1),
        ] {
            buf.resize(n * width, z);
        }
    }
}

fn fill_bias<T: Real>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

fn relu_mask<T: Real>(post: &[T], d: &mut [T]) {
    for (g, h) in d.iter_mut().zip(post) {
        if *h <= T::zero() {
            *g = T::zero();
        }
    }
}

fn column_sums<T: Real>(d: &[T], width: usize, out: &mut [T]) {
    for row in d.chunks_exact(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

/// `y = x·Wᵀ + b` for a dense `[rows × in]` (possibly strided) input.
fn linear<T: Real>(x: &[T], xm: Mat, w: &[T], b: &[T], y: &mut [T]) {
    let out = b.len();
    fill_bias(y, b);
    gemm(
        T::one(),
        x,
        xm,
        w,
        Mat::rows(out, xm.cols).t(),
        T::one(),
        y,
        Mat::rows(xm.rows, out),
    );
}

/// Accumulates `dW += dyᵀ·x`, `db += Σ dy` and optionally `dx (+)= dy·W`.
fn linear_backward<T: Real>(
    x: &[T],
    xm: Mat,
    w: &[T],
    dy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    dx: Option<(&mut [T], Mat, bool)>,
) {
    let out = gb.len();
    let rows = xm.rows;
    column_sums(dy, out, gb);
    gemm(
        T::one(),
        dy,
        Mat::rows(rows, out).t(),
        x,
        xm,
        T::one(),
        gw,
        Mat::rows(out, xm.cols),
    );
    if let Some((dx, dxm, accumulate)) = dx {
        let beta = if accumulate { T::one() } else { T::zero() };
        gemm(
            T::one(),
            dy,
            Mat::rows(rows, out),
            w,
            Mat::rows(out, xm.cols),
            beta,
            dx,
            dxm,
        );
    }
}

impl<T: Real> FieldParameters<T> {
    /// Evaluates every `(points[i], dirs[i])`, keeping activations in `batch`
    /// for [`FieldParameters::backward_batch`].
    pub fn forward_batch(
        &self,
        points: &[[T; 3]],
        dirs: &[[T; 3]],
        batch: &mut SampleBatch<T>,
        out: &mut Vec<FieldResponse<T>>,
    ) {
        assert_eq!(points.len(), dirs.len());
        let n = points.len();
        batch.resize(n);
        out.clear();
        if n == 0 {
            return;
        }
        let d = batch.dims;
        let lay = &self.layout;
        let w = &self.data;
        let (h, g) = (d.hidden, d.geo);

        batch.pos.copy_from_slice(points);
        for (p, e) in points.iter().zip(batch.enc.chunks_exact_mut(d.enc)) {
            encode_position(self, *p, e);
        }

        linear(
            &batch.enc,
            Mat::rows(n, d.enc),
            &w[lay.density_w0..lay.density_w0 + h * d.enc],
            &w[lay.density_b0..lay.density_b0 + h],
            &mut batch.hidden,
        );
        relu(&mut batch.hidden);
        linear(
            &batch.hidden,
            Mat::rows(n, h),
            &w[lay.density_w1..lay.density_w1 + (1 + g) * h],
            &w[lay.density_b1..lay.density_b1 + 1 + g],
            &mut batch.out,
        );

        let mut sh = [T::zero(); SH_FEATURES];
        for ((row, o), dir) in batch
            .head_in
            .chunks_exact_mut(d.head_in)
            .zip(batch.out.chunks_exact(1 + g))
            .zip(dirs)
        {
            row[..g].copy_from_slice(&o[1..]);
            sh_encode(*dir, &mut sh);
            row[g..].copy_from_slice(&sh);
        }

        linear(
            &batch.head_in,
            Mat::rows(n, d.head_in),
            &w[lay.color_w0..lay.color_w0 + h * d.head_in],
            &w[lay.color_b0..lay.color_b0 + h],
            &mut batch.color_hidden,
        );
        relu(&mut batch.color_hidden);
        linear(
            &batch.color_hidden,
            Mat::rows(n, h),
            &w[lay.color_w1..lay.color_w1 + 3 * h],
            &w[lay.color_b1..lay.color_b1 + 3],
            &mut batch.rgb,
        );

        linear(
            &batch.head_in,
            Mat::strided(n, d.edit_in, d.head_in),
            &w[lay.edit_w0..lay.edit_w0 + EDIT_HIDDEN * d.edit_in],
            &w[lay.edit_b0..lay.edit_b0 + EDIT_HIDDEN],
            &mut batch.edit_hidden,
        );
        relu(&mut batch.edit_hidden);
        linear(
            &batch.edit_hidden,
            Mat::rows(n, EDIT_HIDDEN),
            &w[lay.edit_w1..lay.edit_w1 + EDIT_HIDDEN],
            &w[lay.edit_b1..lay.edit_b1 + 1],
            &mut batch.m,
        );

        for v in batch.rgb.iter_mut().chain(batch.m.iter_mut()) {
            *v = sigmoid(*v);
        }
        out.extend((0..n).map(|i| FieldResponse {
            sigma: softplus(batch.out[i * (1 + g)]),
            color: [batch.rgb[3 * i], batch.rgb[3 * i + 1], batch.rgb[3 * i + 2]],
            edit_prob: batch.m[i],
        }));
    }

    /// Reverse pass for the samples of the last [`FieldParameters::forward_batch`];
    /// accumulates into `grads`.
    pub fn backward_batch(
        &self,
        batch: &mut SampleBatch<T>,
        upstream: &[ResponseGrad<T>],
        grads: &mut [T],
    ) {
        let n = batch.len;
        assert_eq!(upstream.len(), n, "one upstream gradient per sample");
        assert_eq!(grads.len(), self.data.len());
        if n == 0 {
            return;
        }
        let d = batch.dims;
        let lay = &self.layout;
        let w = &self.data;
        let (h, g) = (d.hidden, d.geo);
        let z = T::zero();
        let b = batch;

        b.d_head_in.clear();
        b.d_head_in.resize(n * d.head_in, z);

        // color head
        b.d_small.clear();
        b.d_small.extend(
            upstream
                .iter()
                .zip(b.rgb.chunks_exact(3))
                .flat_map(|(u, c)| [0, 1, 2].map(|k| u.color[k] * c[k] * (T::one() - c[k]))),
        );
        if b.d_small.iter().any(|v| *v != z) {
            b.d_color_hidden.resize(n * h, z);
            let (gw, gb) = split_pair(grads, lay.color_w1, 3 * h, lay.color_b1, 3);
            linear_backward(
                &b.color_hidden,
                Mat::rows(n, h),
                &w[lay.color_w1..lay.color_w1 + 3 * h],
                &b.d_small,
                gw,
                gb,
                Some((&mut b.d_color_hidden, Mat::rows(n, h), false)),
            );
            relu_mask(&b.color_hidden, &mut b.d_color_hidden);
            let (gw, gb) = split_pair(grads, lay.color_w0, h * d.head_in, lay.color_b0, h);
            linear_backward(
                &b.head_in,
                Mat::rows(n, d.head_in),
                &w[lay.color_w0..lay.color_w0 + h * d.head_in],
                &b.d_color_hidden,
                gw,
                gb,
                Some((&mut b.d_head_in, Mat::rows(n, d.head_in), false)),
            );
        }

        // editing-probability head
        b.d_small.clear();
        b.d_small.extend(
            upstream
                .iter()
                .zip(&b.m)
                .map(|(u, m)| u.edit_prob * *m * (T::one() - *m)),
        );
        if b.d_small.iter().any(|v| *v != z) {
            b.d_edit_hidden.resize(n * EDIT_HIDDEN, z);
            let (gw, gb) = split_pair(grads, lay.edit_w1, EDIT_HIDDEN, lay.edit_b1, 1);
            linear_backward(
                &b.edit_hidden,
                Mat::rows(n, EDIT_HIDDEN),
                &w[lay.edit_w1..lay.edit_w1 + EDIT_HIDDEN],
                &b.d_small,
                gw,
                gb,
                Some((&mut b.d_edit_hidden, Mat::rows(n, EDIT_HIDDEN), false)),
            );
            relu_mask(&b.edit_hidden, &mut b.d_edit_hidden);
            let (gw, gb) = split_pair(
                grads,
                lay.edit_w0,
                EDIT_HIDDEN * d.edit_in,
                lay.edit_b0,
                EDIT_HIDDEN,
            );
            linear_backward(
                &b.head_in,
                Mat::strided(n, d.edit_in, d.head_in),
                &w[lay.edit_w0..lay.edit_w0 + EDIT_HIDDEN * d.edit_in],
                &b.d_edit_hidden,
                gw,
                gb,
                Some((
                    &mut b.d_head_in,
                    Mat::strided(n, d.edit_in, d.head_in),
                    true,
                )),
            );
        }

        // density MLP
        b.d_out.resize(n * (1 + g), z);
        for i in 0..n {
            let row = &mut b.d_out[i * (1 + g)..(i + 1) * (1 + g)];
            row[0] = upstream[i].sigma * sigmoid(b.out[i * (1 + g)]);
            row[1..].copy_from_slice(&b.d_head_in[i * d.head_in..i * d.head_in + g]);
        }
        if b.d_out.iter().all(|v| *v == z) {
            return;
        }
        b.d_hidden.resize(n * h, z);
        let (gw, gb) = split_pair(grads, lay.density_w1, (1 + g) * h, lay.density_b1, 1 + g);
        linear_backward(
            &b.hidden,
            Mat::rows(n, h),
            &w[lay.density_w1..lay.density_w1 + (1 + g) * h],
            &b.d_out,
            gw,
            gb,
            Some((&mut b.d_hidden, Mat::rows(n, h), false)),
        );
        relu_mask(&b.hidden, &mut b.d_hidden);
        b.d_enc.resize(n * d.enc, z);
        let (gw, gb) = split_pair(grads, lay.density_w0, h * d.enc, lay.density_b0, h);
        linear_backward(
            &b.enc,
            Mat::rows(n, d.enc),
            &w[lay.density_w0..lay.density_w0 + h * d.enc],
            &b.d_hidden,
            gw,
            gb,
            Some((&mut b.d_enc, Mat::rows(n, d.enc), false)),
        );
        for (p, de) in b.pos.iter().zip(b.d_enc.chunks_exact(d.enc)) {
            encode_backward(self, *p, de, grads);
        }
    }
}

/// Disjoint mutable views of a weight block and the bias block stored right after it.
fn split_pair<T>(
    grads: &mut [T],
    w_at: usize,
    w_len: usize,
    b_at: usize,
    b_len: usize,
) -> (&mut [T], &mut [T]) {
    assert_eq!(b_at, w_at + w_len, "bias follows its weights");
    let (w, rest) = grads[w_at..].split_at_mut(w_len);
    (w, &mut rest[..b_len])
}

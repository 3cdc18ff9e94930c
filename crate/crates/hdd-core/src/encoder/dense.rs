//! Batch-level forward and input-gradient passes of the `mlp` and
//! `random_linear` encoders. These are small matrix products, so they run on
//! whole batches through `ndarray`'s matrix multiplication.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};

use super::{EncoderSpec, MLP_HIDDEN};

/// Flattens `(N, C, H, W)` into `(N, C*H*W)` rows.
fn flatten(batch: &ArrayView4<f64>, d: usize) -> Array2<f64> {
    let n = batch.dim().0;
    let mut x = Array2::zeros((n, d));
    for (mut row, img) in x.rows_mut().into_iter().zip(batch.axis_iter(Axis(0))) {
        for (dst, src) in row.iter_mut().zip(img.iter()) {
            *dst = *src;
        }
    }
    x
}

fn mlp_views<'a>(
    spec: &EncoderSpec,
    weights: &'a [f64],
) -> (ArrayView2<'a, f64>, &'a [f64], ArrayView2<'a, f64>, &'a [f64]) {
    let d = spec.input_dim();
    let (w1, rest) = weights.split_at(MLP_HIDDEN * d);
    let (b1, rest) = rest.split_at(MLP_HIDDEN);
    let (w2, b2) = rest.split_at(spec.feature_dim * MLP_HIDDEN);
    (
        ArrayView2::from_shape((MLP_HIDDEN, d), w1).expect("w1 segment size"),
        b1,
        ArrayView2::from_shape((spec.feature_dim, MLP_HIDDEN), w2).expect("w2 segment size"),
        b2,
    )
}

/// Hidden pre-activations `X W1^T + b1` of the mlp.
fn mlp_hidden_pre(spec: &EncoderSpec, weights: &[f64], batch: &ArrayView4<f64>) -> Array2<f64> {
    let (w1, b1, _, _) = mlp_views(spec, weights);
    let x = flatten(batch, spec.input_dim());
    let mut h = x.dot(&w1.t());
    for mut row in h.rows_mut() {
        for (v, b) in row.iter_mut().zip(b1) {
            *v += b;
        }
    }
    h
}

/// `features = relu(X W1^T + b1) W2^T + b2`.
pub(crate) fn mlp_forward(
    spec: &EncoderSpec,
    weights: &[f64],
    batch: &ArrayView4<f64>,
    out: &mut Array2<f64>,
) {
    let (_, _, w2, b2) = mlp_views(spec, weights);
    let mut h = mlp_hidden_pre(spec, weights, batch);
    h.mapv_inplace(|v| v.max(0.0));
    let f = h.dot(&w2.t());
    out.assign(&f);
    for mut row in out.rows_mut() {
        for (v, b) in row.iter_mut().zip(b2) {
            *v += b;
        }
    }
}

/// Input gradient of [`mlp_forward`]: `G_h = (U W2) .* [pre > 0]`, then
/// `G_x = G_h W1`, reshaped back to image space.
pub(crate) fn mlp_input_vjp(
    spec: &EncoderSpec,
    weights: &[f64],
    batch: &ArrayView4<f64>,
    upstream: &ArrayView2<f64>,
    grad: &mut Array4<f64>,
) {
    let (w1, _, w2, _) = mlp_views(spec, weights);
    let pre = mlp_hidden_pre(spec, weights, batch);
    let mut gh = upstream.dot(&w2);
    for (g, p) in gh.iter_mut().zip(pre.iter()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    let gx = gh.dot(&w1);
    for (mut gimg, grow) in grad.axis_iter_mut(Axis(0)).zip(gx.rows()) {
        for (dst, src) in gimg.iter_mut().zip(grow.iter()) {
            *dst = *src;
        }
    }
}

/// `features = X W^T` with `W` of shape `(feature_dim, C*H*W)`, no bias.
pub(crate) fn linear_forward(
    spec: &EncoderSpec,
    weights: &[f64],
    batch: &ArrayView4<f64>,
    out: &mut Array2<f64>,
) {
    let d = spec.input_dim();
    let w = ArrayView2::from_shape((spec.feature_dim, d), weights).expect("weight segment size");
    let x = flatten(batch, d);
    out.assign(&x.dot(&w.t()));
}

/// Input gradient of [`linear_forward`]: `G_x = U W`.
pub(crate) fn linear_input_vjp(
    spec: &EncoderSpec,
    weights: &[f64],
    upstream: &ArrayView2<f64>,
    grad: &mut Array4<f64>,
) {
    let d = spec.input_dim();
    let w = ArrayView2::from_shape((spec.feature_dim, d), weights).expect("weight segment size");
    let gx = upstream.dot(&w);
    for (mut gimg, grow) in grad.axis_iter_mut(Axis(0)).zip(gx.rows()) {
        for (dst, src) in gimg.iter_mut().zip(grow.iter()) {
            *dst = *src;
        }
    }
}

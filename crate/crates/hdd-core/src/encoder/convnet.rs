//! Per-sample forward and input-gradient passes of the `convnet3` encoder.
//!
//! All tensors here are flat `&[f64]` slices in `[channel][row][col]`
//! row-major order. The convolution is expressed as nine shifted
//! plane-accumulate passes per channel pair, which keeps the inner loops
//! contiguous; its input gradient reuses the same kernel taps with the
//! spatial shift negated (correlation with the flipped kernel).

use crate::error::{HddError, Result};

use super::EncoderSpec;

/// Epsilon added to the per-channel variance before the square root in
/// instance normalization.
pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Borrowed view of the convnet3 weight vector, split into its six segments.
pub(crate) struct ConvParams<'a> {
    channels: usize,
    height: usize,
    width: usize,
    conv_width: usize,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
}

impl<'a> ConvParams<'a> {
    pub(crate) fn new(spec: &EncoderSpec, weights: &'a [f64]) -> Result<Self> {
        let wc = spec.conv_width()?;
        let k2 = 9;
        let sizes = [
            wc * spec.channels * k2,
            wc,
            wc * wc * k2,
            wc,
            wc * wc * k2,
            wc,
        ];
        let total: usize = sizes.iter().sum();
        if weights.len() != total {
            return Err(HddError::InvalidArgument(format!(
                "convnet3 weight vector has {} entries, expected {total}",
                weights.len()
            )));
        }
        let mut parts = Vec::with_capacity(6);
        let mut offset = 0;
        for s in sizes {
            parts.push(&weights[offset..offset + s]);
            offset += s;
        }
        Ok(ConvParams {
            channels: spec.channels,
            height: spec.height,
            width: spec.width,
            conv_width: wc,
            w1: parts[0],
            b1: parts[1],
            w2: parts[2],
            b2: parts[3],
            w3: parts[4],
            b3: parts[5],
        })
    }

    /// Forward pass for one image; `out` receives the flattened final pooled
    /// activations in `[channel][row][col]` order.
    pub(crate) fn forward(&self, image: &[f64], out: &mut [f64]) {
        let (n1, _s1, p1) = self.block(image, self.channels, self.height, self.width, self.w1, self.b1);
        drop(n1);
        let (h2, w2) = (self.height / 2, self.width / 2);
        let (n2, _s2, p2) = self.block(&p1, self.conv_width, h2, w2, self.w2, self.b2);
        drop(n2);
        let (h4, w4) = (h2 / 2, w2 / 2);
        let (n3, _s3, p3) = self.block(&p2, self.conv_width, h4, w4, self.w3, self.b3);
        drop(n3);
        out.copy_from_slice(&p3);
    }

    /// Input gradient for one image: recomputes the forward activations it
    /// needs (normalized pre-activations and channel scales), then transposes
    /// each layer in reverse order.
    pub(crate) fn input_vjp(&self, image: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let (h1, w1) = (self.height, self.width);
        let (h2, w2) = (h1 / 2, w1 / 2);
        let (h4, w4) = (h2 / 2, w2 / 2);
        let (n1, s1, p1) = self.block(image, self.channels, h1, w1, self.w1, self.b1);
        let (n2, s2, p2) = self.block(&p1, self.conv_width, h2, w2, self.w2, self.b2);
        let (n3, s3, _p3) = self.block(&p2, self.conv_width, h4, w4, self.w3, self.b3);
        let g3 = self.block_backward(upstream, &n3, &s3, self.w3, self.conv_width, h4, w4);
        let g2 = self.block_backward(&g3, &n2, &s2, self.w2, self.conv_width, h2, w2);
        let g1 = self.block_backward(&g2, &n1, &s1, self.w1, self.channels, h1, w1);
        grad.copy_from_slice(&g1);
    }

    /// One block: convolution, instance norm, ReLU, 2x2 average pool.
    /// Returns the normalized pre-activations `n`, the per-channel scales
    /// `std`, and the pooled output.
    fn block(
        &self,
        input: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        kernels: &[f64],
        biases: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let wc = self.conv_width;
        let mut z = vec![0.0; wc * h * w];
        conv3x3(input, cin, h, w, kernels, biases, wc, &mut z);
        let stds = instance_norm_in_place(&mut z, wc, h * w);
        let pooled = avg_pool_relu(&z, wc, h, w);
        (z, stds, pooled)
    }

    /// Transposes one block: unpool, ReLU gate, instance-norm Jacobian,
    /// convolution input gradient. `cin` / `h` / `w` describe the *input* side
    /// of the block's convolution.
    fn block_backward(
        &self,
        g_pooled: &[f64],
        n: &[f64],
        stds: &[f64],
        kernels: &[f64],
        cin: usize,
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let wc = self.conv_width;
        let plane = h * w;
        // Average-pool backward: each input cell of a 2x2 window receives a
        // quarter of the upstream cell; ReLU gates on the pre-activation sign.
        let mut g_n = vec![0.0; wc * plane];
        let (hp, wp) = (h / 2, w / 2);
        for ch in 0..wc {
            let gp = &g_pooled[ch * hp * wp..(ch + 1) * hp * wp];
            let nn = &n[ch * plane..(ch + 1) * plane];
            let gn = &mut g_n[ch * plane..(ch + 1) * plane];
            for oy in 0..hp {
                for ox in 0..wp {
                    let quarter = gp[oy * wp + ox] * 0.25;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if nn[idx] > 0.0 {
                            gn[idx] = quarter;
                        }
                    }
                }
            }
        }
        // Instance-norm backward, exact for std = sqrt(var + eps):
        //   g_z = (g - mean(g) - n * mean(g .* n)) / std
        let m = plane as f64;
        for ch in 0..wc {
            let nn = &n[ch * plane..(ch + 1) * plane];
            let gn = &mut g_n[ch * plane..(ch + 1) * plane];
            let mut sum_g = 0.0;
            let mut sum_gn = 0.0;
            for (g, x) in gn.iter().zip(nn) {
                sum_g += g;
                sum_gn += g * x;
            }
            let mean_g = sum_g / m;
            let mean_gn = sum_gn / m;
            let inv_std = 1.0 / stds[ch];
            for (g, x) in gn.iter_mut().zip(nn) {
                *g = (*g - mean_g - *x * mean_gn) * inv_std;
            }
        }
        // Convolution input gradient.
        let mut g_in = vec![0.0; cin * plane];
        conv3x3_input_vjp(&g_n, wc, h, w, kernels, cin, &mut g_in);
        g_in
    }
}

/// `dst[y][x] += wv * src[y + sy][x + sx]` over the in-bounds region of both
/// planes. The workhorse of the convolution: a 3x3 kernel is nine such tap
/// passes, and the input gradient is the same nine passes with the shift
/// negated.
fn tap_accumulate(dst: &mut [f64], src: &[f64], h: usize, w: usize, sy: isize, sx: isize, wv: f64) {
    let y_start = (-sy).max(0) as usize;
    let y_end = (h as isize - sy.max(0)) as usize;
    let x_start = (-sx).max(0) as usize;
    let x_end = (w as isize - sx.max(0)) as usize;
    if x_start >= x_end {
        return;
    }
    for y in y_start..y_end {
        let src_row = ((y as isize + sy) as usize) * w;
        let src_off = (x_start as isize + sx) as usize;
        let d = &mut dst[y * w + x_start..y * w + x_end];
        let s = &src[src_row + src_off..src_row + src_off + (x_end - x_start)];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += wv * sv;
        }
    }
}

/// 3x3 same-padding convolution with bias. `kernels` is laid out
/// `[out_ch][in_ch][ky][kx]` row-major.
pub(crate) fn conv3x3(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    biases: &[f64],
    cout: usize,
    out: &mut [f64],
) {
    let plane = h * w;
    for oc in 0..cout {
        let oplane = &mut out[oc * plane..(oc + 1) * plane];
        oplane.fill(biases[oc]);
        for ic in 0..cin {
            let iplane = &input[ic * plane..(ic + 1) * plane];
            let kbase = (oc * cin + ic) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let wv = kernels[kbase + ky * 3 + kx];
                    tap_accumulate(oplane, iplane, h, w, ky as isize - 1, kx as isize - 1, wv);
                }
            }
        }
    }
}

/// Gradient of [`conv3x3`] with respect to its input: correlation of the
/// output gradient with the spatially flipped kernels.
pub(crate) fn conv3x3_input_vjp(
    g_out: &[f64],
    cout: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    cin: usize,
    g_in: &mut [f64],
) {
    let plane = h * w;
    for oc in 0..cout {
        let gplane = &g_out[oc * plane..(oc + 1) * plane];
        for ic in 0..cin {
            let iplane = &mut g_in[ic * plane..(ic + 1) * plane];
            let kbase = (oc * cin + ic) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let wv = kernels[kbase + ky * 3 + kx];
                    tap_accumulate(iplane, gplane, h, w, 1 - ky as isize, 1 - kx as isize, wv);
                }
            }
        }
    }
}

/// Normalizes each channel plane to zero mean and (up to the epsilon) unit
/// variance, in place, returning the per-channel scale `sqrt(var + eps)`.
pub(crate) fn instance_norm_in_place(z: &mut [f64], channels: usize, plane: usize) -> Vec<f64> {
    let m = plane as f64;
    let mut stds = Vec::with_capacity(channels);
    for ch in 0..channels {
        let s = &mut z[ch * plane..(ch + 1) * plane];
        let mean = s.iter().sum::<f64>() / m;
        let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
        let std = (var + INSTANCE_NORM_EPS).sqrt();
        let inv = 1.0 / std;
        for x in s.iter_mut() {
            *x = (*x - mean) * inv;
        }
        stds.push(std);
    }
    stds
}

/// ReLU followed by 2x2 average pooling with stride 2, reading the
/// rectification on the fly.
pub(crate) fn avg_pool_relu(n: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (hp, wp) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * hp * wp];
    for ch in 0..channels {
        let plane = &n[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for oy in 0..hp {
            let r0 = &plane[(2 * oy) * w..(2 * oy + 1) * w];
            let r1 = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..wp {
                let sum = r0[2 * ox].max(0.0)
                    + r0[2 * ox + 1].max(0.0)
                    + r1[2 * ox].max(0.0)
                    + r1[2 * ox + 1].max(0.0);
                oplane[oy * wp + ox] = sum * 0.25;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct per-output-pixel convolution used as an independent oracle.
    fn conv3x3_naive(
        input: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        kernels: &[f64],
        biases: &[f64],
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for oc in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = biases[oc];
                    for ic in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let iy = y + ky - 1;
                                let ix = x + kx - 1;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv = kernels[((oc * cin + ic) * 9
                                    + (ky * 3 + kx) as usize) as usize];
                                acc += wv * input[ic * h * w + (iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[oc * h * w + (y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle_on_random_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cin, cout, h, w) = (2, 3, 5, 7);
        let input: Vec<f64> = (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernels: Vec<f64> =
            (0..cout * cin * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let biases: Vec<f64> = (0..cout).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut fast = vec![0.0; cout * h * w];
        conv3x3(&input, cin, h, w, &kernels, &biases, cout, &mut fast);
        let naive = conv3x3_naive(&input, cin, h, w, &kernels, &biases, cout);
        for (a, b) in fast.iter().zip(&naive) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_input_vjp_is_the_transpose_of_forward() {
        // <g, conv(x)> must equal <conv_vjp(g), x> for the linear part.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (cin, cout, h, w) = (3, 2, 4, 6);
        let x: Vec<f64> = (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..cout * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernels: Vec<f64> =
            (0..cout * cin * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let biases = vec![0.0; cout];
        let mut y = vec![0.0; cout * h * w];
        conv3x3(&x, cin, h, w, &kernels, &biases, cout, &mut y);
        let mut xt = vec![0.0; cin * h * w];
        conv3x3_input_vjp(&g, cout, h, w, &kernels, cin, &mut xt);
        let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = xt.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn instance_norm_centers_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let plane = 64;
        let mut z: Vec<f64> = (0..2 * plane).map(|_| rng.random_range(-3.0..3.0)).collect();
        let orig = z.clone();
        let stds = instance_norm_in_place(&mut z, 2, plane);
        for ch in 0..2 {
            let s = &z[ch * plane..(ch + 1) * plane];
            let mean = s.iter().sum::<f64>() / plane as f64;
            assert!(mean.abs() < 1e-12, "post-norm mean {mean}");
            let var = s.iter().map(|x| x * x).sum::<f64>() / plane as f64;
            // Variance is v / (v + eps), slightly below 1.
            let raw = &orig[ch * plane..(ch + 1) * plane];
            let rm = raw.iter().sum::<f64>() / plane as f64;
            let rv = raw.iter().map(|x| (x - rm) * (x - rm)).sum::<f64>() / plane as f64;
            assert_relative_eq!(var, rv / (rv + INSTANCE_NORM_EPS), epsilon = 1e-10);
            assert_relative_eq!(stds[ch], (rv + INSTANCE_NORM_EPS).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut z = vec![5.0; 16];
        let stds = instance_norm_in_place(&mut z, 1, 16);
        assert!(z.iter().all(|&x| x == 0.0));
        assert_relative_eq!(stds[0], INSTANCE_NORM_EPS.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn pooling_averages_rectified_windows() {
        // One channel, 2x4 plane -> 1x2 pooled.
        let n = vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0, -7.0, 8.0];
        let out = avg_pool_relu(&n, 1, 2, 4);
        // Window 1: relu(1,-2,5,6) -> (1+0+5+6)/4 = 3; window 2: (3+4+0+8)/4 = 3.75.
        assert_eq!(out, vec![3.0, 3.75]);
    }
}

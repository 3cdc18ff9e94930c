//! Deterministic random feature encoders and their exact input gradients.
//!
//! Three encoder families map image batches `(N, C, H, W)` to feature rows
//! `(N, feature_dim)`:
//!
//! * `convnet3` — three blocks of (3x3 same-padding convolution with bias →
//!   per-sample per-channel instance normalization → ReLU → 2x2 average
//!   pooling with stride 2), then flatten. Spatial extent shrinks by 8, so
//!   `H` and `W` must be multiples of 8 and the convolution width is derived
//!   as `feature_dim / ((H/8) * (W/8))`.
//! * `mlp` — flatten → linear to a 128-unit hidden layer → ReLU → linear to
//!   `feature_dim`.
//! * `random_linear` — a single bias-free linear map from flattened pixels.
//!
//! Weights are never trained: they are drawn once per instance from He
//! fan-in-scaled normals (`std = sqrt(2 / fan_in)`, biases zero) using a
//! counter-based deterministic generator, so an instance is reproducible from
//! `(spec.seed, draw_seed)` alone. Gradients with respect to *inputs* are
//! computed by a hand-written reverse-mode pass ([`encode_vjp`]) that exactly
//! transposes the forward computation; there is no autodiff anywhere.

mod convnet;
mod dense;

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{HddError, Result};
use crate::util::{derive_seed, init_thread_pool};

/// Hidden width of the `mlp` encoder.
pub const MLP_HIDDEN: usize = 128;
/// Kernel side of every convolution in `convnet3`.
pub const CONV_KERNEL: usize = 3;

/// Encoder families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Convnet3,
    Mlp,
    RandomLinear,
}

impl EncoderKind {
    /// Stable name used in config files and serialized headers.
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Convnet3 => "convnet3",
            EncoderKind::Mlp => "mlp",
            EncoderKind::RandomLinear => "random_linear",
        }
    }

    /// Parses the stable name.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convnet3" => Ok(EncoderKind::Convnet3),
            "mlp" => Ok(EncoderKind::Mlp),
            "random_linear" => Ok(EncoderKind::RandomLinear),
            other => Err(HddError::Config(format!(
                "unknown encoder kind {other:?} (expected convnet3, mlp, or random_linear)"
            ))),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            EncoderKind::Convnet3 => 1,
            EncoderKind::Mlp => 2,
            EncoderKind::RandomLinear => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(EncoderKind::Convnet3),
            2 => Ok(EncoderKind::Mlp),
            3 => Ok(EncoderKind::RandomLinear),
            other => Err(HddError::Data(format!("unknown encoder kind tag {other}"))),
        }
    }
}

/// Architecture description: family, input shape, output width, and the base
/// seed that (together with a draw counter) determines every weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl EncoderSpec {
    /// Flattened input size `C * H * W`.
    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Channel width of the convolutional blocks (convnet3 only).
    pub fn conv_width(&self) -> Result<usize> {
        let cells = (self.height / 8) * (self.width / 8);
        if cells == 0 || self.feature_dim % cells != 0 {
            return Err(HddError::InvalidArgument(format!(
                "feature_dim {} is not a multiple of the (H/8)*(W/8) = {} pooled cells",
                self.feature_dim, cells
            )));
        }
        Ok(self.feature_dim / cells)
    }

    /// Checks structural validity of this encoder description.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(HddError::InvalidArgument(format!(
                "encoder input shape must be positive, got {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        if self.feature_dim == 0 {
            return Err(HddError::InvalidArgument("feature_dim must be positive".into()));
        }
        if self.kind == EncoderKind::Convnet3 {
            if self.height % 8 != 0 || self.width % 8 != 0 {
                return Err(HddError::InvalidArgument(format!(
                    "convnet3 needs H and W divisible by 8 (three 2x2 poolings), got {}x{}",
                    self.height, self.width
                )));
            }
            self.conv_width()?;
        }
        Ok(())
    }

    /// Sizes and He fan-ins of the weight segments, in draw order. Biases are
    /// marked with `fan_in = 0` and are zero-initialized.
    fn segments(&self) -> Result<Vec<(usize, usize)>> {
        let k2 = CONV_KERNEL * CONV_KERNEL;
        Ok(match self.kind {
            EncoderKind::Convnet3 => {
                let wc = self.conv_width()?;
                vec![
                    (wc * self.channels * k2, self.channels * k2),
                    (wc, 0),
                    (wc * wc * k2, wc * k2),
                    (wc, 0),
                    (wc * wc * k2, wc * k2),
                    (wc, 0),
                ]
            }
            EncoderKind::Mlp => {
                let d = self.input_dim();
                vec![
                    (MLP_HIDDEN * d, d),
                    (MLP_HIDDEN, 0),
                    (self.feature_dim * MLP_HIDDEN, MLP_HIDDEN),
                    (self.feature_dim, 0),
                ]
            }
            EncoderKind::RandomLinear => vec![(self.feature_dim * self.input_dim(), self.input_dim())],
        })
    }

    /// Total number of weights (including biases).
    pub fn weight_count(&self) -> Result<usize> {
        Ok(self.segments()?.iter().map(|(n, _)| n).sum())
    }
}

/// A concrete encoder: a spec plus its drawn weight vector.
#[derive(Debug, Clone)]
pub struct EncoderInstance {
    spec: EncoderSpec,
    weights: Vec<f64>,
}

impl EncoderInstance {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Flat weight vector, in the documented draw order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Draws a fresh weight vector for `spec`.
///
/// The generator is keyed by `(spec.seed, draw_seed)` through a whitening
/// derivation, so consecutive draw seeds give statistically independent
/// instances while the pair fully reproduces the weights on any platform.
/// Each linear/convolutional segment is filled in order with
/// `N(0, 2 / fan_in)` draws; bias segments are left at zero.
pub fn sample_encoder(spec: &EncoderSpec, draw_seed: u64) -> Result<EncoderInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "encoder-draw", draw_seed));
    let mut weights = Vec::with_capacity(spec.weight_count()?);
    for (count, fan_in) in spec.segments()? {
        if fan_in == 0 {
            weights.extend(std::iter::repeat(0.0).take(count));
        } else {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("std is finite and positive");
            weights.extend((0..count).map(|_| dist.sample(&mut rng)));
        }
    }
    Ok(EncoderInstance { spec: *spec, weights })
}

fn check_batch(spec: &EncoderSpec, batch: &ArrayView4<f64>) -> Result<()> {
    let (_, c, h, w) = batch.dim();
    if (c, h, w) != (spec.channels, spec.height, spec.width) {
        return Err(HddError::DimensionMismatch(format!(
            "batch shape {c}x{h}x{w} does not match encoder input {}x{}x{}",
            spec.channels, spec.height, spec.width
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(HddError::InvalidArgument("non-finite pixel value in batch".into()));
    }
    Ok(())
}

/// Encodes a batch of images into feature rows.
///
/// The result is a pure per-sample function of the pixels and the weights:
/// identical inputs give bitwise identical rows regardless of batch
/// composition, ordering, or worker-thread count.
pub fn encode(enc: &EncoderInstance, batch: ArrayView4<f64>) -> Result<Array2<f64>> {
    enc.spec.validate()?;
    check_batch(&enc.spec, &batch)?;
    init_thread_pool();
    let n = batch.dim().0;
    let mut out = Array2::zeros((n, enc.spec.feature_dim));
    match enc.spec.kind {
        EncoderKind::Convnet3 => {
            let params = convnet::ConvParams::new(&enc.spec, &enc.weights)?;
            let input = as_contiguous4(&batch);
            let chw = enc.spec.input_dim();
            let out_slice = out.as_slice_mut().expect("freshly allocated output is contiguous");
            out_slice
                .par_chunks_mut(enc.spec.feature_dim)
                .zip(input.par_chunks(chw))
                .for_each(|(feat, image)| params.forward(image, feat));
        }
        EncoderKind::Mlp => dense::mlp_forward(&enc.spec, &enc.weights, &batch, &mut out),
        EncoderKind::RandomLinear => {
            dense::linear_forward(&enc.spec, &enc.weights, &batch, &mut out)
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`encode`]: pulls an upstream feature-space
/// gradient `(N, feature_dim)` back to pixel space `(N, C, H, W)`.
///
/// The pass recomputes the forward activations per sample and applies the
/// exact transpose of every layer: average-pool spreads a quarter of each
/// upstream cell, ReLU gates on the sign of its pre-activation, instance
/// normalization uses its closed-form Jacobian, and convolutions correlate
/// with the spatially flipped kernels.
pub fn encode_vjp(
    enc: &EncoderInstance,
    batch: ArrayView4<f64>,
    upstream: ArrayView2<f64>,
) -> Result<Array4<f64>> {
    enc.spec.validate()?;
    check_batch(&enc.spec, &batch)?;
    let n = batch.dim().0;
    if upstream.dim() != (n, enc.spec.feature_dim) {
        return Err(HddError::DimensionMismatch(format!(
            "upstream gradient has shape {}x{}, expected {}x{}",
            upstream.dim().0,
            upstream.dim().1,
            n,
            enc.spec.feature_dim
        )));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(HddError::InvalidArgument("non-finite upstream gradient".into()));
    }
    init_thread_pool();
    let (c, h, w) = (enc.spec.channels, enc.spec.height, enc.spec.width);
    let mut grad = Array4::zeros((n, c, h, w));
    match enc.spec.kind {
        EncoderKind::Convnet3 => {
            let params = convnet::ConvParams::new(&enc.spec, &enc.weights)?;
            let input = as_contiguous4(&batch);
            let up = as_contiguous2(&upstream);
            let chw = enc.spec.input_dim();
            let grad_slice = grad.as_slice_mut().expect("freshly allocated gradient is contiguous");
            grad_slice
                .par_chunks_mut(chw)
                .zip(input.par_chunks(chw))
                .zip(up.par_chunks(enc.spec.feature_dim))
                .for_each(|((g, image), u)| params.input_vjp(image, u, g));
        }
        EncoderKind::Mlp => dense::mlp_input_vjp(&enc.spec, &enc.weights, &batch, &upstream, &mut grad),
        EncoderKind::RandomLinear => {
            dense::linear_input_vjp(&enc.spec, &enc.weights, &upstream, &mut grad)
        }
    }
    Ok(grad)
}

/// Borrows the batch as one contiguous slice, copying only if the view is
/// strided.
fn as_contiguous4<'a>(batch: &'a ArrayView4<'a, f64>) -> std::borrow::Cow<'a, [f64]> {
    match batch.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(batch.iter().copied().collect()),
    }
}

fn as_contiguous2<'a>(m: &'a ArrayView2<'a, f64>) -> std::borrow::Cow<'a, [f64]> {
    match m.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(m.iter().copied().collect()),
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"HDDW";
const WEIGHTS_VERSION: u8 = 1;

/// Serializes an encoder instance: a header naming the kind, input shape,
/// feature width, and seed, followed by the weights as little-endian f64.
pub fn save_weights(enc: &EncoderInstance, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(64 + enc.weights.len() * 8);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(WEIGHTS_VERSION);
    out.push(enc.spec.kind.tag());
    for v in [
        enc.spec.channels as u64,
        enc.spec.height as u64,
        enc.spec.width as u64,
        enc.spec.feature_dim as u64,
        enc.spec.seed,
        enc.weights.len() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in &enc.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Reads back a serialized encoder, validating the header and weight count.
pub fn load_weights(path: &Path) -> Result<EncoderInstance> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 6 + 6 * 8 {
        return Err(HddError::Data(format!(
            "weight file {} is truncated ({} bytes, header needs {})",
            path.display(),
            bytes.len(),
            6 + 6 * 8
        )));
    }
    if &bytes[0..4] != WEIGHTS_MAGIC {
        return Err(HddError::Data(format!("weight file {} has a bad magic", path.display())));
    }
    if bytes[4] != WEIGHTS_VERSION {
        return Err(HddError::Data(format!(
            "weight file {} has unsupported version {}",
            path.display(),
            bytes[4]
        )));
    }
    let kind = EncoderKind::from_tag(bytes[5])?;
    let mut u64s = [0u64; 6];
    for (i, v) in u64s.iter_mut().enumerate() {
        let start = 6 + i * 8;
        *v = u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
    }
    let spec = EncoderSpec {
        kind,
        channels: u64s[0] as usize,
        height: u64s[1] as usize,
        width: u64s[2] as usize,
        feature_dim: u64s[3] as usize,
        seed: u64s[4],
    };
    spec.validate()?;
    let count = u64s[5] as usize;
    if count != spec.weight_count()? {
        return Err(HddError::Data(format!(
            "weight file {} declares {count} weights, architecture needs {}",
            path.display(),
            spec.weight_count()?
        )));
    }
    let expected = 6 + 6 * 8 + count * 8;
    if bytes.len() != expected {
        return Err(HddError::Data(format!(
            "weight file {} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let weights: Vec<f64> = bytes[6 + 6 * 8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(HddError::Data(format!(
            "weight file {} contains non-finite values",
            path.display()
        )));
    }
    Ok(EncoderInstance { spec, weights })
}

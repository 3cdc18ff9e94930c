//! Small deterministic image datasets for experiments and tests.
//!
//! Both generators produce single-channel images with pixels in [0, 1],
//! contiguous labels, and a layout that a randomly initialized encoder
//! separates well, so distillation dynamics can be studied end to end
//! without external data.

use ndarray::Array4;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::LabeledDataset;
use crate::error::{HddError, Result};
use crate::util::derive_seed;

fn check_common(per_class: usize, hw: usize, noise: f64) -> Result<()> {
    if per_class == 0 {
        return Err(HddError::InvalidArgument("per_class must be positive".into()));
    }
    if hw < 4 {
        return Err(HddError::InvalidArgument(format!(
            "image side must be at least 4, got {hw}"
        )));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(HddError::InvalidArgument(format!(
            "noise must be finite and nonnegative, got {noise}"
        )));
    }
    Ok(())
}

/// Bump-center scatter per unit `noise`, as a fraction of the image side:
/// each image's bump center is drawn from an isotropic Gaussian of this
/// standard deviation around its class anchor.
const BLOB_CENTER_SPREAD: f64 = 0.125;
/// Pixel-noise standard deviation per unit `noise`.
const BLOB_PIXEL_NOISE: f64 = 0.25;

/// Gaussian-blob classes: class `c` owns an anchor on a circle at angle
/// `2 pi c / classes`; each image draws its bump center from an isotropic
/// Gaussian around that anchor (the class is a blob of bump positions) and
/// adds i.i.d. Gaussian pixel noise, clamped to [0, 1]. `noise` scales both
/// the center scatter and the pixel noise; with `noise = 0` every image of
/// a class is identical.
pub fn gaussian_blobs(
    classes: usize,
    per_class: usize,
    hw: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes == 0 {
        return Err(HddError::InvalidArgument("need at least one class".into()));
    }
    check_common(per_class, hw, noise)?;
    let n = classes * per_class;
    let mut images = Array4::zeros((n, 1, hw, hw));
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "toy-blobs", 0));
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");
    let center = (hw as f64 - 1.0) / 2.0;
    let orbit = 0.3 * hw as f64;
    let sigma = hw as f64 / 6.0;
    let spread = noise * BLOB_CENTER_SPREAD * hw as f64;
    for i in 0..n {
        let class = i % classes;
        let theta = std::f64::consts::TAU * class as f64 / classes as f64;
        let mut cy = center + orbit * theta.sin();
        let mut cx = center + orbit * theta.cos();
        if noise > 0.0 {
            cy += spread * gauss.sample(&mut rng);
            cx += spread * gauss.sample(&mut rng);
        }
        for y in 0..hw {
            for x in 0..hw {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let bump = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                let mut v = 0.1 + 0.8 * bump;
                if noise > 0.0 {
                    v += noise * BLOB_PIXEL_NOISE * gauss.sample(&mut rng);
                }
                images[[i, 0, y, x]] = v.clamp(0.0, 1.0);
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(images, labels)
}

/// Two-class bars-and-stripes: class 0 images light up a random nonempty,
/// non-full subset of columns, class 1 of rows (values 0.9 on / 0.1 off),
/// plus i.i.d. Gaussian pixel noise, clamped to [0, 1].
pub fn bars_and_stripes(per_class: usize, hw: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    check_common(per_class, hw, noise)?;
    let n = 2 * per_class;
    let mut images = Array4::zeros((n, 1, hw, hw));
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "toy-bars", 0));
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");
    for i in 0..n {
        let class = i % 2;
        // Draw until the mask is neither empty nor full so every image has
        // visible structure; the retry count is part of the deterministic
        // stream.
        let mask: Vec<bool> = loop {
            let m: Vec<bool> = (0..hw).map(|_| rng.random_bool(0.5)).collect();
            if m.iter().any(|&b| b) && !m.iter().all(|&b| b) {
                break m;
            }
        };
        for y in 0..hw {
            for x in 0..hw {
                let on = if class == 0 { mask[x] } else { mask[y] };
                let mut v = if on { 0.9 } else { 0.1 };
                if noise > 0.0 {
                    v += noise * gauss.sample(&mut rng);
                }
                images[[i, 0, y, x]] = v.clamp(0.0, 1.0);
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(images, labels)
}

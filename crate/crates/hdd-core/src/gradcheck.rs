//! Finite-difference verification of the analytic gradients.
//!
//! Every derivative in this crate is hand-derived, so each one is checked
//! against central differences over randomized configurations. Two wrinkles
//! make a naive check unsound:
//!
//! * **Truncation.** A central difference carries an `O(h^2)` error that can
//!   exceed the acceptance tolerance on coordinates with strong third
//!   derivatives. When the plain estimate disagrees with the analytic value,
//!   the checker recomputes at `h/2` and Richardson-extrapolates
//!   (`(4 g_{h/2} - g_h) / 3`), which cancels the `h^2` term.
//! * **Kinks.** ReLU activations and the distance clamp make the maps
//!   piecewise smooth. When a difference bracket straddles a kink, the two
//!   step sizes disagree by a large factor (the estimate mixes the slopes of
//!   two pieces), while on a smooth stretch they agree to `O(h^2)`. Such
//!   coordinates cannot be certified by finite differences at all and are
//!   skipped and counted; callers bound the skipped fraction.
//! * **Kinks next to the point.** A kink a distance `d << h` from `x` defeats
//!   the two-scale test: every central bracket contains it, so the estimates
//!   at `h` and `h/2` agree with each other — both measure nearly the same
//!   mixture `(g_left + g_right) / 2 + O(d/h)` — while the correct gradient
//!   is the slope of the piece that contains `x`. The checker resolves this
//!   with one-sided differences: the side facing away from the kink sees a
//!   clean stretch of that piece, so when the analytic value matches either
//!   one-sided estimate the coordinate is reclassified as kink-straddling.
//!   A wrong gradient matches neither side and still fails.
//!
//! Coordinates where both the analytic and the numeric derivative sit below
//! a floor are counted separately: their relative error is dominated by
//! round-off noise and certifies nothing either way.

use ndarray::{Array2, Array4, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::centroid::EmbeddedSet;
use crate::encoder::{encode, encode_vjp, sample_encoder, EncoderKind, EncoderSpec};
use crate::engine::{hdd_loss_from_features, hdd_loss_grad};
use crate::error::{HddError, Result};
use crate::lorentz::Curvature;
use crate::util::derive_seed;

/// Relative disagreement between the two step sizes beyond which a
/// coordinate is classified as kink-straddling. Genuine nonsmoothness mixes
/// the slopes of different pieces (an `O(1)` effect); smooth truncation error
/// shrinks fourfold from `h` to `h/2`.
const KINK_DISAGREEMENT: f64 = 0.25;

/// Relative agreement with a one-sided difference that reclassifies a
/// failing coordinate as kink-straddling. One-sided estimates carry an
/// `O(h |f''| / |f'|)` truncation error, so this is necessarily much looser
/// than the certification tolerance; it only has to separate "the analytic
/// value is the slope of one piece" from "the analytic value is wrong".
const ONE_SIDED_MATCH: f64 = 0.02;

/// Outcome of checking one gradient vector against central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct FdCheck {
    /// Coordinates compared against the tolerance.
    pub checked: usize,
    /// Coordinates skipped because the difference bracket straddles a kink.
    pub kink_skipped: usize,
    /// Coordinates skipped because both derivative estimates sit below the
    /// floor.
    pub small_skipped: usize,
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate index attaining `max_rel_err`.
    pub worst_index: Option<usize>,
}

impl FdCheck {
    pub fn merge(&mut self, other: &FdCheck) {
        self.checked += other.checked;
        self.kink_skipped += other.kink_skipped;
        self.small_skipped += other.small_skipped;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_index = other.worst_index;
        }
    }
}

/// Central difference of `f` along coordinate `i` at half-width `h`,
/// restoring `probe` to `x` before returning.
fn central_diff(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    probe: &mut [f64],
    i: usize,
    h: f64,
) -> Result<f64> {
    probe[i] = x[i] + h;
    let fp = f(probe)?;
    probe[i] = x[i] - h;
    let fm = f(probe)?;
    probe[i] = x[i];
    Ok((fp - fm) / (2.0 * h))
}

/// Compares `analytic` against central differences of `f` around `x`.
///
/// Per coordinate: evaluate the plain central difference at `step`; accept
/// immediately if it agrees with the analytic value within `rel_tol`. On
/// disagreement, re-estimate at `step/2`; if the two estimates are mutually
/// inconsistent the bracket straddles a kink and the coordinate is skipped,
/// otherwise the Richardson extrapolation of the pair is the reference.
/// When even that reference disagrees, the analytic value is compared
/// against the two one-sided differences before the coordinate is recorded
/// as a failure: agreement with either side is the signature of a kink
/// sitting inside every central bracket (see the module docs). Coordinates
/// where everything is below `grad_floor` are counted as too small to
/// certify.
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    grad_floor: f64,
    rel_tol: f64,
) -> Result<FdCheck> {
    if x.len() != analytic.len() {
        return Err(HddError::DimensionMismatch(format!(
            "{} coordinates with {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(HddError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut probe = x.to_vec();
    let mut out = FdCheck::default();
    for i in 0..x.len() {
        let a = analytic[i];
        let g1 = central_diff(f, x, &mut probe, i, step)?;
        if a.abs() <= grad_floor && g1.abs() <= grad_floor {
            out.small_skipped += 1;
            continue;
        }
        let rel1 = (a - g1).abs() / a.abs().max(g1.abs());
        if rel1 <= rel_tol {
            out.checked += 1;
            if rel1 > out.max_rel_err {
                out.max_rel_err = rel1;
                out.worst_index = Some(i);
            }
            continue;
        }
        let g2 = central_diff(f, x, &mut probe, i, step / 2.0)?;
        if (g1 - g2).abs() > KINK_DISAGREEMENT * g1.abs().max(g2.abs()) {
            out.kink_skipped += 1;
            continue;
        }
        let rich = (4.0 * g2 - g1) / 3.0;
        let rel = (a - rich).abs() / a.abs().max(rich.abs());
        if rel > rel_tol {
            let h = step / 2.0;
            let f0 = f(&probe)?;
            probe[i] = x[i] + h;
            let fp = f(&probe)?;
            probe[i] = x[i] - h;
            let fm = f(&probe)?;
            probe[i] = x[i];
            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            let matches =
                |o: f64| (a - o).abs() <= ONE_SIDED_MATCH * a.abs().max(o.abs());
            if matches(forward) || matches(backward) {
                out.kink_skipped += 1;
                continue;
            }
        }
        out.checked += 1;
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst_index = Some(i);
        }
    }
    Ok(out)
}

/// Aggregate result of a randomized verification suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteReport {
    /// Distinct random configurations exercised.
    pub configs: usize,
    /// Coordinates compared in total.
    pub coords_checked: usize,
    /// Coordinates skipped as kink-straddling.
    pub kink_skipped: usize,
    /// Coordinates skipped as below the derivative floor.
    pub small_skipped: usize,
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Tolerance the suite was run at.
    pub rel_tol: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.coords_checked > 0 && self.max_rel_err <= self.rel_tol
    }

    /// Fraction of candidate coordinates skipped as kink-straddling.
    pub fn kink_fraction(&self) -> f64 {
        let denom = self.coords_checked + self.kink_skipped;
        if denom == 0 {
            0.0
        } else {
            self.kink_skipped as f64 / denom as f64
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "configs={} coords={} max_rel_err={:.3e} (tol {:.1e}) kink_skipped={} small_skipped={} -> {}",
            self.configs,
            self.coords_checked,
            self.max_rel_err,
            self.rel_tol,
            self.kink_skipped,
            self.small_skipped,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// Default finite-difference step for the verification suites.
pub const FD_STEP: f64 = 1e-4;
/// Derivative floor below which a coordinate certifies nothing.
pub const FD_GRAD_FLOOR: f64 = 1e-6;
/// Relative tolerance the suites must meet.
pub const FD_REL_TOL: f64 = 1e-4;

/// Verifies the analytic centroid-loss gradient over `configs` random
/// problems: random curvature, loss scale, feature dimension, and set sizes,
/// with Gaussian features on both sides.
pub fn centroid_loss_suite(configs: usize, base_seed: u64) -> Result<SuiteReport> {
    if configs == 0 {
        return Err(HddError::InvalidArgument("suite needs at least one configuration".into()));
    }
    let mut agg = FdCheck::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, "loss-cfg", c as u64));
        let mag = (rng.random_range(0.3f64.ln()..3.0f64.ln())).exp();
        let curv = Curvature::from_magnitude(mag)?;
        let lambda = (rng.random_range(0.5f64.ln()..40.0f64.ln())).exp();
        let dim = rng.random_range(2..=6usize);
        let b_real = rng.random_range(1..=8usize);
        let b_syn = rng.random_range(1..=8usize);
        let gauss = Normal::new(0.0, 0.5).expect("valid normal");
        let real_feats =
            Array2::from_shape_fn((b_real, dim), |_| gauss.sample(&mut rng));
        let syn_feats = Array2::from_shape_fn((b_syn, dim), |_| gauss.sample(&mut rng));
        let labels = vec![0usize; b_real];
        let real = EmbeddedSet::from_features(curv, real_feats.view(), &labels)?;
        let lg = hdd_loss_grad(&curv, lambda, &real, syn_feats.view())?;
        let analytic: Vec<f64> = lg.feature_grad.iter().cloned().collect();
        let flat: Vec<f64> = syn_feats.iter().cloned().collect();
        let mut f = |v: &[f64]| -> Result<f64> {
            let m = Array2::from_shape_vec((b_syn, dim), v.to_vec())
                .expect("shape matches by construction");
            hdd_loss_from_features(&curv, lambda, &real, m.view())
        };
        let check = check_gradient(&mut f, &flat, &analytic, FD_STEP, FD_GRAD_FLOOR, FD_REL_TOL)?;
        agg.merge(&check);
    }
    Ok(SuiteReport {
        configs,
        coords_checked: agg.checked,
        kink_skipped: agg.kink_skipped,
        small_skipped: agg.small_skipped,
        max_rel_err: agg.max_rel_err,
        rel_tol: FD_REL_TOL,
    })
}

/// Verifies the encoder input-gradients over `configs` random problems:
/// the three encoder families with randomized shapes, widths, weights, and
/// upstream cotangents, differentiating `x -> <u, phi(x)>` pixel by pixel.
pub fn encoder_suite(configs: usize, base_seed: u64) -> Result<SuiteReport> {
    if configs == 0 {
        return Err(HddError::InvalidArgument("suite needs at least one configuration".into()));
    }
    let mut agg = FdCheck::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, "enc-cfg", c as u64));
        let kind = match c % 3 {
            0 => EncoderKind::Convnet3,
            1 => EncoderKind::Mlp,
            _ => EncoderKind::RandomLinear,
        };
        let (channels, height, width, feature_dim) = match kind {
            EncoderKind::Convnet3 => {
                let ch = rng.random_range(1..=2usize);
                let hw = if rng.random_bool(0.5) { 8 } else { 16 };
                let conv_width = rng.random_range(1..=3usize);
                (ch, hw, hw, conv_width * (hw / 8) * (hw / 8))
            }
            _ => {
                let ch = rng.random_range(1..=2usize);
                let h = rng.random_range(3..=6usize);
                let w = rng.random_range(3..=6usize);
                (ch, h, w, rng.random_range(4..=12usize))
            }
        };
        let spec = EncoderSpec {
            kind,
            channels,
            height,
            width,
            feature_dim,
            seed: derive_seed(base_seed, "enc-weights", c as u64),
        };
        let enc = sample_encoder(&spec, 0)?;
        let pixels =
            Array4::from_shape_fn((1, channels, height, width), |_| rng.random_range(0.0..1.0));
        let upstream_gauss = Normal::new(0.0, 1.0).expect("valid normal");
        let upstream =
            Array2::from_shape_fn((1, feature_dim), |_| upstream_gauss.sample(&mut rng));
        let analytic_grid = encode_vjp(&enc, pixels.view(), upstream.view())?;
        let analytic: Vec<f64> = analytic_grid.iter().cloned().collect();
        let flat: Vec<f64> = pixels.iter().cloned().collect();
        let urow: ArrayView1<f64> = upstream.row(0);
        let mut f = |v: &[f64]| -> Result<f64> {
            let img = Array4::from_shape_vec((1, channels, height, width), v.to_vec())
                .expect("shape matches by construction");
            let feats = encode(&enc, img.view())?;
            Ok(feats.row(0).dot(&urow))
        };
        let check = check_gradient(&mut f, &flat, &analytic, FD_STEP, FD_GRAD_FLOOR, FD_REL_TOL)?;
        agg.merge(&check);
    }
    Ok(SuiteReport {
        configs,
        coords_checked: agg.checked,
        kink_skipped: agg.kink_skipped,
        small_skipped: agg.small_skipped,
        max_rel_err: agg.max_rel_err,
        rel_tol: FD_REL_TOL,
    })
}

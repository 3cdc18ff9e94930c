//! The distillation engine: centroid-matching loss, its analytic gradient,
//! the optimization loop, and linear-probe evaluation.
//!
//! Per class, a batch of real images and the synthetic images are encoded,
//! their features lifted onto the hyperboloid, and each side summarized by
//! the closed-form approximate centroid. The loss is the scaled geodesic
//! distance between the two centroids:
//!
//! ```text
//!   L = lambda * d(c_real, c_syn)
//! ```
//!
//! The gradient with respect to the synthetic *features* is derived in
//! closed form through the whole chain (arcosh -> Minkowski inner product ->
//! centroid normalization -> Minkowski mean -> exponential-map lift), and
//! [`crate::encoder::encode_vjp`] carries it the rest of the way to pixels.
//! Nothing in the loop relies on automatic differentiation, and every run is
//! a pure function of its configuration: records are reproducible bit for
//! bit on a fixed platform.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::centroid::{approx_centroid, EmbeddedSet, DEFAULT_CENTROID_EPS};
use crate::encoder::{encode, encode_vjp, sample_encoder, EncoderInstance, EncoderKind, EncoderSpec};
use crate::error::{HddError, Result};
use crate::lorentz::{arcosh, sinhc, Curvature};
use crate::util::{derive_seed, Fnv1a};

/// Distillation objective families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Geodesic distance between hyperbolic centroids.
    Hdd,
    /// Squared Euclidean distance between feature means (the flat baseline).
    EuclideanMmd,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hdd => "hdd",
            LossKind::EuclideanMmd => "euclidean_mmd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hdd" => Ok(LossKind::Hdd),
            "euclidean_mmd" => Ok(LossKind::EuclideanMmd),
            other => Err(HddError::Config(format!(
                "unknown loss kind {other:?} (expected hdd or euclidean_mmd)"
            ))),
        }
    }
}

/// How the synthetic images are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Copy randomly chosen distinct real images of the matching class.
    RandomReal,
    /// Independent uniform noise in [0, 1].
    Noise,
}

impl InitMode {
    pub fn name(&self) -> &'static str {
        match self {
            InitMode::RandomReal => "random_real",
            InitMode::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random_real" => Ok(InitMode::RandomReal),
            "noise" => Ok(InitMode::Noise),
            other => Err(HddError::Config(format!(
                "unknown init mode {other:?} (expected random_real or noise)"
            ))),
        }
    }
}

/// A labeled image dataset with pixel values in [0, 1] and contiguous class
/// labels `0..num_classes`, every class nonempty.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Array4<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Array4<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = images.dim().0;
        if n == 0 {
            return Err(HddError::Data("dataset has no samples".into()));
        }
        if labels.len() != n {
            return Err(HddError::DimensionMismatch(format!(
                "{n} images with {} labels",
                labels.len()
            )));
        }
        for (i, v) in images.iter().enumerate() {
            if !v.is_finite() {
                return Err(HddError::Data(format!("non-finite pixel at flat index {i}")));
            }
            if !(0.0..=1.0).contains(v) {
                return Err(HddError::Data(format!(
                    "pixel value {v} at flat index {i} outside [0, 1]"
                )));
            }
        }
        let num_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(HddError::Data(format!(
                "class {empty} has no samples (labels must be contiguous)"
            )));
        }
        Ok(LabeledDataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(channels, height, width)` of each image.
    pub fn shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dim();
        (c, h, w)
    }

    /// Indices of the samples of one class, in ascending order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// Number of samples in the smallest class.
    pub fn min_class_size(&self) -> usize {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().min().unwrap_or(0)
    }

    /// New dataset keeping only the given sample indices (which must be in
    /// range; the result must still cover every class).
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let (c, h, w) = self.shape();
        let mut images = Array4::zeros((indices.len(), c, h, w));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= self.len() {
                return Err(HddError::InvalidArgument(format!(
                    "subset index {idx} out of range for {} samples",
                    self.len()
                )));
            }
            images.index_axis_mut(Axis(0), row).assign(&self.images.index_axis(Axis(0), idx));
            labels.push(self.labels[idx]);
        }
        let sub = LabeledDataset::new(images, labels)?;
        if sub.num_classes() != self.num_classes() {
            return Err(HddError::InvalidArgument(format!(
                "subset covers {} of the {} classes",
                sub.num_classes(),
                self.num_classes()
            )));
        }
        Ok(sub)
    }

    /// Gathers the given rows into a fresh `(B, C, H, W)` batch.
    fn gather(&self, indices: &[usize]) -> Array4<f64> {
        let (c, h, w) = self.shape();
        let mut batch = Array4::zeros((indices.len(), c, h, w));
        for (row, &idx) in indices.iter().enumerate() {
            batch.index_axis_mut(Axis(0), row).assign(&self.images.index_axis(Axis(0), idx));
        }
        batch
    }
}

/// The synthetic dataset under optimization: `ipc` images per class, rows
/// grouped by class (`row / ipc` is the class of a row).
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    images: Array4<f64>,
    ipc: usize,
    num_classes: usize,
}

impl SyntheticDataset {
    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.ipc * self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    /// Class label of every row, in row order.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|r| r / self.ipc).collect()
    }

    /// Reinterprets the synthetic set as a labeled dataset (for evaluation
    /// and export).
    pub fn to_labeled(&self) -> Result<LabeledDataset> {
        LabeledDataset::new(self.images.clone(), self.labels())
    }

    /// The rows of one class as a view.
    fn class_block(&self, class: usize) -> ndarray::ArrayView4<'_, f64> {
        self.images.slice(ndarray::s![class * self.ipc..(class + 1) * self.ipc, .., .., ..])
    }
}

/// Full configuration of a distillation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// `|K|` of the embedding space (the curvature is `-|K|`).
    pub curvature_magnitude: f64,
    /// Scale of the centroid-distance loss.
    pub lambda: f64,
    /// SGD learning rate on the synthetic pixels.
    pub lr: f64,
    /// Synthetic images per class.
    pub ipc: usize,
    /// Number of optimization iterations.
    pub iterations: usize,
    /// Real images sampled per class and iteration (capped at class size).
    pub batch_real: usize,
    /// Encoder family.
    pub encoder_kind: EncoderKind,
    /// Base seed of the encoder weight stream.
    pub encoder_seed: u64,
    /// Channel width of convnet3 blocks (its feature width is derived).
    pub encoder_width: usize,
    /// Feature width of the mlp / random_linear encoders.
    pub encoder_feature_dim: usize,
    /// Master seed for batch sampling and initialization.
    pub seed: u64,
    /// Objective family.
    pub loss_kind: LossKind,
    /// Redraw encoder weights every iteration (the distribution-matching
    /// convention); `false` freezes the first draw.
    pub resample_encoder: bool,
    /// Euclidean norm cap applied to encoder features before embedding.
    pub feature_norm_cap: f64,
    /// Synthetic initialization mode.
    pub init: InitMode,
    /// Evaluate every this many iterations (0 = never). Evaluation points
    /// land in the run record, not in the loss series.
    pub eval_every: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            curvature_magnitude: 1.0,
            lambda: 20.0,
            lr: 1.0,
            ipc: 10,
            iterations: 500,
            batch_real: 256,
            encoder_kind: EncoderKind::Convnet3,
            encoder_seed: 0,
            encoder_width: 32,
            encoder_feature_dim: 128,
            seed: 0,
            loss_kind: LossKind::Hdd,
            resample_encoder: true,
            feature_norm_cap: 10.0,
            init: InitMode::RandomReal,
            eval_every: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("curvature_magnitude", self.curvature_magnitude),
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("feature_norm_cap", self.feature_norm_cap),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(HddError::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.ipc == 0 {
            return Err(HddError::InvalidArgument("ipc must be positive".into()));
        }
        if self.batch_real == 0 {
            return Err(HddError::InvalidArgument("batch_real must be positive".into()));
        }
        if self.encoder_kind == EncoderKind::Convnet3 && self.encoder_width == 0 {
            return Err(HddError::InvalidArgument("encoder width must be positive".into()));
        }
        if self.encoder_kind != EncoderKind::Convnet3 && self.encoder_feature_dim == 0 {
            return Err(HddError::InvalidArgument("encoder feature_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Curvature::from_magnitude(self.curvature_magnitude)
    }

    /// Resolves the encoder architecture for a given image shape. For
    /// convnet3 the feature width follows from the channel width and the
    /// pooled grid; the dense encoders use `encoder_feature_dim` directly.
    pub fn encoder_spec(&self, shape: (usize, usize, usize)) -> Result<EncoderSpec> {
        let (c, h, w) = shape;
        let feature_dim = match self.encoder_kind {
            EncoderKind::Convnet3 => {
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(HddError::InvalidArgument(format!(
                        "convnet3 needs H and W divisible by 8, got {h}x{w}"
                    )));
                }
                self.encoder_width * (h / 8) * (w / 8)
            }
            _ => self.encoder_feature_dim,
        };
        let spec = EncoderSpec {
            kind: self.encoder_kind,
            channels: c,
            height: h,
            width: w,
            feature_dim,
            seed: self.encoder_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Loss values of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLoss {
    pub iteration: usize,
    pub per_class: Vec<f64>,
    pub total: f64,
}

/// One evaluation checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub iteration: usize,
    pub accuracy: f64,
}

/// Everything a run reports: the loss series, optional evaluation
/// checkpoints, and reproducibility diagnostics.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub losses: Vec<IterationLoss>,
    pub evals: Vec<EvalPoint>,
    /// Times a feature row exceeded the norm cap and was projected back.
    pub cap_hits: u64,
    /// Times the centroid-distance argument fell in the clamped region
    /// (zero-subgradient updates).
    pub clamp_hits: u64,
    /// FNV-1a digest over every sampled real index, in draw order.
    pub batch_digest: u64,
    /// Encoder draw seed used at each iteration (a single entry when the
    /// encoder is frozen).
    pub encoder_draws: Vec<u64>,
    /// Wall-clock duration of the optimization loop, in seconds. Excluded
    /// from serialized records to keep them byte-reproducible.
    pub wall_secs: f64,
}

impl RunRecord {
    /// Loss series as CSV: `iteration, loss_class_<c>..., total`, values at
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let classes = self.losses.first().map(|l| l.per_class.len()).unwrap_or(0);
        let mut out = String::from("iteration");
        for c in 0..classes {
            out.push_str(&format!(",loss_class_{c}"));
        }
        out.push_str(",total\n");
        for row in &self.losses {
            out.push_str(&row.iteration.to_string());
            for v in &row.per_class {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push_str(&format!(",{:.16e}\n", row.total));
        }
        out
    }

    /// Evaluation checkpoints as CSV: `iteration, accuracy`.
    pub fn evals_csv(&self) -> String {
        let mut out = String::from("iteration,accuracy\n");
        for e in &self.evals {
            out.push_str(&format!("{},{:.16e}\n", e.iteration, e.accuracy));
        }
        out
    }
}

/// Result of a loss-with-gradient evaluation.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient with respect to the synthetic feature rows.
    pub feature_grad: Array2<f64>,
    /// True when the centroid-distance argument was at or below 1 (the
    /// distance is 0 and the chain takes the zero subgradient).
    pub clamped: bool,
}

fn require_single_class(set: &EmbeddedSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(HddError::InvalidArgument(format!("{what} set is empty")));
    }
    let first = set.labels()[0];
    if set.labels().iter().any(|&l| l != first) {
        return Err(HddError::InvalidArgument(format!(
            "{what} set mixes classes; the centroid loss is per-class"
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(HddError::InvalidArgument(format!(
            "lambda must be finite and positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Centroid-matching loss between two single-class embedded sets:
/// `lambda * d(approx_centroid(real), approx_centroid(syn))`.
pub fn hdd_loss(lambda: f64, real: &EmbeddedSet, syn: &EmbeddedSet) -> Result<f64> {
    check_lambda(lambda)?;
    require_single_class(real, "real")?;
    require_single_class(syn, "synthetic")?;
    if real.curvature() != syn.curvature() {
        return Err(HddError::InvalidArgument(format!(
            "sets have different curvatures ({} vs {})",
            real.curvature().k(),
            syn.curvature().k()
        )));
    }
    let cr = approx_centroid(real, DEFAULT_CENTROID_EPS)?;
    let cs = approx_centroid(syn, DEFAULT_CENTROID_EPS)?;
    let d = crate::lorentz::geodesic_distance(real.curvature(), &cr, &cs)?;
    Ok(lambda * d)
}

/// Embeds feature rows and reduces them to the *unnormalized* centroid
/// state: per-row lift data, the Minkowski mean, and the normalization
/// scalars. Shared by the loss forward and the gradient.
struct CentroidForward {
    /// Per-row feature norms.
    norms: Vec<f64>,
    /// Mean of the lifted points (ambient coordinates).
    zbar: Array1<f64>,
    /// `sqrt(|<zbar,zbar>_L| + eps)`.
    s: f64,
}

fn centroid_forward(curv: &Curvature, features: ArrayView2<f64>) -> Result<CentroidForward> {
    let (b, n) = features.dim();
    if b == 0 || n == 0 {
        return Err(HddError::InvalidArgument(format!(
            "feature matrix must be nonempty, got {b}x{n}"
        )));
    }
    let kappa = curv.kappa();
    let mut zbar = Array1::zeros(n + 1);
    let mut norms = Vec::with_capacity(b);
    for row in features.rows() {
        let mut sq = 0.0;
        for &f in row {
            if !f.is_finite() {
                return Err(HddError::InvalidArgument("non-finite feature value".into()));
            }
            sq += f * f;
        }
        let norm = sq.sqrt();
        let r = kappa * norm;
        let a = r.cosh();
        if !a.is_finite() {
            return Err(HddError::Numerical(format!(
                "feature norm {norm} overflows the exponential lift"
            )));
        }
        let bfac = sinhc(r);
        zbar[0] += a / kappa;
        for (i, &f) in row.iter().enumerate() {
            zbar[i + 1] += bfac * f;
        }
        norms.push(norm);
    }
    zbar.mapv_inplace(|x| x / b as f64);
    let q = crate::lorentz::minkowski_inner_unchecked(zbar.view(), zbar.view());
    let s = (q.abs() + DEFAULT_CENTROID_EPS).sqrt();
    Ok(CentroidForward { norms, zbar, s })
}

/// Loss and analytic feature gradient of the centroid-matching objective.
///
/// The real side enters through its fixed centroid; the synthetic side is
/// given as raw feature rows so the gradient can flow back to them. Writing
/// `u = K <c_real, c_syn>_L` (clamped at 1), the chain is
///
/// ```text
///   L        = lambda * arcosh(u) / kappa
///   dL/du    = lambda / (kappa * sqrt(u^2 - 1))
///   du/dc_s  = K * G c_real                          (G = diag(-1, 1, ..., 1))
///   c_s      = z_bar / (kappa * s),  s = sqrt(|q| + eps),  q = z_bar^T G z_bar
///   dL/dz_bar = h / (kappa s) + (h . z_bar) G z_bar / (kappa s^3),  h = dL/du * K * G c_real
///   dL/dz_j  = dL/dz_bar / B
///   dL/df_j  = kappa w_t sinhc(r_j) f_j + (w_s . f_j) cb(r_j) f_j + sinhc(r_j) w_s
/// ```
///
/// with `r_j = kappa ||f_j||`, `w = dL/dz_j` split into time/spatial parts,
/// and `cb(r) = kappa^2 (cosh r - sinhc r) / r^2` (series `kappa^2 (1/3 +
/// r^2/30)` below `r = 1e-4`). In the clamped region (`u <= 1`, coincident
/// centroids) the distance has no linearization and the zero subgradient is
/// returned with `clamped` set.
pub fn hdd_loss_grad(
    curv: &Curvature,
    lambda: f64,
    real: &EmbeddedSet,
    syn_features: ArrayView2<f64>,
) -> Result<LossGrad> {
    check_lambda(lambda)?;
    require_single_class(real, "real")?;
    if real.curvature() != curv {
        return Err(HddError::InvalidArgument(format!(
            "real set curvature {} does not match the requested {}",
            real.curvature().k(),
            curv.k()
        )));
    }
    let (b, n) = syn_features.dim();
    let ambient = real.ambient_dim().expect("non-empty set has a dimension");
    if n + 1 != ambient {
        return Err(HddError::DimensionMismatch(format!(
            "synthetic features of width {n} against ambient dimension {ambient}"
        )));
    }
    let kappa = curv.kappa();
    let cr = approx_centroid(real, DEFAULT_CENTROID_EPS)?;
    let fwd = centroid_forward(curv, syn_features)?;
    // c_syn and the distance argument.
    let cs = fwd.zbar.mapv(|x| x / (kappa * fwd.s));
    let u = curv.k() * crate::lorentz::minkowski_inner_unchecked(cr.coords().view(), cs.view());
    if u <= 1.0 {
        return Ok(LossGrad {
            loss: 0.0,
            feature_grad: Array2::zeros((b, n)),
            clamped: true,
        });
    }
    let loss = lambda * arcosh(u) / kappa;
    // dL/du, with sqrt((u-1)(u+1)) for accuracy near the clamp boundary.
    let dl_du = lambda / (kappa * ((u - 1.0) * (u + 1.0)).sqrt());
    // h = dL/du * K * G c_real.
    let mut h = Array1::zeros(ambient);
    h[0] = -dl_du * curv.k() * cr.coords()[0];
    for i in 1..ambient {
        h[i] = dl_du * curv.k() * cr.coords()[i];
    }
    // dL/dz_bar = h/(kappa s) + (h . z_bar) G z_bar / (kappa s^3).
    let h_dot_zbar = h.dot(&fwd.zbar);
    let s3 = fwd.s * fwd.s * fwd.s;
    let mut w = Array1::zeros(ambient);
    for i in 0..ambient {
        let g_zbar = if i == 0 { -fwd.zbar[0] } else { fwd.zbar[i] };
        w[i] = h[i] / (kappa * fwd.s) + h_dot_zbar * g_zbar / (kappa * s3);
    }
    // Mean: every row shares dL/dz = w / B.
    w.mapv_inplace(|x| x / b as f64);
    let (wt, ws) = (w[0], w.slice(ndarray::s![1..]));
    // Pull through the exponential lift row by row.
    let mut grad = Array2::zeros((b, n));
    for (j, row) in syn_features.rows().into_iter().enumerate() {
        let r = kappa * fwd.norms[j];
        let bfac = sinhc(r);
        let cb = if r < 1e-4 {
            kappa * kappa * (1.0 / 3.0 + r * r / 30.0)
        } else {
            kappa * kappa * (r.cosh() - bfac) / (r * r)
        };
        let ws_dot_f: f64 = ws.iter().zip(row).map(|(a, b)| a * b).sum();
        let radial = kappa * wt * bfac + ws_dot_f * cb;
        for (i, &f) in row.iter().enumerate() {
            grad[[j, i]] = radial * f + bfac * ws[i];
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(HddError::Numerical("non-finite centroid loss gradient".into()));
    }
    Ok(LossGrad { loss, feature_grad: grad, clamped: false })
}

/// Loss value matching [`hdd_loss_grad`]'s internal forward pass (used by
/// finite-difference verification so the derivative and the function agree
/// exactly up to the clamped/unclamped boundary).
pub fn hdd_loss_from_features(
    curv: &Curvature,
    lambda: f64,
    real: &EmbeddedSet,
    syn_features: ArrayView2<f64>,
) -> Result<f64> {
    check_lambda(lambda)?;
    require_single_class(real, "real")?;
    let ambient = real.ambient_dim().expect("non-empty set has a dimension");
    if syn_features.ncols() + 1 != ambient {
        return Err(HddError::DimensionMismatch(format!(
            "synthetic features of width {} against ambient dimension {ambient}",
            syn_features.ncols()
        )));
    }
    let kappa = curv.kappa();
    let cr = approx_centroid(real, DEFAULT_CENTROID_EPS)?;
    let fwd = centroid_forward(curv, syn_features)?;
    let cs = fwd.zbar.mapv(|x| x / (kappa * fwd.s));
    let u = (curv.k() * crate::lorentz::minkowski_inner_unchecked(cr.coords().view(), cs.view()))
        .max(1.0);
    Ok(lambda * arcosh(u) / kappa)
}

/// Squared Euclidean distance between the feature means of two sets:
/// `|| mean(real) - mean(syn) ||^2`.
pub fn euclidean_mmd_loss(real: ArrayView2<f64>, syn: ArrayView2<f64>) -> Result<f64> {
    Ok(mmd_loss_grad(real, syn)?.loss)
}

/// Loss and synthetic-feature gradient of the Euclidean baseline. The
/// gradient of every synthetic row is `-2 (mean_r - mean_s) / B_s`.
pub fn mmd_loss_grad(real: ArrayView2<f64>, syn: ArrayView2<f64>) -> Result<LossGrad> {
    if real.ncols() != syn.ncols() {
        return Err(HddError::DimensionMismatch(format!(
            "feature widths {} and {}",
            real.ncols(),
            syn.ncols()
        )));
    }
    if real.nrows() == 0 || syn.nrows() == 0 {
        return Err(HddError::InvalidArgument("mean-matching needs nonempty sets".into()));
    }
    let mr = real.mean_axis(Axis(0)).expect("nonempty");
    let ms = syn.mean_axis(Axis(0)).expect("nonempty");
    let diff = &mr - &ms;
    let loss = diff.iter().map(|d| d * d).sum::<f64>();
    let bs = syn.nrows() as f64;
    let row = diff.mapv(|d| -2.0 * d / bs);
    let mut grad = Array2::zeros((syn.nrows(), syn.ncols()));
    for mut g in grad.rows_mut() {
        g.assign(&row);
    }
    Ok(LossGrad { loss, feature_grad: grad, clamped: false })
}

/// Builds the initial synthetic set.
///
/// `RandomReal` draws `ipc` *distinct* real images per class (a deterministic
/// shuffle of the class indices, first `ipc` taken); `Noise` fills with
/// uniform [0, 1] values. Both derive their randomness from `seed` alone.
pub fn init_synthetic(
    real: &LabeledDataset,
    ipc: usize,
    mode: InitMode,
    seed: u64,
) -> Result<SyntheticDataset> {
    if ipc == 0 {
        return Err(HddError::InvalidArgument("ipc must be positive".into()));
    }
    let (c, h, w) = real.shape();
    let k = real.num_classes();
    let mut images = Array4::zeros((k * ipc, c, h, w));
    match mode {
        InitMode::RandomReal => {
            if ipc > real.min_class_size() {
                return Err(HddError::InvalidArgument(format!(
                    "ipc {ipc} exceeds the smallest class ({} samples)",
                    real.min_class_size()
                )));
            }
            for class in 0..k {
                let mut idx = real.class_indices(class);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-real", class as u64));
                idx.shuffle(&mut rng);
                for (row, &src) in idx[..ipc].iter().enumerate() {
                    images
                        .index_axis_mut(Axis(0), class * ipc + row)
                        .assign(&real.images().index_axis(Axis(0), src));
                }
            }
        }
        InitMode::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-noise", 0));
            for v in images.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
        }
    }
    Ok(SyntheticDataset { images, ipc, num_classes: k })
}

/// Per-class batch sampler: shuffles the class's indices, hands out
/// consecutive slices, and reshuffles when fewer than a full batch remains
/// (so a batch never repeats a sample).
struct ClassSampler {
    indices: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ClassSampler {
    fn new(mut indices: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        ClassSampler { indices, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> &[usize] {
        let size = size.min(self.indices.len());
        if self.pos + size > self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = &self.indices[self.pos..self.pos + size];
        self.pos += size;
        out
    }
}

/// Encodes a batch and caps feature norms — the feature stage of the
/// embedding pipeline, shared by the distillation loop, pruning, and chart
/// export. Returns the features and the number of rows the cap touched.
pub fn encode_capped(
    encoder: &EncoderInstance,
    images: ndarray::ArrayView4<f64>,
    cap: f64,
) -> Result<(Array2<f64>, u64)> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(HddError::InvalidArgument(format!(
            "feature norm cap must be finite and positive, got {cap}"
        )));
    }
    let mut feats = encode(encoder, images)?;
    let hits = cap_features(&mut feats, cap);
    Ok((feats, hits))
}

/// Caps feature rows at `cap` Euclidean norm, returning how many rows were
/// projected. The exact projection Jacobian is applied by
/// [`cap_backward`].
fn cap_features(features: &mut Array2<f64>, cap: f64) -> u64 {
    let mut hits = 0;
    for mut row in features.rows_mut() {
        let norm = row.iter().map(|f| f * f).sum::<f64>().sqrt();
        if norm > cap {
            let scale = cap / norm;
            row.mapv_inplace(|f| f * scale);
            hits += 1;
        }
    }
    hits
}

/// Pulls a gradient on capped features back to the raw features. For a
/// projected row (`||f|| > cap`), the Jacobian of `f -> cap f / ||f||` is
/// `(cap/||f||)(I - f_hat f_hat^T)`; untouched rows pass through.
fn cap_backward(grad: &mut Array2<f64>, raw_features: ArrayView2<f64>, cap: f64) {
    for (mut g, f) in grad.rows_mut().into_iter().zip(raw_features.rows()) {
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > cap {
            let scale = cap / norm;
            let fdotg: f64 = f.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let coeff = fdotg / (norm * norm);
            for (gi, &fi) in g.iter_mut().zip(f.iter()) {
                *gi = scale * (*gi - coeff * fi);
            }
        }
    }
}

/// Runs the distillation loop. See [`distill_monitored`] for the variant
/// with periodic evaluation.
pub fn distill(real: &LabeledDataset, cfg: &DistillConfig) -> Result<(SyntheticDataset, RunRecord)> {
    distill_monitored(real, cfg, None)
}

/// Distillation with optional periodic evaluation against a held-out set:
/// when `eval` is given and `cfg.eval_every > 0`, the synthetic set is scored
/// after every `eval_every`-th iteration (and after the last).
///
/// One iteration: (re)draw the encoder if configured; then for each class in
/// ascending order, sample a real batch, encode both sides, cap feature
/// norms, evaluate the configured loss and its feature gradient, and pull it
/// to pixel space; finally apply one SGD step over all classes at once and
/// clamp pixels to [0, 1]. A non-finite total loss aborts the run.
pub fn distill_monitored(
    real: &LabeledDataset,
    cfg: &DistillConfig,
    eval: Option<(&LabeledDataset, u64)>,
) -> Result<(SyntheticDataset, RunRecord)> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let curv = cfg.curvature()?;
    let spec = cfg.encoder_spec(real.shape())?;
    let mut syn = init_synthetic(real, cfg.ipc, cfg.init, cfg.seed)?;
    let k = real.num_classes();
    let mut samplers: Vec<ClassSampler> = (0..k)
        .map(|c| {
            ClassSampler::new(real.class_indices(c), derive_seed(cfg.seed, "batch", c as u64))
        })
        .collect();
    let mut record = RunRecord::default();
    let mut digest = Fnv1a::new();
    // Encoder draws are keyed by the iteration counter against the encoder
    // seed alone, so the weight stream is orthogonal to batch sampling.
    let fixed_encoder = if cfg.resample_encoder {
        None
    } else {
        record.encoder_draws.push(0);
        Some(sample_encoder(&spec, 0)?)
    };
    for iter in 0..cfg.iterations {
        let encoder: EncoderInstance = match &fixed_encoder {
            Some(e) => e.clone(),
            None => {
                record.encoder_draws.push(iter as u64);
                sample_encoder(&spec, iter as u64)?
            }
        };
        let mut per_class = Vec::with_capacity(k);
        let mut grads: Array4<f64> = Array4::zeros(syn.images.raw_dim());
        for class in 0..k {
            let batch_idx = samplers[class].next_batch(cfg.batch_real).to_vec();
            for &i in &batch_idx {
                digest.update(&(i as u64).to_le_bytes());
            }
            let real_batch = real.gather(&batch_idx);
            let (real_feats, real_hits) =
                encode_capped(&encoder, real_batch.view(), cfg.feature_norm_cap)?;
            record.cap_hits += real_hits;
            let syn_block = syn.class_block(class);
            let raw_syn_feats = encode(&encoder, syn_block)?;
            let mut syn_feats = raw_syn_feats.clone();
            record.cap_hits += cap_features(&mut syn_feats, cfg.feature_norm_cap);
            let mut lg = match cfg.loss_kind {
                LossKind::Hdd => {
                    let labels = vec![class; real_feats.nrows()];
                    let real_set = EmbeddedSet::from_features(curv, real_feats.view(), &labels)?;
                    hdd_loss_grad(&curv, cfg.lambda, &real_set, syn_feats.view())?
                }
                LossKind::EuclideanMmd => mmd_loss_grad(real_feats.view(), syn_feats.view())?,
            };
            if lg.clamped {
                record.clamp_hits += 1;
            }
            cap_backward(&mut lg.feature_grad, raw_syn_feats.view(), cfg.feature_norm_cap);
            let pixel_grad = encode_vjp(&encoder, syn_block, lg.feature_grad.view())?;
            grads
                .slice_mut(ndarray::s![class * cfg.ipc..(class + 1) * cfg.ipc, .., .., ..])
                .assign(&pixel_grad);
            per_class.push(lg.loss);
        }
        let total: f64 = per_class.iter().sum();
        if !total.is_finite() {
            return Err(HddError::Numerical(format!(
                "loss became non-finite at iteration {iter}; aborting (see the diagnostic log)"
            )));
        }
        record.losses.push(IterationLoss { iteration: iter, per_class, total });
        // One SGD step over every class, then clamp to the pixel range.
        ndarray::Zip::from(&mut syn.images).and(&grads).for_each(|p, &g| {
            *p = (*p - cfg.lr * g).clamp(0.0, 1.0);
        });
        if cfg.eval_every > 0 {
            if let Some((test, eval_seed)) = eval {
                let done = iter + 1;
                if done % cfg.eval_every == 0 || done == cfg.iterations {
                    let acc = evaluate(&syn, test, eval_seed)?;
                    record.evals.push(EvalPoint { iteration: done, accuracy: acc });
                }
            }
        }
    }
    record.batch_digest = digest.finish();
    record.wall_secs = start.elapsed().as_secs_f64();
    Ok((syn, record))
}

/// Width of the frozen evaluation encoder's convolution blocks.
const EVAL_CONV_WIDTH: usize = 32;
/// Full-batch gradient-descent epochs of the evaluation head.
const EVAL_EPOCHS: usize = 300;
/// Learning rate of the evaluation head.
const EVAL_LR: f64 = 0.2;
/// Variance floor when standardizing evaluation features.
const EVAL_STD_FLOOR: f64 = 1e-8;

/// Scores a synthetic set: encodes both it and the held-out set with a
/// frozen random convnet3 keyed by `eval_seed`, standardizes features with
/// the training statistics, trains a softmax head from zero initialization
/// by full-batch gradient descent (fixed epoch and learning-rate constants),
/// and returns the held-out accuracy. Fully deterministic given its inputs.
pub fn evaluate(syn: &SyntheticDataset, test: &LabeledDataset, eval_seed: u64) -> Result<f64> {
    if syn.is_empty() {
        return Err(HddError::InvalidArgument("cannot evaluate an empty synthetic set".into()));
    }
    let (c, h, w) = {
        let (_, c, h, w) = syn.images().dim();
        (c, h, w)
    };
    if test.shape() != (c, h, w) {
        return Err(HddError::DimensionMismatch(format!(
            "synthetic shape {c}x{h}x{w} vs held-out {:?}",
            test.shape()
        )));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(HddError::InvalidArgument(format!(
            "evaluation encoder needs H and W divisible by 8, got {h}x{w}"
        )));
    }
    let k = syn.num_classes().max(test.num_classes());
    let spec = EncoderSpec {
        kind: EncoderKind::Convnet3,
        channels: c,
        height: h,
        width: w,
        feature_dim: EVAL_CONV_WIDTH * (h / 8) * (w / 8),
        seed: eval_seed,
    };
    let enc = sample_encoder(&spec, 0)?;
    let train = encode(&enc, syn.images().view())?;
    let held = encode(&enc, test.images().view())?;
    // Standardize with training statistics.
    let d = train.ncols();
    let n_train = train.nrows();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for row in train.rows() {
        for (i, &v) in row.iter().enumerate() {
            mean[i] += v;
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    for row in train.rows() {
        for (i, &v) in row.iter().enumerate() {
            std[i] += (v - mean[i]) * (v - mean[i]);
        }
    }
    for s in &mut std {
        *s = (*s / n_train as f64).sqrt().max(EVAL_STD_FLOOR);
    }
    let norm = |m: &Array2<f64>| {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[i]) / std[i];
            }
        }
        out
    };
    let x_train = norm(&train);
    let x_test = norm(&held);
    let y_train = syn.labels();
    // Softmax regression from zero init by full-batch gradient descent on the
    // mean cross-entropy.
    let mut wmat: Array2<f64> = Array2::zeros((k, d));
    let mut bias: Array1<f64> = Array1::zeros(k);
    for _ in 0..EVAL_EPOCHS {
        // P = softmax(X W^T + b) row-wise, then P - Y in place.
        let mut p = x_train.dot(&wmat.t());
        for (mut row, &label) in p.rows_mut().into_iter().zip(&y_train) {
            for (j, v) in row.iter_mut().enumerate() {
                *v += bias[j];
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            row[label] -= 1.0;
        }
        p.mapv_inplace(|v| v / n_train as f64);
        let gw = p.t().dot(&x_train);
        let gb = p.sum_axis(Axis(0));
        wmat.scaled_add(-EVAL_LR, &gw);
        bias.scaled_add(-EVAL_LR, &gb);
    }
    // Held-out accuracy; argmax ties resolve to the lowest class index.
    let scores = x_test.dot(&wmat.t());
    let mut correct = 0usize;
    for (row, &label) in scores.rows().into_iter().zip(test.labels()) {
        let mut best = 0usize;
        for j in 1..k {
            if row[j] + bias[j] > row[best] + bias[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

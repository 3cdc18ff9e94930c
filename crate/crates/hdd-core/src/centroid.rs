//! Hyperbolic centroids and hierarchy weights.
//!
//! A class of embedded points is summarized two ways:
//!
//! * the exact Fréchet mean — the minimizer of the sum of squared geodesic
//!   distances, found by Riemannian gradient descent, and
//! * a closed-form approximate centroid — the Minkowski average of the points
//!   rescaled back onto the hyperboloid — which is differentiable in closed
//!   form and therefore the one the distillation gradient flows through.
//!
//! The module also provides the hierarchy weight `w(d) = kappa d / sinh(kappa d)`
//! and the gradient-pull factor `f(t) = arcosh(t) / sqrt(t^2 - 1)`; both decay
//! from 1 as points move away from the base point, which is what makes
//! distances to far (deep-hierarchy) points dominate neither the tangent
//! aggregation nor the loss gradient.

use ndarray::{Array1, ArrayView2};

use crate::error::{HddError, Result};
use crate::lorentz::{
    arcosh, base_point, exp_map, lift_feature, minkowski_inner_unchecked, sinhc, Curvature,
    LorentzPoint, TangentVector,
};

/// Default stabilizer added under the square root in the approximate-centroid
/// denominator.
pub const DEFAULT_CENTROID_EPS: f64 = 1e-9;

/// A set of hyperboloid points with integer class labels, all on the same
/// sheet (shared curvature, shared ambient dimension).
#[derive(Debug, Clone)]
pub struct EmbeddedSet {
    points: Vec<LorentzPoint>,
    labels: Vec<usize>,
    curv: Curvature,
}

impl EmbeddedSet {
    /// Validates that every point lies on the hyperboloid of `curv` and that
    /// labels match points one-to-one.
    pub fn new(points: Vec<LorentzPoint>, labels: Vec<usize>, curv: Curvature) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(HddError::DimensionMismatch(format!(
                "{} points with {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = points.first().map(|p| p.coords().len());
        for (i, p) in points.iter().enumerate() {
            if Some(p.coords().len()) != dim {
                return Err(HddError::DimensionMismatch(format!(
                    "point {i} has ambient dimension {}, expected {}",
                    p.coords().len(),
                    dim.unwrap()
                )));
            }
            p.check_on_manifold(&curv).map_err(|e| {
                HddError::Domain(format!("point {i} fails the manifold check: {e}"))
            })?;
        }
        Ok(EmbeddedSet { points, labels, curv })
    }

    /// Embeds Euclidean feature rows: each row `f` maps to
    /// `exp_p0(lift(f))` on the hyperboloid of `curv`.
    pub fn from_features(
        curv: Curvature,
        features: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(HddError::DimensionMismatch(format!(
                "{} feature rows with {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(HddError::InvalidArgument("zero-dimensional features".into()));
        }
        let p0 = base_point(&curv, features.ncols());
        let mut points = Vec::with_capacity(features.nrows());
        for row in features.rows() {
            let v = lift_feature(&curv, row)?;
            points.push(exp_map(&curv, &p0, &v)?);
        }
        Ok(EmbeddedSet { points, labels: labels.to_vec(), curv })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LorentzPoint] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn curvature(&self) -> &Curvature {
        &self.curv
    }

    /// Ambient dimension of the points (`None` for an empty set).
    pub fn ambient_dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.coords().len())
    }
}

/// Step size, iteration budget, and stopping tolerance for the Fréchet-mean
/// solver. `grad_tol` bounds the norm of the full Riemannian gradient
/// `-2 sum_i log_p(z_i)` of the objective.
#[derive(Debug, Clone, Copy)]
pub struct FrechetConfig {
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        FrechetConfig { step: 0.5, max_iters: 1000, grad_tol: 1e-8 }
    }
}

impl FrechetConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(HddError::InvalidArgument(format!(
                "Fréchet step must lie in (0, 1], got {}",
                self.step
            )));
        }
        if self.max_iters == 0 {
            return Err(HddError::InvalidArgument("Fréchet max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(HddError::InvalidArgument(format!(
                "Fréchet grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

/// Sum of squared geodesic distances from `z` to every point of the set:
/// `F(z) = sum_i d(z, z_i)^2`.
pub fn frechet_objective(set: &EmbeddedSet, z: &LorentzPoint) -> Result<f64> {
    if set.is_empty() {
        return Err(HddError::InvalidArgument("Fréchet objective of an empty set".into()));
    }
    z.check_on_manifold(&set.curv)?;
    if z.coords().len() != set.ambient_dim().unwrap() {
        return Err(HddError::DimensionMismatch(format!(
            "query point of ambient dimension {}, set of {}",
            z.coords().len(),
            set.ambient_dim().unwrap()
        )));
    }
    let curv = &set.curv;
    let mut total = 0.0;
    for p in &set.points {
        let arg = curv.k() * minkowski_inner_unchecked(z.coords().view(), p.coords().view());
        let d = arcosh(arg) / curv.kappa();
        total += d * d;
    }
    Ok(total)
}

/// Exact Fréchet (Karcher) mean by Riemannian gradient descent.
///
/// Starting from the approximate centroid, each iteration moves along the
/// negative objective gradient:
///
/// ```text
///   p <- exp_p( (step / N) * sum_i log_p(z_i) )
/// ```
///
/// and stops once `|| -2 sum_i log_p(z_i) || <= grad_tol`. Exhausting the
/// iteration budget reports the last gradient norm in the error.
pub fn frechet_mean(set: &EmbeddedSet, cfg: &FrechetConfig) -> Result<LorentzPoint> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(HddError::InvalidArgument("Fréchet mean of an empty set".into()));
    }
    let curv = set.curv;
    let n = set.len() as f64;
    let dim = set.ambient_dim().unwrap();
    let mut c = approx_centroid(set, DEFAULT_CENTROID_EPS)?;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        // Accumulate sum_i log_c(z_i) without per-point allocation, then
        // project the floating-point drift out of the tangent space once.
        let mut g: Array1<f64> = Array1::zeros(dim);
        for p in &set.points {
            let arg =
                (curv.k() * minkowski_inner_unchecked(c.coords().view(), p.coords().view())).max(1.0);
            let d = arcosh(arg) / curv.kappa();
            if d == 0.0 {
                continue;
            }
            let factor = 1.0 / sinhc(curv.kappa() * d);
            for i in 0..dim {
                g[i] += factor * (p.coords()[i] - arg * c.coords()[i]);
            }
        }
        let drift = curv.k() * minkowski_inner_unchecked(c.coords().view(), g.view());
        for i in 0..dim {
            g[i] -= drift * c.coords()[i];
        }
        let g_sq = minkowski_inner_unchecked(g.view(), g.view()).max(0.0);
        grad_norm = 2.0 * g_sq.sqrt();
        if grad_norm <= cfg.grad_tol {
            return Ok(c);
        }
        let scale = cfg.step / n;
        let update = g.mapv(|x| x * scale);
        let update_norm = g_sq.sqrt() * scale;
        let v = TangentVector::new_unchecked(c.clone(), update, update_norm);
        c = exp_map(&curv, &c, &v)?;
    }
    Err(HddError::Convergence { iters: cfg.max_iters, grad_norm })
}

/// Closed-form approximate centroid: the Minkowski average rescaled onto the
/// hyperboloid,
///
/// ```text
///   c = z_bar / (kappa * sqrt(|<z_bar, z_bar>_L| + eps)),   z_bar = mean_i z_i.
/// ```
///
/// Averages of upper-sheet points are always future-timelike with
/// `|<z_bar,z_bar>_L| >= 1/kappa^2`, so the denominator never degenerates;
/// `eps` guards the boundary of that bound. The result is rescaled exactly
/// onto the sheet (a relative adjustment of order `eps`), and a single point
/// with `eps = 0` is returned unchanged.
pub fn approx_centroid(set: &EmbeddedSet, eps: f64) -> Result<LorentzPoint> {
    if set.is_empty() {
        return Err(HddError::InvalidArgument("approximate centroid of an empty set".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(HddError::InvalidArgument(format!(
            "centroid stabilizer must be finite and nonnegative, got {eps}"
        )));
    }
    if set.len() == 1 && eps == 0.0 {
        return Ok(set.points[0].clone());
    }
    let dim = set.ambient_dim().unwrap();
    let mut zbar: Array1<f64> = Array1::zeros(dim);
    for p in &set.points {
        zbar += p.coords();
    }
    zbar.mapv_inplace(|x| x / set.len() as f64);
    let q = minkowski_inner_unchecked(zbar.view(), zbar.view());
    let denom = set.curv.kappa() * (q.abs() + eps).sqrt();
    let scaled = zbar.mapv(|x| x / denom);
    // The eps stabilizer leaves the result a relative O(eps) inside the
    // sheet; one exact radial rescale restores the constraint.
    crate::lorentz::project_to_hyperboloid(&set.curv, scaled.view())
}

/// Hierarchy weight `w(d) = kappa d / sinh(kappa d)` for a geodesic distance
/// `d >= 0` from the base point. Equals 1 at `d = 0`, strictly decreases, and
/// tends to 0 as `d` grows, so deep points contribute with vanishing weight.
pub fn hierarchy_weight(curv: &Curvature, d: f64) -> Result<f64> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(HddError::InvalidArgument(format!(
            "hierarchy weight needs a finite nonnegative distance, got {d}"
        )));
    }
    Ok(1.0 / sinhc(curv.kappa() * d))
}

/// Gradient-pull factor `f(t) = arcosh(t) / sqrt(t^2 - 1)` for `t >= 1`,
/// continuously extended by `f(1) = 1`.
///
/// This is the factor by which the loss gradient through a geodesic distance
/// is attenuated as the distance argument `t = cosh(kappa d)` grows; it obeys
/// the identity `f(cosh(kappa d)) = w(d)`.
pub fn gradient_pull(t: f64) -> Result<f64> {
    if !t.is_finite() || t < 1.0 - 1e-12 {
        return Err(HddError::InvalidArgument(format!(
            "gradient pull is defined for t >= 1, got {t}"
        )));
    }
    let e = t - 1.0;
    if e < 1e-6 {
        // Series around t = 1: f(1 + e) = 1 - e/3 + 2 e^2 / 15 - ...
        return Ok(1.0 - e / 3.0 + 2.0 * e * e / 15.0);
    }
    // sqrt((t-1)(t+1)) avoids the cancellation of t^2 - 1 near 1.
    Ok(arcosh(t) / (e * (t + 1.0)).sqrt())
}

/// Weighted tangent-space aggregation at the base point:
///
/// ```text
///   T = sum_i w(r_i) * u_i
/// ```
///
/// where `r_i = d(p0, z_i)` and `u_i` is the unit tangent at `p0` pointing
/// toward `z_i` (the normalized initial direction of the geodesic). For a
/// hyperboloid point, that unit direction is simply `(0, z_s / ||z_s||)`, the
/// normalized spatial part. Points at the base point itself have no direction
/// and contribute the zero vector.
pub fn tangent_centroid(set: &EmbeddedSet) -> Result<TangentVector> {
    if set.is_empty() {
        return Err(HddError::InvalidArgument("tangent centroid of an empty set".into()));
    }
    let curv = set.curv;
    let dim = set.ambient_dim().unwrap();
    let mut acc: Array1<f64> = Array1::zeros(dim);
    for z in &set.points {
        let spatial_sq: f64 = z.spatial().iter().map(|s| s * s).sum();
        if spatial_sq == 0.0 {
            continue;
        }
        // cosh(kappa r) = kappa z_t exactly, so the radius comes straight
        // from the time coordinate.
        let r = arcosh(curv.kappa() * z.time()) / curv.kappa();
        let w = 1.0 / sinhc(curv.kappa() * r);
        let scale = w / spatial_sq.sqrt();
        for i in 1..dim {
            acc[i] += scale * z.coords()[i];
        }
    }
    let norm = acc.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(TangentVector::new_unchecked(base_point(&curv, dim - 1), acc, norm))
}

/// Euclidean distance between the tangent aggregations of two sets sharing a
/// curvature and an ambient dimension. A cheap first-order proxy for the
/// centroid-matching loss, useful for monitoring.
pub fn approx_loss_tangent(real: &EmbeddedSet, syn: &EmbeddedSet) -> Result<f64> {
    if real.curv != syn.curv {
        return Err(HddError::InvalidArgument(format!(
            "sets have different curvatures ({} vs {})",
            real.curv.k(),
            syn.curv.k()
        )));
    }
    let tr = tangent_centroid(real)?;
    let ts = tangent_centroid(syn)?;
    if tr.components().len() != ts.components().len() {
        return Err(HddError::DimensionMismatch(format!(
            "tangent aggregations of dimensions {} and {}",
            tr.components().len(),
            ts.components().len()
        )));
    }
    let mut sq = 0.0;
    for i in 0..tr.components().len() {
        let diff = tr.components()[i] - ts.components()[i];
        sq += diff * diff;
    }
    Ok(sq.sqrt())
}

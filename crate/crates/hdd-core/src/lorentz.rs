//! Lorentz (hyperboloid) model of hyperbolic space.
//!
//! Points live on the upper sheet of a two-sheeted hyperboloid embedded in
//! Minkowski space R^{1,n}. With curvature K < 0 and kappa = sqrt(-K), the
//! manifold is
//!
//! ```text
//!   H^n_K = { x in R^{n+1} : <x,x>_L = 1/K,  x_t > 0 }
//! ```
//!
//! where the Minkowski inner product of x = (x_t, x_s) and y = (y_t, y_s) is
//!
//! ```text
//!   <x,y>_L = -x_t * y_t + x_s . y_s
//! ```
//!
//! The first coordinate is the "time" component; the remaining n are
//! "spatial". Geodesic distance, exponential/logarithmic maps, and the
//! bijection with the Poincare ball are all expressed in closed form below.
//! Every map that returns a manifold point rescales its result back onto the
//! constraint surface, so downstream code can rely on `<x,x>_L = 1/K` holding
//! to tight tolerance even after long chains of operations.

use ndarray::{Array1, ArrayView1};

use crate::error::{HddError, Result};

/// Tolerance for the on-manifold check `|<x,x>_L - 1/K| <= tol * max(1, |1/K|)`.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;
/// Tolerance for the tangency check `|<x,v>_L| <= tol` when constructing or
/// consuming tangent vectors.
pub const TANGENT_TOL: f64 = 1e-9;
/// Distance arguments below `1 - DIST_CLAMP_WARN` are still clamped to the
/// valid arcosh domain, but indicate genuinely inconsistent inputs, so a
/// diagnostic is logged.
pub const DIST_CLAMP_WARN: f64 = 1e-7;
/// Tangent norms below this threshold take the series/exact branch of the
/// exponential map.
const ZERO_NORM_EPS: f64 = 1e-12;
/// Poincare-ball points must satisfy `||p|| < 1 - POINCARE_BOUNDARY_EPS` to be
/// mapped back to the hyperboloid.
const POINCARE_BOUNDARY_EPS: f64 = 1e-12;

/// `sinh(x)/x`, extended continuously through `x = 0` where it equals 1.
///
/// The direct quotient is well conditioned for all nonzero `x`; the Taylor
/// branch `1 + x^2/6 + x^4/120` only avoids the 0/0 indeterminate form and is
/// accurate to full precision for `|x| < 1e-4`.
pub fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// `arcosh(t)` for `t >= 1`, computed as `2 * asinh(sqrt((t-1)/2))`.
///
/// The identity avoids the catastrophic cancellation of `ln(t + sqrt(t^2-1))`
/// near `t = 1`: accuracy is then limited only by how precisely `t - 1` is
/// known. Inputs fractionally below 1 (floating-point noise) are treated as 1.
pub fn arcosh(t: f64) -> f64 {
    2.0 * (((t - 1.0) * 0.5).max(0.0)).sqrt().asinh()
}

/// Negative curvature of a hyperbolic space, with its derived quantities.
///
/// Stores `K < 0` together with `kappa = sqrt(-K)` and the curvature radius
/// `1/kappa` so hot paths never recompute square roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    k: f64,
    kappa: f64,
    radius: f64,
}

impl Curvature {
    /// Builds from the curvature value itself; `k` must be finite and `< 0`.
    pub fn from_k(k: f64) -> Result<Self> {
        if !k.is_finite() || k >= 0.0 {
            return Err(HddError::InvalidArgument(format!(
                "curvature must be finite and negative, got {k}"
            )));
        }
        let kappa = (-k).sqrt();
        Ok(Curvature { k, kappa, radius: 1.0 / kappa })
    }

    /// Builds from the magnitude `|K|`; must be finite and `> 0`.
    pub fn from_magnitude(magnitude: f64) -> Result<Self> {
        if !magnitude.is_finite() || magnitude <= 0.0 {
            return Err(HddError::InvalidArgument(format!(
                "curvature magnitude must be finite and positive, got {magnitude}"
            )));
        }
        Self::from_k(-magnitude)
    }

    /// The curvature `K < 0`.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// `kappa = sqrt(-K)`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Curvature radius `1/kappa`; also the time coordinate of the base point.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// On-manifold tolerance scaled to this curvature.
    fn manifold_tol(&self) -> f64 {
        ON_MANIFOLD_TOL * (1.0f64).max((1.0 / self.k).abs())
    }
}

/// Minkowski inner product `<x,y>_L = -x_t y_t + x_s . y_s` of two ambient
/// vectors (time coordinate first). Errors if the lengths differ or the
/// ambient dimension is below 2.
pub fn minkowski_inner(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HddError::DimensionMismatch(format!(
            "minkowski inner product of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(HddError::InvalidArgument(format!(
            "ambient dimension must be at least 2, got {}",
            x.len()
        )));
    }
    Ok(minkowski_inner_unchecked(x, y))
}

/// Inner product without shape validation, for internal hot paths.
pub(crate) fn minkowski_inner_unchecked(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let mut spatial = 0.0;
    for i in 1..x.len() {
        spatial += x[i] * y[i];
    }
    spatial - x[0] * y[0]
}

/// A point on the upper hyperboloid sheet.
///
/// Coordinates are ambient: index 0 is the time component, indices `1..` the
/// spatial ones. The validating constructor enforces the sheet constraint, so
/// holding a `LorentzPoint` certifies `<x,x>_L = 1/K` (for the curvature it
/// was built against) and `x_t > 0`. Operations taking points re-check the
/// constraint against the curvature they are called with, which also catches
/// points constructed for a different curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Array1<f64>,
}

impl LorentzPoint {
    /// Validates and wraps ambient coordinates.
    pub fn new(coords: Array1<f64>, curv: &Curvature) -> Result<Self> {
        let p = LorentzPoint { coords };
        p.check_on_manifold(curv)?;
        Ok(p)
    }

    /// Wraps coordinates known-by-construction to satisfy the constraint.
    pub(crate) fn new_unchecked(coords: Array1<f64>) -> Self {
        LorentzPoint { coords }
    }

    /// Full ambient coordinate vector.
    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    /// Time component `x_t`.
    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    /// Spatial components `x_s` (length `spatial_dim`).
    pub fn spatial(&self) -> ArrayView1<'_, f64> {
        self.coords.slice(ndarray::s![1..])
    }

    /// Number of spatial coordinates `n` (ambient dimension is `n + 1`).
    pub fn spatial_dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// Verifies `<x,x>_L = 1/K` within tolerance and `x_t > 0`.
    pub(crate) fn check_on_manifold(&self, curv: &Curvature) -> Result<()> {
        if self.coords.len() < 2 {
            return Err(HddError::InvalidArgument(format!(
                "hyperboloid points need at least 2 ambient coordinates, got {}",
                self.coords.len()
            )));
        }
        if self.coords.iter().any(|c| !c.is_finite()) {
            return Err(HddError::Domain("non-finite coordinate in hyperboloid point".into()));
        }
        if self.coords[0] <= 0.0 {
            return Err(HddError::Domain(format!(
                "point lies on the lower sheet (time component {} <= 0)",
                self.coords[0]
            )));
        }
        let q = minkowski_inner_unchecked(self.coords.view(), self.coords.view());
        let target = 1.0 / curv.k();
        if (q - target).abs() > curv.manifold_tol() {
            return Err(HddError::Domain(format!(
                "point is off the hyperboloid: <x,x>_L = {q:.12e}, expected {target:.12e}"
            )));
        }
        Ok(())
    }
}

/// A tangent vector `v` at a base point `x`, satisfying `<x,v>_L = 0`.
///
/// Tangent vectors on this manifold are spacelike, so the cached Riemannian
/// norm `sqrt(<v,v>_L)` is real; it equals the geodesic distance covered by
/// the unit-time exponential map.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: LorentzPoint,
    components: Array1<f64>,
    norm: f64,
}

impl TangentVector {
    /// Validates tangency and spacelikeness, caching the norm.
    pub fn new(base: LorentzPoint, components: Array1<f64>) -> Result<Self> {
        if components.len() != base.coords().len() {
            return Err(HddError::DimensionMismatch(format!(
                "tangent components have length {}, base point {}",
                components.len(),
                base.coords().len()
            )));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(HddError::Domain("non-finite component in tangent vector".into()));
        }
        let pairing = minkowski_inner_unchecked(base.coords().view(), components.view());
        if pairing.abs() > TANGENT_TOL {
            return Err(HddError::Domain(format!(
                "vector is not tangent at its base point: <x,v>_L = {pairing:.6e}"
            )));
        }
        let sq = minkowski_inner_unchecked(components.view(), components.view());
        // A true tangent vector is spacelike; tiny negative squares are
        // floating-point residue of the tangency projection.
        if sq < -TANGENT_TOL {
            return Err(HddError::Domain(format!(
                "tangent vector has timelike square norm {sq:.6e}"
            )));
        }
        Ok(TangentVector { base, components, norm: sq.max(0.0).sqrt() })
    }

    /// Wraps components known to be tangent, with a precomputed norm.
    pub(crate) fn new_unchecked(base: LorentzPoint, components: Array1<f64>, norm: f64) -> Self {
        TangentVector { base, components, norm }
    }

    /// The point this vector is tangent at.
    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    /// Ambient components of the vector.
    pub fn components(&self) -> &Array1<f64> {
        &self.components
    }

    /// Cached Riemannian norm `sqrt(<v,v>_L)`.
    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// A point of the open unit Poincare ball, `||p|| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Array1<f64>,
}

impl PoincarePoint {
    /// Validates `||p|| < 1` and wraps.
    pub fn new(coords: Array1<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(HddError::InvalidArgument("empty Poincare coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(HddError::Domain("non-finite coordinate in Poincare point".into()));
        }
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm >= 1.0 {
            return Err(HddError::Domain(format!(
                "Poincare point must lie strictly inside the unit ball, got norm {norm}"
            )));
        }
        Ok(PoincarePoint { coords })
    }

    /// Ball coordinates (spatial only; no time component).
    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    /// Euclidean norm; always `< 1`.
    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// The base point `p0 = (1/kappa, 0, ..., 0)` with `spatial_dim` spatial
/// zeros. It is the image of the Euclidean origin under feature lifting and
/// the center of the Poincare ball.
pub fn base_point(curv: &Curvature, spatial_dim: usize) -> LorentzPoint {
    let mut coords = Array1::zeros(spatial_dim + 1);
    coords[0] = curv.radius();
    LorentzPoint::new_unchecked(coords)
}

/// Geodesic distance `d(m, n) = (1/kappa) * arcosh(K * <m,n>_L)`.
///
/// For points on the upper sheet the product `K * <m,n>_L` is `>= 1` up to
/// rounding; values fractionally below 1 are clamped to 1 (distance 0). A
/// clamp deeper than [`DIST_CLAMP_WARN`] means the inputs were not actually on
/// a common hyperboloid and is reported through a log diagnostic.
pub fn geodesic_distance(curv: &Curvature, m: &LorentzPoint, n: &LorentzPoint) -> Result<f64> {
    m.check_on_manifold(curv)?;
    n.check_on_manifold(curv)?;
    if m.coords().len() != n.coords().len() {
        return Err(HddError::DimensionMismatch(format!(
            "distance between points of ambient dimensions {} and {}",
            m.coords().len(),
            n.coords().len()
        )));
    }
    // Identical coordinates are exactly distance 0. Going through the inner
    // product instead would surface the chart's noise floor (the product of
    // large coordinates cancels to 1/K only up to rounding).
    if m.coords() == n.coords() {
        return Ok(0.0);
    }
    let arg = curv.k() * minkowski_inner_unchecked(m.coords().view(), n.coords().view());
    if arg < 1.0 - DIST_CLAMP_WARN {
        log::warn!(
            "geodesic distance argument {arg:.12} clamped to 1 (deficit {:.3e} exceeds {DIST_CLAMP_WARN:.0e})",
            1.0 - arg
        );
    }
    Ok(arcosh(arg) / curv.kappa())
}

/// Exponential map: walks from `x` along the geodesic with initial velocity
/// `v` for unit time.
///
/// ```text
///   exp_x(v) = cosh(kappa ||v||) x + sinh(kappa ||v||) / (kappa ||v||) v
/// ```
///
/// A zero vector returns `x` exactly. The result is rescaled onto the
/// constraint surface to absorb rounding, so the on-manifold invariant holds
/// for any representable radius.
pub fn exp_map(curv: &Curvature, x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    x.check_on_manifold(curv)?;
    if v.components().len() != x.coords().len() {
        return Err(HddError::DimensionMismatch(format!(
            "tangent components of length {} at point of ambient dimension {}",
            v.components().len(),
            x.coords().len()
        )));
    }
    let pairing = minkowski_inner_unchecked(x.coords().view(), v.components().view());
    if pairing.abs() > TANGENT_TOL {
        return Err(HddError::Domain(format!(
            "exp_map requires a tangent vector: <x,v>_L = {pairing:.6e}"
        )));
    }
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(x.clone());
    }
    let r = curv.kappa() * norm;
    let (cosh_r, sinhc_r) = if r < ZERO_NORM_EPS {
        (1.0, 1.0)
    } else {
        (r.cosh(), sinhc(r))
    };
    if !cosh_r.is_finite() {
        return Err(HddError::Numerical(format!(
            "exp_map overflow: kappa * ||v|| = {r:.6e} is beyond representable range"
        )));
    }
    let mut out = Array1::zeros(x.coords().len());
    for i in 0..out.len() {
        out[i] = cosh_r * x.coords()[i] + sinhc_r * v.components()[i];
    }
    renormalize_onto_sheet(curv, out)
}

/// Logarithmic map: the tangent vector at `x` whose exponential reaches `y`.
///
/// With `c = cosh(kappa d)` for `d = d(x, y)`, the closed form is
///
/// ```text
///   log_x(y) = (kappa d / sinh(kappa d)) * (y - c x)
/// ```
///
/// which is tangent at `x` with Riemannian norm exactly `d`. Coincident
/// points give the zero vector. The residual of the analytic tangency
/// identity is projected out so the returned vector passes the strict
/// tangency check at any radius.
pub fn log_map(curv: &Curvature, x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    x.check_on_manifold(curv)?;
    y.check_on_manifold(curv)?;
    if x.coords().len() != y.coords().len() {
        return Err(HddError::DimensionMismatch(format!(
            "points of ambient dimensions {} and {}",
            x.coords().len(),
            y.coords().len()
        )));
    }
    let n = x.coords().len();
    if x.coords() == y.coords() {
        return Ok(TangentVector::new_unchecked(x.clone(), Array1::zeros(n), 0.0));
    }
    // cosh(kappa d) equals the clamped distance argument exactly, so reuse it
    // instead of recomputing cosh(arcosh(...)).
    let c = (curv.k() * minkowski_inner_unchecked(x.coords().view(), y.coords().view())).max(1.0);
    let d = arcosh(c) / curv.kappa();
    if d == 0.0 {
        return Ok(TangentVector::new_unchecked(x.clone(), Array1::zeros(n), 0.0));
    }
    let kd = curv.kappa() * d;
    let factor = 1.0 / sinhc(kd);
    let mut comps = Array1::zeros(n);
    for i in 0..n {
        comps[i] = factor * (y.coords()[i] - c * x.coords()[i]);
    }
    // Tangent-space projection v - K <x,v> x removes floating-point drift.
    let drift = curv.k() * minkowski_inner_unchecked(x.coords().view(), comps.view());
    for i in 0..n {
        comps[i] -= drift * x.coords()[i];
    }
    Ok(TangentVector::new_unchecked(x.clone(), comps, d))
}

/// Lifts a Euclidean feature vector `f` into the tangent space at the base
/// point as `(0, f)`.
///
/// The pairing `<p0, (0,f)>_L = -(1/kappa) * 0 = 0` holds exactly, and the
/// Riemannian norm equals the Euclidean norm `||f||`.
pub fn lift_feature(curv: &Curvature, feature: ArrayView1<f64>) -> Result<TangentVector> {
    if feature.is_empty() {
        return Err(HddError::InvalidArgument("cannot lift an empty feature vector".into()));
    }
    if feature.iter().any(|c| !c.is_finite()) {
        return Err(HddError::InvalidArgument("non-finite value in feature vector".into()));
    }
    let mut comps = Array1::zeros(feature.len() + 1);
    let mut sq = 0.0;
    for (i, &f) in feature.iter().enumerate() {
        comps[i + 1] = f;
        sq += f * f;
    }
    Ok(TangentVector::new_unchecked(base_point(curv, feature.len()), comps, sq.sqrt()))
}

/// Maps a hyperboloid point into the Poincare ball:
/// `p = kappa x_s / (1 + kappa x_t)`.
///
/// On the upper sheet `kappa x_t >= 1`, so the denominator is at least 2 and
/// the image always lands strictly inside the unit ball.
pub fn to_poincare(curv: &Curvature, x: &LorentzPoint) -> Result<PoincarePoint> {
    x.check_on_manifold(curv)?;
    let denom = 1.0 + curv.kappa() * x.time();
    let coords = x.spatial().mapv(|s| curv.kappa() * s / denom);
    PoincarePoint::new(coords)
}

/// Maps a Poincare-ball point back to the hyperboloid.
///
/// With `q = ||p||^2` and `alpha = 1 - q`:
///
/// ```text
///   x_t = (1 + q) / (alpha kappa),   x_s = 2 p / (alpha kappa)
/// ```
///
/// Points closer to the boundary than `1 - 1e-12` are rejected rather than
/// mapped to astronomically distant (and inaccurate) hyperboloid points.
pub fn from_poincare(curv: &Curvature, p: &PoincarePoint) -> Result<LorentzPoint> {
    let q = p.coords().iter().map(|c| c * c).sum::<f64>();
    if q.sqrt() >= 1.0 - POINCARE_BOUNDARY_EPS {
        return Err(HddError::Domain(format!(
            "Poincare point too close to the boundary: norm {} >= 1 - 1e-12",
            q.sqrt()
        )));
    }
    let scale = 1.0 / ((1.0 - q) * curv.kappa());
    let mut coords = Array1::zeros(p.coords().len() + 1);
    coords[0] = (1.0 + q) * scale;
    for (i, &c) in p.coords().iter().enumerate() {
        coords[i + 1] = 2.0 * c * scale;
    }
    renormalize_onto_sheet(curv, coords)
}

/// Radially projects an ambient vector onto the upper sheet:
/// `x = raw / (kappa * sqrt(|<raw,raw>_L|))`.
///
/// Requires `raw` to be timelike (`<raw,raw>_L < 0`) and future-directed
/// (`raw_t > 0`); other rays never intersect the sheet.
pub fn project_to_hyperboloid(curv: &Curvature, raw: ArrayView1<f64>) -> Result<LorentzPoint> {
    if raw.len() < 2 {
        return Err(HddError::InvalidArgument(format!(
            "ambient dimension must be at least 2, got {}",
            raw.len()
        )));
    }
    if raw.iter().any(|c| !c.is_finite()) {
        return Err(HddError::Domain("non-finite coordinate in projection input".into()));
    }
    let q = minkowski_inner_unchecked(raw, raw);
    if q >= 0.0 {
        return Err(HddError::Domain(format!(
            "projection needs a timelike vector, got <raw,raw>_L = {q:.6e} >= 0"
        )));
    }
    if raw[0] <= 0.0 {
        return Err(HddError::Domain(format!(
            "projection needs a future-directed vector, got time component {}",
            raw[0]
        )));
    }
    let scale = 1.0 / (curv.kappa() * (-q).sqrt());
    Ok(LorentzPoint::new_unchecked(raw.mapv(|c| c * scale)))
}

/// Rescales near-sheet coordinates exactly onto the constraint surface and
/// wraps them. Input must already be timelike and future-directed (true for
/// every internal caller); rescaling changes coordinates only at the level of
/// accumulated rounding.
fn renormalize_onto_sheet(curv: &Curvature, coords: Array1<f64>) -> Result<LorentzPoint> {
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(HddError::Numerical("non-finite coordinates after manifold map".into()));
    }
    let q = minkowski_inner_unchecked(coords.view(), coords.view());
    if q >= 0.0 || coords[0] <= 0.0 {
        return Err(HddError::Numerical(format!(
            "result left the future light cone (<x,x>_L = {q:.6e}, x_t = {})",
            coords[0]
        )));
    }
    let scale = 1.0 / (curv.kappa() * (-q).sqrt());
    Ok(LorentzPoint::new_unchecked(coords.mapv(|c| c * scale)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_curv() -> Curvature {
        Curvature::from_k(-1.0).unwrap()
    }

    /// Random on-manifold point: exponential of a random tangent at p0.
    fn random_point(curv: &Curvature, dim: usize, rng: &mut ChaCha8Rng) -> LorentzPoint {
        let v = random_tangent_at_base(curv, dim, rng);
        exp_map(curv, &base_point(curv, dim), &v).unwrap()
    }

    /// Random tangent at p0 with Euclidean norm in [0.01, 1].
    ///
    /// Radii stay at or below 1 so inner products of the resulting points
    /// cancel well inside the tolerances under test; the chart's intrinsic
    /// rounding noise grows like cosh^2 of the radius.
    fn random_tangent_at_base(curv: &Curvature, dim: usize, rng: &mut ChaCha8Rng) -> TangentVector {
        let raw: Array1<f64> = Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)));
        let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
        let target = rng.random_range(0.01..1.0);
        let feat = raw.mapv(|c| c * target / norm);
        lift_feature(curv, feat.view()).unwrap()
    }

    #[test]
    fn minkowski_inner_frozen_example() {
        // (1,0) and (2,1): -(1)(2) + (0)(1) = -2.
        let x = array![1.0, 0.0];
        let y = array![2.0, 1.0];
        assert_eq!(minkowski_inner(x.view(), y.view()).unwrap(), -2.0);
    }

    #[test]
    fn minkowski_inner_rejects_mismatched_lengths() {
        let x = array![1.0, 0.0, 0.0];
        let y = array![1.0, 0.0];
        assert!(matches!(
            minkowski_inner(x.view(), y.view()),
            Err(HddError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn base_point_satisfies_constraint() {
        for k in [-0.2, -1.0, -3.0] {
            let curv = Curvature::from_k(k).unwrap();
            let p0 = base_point(&curv, 4);
            assert_relative_eq!(p0.time(), 1.0 / curv.kappa(), max_relative = 1e-15);
            let q = minkowski_inner(p0.coords().view(), p0.coords().view()).unwrap();
            assert_relative_eq!(q, 1.0 / k, max_relative = 1e-12);
        }
    }

    #[test]
    fn curvature_rejects_nonnegative() {
        assert!(Curvature::from_k(0.0).is_err());
        assert!(Curvature::from_k(2.0).is_err());
        assert!(Curvature::from_magnitude(-1.0).is_err());
        assert!(Curvature::from_magnitude(f64::NAN).is_err());
    }

    #[test]
    fn distance_frozen_example_cosh_one_apart() {
        // K = -1: m = (cosh 1, sinh 1), n = (1, 0) are exactly distance 1 apart.
        let curv = unit_curv();
        let m = LorentzPoint::new(array![1.0f64.cosh(), 1.0f64.sinh()], &curv).unwrap();
        let n = LorentzPoint::new(array![1.0, 0.0], &curv).unwrap();
        assert_relative_eq!(geodesic_distance(&curv, &m, &n).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_arcosh_two_example() {
        // K = -1, <m,n>_L = -2  =>  d = arcosh(2).
        let curv = unit_curv();
        let m = LorentzPoint::new(array![2.0, 3.0f64.sqrt(), 0.0], &curv).unwrap();
        // n chosen as base point: <m,n>_L = -2 exactly.
        let n = base_point(&curv, 2);
        let d = geodesic_distance(&curv, &m, &n).unwrap();
        assert_relative_eq!(d, 1.3169578969248166, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_zero_on_identical_points_and_symmetric() {
        let curv = Curvature::from_k(-0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_point(&curv, 5, &mut rng);
            let b = random_point(&curv, 5, &mut rng);
            assert_eq!(geodesic_distance(&curv, &a, &a).unwrap(), 0.0);
            let dab = geodesic_distance(&curv, &a, &b).unwrap();
            let dba = geodesic_distance(&curv, &b, &a).unwrap();
            assert_relative_eq!(dab, dba, epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_rejects_off_manifold_points() {
        let curv = unit_curv();
        let bad = LorentzPoint::new_unchecked(array![2.0, 0.0]);
        let p0 = base_point(&curv, 1);
        assert!(matches!(geodesic_distance(&curv, &bad, &p0), Err(HddError::Domain(_))));
        // A point valid for K=-1 is off-manifold for K=-3.
        let other = Curvature::from_k(-3.0).unwrap();
        assert!(matches!(geodesic_distance(&other, &p0, &p0), Err(HddError::Domain(_))));
    }

    #[test]
    fn exp_map_frozen_unit_step() {
        // K = -1, x = (1,0), v = (0,1): exp_x(v) = (cosh 1, sinh 1).
        let curv = unit_curv();
        let x = base_point(&curv, 1);
        let v = lift_feature(&curv, array![1.0].view()).unwrap();
        let y = exp_map(&curv, &x, &v).unwrap();
        assert_relative_eq!(y.coords()[0], 1.5430806348152437, epsilon = 1e-12);
        assert_relative_eq!(y.coords()[1], 1.1752011936438014, epsilon = 1e-12);
    }

    #[test]
    fn exp_map_zero_vector_returns_base_exactly() {
        let curv = Curvature::from_k(-3.0).unwrap();
        let x = base_point(&curv, 4);
        let v = lift_feature(&curv, Array1::zeros(4).view()).unwrap();
        let y = exp_map(&curv, &x, &v).unwrap();
        assert_eq!(y.coords(), x.coords());
    }

    #[test]
    fn exp_map_rejects_non_tangent() {
        let curv = unit_curv();
        let x = base_point(&curv, 2);
        let v = TangentVector::new_unchecked(x.clone(), array![1.0, 0.0, 0.0], 1.0);
        assert!(matches!(exp_map(&curv, &x, &v), Err(HddError::Domain(_))));
    }

    #[test]
    fn log_map_inverts_exp_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in [-0.2, -1.0, -3.0] {
            let curv = Curvature::from_k(k).unwrap();
            for _ in 0..100 {
                let x = random_point(&curv, 6, &mut rng);
                let y = random_point(&curv, 6, &mut rng);
                let v = log_map(&curv, &x, &y).unwrap();
                let back = exp_map(&curv, &x, &v).unwrap();
                for i in 0..y.coords().len() {
                    assert_relative_eq!(back.coords()[i], y.coords()[i], epsilon = 1e-6);
                }
                // Norm of the log equals the distance.
                let d = geodesic_distance(&curv, &x, &y).unwrap();
                assert_relative_eq!(v.norm(), d, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn log_map_of_same_point_is_zero() {
        let curv = unit_curv();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_point(&curv, 3, &mut rng);
        let v = log_map(&curv, &x, &x).unwrap();
        assert_eq!(v.norm(), 0.0);
        assert!(v.components().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn exp_log_distance_law() {
        // d(x, exp_x(v)) = ||v|| for tangents of moderate norm.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for k in [-0.2, -1.0, -3.0] {
            let curv = Curvature::from_k(k).unwrap();
            for _ in 0..100 {
                let x = random_point(&curv, 4, &mut rng);
                // Tangent at x: transport a base tangent via log of a second point.
                let y = random_point(&curv, 4, &mut rng);
                let v = log_map(&curv, &x, &y).unwrap();
                let d = geodesic_distance(&curv, &x, &exp_map(&curv, &x, &v).unwrap()).unwrap();
                assert_relative_eq!(d, v.norm(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn lift_feature_matches_manual_tangent() {
        let curv = Curvature::from_k(-2.0).unwrap();
        let v = lift_feature(&curv, array![3.0, 4.0].view()).unwrap();
        assert_eq!(v.components()[0], 0.0);
        assert_eq!(v.norm(), 5.0);
        assert_eq!(v.base().time(), curv.radius());
    }

    #[test]
    fn poincare_frozen_example_and_origin() {
        // K = -1: (cosh 1, sinh 1) -> tanh(1/2).
        let curv = unit_curv();
        let x = LorentzPoint::new(array![1.0f64.cosh(), 1.0f64.sinh()], &curv).unwrap();
        let p = to_poincare(&curv, &x).unwrap();
        assert_relative_eq!(p.coords()[0], 0.46211715726000974, epsilon = 1e-12);
        // Base point maps to the origin.
        let origin = to_poincare(&curv, &base_point(&curv, 3)).unwrap();
        assert!(origin.coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn poincare_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for k in [-0.2, -1.0, -3.0] {
            let curv = Curvature::from_k(k).unwrap();
            for _ in 0..100 {
                let x = random_point(&curv, 5, &mut rng);
                let p = to_poincare(&curv, &x).unwrap();
                assert!(p.norm() < 1.0);
                let back = from_poincare(&curv, &p).unwrap();
                for i in 0..x.coords().len() {
                    assert_relative_eq!(back.coords()[i], x.coords()[i], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn from_poincare_rejects_boundary() {
        let curv = unit_curv();
        let p = PoincarePoint::new(array![1.0 - 1e-13, 0.0]).unwrap();
        assert!(matches!(from_poincare(&curv, &p), Err(HddError::Domain(_))));
    }

    #[test]
    fn projection_frozen_example() {
        // K = -1, raw = (2, 1, 0): <raw,raw>_L = -3, result = (2,1,0)/sqrt(3).
        let curv = unit_curv();
        let x = project_to_hyperboloid(&curv, array![2.0, 1.0, 0.0].view()).unwrap();
        let s = 3.0f64.sqrt();
        assert_relative_eq!(x.coords()[0], 2.0 / s, epsilon = 1e-14);
        assert_relative_eq!(x.coords()[1], 1.0 / s, epsilon = 1e-14);
        assert_relative_eq!(x.coords()[2], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn projection_rejects_spacelike_and_past_directed() {
        let curv = unit_curv();
        assert!(matches!(
            project_to_hyperboloid(&curv, array![1.0, 2.0].view()),
            Err(HddError::Domain(_))
        ));
        assert!(matches!(
            project_to_hyperboloid(&curv, array![-2.0, 1.0].view()),
            Err(HddError::Domain(_))
        ));
    }

    #[test]
    fn projection_result_is_exactly_on_sheet() {
        let curv = Curvature::from_k(-0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut raw = Array1::from_iter((0..5).map(|_| rng.random_range(-1.0..1.0)));
            raw[0] = rng.random_range(2.0..5.0); // keep it timelike, future-directed
            let x = project_to_hyperboloid(&curv, raw.view()).unwrap();
            let q = minkowski_inner(x.coords().view(), x.coords().view()).unwrap();
            assert_relative_eq!(q, 1.0 / curv.k(), max_relative = 1e-12);
        }
    }

    #[test]
    fn sinhc_series_and_direct_branches_agree() {
        // Inside the series region, the direct quotient is still accurate, so
        // the two formulas must coincide to near machine precision.
        for x in [1e-6, 5e-5, 9.9e-5] {
            assert_relative_eq!(sinhc(x), x.sinh() / x, max_relative = 1e-14);
        }
        assert_eq!(sinhc(0.0), 1.0);
        assert_relative_eq!(sinhc(1.0), 1.0f64.sinh(), epsilon = 1e-15);
    }

    #[test]
    fn arcosh_agrees_with_naive_form_away_from_one() {
        for t in [1.5, 2.0, 10.0, 1e6] {
            assert_relative_eq!(arcosh(t), (t + (t * t - 1.0).sqrt()).ln(), max_relative = 1e-14);
        }
        assert_eq!(arcosh(1.0), 0.0);
        assert_eq!(arcosh(0.999999), 0.0); // clamped
    }

    use proptest::prelude::*;

    /// Tangent vector at the base point from raw proptest draws: direction
    /// from `raw`, Euclidean norm rescaled into [0.01, 1] (the regime where
    /// the chart's rounding noise sits far below the tolerances under test).
    fn tangent_from_raw(curv: &Curvature, raw: &[f64], scale: f64) -> TangentVector {
        let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
        let target = 0.01 + 0.99 * scale;
        let feat = Array1::from_iter(raw.iter().map(|c| c * target / norm));
        lift_feature(curv, feat.view()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn prop_exp_log_roundtrip_on_manifold(
            mag in 0.2f64..3.0,
            raw in prop::collection::vec(-1.0f64..1.0, 2..16),
            scale in 0.0f64..1.0,
        ) {
            let curv = Curvature::from_magnitude(mag).unwrap();
            let p0 = base_point(&curv, raw.len());
            let v = tangent_from_raw(&curv, &raw, scale);
            let x = exp_map(&curv, &p0, &v).unwrap();
            // The image satisfies the sheet constraint...
            let q = minkowski_inner(x.coords().view(), x.coords().view()).unwrap();
            prop_assert!((q - 1.0 / curv.k()).abs() <= 1e-9 * q.abs().max(1.0));
            // ...the geodesic reaches exactly as far as the tangent is long...
            let d = geodesic_distance(&curv, &p0, &x).unwrap();
            prop_assert!((d - v.norm()).abs() <= 1e-8);
            // ...and the logarithm restores the tangent.
            let back = log_map(&curv, &p0, &x).unwrap();
            for (a, b) in back.components().iter().zip(v.components()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn prop_distance_is_a_symmetric_metric(
            mag in 0.2f64..3.0,
            raw_a in prop::collection::vec(-1.0f64..1.0, 4),
            raw_b in prop::collection::vec(-1.0f64..1.0, 4),
            raw_c in prop::collection::vec(-1.0f64..1.0, 4),
            scales in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let curv = Curvature::from_magnitude(mag).unwrap();
            let p0 = base_point(&curv, 4);
            let point = |raw: &[f64], s: f64| {
                exp_map(&curv, &p0, &tangent_from_raw(&curv, raw, s)).unwrap()
            };
            let a = point(&raw_a, scales[0]);
            let b = point(&raw_b, scales[1]);
            let c = point(&raw_c, scales[2]);
            let ab = geodesic_distance(&curv, &a, &b).unwrap();
            let ba = geodesic_distance(&curv, &b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(geodesic_distance(&curv, &a, &a).unwrap(), 0.0);
            let ac = geodesic_distance(&curv, &a, &c).unwrap();
            let cb = geodesic_distance(&curv, &c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-8);
        }

        #[test]
        fn prop_poincare_chart_is_a_bijection(
            mag in 0.2f64..3.0,
            raw in prop::collection::vec(-1.0f64..1.0, 2..16),
            scale in 0.0f64..1.0,
        ) {
            let curv = Curvature::from_magnitude(mag).unwrap();
            let p0 = base_point(&curv, raw.len());
            let x = exp_map(&curv, &p0, &tangent_from_raw(&curv, &raw, scale)).unwrap();
            let ball = to_poincare(&curv, &x).unwrap();
            // Strictly inside the unit ball.
            prop_assert!(ball.norm() < 1.0);
            let back = from_poincare(&curv, &ball).unwrap();
            let q = minkowski_inner(back.coords().view(), back.coords().view()).unwrap();
            prop_assert!((q - 1.0 / curv.k()).abs() <= 1e-9 * q.abs().max(1.0));
            let gap = geodesic_distance(&curv, &x, &back).unwrap();
            prop_assert!(gap <= 1e-6);
        }
    }
}

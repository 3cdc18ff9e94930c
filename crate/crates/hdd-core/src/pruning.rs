//! Hierarchy-aware dataset pruning and run diagnostics.
//!
//! Points far from the base point of the hyperboloid act like leaves of the
//! data hierarchy: they carry large hierarchy weights and dominate centroid
//! placement. Pruning removes the largest-radius samples before
//! distillation — the hyperbolic analogue of dropping boundary outliers —
//! and this module also provides the diagnostic curves (radius profiles,
//! hierarchy-weight curves, loss-tail stability) used to analyze runs.

use crate::centroid::{approx_centroid, hierarchy_weight, EmbeddedSet, DEFAULT_CENTROID_EPS};
use crate::encoder::{encode, sample_encoder};
use crate::engine::{distill, DistillConfig, IterationLoss, LabeledDataset, RunRecord, SyntheticDataset};
use crate::error::{HddError, Result};
use crate::lorentz::{base_point, geodesic_distance, to_poincare, Curvature};

/// Whether the pruning fraction applies within each class or across the
/// whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneScope {
    PerClass,
    Global,
}

impl PruneScope {
    pub fn name(&self) -> &'static str {
        match self {
            PruneScope::PerClass => "per_class",
            PruneScope::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_class" => Ok(PruneScope::PerClass),
            "global" => Ok(PruneScope::Global),
            other => Err(HddError::Config(format!(
                "unknown prune scope {other:?} (expected per_class or global)"
            ))),
        }
    }
}

/// Pruning parameters: the fraction of samples to remove and the scope the
/// fraction is computed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSpec {
    pub alpha: f64,
    pub scope: PruneScope,
}

impl Default for PruneSpec {
    fn default() -> Self {
        PruneSpec { alpha: 0.0, scope: PruneScope::PerClass }
    }
}

impl PruneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(HddError::InvalidArgument(format!(
                "prune fraction must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Embedding radius of every sample: the dataset is encoded once with the
/// frozen first encoder draw of `cfg` (features norm-capped exactly as in
/// the distillation loop), and the radius of a sample is the geodesic
/// distance of its embedded point from the base point, which equals the
/// capped Euclidean feature norm.
pub fn compute_radii(data: &LabeledDataset, cfg: &DistillConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let spec = cfg.encoder_spec(data.shape())?;
    let enc = sample_encoder(&spec, 0)?;
    let feats = encode(&enc, data.images().view())?;
    Ok(feats
        .rows()
        .into_iter()
        .map(|row| {
            let norm = row.iter().map(|f| f * f).sum::<f64>().sqrt();
            norm.min(cfg.feature_norm_cap)
        })
        .collect())
}

/// Number of samples to remove from a group of `n` at fraction `alpha`:
/// `ceil(alpha * n)`, with exact products snapped before the ceiling so
/// binary rounding (e.g. `0.07 * 100 -> 7.000...001`) cannot shift the
/// count.
fn removal_count(alpha: f64, n: usize) -> usize {
    let t = alpha * n as f64;
    let r = t.round();
    let snapped = if (t - r).abs() < 1e-9 { r } else { t.ceil() };
    (snapped as usize).min(n)
}

/// Selects the samples that survive pruning: within each group (one class,
/// or the whole dataset for [`PruneScope::Global`]), the `ceil(alpha * n)`
/// largest-radius samples are removed, ties broken toward the lower index.
/// Returns the retained indices in ascending order; `alpha = 0` retains
/// everything.
pub fn prune(data: &LabeledDataset, radii: &[f64], spec: &PruneSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if radii.len() != data.len() {
        return Err(HddError::DimensionMismatch(format!(
            "{} radii for {} samples",
            radii.len(),
            data.len()
        )));
    }
    if let Some(i) = radii.iter().position(|r| !r.is_finite()) {
        return Err(HddError::InvalidArgument(format!("non-finite radius at index {i}")));
    }
    let groups: Vec<Vec<usize>> = match spec.scope {
        PruneScope::PerClass => (0..data.num_classes()).map(|c| data.class_indices(c)).collect(),
        PruneScope::Global => vec![(0..data.len()).collect()],
    };
    let mut retained = Vec::with_capacity(data.len());
    for mut group in groups {
        let drop = removal_count(spec.alpha, group.len());
        // Largest radius first; equal radii fall to the smaller index.
        group.sort_by(|&a, &b| {
            radii[b].partial_cmp(&radii[a]).expect("finite radii").then(a.cmp(&b))
        });
        retained.extend_from_slice(&group[drop..]);
    }
    retained.sort_unstable();
    Ok(retained)
}

/// Prunes, then distills the surviving subset. Returns the synthetic set,
/// the run record, and the retained indices. With `alpha = 0` the run is
/// bit-identical to an unpruned [`distill`].
pub fn distill_pruned(
    real: &LabeledDataset,
    cfg: &DistillConfig,
    spec: &PruneSpec,
) -> Result<(SyntheticDataset, RunRecord, Vec<usize>)> {
    let radii = compute_radii(real, cfg)?;
    let retained = prune(real, &radii, spec)?;
    let kept = real.subset(&retained).map_err(|e| {
        HddError::InvalidArgument(format!(
            "pruning at alpha {} leaves no usable dataset: {e}",
            spec.alpha
        ))
    })?;
    let (syn, record) = distill(&kept, cfg)?;
    Ok((syn, record, retained))
}

/// Population standard deviation of the last `tail` total-loss values — the
/// flatness measure used to compare late-run stability between
/// configurations.
pub fn loss_tail_std(losses: &[IterationLoss], tail: usize) -> Result<f64> {
    if tail < 2 {
        return Err(HddError::InvalidArgument("stability needs a tail of at least 2".into()));
    }
    if losses.len() < tail {
        return Err(HddError::InvalidArgument(format!(
            "tail of {tail} over only {} recorded iterations",
            losses.len()
        )));
    }
    let slice = &losses[losses.len() - tail..];
    let mean = slice.iter().map(|l| l.total).sum::<f64>() / tail as f64;
    let var = slice.iter().map(|l| (l.total - mean) * (l.total - mean)).sum::<f64>() / tail as f64;
    Ok(var.sqrt())
}

/// Samples the hierarchy-weight curve `d -> 1 / sinhc(kappa d)` at
/// `points` evenly spaced radii over `[0, max_radius]`.
pub fn weight_curve(curv: &Curvature, max_radius: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    if points < 2 {
        return Err(HddError::InvalidArgument("curve needs at least two points".into()));
    }
    if !(max_radius > 0.0) || !max_radius.is_finite() {
        return Err(HddError::InvalidArgument(format!(
            "max_radius must be finite and positive, got {max_radius}"
        )));
    }
    (0..points)
        .map(|i| {
            let d = max_radius * i as f64 / (points - 1) as f64;
            Ok((d, hierarchy_weight(curv, d)?))
        })
        .collect()
}

/// Renders an embedded set as CSV in the Poincare-ball chart:
/// `label,p_0..p_{n-1},radius` with one row per point (radius = geodesic
/// distance from the base point), followed by one approximate-centroid row
/// per class, in ascending class order, labeled `-1`. Values carry 17
/// significant digits.
pub fn poincare_csv(set: &EmbeddedSet) -> Result<String> {
    let Some(ambient) = set.ambient_dim() else {
        return Err(HddError::InvalidArgument("cannot chart an empty set".into()));
    };
    let curv = *set.curvature();
    let origin = base_point(&curv, ambient - 1);
    let mut out = String::from("label");
    for i in 0..ambient - 1 {
        out.push_str(&format!(",p_{i}"));
    }
    out.push_str(",radius\n");
    let mut row = |label: i64, point: &crate::lorentz::LorentzPoint| -> Result<()> {
        let ball = to_poincare(&curv, point)?;
        let radius = geodesic_distance(&curv, &origin, point)?;
        out.push_str(&label.to_string());
        for v in ball.coords() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push_str(&format!(",{radius:.16e}\n"));
        Ok(())
    };
    for (p, &l) in set.points().iter().zip(set.labels()) {
        row(l as i64, p)?;
    }
    let mut classes: Vec<usize> = set.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let points: Vec<_> = set
            .points()
            .iter()
            .zip(set.labels())
            .filter(|(_, &l)| l == class)
            .map(|(p, _)| p.clone())
            .collect();
        let labels = vec![class; points.len()];
        let class_set = EmbeddedSet::new(points, labels, curv)?;
        let centroid = approx_centroid(&class_set, DEFAULT_CENTROID_EPS)?;
        row(-1, &centroid)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;
    use crate::engine::InitMode;
    use approx::assert_relative_eq;
    use ndarray::{Array2, Array4};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(classes: usize, per_class: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = classes * per_class;
        let images = Array4::from_shape_fn((n, 1, 4, 4), |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(images, labels).unwrap()
    }

    fn mlp_config() -> DistillConfig {
        DistillConfig {
            lambda: 5.0,
            lr: 0.05,
            ipc: 1,
            iterations: 3,
            batch_real: 4,
            encoder_kind: EncoderKind::Mlp,
            encoder_feature_dim: 8,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn removal_count_handles_rounding_and_edges() {
        assert_eq!(removal_count(0.0, 50), 0);
        assert_eq!(removal_count(1.0, 50), 50);
        assert_eq!(removal_count(0.07, 100), 7); // 0.07*100 rounds up in binary
        assert_eq!(removal_count(0.3, 10), 3);
        assert_eq!(removal_count(0.25, 7), 2); // ceil(1.75)
        assert_eq!(removal_count(0.5, 1), 1);
    }

    #[test]
    fn per_class_pruning_drops_the_largest_radii() {
        let data = random_dataset(2, 4, 1);
        // Class 0 holds rows 0,2,4,6; class 1 rows 1,3,5,7.
        let radii = vec![5.0, 1.0, 2.0, 9.0, 8.0, 3.0, 1.0, 3.0];
        let spec = PruneSpec { alpha: 0.5, scope: PruneScope::PerClass };
        // Class 0 removes radii 8.0 (row 4) and 5.0 (row 0); class 1 removes
        // 9.0 (row 3) and the 3.0 tie resolves to the lower index, row 5.
        let retained = prune(&data, &radii, &spec).unwrap();
        assert_eq!(retained, vec![1, 2, 6, 7]);
    }

    #[test]
    fn global_pruning_ignores_class_boundaries() {
        let data = random_dataset(2, 2, 2);
        let radii = vec![10.0, 1.0, 9.0, 2.0];
        let spec = PruneSpec { alpha: 0.5, scope: PruneScope::Global };
        let retained = prune(&data, &radii, &spec).unwrap();
        assert_eq!(retained, vec![1, 3]);
    }

    #[test]
    fn zero_alpha_retains_everything() {
        let data = random_dataset(3, 3, 3);
        let radii = compute_radii(&data, &mlp_config()).unwrap();
        let retained = prune(&data, &radii, &PruneSpec::default()).unwrap();
        assert_eq!(retained, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn radii_are_capped_feature_norms() {
        let data = random_dataset(2, 3, 4);
        let mut cfg = mlp_config();
        let radii = compute_radii(&data, &cfg).unwrap();
        assert_eq!(radii.len(), 6);
        assert!(radii.iter().all(|r| r.is_finite() && *r >= 0.0));
        // A crushing cap forces every radius onto the cap value.
        cfg.feature_norm_cap = 1e-3;
        let capped = compute_radii(&data, &cfg).unwrap();
        assert!(capped.iter().all(|r| *r <= 1e-3 + 1e-15));
    }

    #[test]
    fn zero_alpha_distillation_is_bit_identical_to_unpruned() {
        let data = random_dataset(2, 6, 5);
        let cfg = mlp_config();
        let (plain, rec_plain) = distill(&data, &cfg).unwrap();
        let (pruned, rec_pruned, retained) =
            distill_pruned(&data, &cfg, &PruneSpec::default()).unwrap();
        assert_eq!(retained.len(), data.len());
        assert_eq!(plain.images(), pruned.images());
        assert_eq!(rec_plain.to_csv(), rec_pruned.to_csv());
        assert_eq!(rec_plain.batch_digest, rec_pruned.batch_digest);
    }

    #[test]
    fn pruned_distillation_runs_on_the_survivors() {
        let data = random_dataset(2, 8, 6);
        let cfg = DistillConfig { init: InitMode::Noise, ..mlp_config() };
        let spec = PruneSpec { alpha: 0.25, scope: PruneScope::PerClass };
        let (_, record, retained) = distill_pruned(&data, &cfg, &spec).unwrap();
        assert_eq!(retained.len(), 12); // 8 per class minus ceil(0.25*8)=2
        assert_eq!(record.losses.len(), cfg.iterations);
    }

    #[test]
    fn tail_std_measures_late_run_flatness() {
        let mk = |totals: &[f64]| -> Vec<IterationLoss> {
            totals
                .iter()
                .enumerate()
                .map(|(i, &t)| IterationLoss { iteration: i, per_class: vec![t], total: t })
                .collect()
        };
        let flat = mk(&[9.0, 5.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(loss_tail_std(&flat, 4).unwrap(), 0.0);
        let wavy = mk(&[9.0, 5.0, 1.0, 3.0, 1.0, 3.0]);
        assert_relative_eq!(loss_tail_std(&wavy, 4).unwrap(), 1.0, max_relative = 1e-15);
        assert!(loss_tail_std(&flat, 1).is_err());
        assert!(loss_tail_std(&flat, 7).is_err());
    }

    #[test]
    fn weight_curve_starts_at_one_and_decreases() {
        let curv = Curvature::from_magnitude(1.0).unwrap();
        let curve = weight_curve(&curv, 3.0, 7).unwrap();
        assert_eq!(curve.len(), 7);
        assert_eq!(curve[0], (0.0, 1.0));
        for pair in curve.windows(2) {
            assert!(pair[1].1 < pair[0].1, "hierarchy weight must decay with radius");
        }
        assert_relative_eq!(curve[6].0, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn poincare_export_lists_points_then_class_centroids() {
        let curv = Curvature::from_magnitude(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let feats = Array2::from_shape_fn((4, 2), |_| rng.random_range(-0.6..0.6));
        let set = EmbeddedSet::from_features(curv, feats.view(), &[0, 1, 0, 1]).unwrap();
        let csv = poincare_csv(&set).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "label,p_0,p_1,radius");
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
        assert!(lines[5].starts_with("-1,"));
        assert!(lines[6].starts_with("-1,"));
        // Every point row's radius equals its feature norm (exp at the base
        // point is radial), and ball coordinates stay inside the unit ball.
        for (i, line) in lines[1..5].iter().enumerate() {
            let cols: Vec<f64> =
                line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            let ball_norm = (cols[0] * cols[0] + cols[1] * cols[1]).sqrt();
            assert!(ball_norm < 1.0);
            let feat_norm = feats.row(i).iter().map(|f| f * f).sum::<f64>().sqrt();
            assert_relative_eq!(cols[2], feat_norm, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}

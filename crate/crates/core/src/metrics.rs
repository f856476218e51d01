//! Evaluation metrics: fidelity sweeps over selection ratios, pooled
//! rank-based ROC-AUC of scores against decisive flags, precision@K,
//! and the decisive-induced fidelity variant.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbones::{Model, Prediction};
use crate::data::{select_topk, PointCloud};
use crate::error::{Error, Result};
use crate::scores::ImportanceScores;

/// Selection ratios evaluated by every fidelity sweep.
pub const RHO_GRID: [f64; 8] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Anything that can classify a point cloud. Lets metric code run
/// against stub models in tests.
pub trait Classifier {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction>;
}

impl Classifier for Model {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        Model::predict(self, cloud)
    }
}

/// Stub classifier built from a closure.
pub struct FnClassifier<F: Fn(&PointCloud) -> Result<Prediction>>(pub F);

impl<F: Fn(&PointCloud) -> Result<Prediction>> Classifier for FnClassifier<F> {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        (self.0)(cloud)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FidSign {
    Plus,
    Minus,
}

/// Fidelity values along [`RHO_GRID`].
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityCurve {
    pub rho_grid: Vec<f64>,
    pub fid_plus: Vec<f64>,
    pub fid_minus: Vec<f64>,
    /// Ratios at which some sample's removal emptied the cloud; the
    /// missing prediction counts as a miss and the value stands flagged.
    pub degenerate_rhos: Vec<f64>,
}

/// Curve integrals on the 0-100 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityAuc {
    pub plus: f64,
    pub minus: f64,
    pub combined: f64,
    pub degenerate_rhos: Vec<f64>,
}

fn check_alignment(samples: &[&PointCloud], scores: &[ImportanceScores]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Metric("no samples to evaluate".into()));
    }
    if samples.len() != scores.len() {
        return Err(Error::Metric(format!(
            "{} samples but {} score records",
            samples.len(),
            scores.len()
        )));
    }
    for (cloud, s) in samples.iter().zip(scores) {
        if cloud.id != s.id {
            return Err(Error::Metric(format!(
                "sample {} paired with scores for sample {}",
                cloud.id, s.id
            )));
        }
        s.validate(cloud.n_points())?;
    }
    Ok(())
}

/// Per-sample prediction-match indicators at one ratio.
struct RhoOutcome {
    base: f64,
    removed: f64,
    retained: f64,
    degenerate: bool,
}

fn rho_outcome<M: Classifier>(
    model: &M,
    cloud: &PointCloud,
    scores: &[f64],
    rho: f64,
) -> Result<RhoOutcome> {
    let truth = cloud.label;
    let base = f64::from(model.predict(cloud)?.label == truth);
    let picked = select_topk(scores, rho)?;
    let only = cloud.subcloud(&picked)?;
    let retained = f64::from(model.predict(&only)?.label == truth);
    let rest = cloud.complement(&picked);
    let (removed, degenerate) = if rest.is_empty() {
        // Nothing left to predict on: count it as a miss and flag the ratio.
        (0.0, true)
    } else {
        let cut = cloud.subcloud(&rest)?;
        (f64::from(model.predict(&cut)?.label == truth), false)
    };
    Ok(RhoOutcome { base, removed, retained, degenerate })
}

/// Mean prediction-change indicator at a single ratio.
pub fn fidelity_at_rho<M: Classifier>(
    model: &M,
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
    rho: f64,
    sign: FidSign,
) -> Result<(f64, bool)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Metric(format!("rho must lie in (0,1), got {rho}")));
    }
    check_alignment(samples, scores)?;
    let mut total = 0.0;
    let mut degenerate = false;
    for (cloud, s) in samples.iter().zip(scores) {
        let o = rho_outcome(model, cloud, &s.scores, rho)?;
        degenerate |= o.degenerate;
        total += match sign {
            FidSign::Plus => o.base - o.removed,
            FidSign::Minus => o.base - o.retained,
        };
    }
    Ok((total / samples.len() as f64, degenerate))
}

pub fn fidelity_curve<M: Classifier>(
    model: &M,
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
) -> Result<FidelityCurve> {
    check_alignment(samples, scores)?;
    let n = samples.len() as f64;
    let mut fid_plus = Vec::with_capacity(RHO_GRID.len());
    let mut fid_minus = Vec::with_capacity(RHO_GRID.len());
    let mut degenerate_rhos = Vec::new();
    for &rho in &RHO_GRID {
        let mut plus = 0.0;
        let mut minus = 0.0;
        let mut degenerate = false;
        for (cloud, s) in samples.iter().zip(scores) {
            let o = rho_outcome(model, cloud, &s.scores, rho)?;
            plus += o.base - o.removed;
            minus += o.base - o.retained;
            degenerate |= o.degenerate;
        }
        fid_plus.push(plus / n);
        fid_minus.push(minus / n);
        if degenerate {
            degenerate_rhos.push(rho);
        }
    }
    Ok(FidelityCurve { rho_grid: RHO_GRID.to_vec(), fid_plus, fid_minus, degenerate_rhos })
}

/// Trapezoidal mean of `values` over `grid`, exact for flat curves.
pub fn trapezoid_mean(grid: &[f64], values: &[f64]) -> f64 {
    assert_eq!(grid.len(), values.len());
    assert!(grid.len() >= 2);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..grid.len() - 1 {
        let d = grid[i + 1] - grid[i];
        num += (values[i] + values[i + 1]) * d;
        den += 2.0 * d;
    }
    num / den
}

impl FidelityCurve {
    pub fn auc(&self) -> FidelityAuc {
        let plus = trapezoid_mean(&self.rho_grid, &self.fid_plus) * 100.0;
        let minus = trapezoid_mean(&self.rho_grid, &self.fid_minus) * 100.0;
        FidelityAuc {
            plus,
            minus,
            combined: (plus - minus + 100.0) / 2.0,
            degenerate_rhos: self.degenerate_rhos.clone(),
        }
    }
}

pub fn fidelity_auc<M: Classifier>(
    model: &M,
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
) -> Result<FidelityAuc> {
    Ok(fidelity_curve(model, samples, scores)?.auc())
}

/// Mann-Whitney statistic of `scores` against binary `labels`, on a
/// 0-100 scale; ties count half. Pools whatever it is given.
pub fn interpretation_roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&z| z == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let class = if n_pos == 0 { "positive" } else { "negative" };
        return Err(Error::Metric(format!(
            "ROC-AUC undefined: no {class} labels in the pool"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Walk groups of tied scores from the bottom; every positive beats all
    // negatives strictly below it and half-ties the negatives beside it.
    let mut wins = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        let neg_here = (j - i) as f64 - pos_here;
        wins += pos_here * neg_below + 0.5 * pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64) * 100.0)
}

/// Pool scores and decisive flags across samples, then rank.
pub fn pooled_interpretation_roc_auc(
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
) -> Result<f64> {
    check_alignment(samples, scores)?;
    let mut w = Vec::new();
    let mut z = Vec::new();
    for (cloud, s) in samples.iter().zip(scores) {
        w.extend_from_slice(&s.scores);
        z.extend_from_slice(&cloud.decisive);
    }
    interpretation_roc_auc(&w, &z)
}

/// Fraction of decisive points among each sample's top-min(K, n) scores,
/// averaged over samples, on a 0-100 scale.
pub fn precision_at_k(
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Metric("K must be >= 1".into()));
    }
    check_alignment(samples, scores)?;
    let mut total = 0.0;
    for (cloud, s) in samples.iter().zip(scores) {
        let n = cloud.n_points();
        let kk = k.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            s.scores[b].partial_cmp(&s.scores[a]).unwrap().then(a.cmp(&b))
        });
        let hits = order[..kk].iter().filter(|&&i| cloud.decisive[i] == 1).count();
        total += hits as f64 / kk as f64;
    }
    Ok(total / samples.len() as f64 * 100.0)
}

/// Fidelity sweep fed with the ground-truth decisive flags as scores.
/// Ties within the equal-flag groups are broken by a per-sample shuffle
/// seeded from `tie_seed`, which the caller should record.
pub fn decisive_induced_fidelity<M: Classifier>(
    model: &M,
    samples: &[&PointCloud],
    tie_seed: u64,
) -> Result<FidelityAuc> {
    let scores: Vec<ImportanceScores> = samples
        .iter()
        .map(|cloud| {
            let mut rng = ChaCha8Rng::seed_from_u64(tie_seed ^ (cloud.id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let w = cloud
                .decisive
                .iter()
                .map(|&zi| f64::from(zi) + rng.gen_range(0.0..0.5))
                .collect();
            ImportanceScores::new(cloud.id, crate::scores::methods::DECISIVE, "ground-truth", w)
        })
        .collect();
    fidelity_auc(model, samples, &scores)
}

/// One evaluation row; the CSV contract of the reporting pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub model_id: String,
    pub seed: u64,
    pub method: String,
    pub fid_plus_auc: f64,
    pub fid_minus_auc: f64,
    pub fid_auc: f64,
    pub interp_roc_auc: f64,
    pub precision_at_k: f64,
    pub n_samples: usize,
}

pub const REPORT_HEADER: &str =
    "model_id,seed,method,fid_plus_auc,fid_minus_auc,fid_auc,interp_roc_auc,precision_at_k,n_samples";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.seed,
            self.method,
            self.fid_plus_auc,
            self.fid_minus_auc,
            self.fid_auc,
            self.interp_roc_auc,
            self.precision_at_k,
            self.n_samples
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let parts: Vec<&str> = row.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Metric(format!(
                "report row wants 9 fields, got {}: `{row}`",
                parts.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Metric(format!("bad number `{s}` in report row")))
        };
        Ok(MetricReport {
            model_id: parts[0].into(),
            seed: parts[1]
                .parse()
                .map_err(|_| Error::Metric(format!("bad seed `{}`", parts[1])))?,
            method: parts[2].into(),
            fid_plus_auc: num(parts[3])?,
            fid_minus_auc: num(parts[4])?,
            fid_auc: num(parts[5])?,
            interp_roc_auc: num(parts[6])?,
            precision_at_k: num(parts[7])?,
            n_samples: parts[8]
                .parse()
                .map_err(|_| Error::Metric(format!("bad sample count `{}`", parts[8])))?,
        })
    }
}

/// Run the full metric battery for one (model, method) pair.
pub fn evaluate<M: Classifier>(
    model: &M,
    samples: &[&PointCloud],
    scores: &[ImportanceScores],
    model_id: &str,
    seed: u64,
    k: usize,
) -> Result<MetricReport> {
    let auc = fidelity_auc(model, samples, scores)?;
    let interp = pooled_interpretation_roc_auc(samples, scores)?;
    let prec = precision_at_k(samples, scores, k)?;
    let method = scores.first().map_or_else(String::new, |s| s.method.clone());
    Ok(MetricReport {
        model_id: model_id.into(),
        seed,
        method,
        fid_plus_auc: auc.plus,
        fid_minus_auc: auc.minus,
        fid_auc: auc.combined,
        interp_roc_auc: interp,
        precision_at_k: prec,
        n_samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn toy_cloud(id: usize, flags: &[u8], label: u8) -> PointCloud {
        let n = flags.len();
        let coords = Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|i| i as f64 * 0.37).collect(),
        )
        .unwrap();
        let features = Tensor::new(
            vec![n, 2],
            flags.iter().flat_map(|&z| [f64::from(z), 1.0 - f64::from(z)]).collect(),
        )
        .unwrap();
        PointCloud { id, coords, features, decisive: flags.to_vec(), label }
    }

    /// Predicts 1 iff any point carries the flag feature.
    fn flag_detector() -> impl Classifier {
        FnClassifier(|cloud: &PointCloud| {
            let any = (0..cloud.n_points()).any(|i| cloud.features.row(i)[0] > 0.5);
            Ok(Prediction::from_logit(if any { 4.0 } else { -4.0 }))
        })
    }

    fn flag_scores(cloud: &PointCloud, method: &str) -> ImportanceScores {
        let w = cloud
            .decisive
            .iter()
            .enumerate()
            .map(|(i, &z)| f64::from(z) * 10.0 + i as f64 * 1e-3)
            .collect();
        ImportanceScores::new(cloud.id, method, "stub", w)
    }

    #[test]
    fn robust_model_has_zero_fidelity_plus() {
        let samples: Vec<PointCloud> =
            (0..4).map(|i| toy_cloud(i, &[1, 0, 0, 0, 0, 1, 0, 0], 1)).collect();
        let refs: Vec<&PointCloud> = samples.iter().collect();
        let scores: Vec<_> = samples.iter().map(|c| flag_scores(c, "stub")).collect();
        let constant = FnClassifier(|_: &PointCloud| Ok(Prediction::from_logit(1.0)));
        let (v, _) = fidelity_at_rho(&constant, &refs, &scores, 0.5, FidSign::Plus).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn flag_stub_reaches_extreme_fidelities() {
        // 10 positive samples; flags ranked top; rho = 0.5 covers both flags.
        let samples: Vec<PointCloud> =
            (0..10).map(|i| toy_cloud(i, &[1, 0, 0, 1, 0, 0], 1)).collect();
        let refs: Vec<&PointCloud> = samples.iter().collect();
        let scores: Vec<_> = samples.iter().map(|c| flag_scores(c, "stub")).collect();
        let model = flag_detector();
        let (plus, _) = fidelity_at_rho(&model, &refs, &scores, 0.5, FidSign::Plus).unwrap();
        let (minus, _) = fidelity_at_rho(&model, &refs, &scores, 0.5, FidSign::Minus).unwrap();
        assert_eq!(plus, 1.0);
        assert_eq!(minus, 0.0);
    }

    #[test]
    fn flat_curves_integrate_exactly() {
        let curve = FidelityCurve {
            rho_grid: RHO_GRID.to_vec(),
            fid_plus: vec![1.0; 8],
            fid_minus: vec![0.0; 8],
            degenerate_rhos: vec![],
        };
        let auc = curve.auc();
        assert_eq!(auc.plus, 100.0);
        assert_eq!(auc.minus, 0.0);
        assert_eq!(auc.combined, 100.0);
    }

    #[test]
    fn equal_curves_combine_to_fifty() {
        let vals = vec![0.3, 0.5, 0.2, 0.4, 0.6, 0.1, 0.0, 0.2];
        let curve = FidelityCurve {
            rho_grid: RHO_GRID.to_vec(),
            fid_plus: vals.clone(),
            fid_minus: vals,
            degenerate_rhos: vec![],
        };
        assert_eq!(curve.auc().combined, 50.0);
    }

    #[test]
    fn trapezoid_matches_hand_integration() {
        // y = 2x over [0,1]: integral 1, mean 1. Piecewise toy below:
        // points (0, 0), (0.5, 1), (1, 0): area 0.5, mean 0.5.
        assert_eq!(trapezoid_mean(&[0.0, 0.5, 1.0], &[0.0, 1.0, 0.0]), 0.5);
        // Uneven grid: (0,1), (0.1,1), (1,3): trapezoids 0.1 and 1.8 -> 1.9.
        let got = trapezoid_mean(&[0.0, 0.1, 1.0], &[1.0, 1.0, 3.0]);
        assert!((got - 1.9).abs() < 1e-15);
    }

    #[test]
    fn roc_auc_matches_pinned_examples() {
        assert_eq!(
            interpretation_roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(),
            100.0
        );
        assert_eq!(interpretation_roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 50.0);
        assert_eq!(
            interpretation_roc_auc(&[0.3, 0.7, 0.7, 0.1], &[1, 0, 1, 0]).unwrap(),
            62.5
        );
    }

    #[test]
    fn roc_auc_complement_symmetry() {
        let scores = [0.1, 0.5, 0.5, 0.9, 0.3, 0.3, 0.7];
        let labels = [0, 1, 0, 1, 1, 0, 0];
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = interpretation_roc_auc(&scores, &labels).unwrap();
        let b = interpretation_roc_auc(&neg, &labels).unwrap();
        // Each side rounds once at the final division, so allow one ulp.
        assert!((a + b - 100.0).abs() < 1e-12, "{a} + {b}");
    }

    #[test]
    fn roc_auc_names_degenerate_class() {
        let err = interpretation_roc_auc(&[0.1, 0.2], &[1, 1]).unwrap_err().to_string();
        assert!(err.contains("negative"), "{err}");
        let err = interpretation_roc_auc(&[0.1, 0.2], &[0, 0]).unwrap_err().to_string();
        assert!(err.contains("positive"), "{err}");
    }

    #[test]
    fn precision_examples_from_contract() {
        let cloud = toy_cloud(0, &[1, 0, 0, 1, 0], 1);
        let s = ImportanceScores::new(0, "m", "a", vec![0.9, 0.5, 0.4, 0.8, 0.1]);
        assert_eq!(precision_at_k(&[&cloud], &[s], 2).unwrap(), 100.0);

        let none = toy_cloud(1, &[0, 0, 0, 0, 0], 0);
        let s = ImportanceScores::new(1, "m", "a", vec![0.9, 0.5, 0.4, 0.8, 0.1]);
        assert_eq!(precision_at_k(&[&none], &[s], 2).unwrap(), 0.0);

        let tiny = toy_cloud(2, &[1, 0, 0], 1);
        let s = ImportanceScores::new(2, "m", "a", vec![0.5, 0.4, 0.3]);
        let got = precision_at_k(&[&tiny], &[s], 20).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn decisive_induced_is_perfect_for_z_detector() {
        let samples: Vec<PointCloud> =
            (0..6).map(|i| toy_cloud(i, &[0, 1, 0, 0, 1, 0, 0, 0], 1)).collect();
        let refs: Vec<&PointCloud> = samples.iter().collect();
        let model = flag_detector();
        let auc = decisive_induced_fidelity(&model, &refs, 7).unwrap();
        assert_eq!(auc.combined, 100.0);
        let again = decisive_induced_fidelity(&model, &refs, 7).unwrap();
        assert_eq!(auc, again);
        let other = decisive_induced_fidelity(&model, &refs, 8).unwrap();
        assert_eq!(auc.combined, other.combined);
    }

    #[test]
    fn tiny_cloud_flags_degenerate_removal() {
        // rho = 0.9 on n = 2 rounds to 2 -> empty remainder.
        let cloud = toy_cloud(0, &[1, 0], 1);
        let s = flag_scores(&cloud, "stub");
        let model = flag_detector();
        let (v, degenerate) =
            fidelity_at_rho(&model, &[&cloud], &[s], 0.9, FidSign::Plus).unwrap();
        assert!(degenerate);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn misaligned_ids_are_rejected() {
        let cloud = toy_cloud(0, &[1, 0, 0], 1);
        let s = ImportanceScores::new(5, "m", "a", vec![0.1, 0.2, 0.3]);
        let err = fidelity_auc(&flag_detector(), &[&cloud], &[s]).unwrap_err().to_string();
        assert!(err.contains("sample 0") && err.contains("sample 5"), "{err}");
    }

    #[test]
    fn report_rows_round_trip() {
        let report = MetricReport {
            model_id: "egnn-s3".into(),
            seed: 3,
            method: "gradxinput".into(),
            fid_plus_auc: 62.5,
            fid_minus_auc: 12.25,
            fid_auc: (62.5 - 12.25 + 100.0) / 2.0,
            interp_roc_auc: 91.125,
            precision_at_k: 100.0 / 3.0,
            n_samples: 100,
        };
        let row = report.csv_row();
        assert_eq!(MetricReport::from_csv_row(&row).unwrap(), report);
        assert_eq!(REPORT_HEADER.split(',').count(), row.split(',').count());
    }
}

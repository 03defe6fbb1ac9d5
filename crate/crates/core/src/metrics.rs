//! Evaluation metrics: selection accuracy, score-based ranking, curve
//! mean-squared error against the oracle, and credible-interval coverage,
//! with replication-level aggregation.

use crate::method::{ExposureCurve, MethodOutput};
use crate::stats;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    /// Positive predictive value; undefined when nothing is selected.
    pub precision: Option<f64>,
    /// Negative predictive value; undefined when everything is selected.
    pub npv: Option<f64>,
    pub f1: f64,
}

pub fn selection_metrics(selected: &[bool], truth: &[bool]) -> SelectionMetrics {
    assert_eq!(selected.len(), truth.len());
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut tn = 0.0;
    let mut fne = 0.0;
    for (&s, &t) in selected.iter().zip(truth) {
        match (s, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fne += 1.0,
        }
    }
    let sensitivity = tp / (tp + fne);
    let specificity = tn / (tn + fp);
    let precision = if tp + fp > 0.0 { Some(tp / (tp + fp)) } else { None };
    let npv = if tn + fne > 0.0 { Some(tn / (tn + fne)) } else { None };
    let f1 = match precision {
        Some(p) if p + sensitivity > 0.0 => 2.0 * p * sensitivity / (p + sensitivity),
        _ => 0.0,
    };
    SelectionMetrics {
        sensitivity,
        specificity,
        precision,
        npv,
        f1,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RankingMetrics {
    /// 1 when every associated exposure outranks every unassociated one.
    pub all_above: f64,
    /// Fraction of associated exposures strictly above the best
    /// unassociated score (ties count as failures).
    pub proportion_above: f64,
    /// Pairwise comparison rate (ties at half weight), kept as a
    /// secondary diagnostic.
    pub pairwise_auc: f64,
}

pub fn ranking_metrics(scores: &[f64], truth: &[bool]) -> RankingMetrics {
    assert_eq!(scores.len(), truth.len());
    let assoc: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .map(|(s, _)| *s)
        .collect();
    let unassoc: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, &t)| !t)
        .map(|(s, _)| *s)
        .collect();
    let max_null = unassoc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = assoc.iter().filter(|&&s| s > max_null).count() as f64;
    let proportion_above = above / assoc.len() as f64;
    let mut auc = 0.0;
    for &a in &assoc {
        for &u in &unassoc {
            auc += if a > u {
                1.0
            } else if a == u {
                0.5
            } else {
                0.0
            };
        }
    }
    auc /= (assoc.len() * unassoc.len()) as f64;
    RankingMetrics {
        all_above: if proportion_above == 1.0 { 1.0 } else { 0.0 },
        proportion_above,
        pairwise_auc: auc,
    }
}

/// Quartile percentiles used for the accuracy metrics.
pub const QUARTILE_PERCENTILES: [u8; 3] = [25, 50, 75];

/// Per-replication squared errors and coverage hits at the quartile grid
/// points of every associated exposure.
#[derive(Debug, Clone, Default)]
pub struct CurveAccuracy {
    /// (exposure, percentile, squared error, hit).
    pub points: Vec<(String, u8, f64, bool)>,
}

/// Collect quartile-point errors from one method record. Grid points whose
/// x coincides with the contrast anchor are excluded (their contrast is 0
/// by construction).
pub fn curve_accuracy(curves: &[ExposureCurve]) -> CurveAccuracy {
    let mut points = Vec::new();
    for curve in curves {
        for p in curve.points.iter() {
            if !QUARTILE_PERCENTILES.contains(&p.percentile) {
                continue;
            }
            if (p.x - curve.anchor_x).abs() < 1e-12 {
                continue;
            }
            let err = p.mean - p.truth;
            let hit = p.lo <= p.truth && p.truth <= p.hi;
            points.push((curve.exposure.clone(), p.percentile, err * err, hit));
        }
    }
    CurveAccuracy { points }
}

/// Across-replication curve metrics for one (scenario, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSummary {
    /// Pooled mean squared error over exposures, quartiles, replications.
    pub mse: f64,
    /// MSE per percentile (25/50/75), pooled over exposures.
    pub mse_by_percentile: Vec<(u8, f64)>,
    /// Pooled 90% interval coverage.
    pub coverage: f64,
    pub n_points: usize,
}

pub fn summarize_curves(reps: &[CurveAccuracy]) -> Option<CurveSummary> {
    let mut all_sq = Vec::new();
    let mut hits = 0usize;
    let mut by_pct: std::collections::BTreeMap<u8, Vec<f64>> = Default::default();
    for rep in reps {
        for (_, pct, sq, hit) in &rep.points {
            all_sq.push(*sq);
            hits += usize::from(*hit);
            by_pct.entry(*pct).or_default().push(*sq);
        }
    }
    if all_sq.is_empty() {
        return None;
    }
    Some(CurveSummary {
        mse: stats::mean(&all_sq),
        mse_by_percentile: by_pct
            .into_iter()
            .map(|(p, v)| (p, stats::mean(&v)))
            .collect(),
        coverage: hits as f64 / all_sq.len() as f64,
        n_points: all_sq.len(),
    })
}

/// One aggregated metrics row: (scenario, method, metric) with
/// distributional summaries across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// Replications contributing a defined value.
    pub n_defined: usize,
}

impl MetricsRow {
    /// Boxplot whisker bounds at 1.5 IQR.
    pub fn whiskers(&self) -> Option<(f64, f64)> {
        match (self.q1, self.q3) {
            (Some(q1), Some(q3)) => {
                let iqr = q3 - q1;
                Some((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
            }
            _ => None,
        }
    }
}

/// Aggregate one metric's per-replication values (None = undefined).
pub fn aggregate(
    scenario: &str,
    method: &str,
    metric: &str,
    values: &[Option<f64>],
) -> MetricsRow {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return MetricsRow {
            scenario: scenario.into(),
            method: method.into(),
            metric: metric.into(),
            mean: None,
            median: None,
            q1: None,
            q3: None,
            n_defined: 0,
        };
    }
    MetricsRow {
        scenario: scenario.into(),
        method: method.into(),
        metric: metric.into(),
        mean: Some(stats::mean(&defined)),
        median: Some(stats::quantile_of(&defined, 0.5)),
        q1: Some(stats::quantile_of(&defined, 0.25)),
        q3: Some(stats::quantile_of(&defined, 0.75)),
        n_defined: defined.len(),
    }
}

/// All per-replication metric rows for one (scenario, method) batch of
/// records, given the truth mask.
pub fn per_replication_rows(
    scenario: &str,
    outputs: &[MethodOutput],
    truth: &[bool],
) -> Vec<MetricsRow> {
    if outputs.is_empty() {
        return Vec::new();
    }
    let method = outputs[0].method;
    let mut rows = Vec::new();
    let pull = |f: &dyn Fn(&MethodOutput) -> Option<f64>| -> Vec<Option<f64>> {
        outputs.iter().map(f).collect()
    };
    let sel: Vec<SelectionMetrics> = outputs
        .iter()
        .map(|o| selection_metrics(&o.selected, truth))
        .collect();
    let m = method.id();
    rows.push(aggregate(scenario, m, "sensitivity", &sel.iter().map(|s| Some(s.sensitivity)).collect::<Vec<_>>()));
    rows.push(aggregate(scenario, m, "specificity", &sel.iter().map(|s| Some(s.specificity)).collect::<Vec<_>>()));
    rows.push(aggregate(scenario, m, "precision", &sel.iter().map(|s| s.precision).collect::<Vec<_>>()));
    rows.push(aggregate(scenario, m, "npv", &sel.iter().map(|s| s.npv).collect::<Vec<_>>()));
    rows.push(aggregate(scenario, m, "f1", &sel.iter().map(|s| Some(s.f1)).collect::<Vec<_>>()));
    rows.push(aggregate(
        scenario,
        m,
        "selected_count",
        &pull(&|o| Some(o.selected.iter().filter(|&&s| s).count() as f64)),
    ));
    if method.has_ranking_scores() {
        let rank: Vec<RankingMetrics> = outputs
            .iter()
            .map(|o| ranking_metrics(&o.scores, truth))
            .collect();
        rows.push(aggregate(scenario, m, "all_ranked_above", &rank.iter().map(|r| Some(r.all_above)).collect::<Vec<_>>()));
        rows.push(aggregate(scenario, m, "proportion_ranked_above", &rank.iter().map(|r| Some(r.proportion_above)).collect::<Vec<_>>()));
        rows.push(aggregate(scenario, m, "pairwise_auc", &rank.iter().map(|r| Some(r.pairwise_auc)).collect::<Vec<_>>()));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn truth12() -> Vec<bool> {
        let mut t = vec![false; 12];
        for i in 0..4 {
            t[i] = true;
        }
        t
    }

    #[test]
    fn selection_perfect_and_all_and_none() {
        let truth = truth12();
        let m = selection_metrics(&truth, &truth);
        assert_abs_diff_eq!(m.sensitivity, 1.0);
        assert_abs_diff_eq!(m.specificity, 1.0);
        assert_abs_diff_eq!(m.precision.unwrap(), 1.0);
        assert_abs_diff_eq!(m.npv.unwrap(), 1.0);
        assert_abs_diff_eq!(m.f1, 1.0);

        let m = selection_metrics(&vec![true; 12], &truth);
        assert_abs_diff_eq!(m.sensitivity, 1.0);
        assert_abs_diff_eq!(m.specificity, 0.0);
        assert_abs_diff_eq!(m.precision.unwrap(), 4.0 / 12.0);
        assert!(m.npv.is_none());
        assert_abs_diff_eq!(m.f1, 0.5, epsilon = 1e-12);

        let m = selection_metrics(&vec![false; 12], &truth);
        assert_abs_diff_eq!(m.sensitivity, 0.0);
        assert_abs_diff_eq!(m.specificity, 1.0);
        assert!(m.precision.is_none());
        assert_abs_diff_eq!(m.f1, 0.0);
    }

    #[test]
    fn selection_identities() {
        let truth = truth12();
        for pattern in 0..64u32 {
            let selected: Vec<bool> = (0..12).map(|j| (pattern >> (j % 6)) & 1 == 1).collect();
            let m = selection_metrics(&selected, &truth);
            // TP + FN = 4; TN + FP = 8 by construction
            let tp = m.sensitivity * 4.0;
            let tn = m.specificity * 8.0;
            assert!(tp <= 4.0 && tn <= 8.0);
            if let Some(p) = m.precision {
                assert!(m.f1 <= 2.0 * p + 1e-12);
            }
            assert!(m.f1 <= 1.0);
        }
    }

    #[test]
    fn ranking_examples() {
        let truth: Vec<bool> = vec![true, true, true, true, false, false];
        let r = ranking_metrics(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4], &truth);
        assert_abs_diff_eq!(r.all_above, 1.0);
        assert_abs_diff_eq!(r.proportion_above, 1.0);
        assert_abs_diff_eq!(r.pairwise_auc, 1.0);

        let r = ranking_metrics(&[0.9, 0.8, 0.3, 0.2, 0.5, 0.4], &truth);
        assert_abs_diff_eq!(r.all_above, 0.0);
        assert_abs_diff_eq!(r.proportion_above, 0.5);

        // an associated score tied with the best unassociated one fails
        let r = ranking_metrics(&[0.9, 0.8, 0.7, 0.5, 0.5, 0.4], &truth);
        assert_abs_diff_eq!(r.proportion_above, 0.75);
        assert_abs_diff_eq!(r.all_above, 0.0);
    }

    #[test]
    fn ranking_invariant_under_monotone_transform() {
        let truth: Vec<bool> = vec![true, true, false, false, false];
        let scores = [0.8, 0.3, 0.5, 0.2, 0.1];
        let a = ranking_metrics(&scores, &truth);
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp()).collect();
        let b = ranking_metrics(&transformed, &truth);
        assert_eq!(a.all_above, b.all_above);
        assert_eq!(a.proportion_above, b.proportion_above);
        assert_eq!(a.pairwise_auc, b.pairwise_auc);
    }

    fn curve(exposure: &str, entries: &[(u8, f64, f64, f64, f64, f64)]) -> ExposureCurve {
        ExposureCurve {
            exposure: exposure.into(),
            col: 0,
            anchor_x: 0.0,
            points: entries
                .iter()
                .map(|&(percentile, x, mean, lo, hi, truth)| crate::method::CurvePoint {
                    percentile,
                    x,
                    mean,
                    lo,
                    hi,
                    truth,
                })
                .collect(),
        }
    }

    #[test]
    fn curve_accuracy_and_summary() {
        let method = curve(
            "A",
            &[
                (25, -0.7, 1.0, 0.5, 1.5, 1.2),
                (50, 0.1, 0.2, -0.5, 0.9, 0.1),
                (75, 0.7, -0.3, -2.0, 2.0, 0.4),
                (10, -1.3, 0.0, -1.0, 1.0, 0.0), // not a quartile point
            ],
        );
        let acc = curve_accuracy(&[method]);
        assert_eq!(acc.points.len(), 3);
        let summary = summarize_curves(&[acc]).unwrap();
        let expect_mse = (0.04 + 0.01 + 0.49) / 3.0;
        assert_abs_diff_eq!(summary.mse, expect_mse, epsilon = 1e-12);
        assert_abs_diff_eq!(summary.coverage, 1.0);

        // identical method and oracle curves give ratio exactly one
        let oracle_summary = summary.clone();
        assert_abs_diff_eq!(summary.mse / oracle_summary.mse, 1.0);
    }

    #[test]
    fn infinite_intervals_reach_full_coverage() {
        let method = curve(
            "A",
            &[
                (25, -0.7, 10.0, f64::NEG_INFINITY, f64::INFINITY, 0.0),
                (75, 0.7, -10.0, f64::NEG_INFINITY, f64::INFINITY, 0.3),
            ],
        );
        let acc = curve_accuracy(&[method]);
        let summary = summarize_curves(&[acc]).unwrap();
        assert_abs_diff_eq!(summary.coverage, 1.0);
    }

    #[test]
    fn anchor_coincident_point_is_excluded() {
        let method = curve("A", &[(50, 0.0, 0.0, -0.1, 0.1, 0.0)]);
        let acc = curve_accuracy(&[method]);
        assert!(acc.points.is_empty());
    }

    #[test]
    fn contrast_offset_invariance() {
        // adding a constant to mean, lo, hi, and truth leaves everything
        // unchanged because all quantities are contrasts
        let base = curve("A", &[(25, -0.7, 1.0, 0.5, 1.5, 1.2)]);
        let shifted = curve("A", &[(25, -0.7, 1.0 + 5.0, 0.5 + 5.0, 1.5 + 5.0, 1.2 + 5.0)]);
        let a = summarize_curves(&[curve_accuracy(&[base])]).unwrap();
        let b = summarize_curves(&[curve_accuracy(&[shifted])]).unwrap();
        assert_abs_diff_eq!(a.mse, b.mse, epsilon = 1e-12);
        assert_eq!(a.coverage, b.coverage);
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate("s", "m", "x", &[Some(0.7)]);
        assert_eq!(r.mean, r.median);
        assert_eq!(r.n_defined, 1);

        let r = aggregate("s", "m", "x", &[Some(0.0), Some(1.0)]);
        assert_abs_diff_eq!(r.mean.unwrap(), 0.5);

        // undefined entries are excluded and counted
        let vals = vec![Some(1.0), None, Some(0.5), None, None, Some(0.75), Some(1.0), Some(0.25), Some(0.5), Some(0.75)];
        let r = aggregate("s", "m", "precision", &vals);
        assert_eq!(r.n_defined, 7);
        assert_abs_diff_eq!(r.mean.unwrap(), (1.0 + 0.5 + 0.75 + 1.0 + 0.25 + 0.5 + 0.75) / 7.0);

        let r = aggregate("s", "m", "precision", &[None, None]);
        assert!(r.mean.is_none());
        assert_eq!(r.n_defined, 0);

        let r = aggregate("s", "m", "f1", &[Some(0.2), Some(0.4), Some(0.6), Some(0.8)]);
        let (lo, hi) = r.whiskers().unwrap();
        assert!(lo < 0.2 && hi > 0.8);
    }
}

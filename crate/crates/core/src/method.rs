//! Shared output contract for the selection methods and the oracle:
//! per-exposure importance scores, the selected set, and posterior
//! exposure–response curves on a common percentile grid (contrast scale).

use crate::dgp::SimDataset;
use crate::stats;
use serde::{Deserialize, Serialize};

/// Percentiles at which curves are recorded: every 10th for plotting plus
/// the quartiles used by the accuracy metrics.
pub const GRID_PERCENTILES: [u8; 11] = [10, 20, 25, 30, 40, 50, 60, 70, 75, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Lasso,
    Bkmr,
    Bart,
    Ssgam,
    Oracle,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Lasso,
        MethodKind::Bkmr,
        MethodKind::Bart,
        MethodKind::Ssgam,
        MethodKind::Oracle,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            MethodKind::Lasso => "lasso",
            MethodKind::Bkmr => "bkmr",
            MethodKind::Bart => "bart",
            MethodKind::Ssgam => "ssgam",
            MethodKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.id() == s)
    }

    /// Scores usable for the ranking metrics (posterior probabilities or
    /// inclusion proportions; lasso coefficients are diagnostic only).
    pub fn has_ranking_scores(&self) -> bool {
        matches!(self, MethodKind::Bkmr | MethodKind::Bart | MethodKind::Ssgam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    PosteriorInclusionProbability,
    InclusionProportion,
    AbsCoefficient,
    None,
}

/// One grid point of an estimated exposure–response curve, all values on
/// the contrast scale (curve at x minus curve at the exposure mean).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percentile: u8,
    pub x: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// True contrast at this point.
    pub truth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureCurve {
    pub exposure: String,
    /// Column index in the scenario panel.
    pub col: usize,
    /// Anchor (exposure mean) the contrasts are taken against.
    pub anchor_x: f64,
    pub points: Vec<CurvePoint>,
}

/// Prediction grid for one dataset: per associated exposure, the x values
/// at `GRID_PERCENTILES` plus the shared all-means anchor row.
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    /// (column, exposure name, grid xs) per associated exposure.
    pub exposures: Vec<(usize, String, Vec<f64>)>,
    /// Column means of the panel (the anchor row).
    pub col_means: Vec<f64>,
    /// True contrasts aligned with `exposures` and `GRID_PERCENTILES`.
    pub true_contrasts: Vec<Vec<f64>>,
}

impl PredictionGrid {
    pub fn for_dataset(data: &SimDataset) -> Self {
        let col_means: Vec<f64> = (0..data.j())
            .map(|j| stats::mean(&data.column(j)))
            .collect();
        let mut exposures = Vec::new();
        let mut true_contrasts = Vec::new();
        for (col, shape) in &data.true_shapes {
            let mut sorted = data.column(*col);
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let xs: Vec<f64> = GRID_PERCENTILES
                .iter()
                .map(|&p| stats::quantile(&sorted, f64::from(p) / 100.0))
                .collect();
            let anchor = col_means[*col];
            let truth: Vec<f64> = xs.iter().map(|&x| shape.eval(x) - shape.eval(anchor)).collect();
            exposures.push((*col, data.names[*col].clone(), xs));
            true_contrasts.push(truth);
        }
        Self {
            exposures,
            col_means,
            true_contrasts,
        }
    }

    /// Total prediction rows: one per grid point plus the anchor row last.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        for (col, _, xs) in &self.exposures {
            for &x in xs {
                let mut row = self.col_means.clone();
                row[*col] = x;
                rows.push(row);
            }
        }
        rows.push(self.col_means.clone());
        rows
    }

    pub fn n_points(&self) -> usize {
        self.exposures.len() * GRID_PERCENTILES.len()
    }

    /// Assemble curves from per-draw contrast samples (rows = draws,
    /// columns = grid points in `rows()` order, anchor excluded).
    pub fn curves_from_draws(&self, draws: &[Vec<f64>]) -> Vec<ExposureCurve> {
        let g = GRID_PERCENTILES.len();
        let mut curves = Vec::new();
        for (e, (col, name, xs)) in self.exposures.iter().enumerate() {
            let mut points = Vec::with_capacity(g);
            for (k, &x) in xs.iter().enumerate() {
                let idx = e * g + k;
                let samples: Vec<f64> = draws.iter().map(|d| d[idx]).collect();
                points.push(CurvePoint {
                    percentile: GRID_PERCENTILES[k],
                    x,
                    mean: stats::mean(&samples),
                    lo: stats::quantile_of(&samples, 0.05),
                    hi: stats::quantile_of(&samples, 0.95),
                    truth: self.true_contrasts[e][k],
                });
            }
            curves.push(ExposureCurve {
                exposure: name.clone(),
                col: *col,
                anchor_x: self.col_means[*col],
                points,
            });
        }
        curves
    }
}

/// Sampler traces retained for convergence inspection.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Traces {
    pub names: Vec<String>,
    /// Column-per-name, one row per retained draw.
    pub draws: Vec<Vec<f64>>,
}

/// Per-(scenario, replication, method) record consumed by the metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutput {
    pub method: MethodKind,
    pub exposures: Vec<String>,
    pub scores: Vec<f64>,
    pub score_kind: ScoreKind,
    pub selected: Vec<bool>,
    pub curves: Vec<ExposureCurve>,
    #[serde(default)]
    pub diagnostics: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub traces: Option<Traces>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip() {
        for m in MethodKind::ALL {
            assert_eq!(MethodKind::parse(m.id()), Some(m));
        }
        assert_eq!(MethodKind::parse("boosting"), None);
    }

    #[test]
    fn grid_includes_quartiles_and_deciles() {
        assert!(GRID_PERCENTILES.contains(&25));
        assert!(GRID_PERCENTILES.contains(&50));
        assert!(GRID_PERCENTILES.contains(&75));
        for p in [10u8, 20, 30, 40, 60, 70, 80, 90] {
            assert!(GRID_PERCENTILES.contains(&p));
        }
    }
}

//! Data-generating processes: scenario enumeration, noise calibration to a
//! target signal R-squared, and replicated dataset generation through the
//! fitted copula.

use crate::copula::{sample_panel, scale_dependence, CopulaModel};
use crate::error::{Error, Result};
use crate::ingest::ExposurePanel;
use crate::rng::{derive_rng, TaskRng};
use crate::shapes::{calibrate_scale, ResponseShape, ShapeKind, ShapeParams, Strength};
use crate::stats;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// The four outcome-associated exposures and their linear strengths.
pub const ASSOCIATED: [(&str, Strength); 4] = [
    ("MPB", Strength::Strong),
    ("PPB", Strength::Weak),
    ("BP3", Strength::Strong),
    ("BPA", Strength::Weak),
];

/// Column set of the small model: the four phenols plus the two phthalates
/// most correlated with them.
pub const J6_COLUMNS: [&str; 6] = ["MPB", "PPB", "BP3", "BPA", "MEP", "MHH"];

pub const DEFAULT_N: usize = 250;
pub const DEFAULT_REPS: usize = 100;
const SIGMA_CALIBRATION_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snr {
    Low,
    High,
}

impl Snr {
    pub const ALL: [Snr; 2] = [Snr::Low, Snr::High];

    pub fn r_squared(&self) -> f64 {
        match self {
            Snr::Low => 0.10,
            Snr::High => 0.30,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Snr::Low => "low-snr",
            Snr::High => "high-snr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrScale {
    Full,
    Half,
}

impl CorrScale {
    pub const ALL: [CorrScale; 2] = [CorrScale::Full, CorrScale::Half];

    pub fn factor(&self) -> f64 {
        match self {
            CorrScale::Full => 1.0,
            CorrScale::Half => 0.5,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            CorrScale::Full => "fullcorr",
            CorrScale::Half => "lowcorr",
        }
    }
}

/// One data-generating process: shape x signal-to-noise x correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DgpId {
    pub shape: ShapeKind,
    pub snr: Snr,
    pub corr: CorrScale,
}

impl DgpId {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.shape.id(), self.snr.id(), self.corr.id())
    }

    /// Stable index used for seeding (shape-major enumeration order).
    pub fn index(&self) -> u64 {
        let s = ShapeKind::ALL.iter().position(|k| *k == self.shape).unwrap() as u64;
        let n = Snr::ALL.iter().position(|k| *k == self.snr).unwrap() as u64;
        let c = CorrScale::ALL.iter().position(|k| *k == self.corr).unwrap() as u64;
        s * 4 + n * 2 + c
    }

    pub fn all() -> Vec<DgpId> {
        let mut out = Vec::with_capacity(16);
        for shape in ShapeKind::ALL {
            for snr in Snr::ALL {
                for corr in CorrScale::ALL {
                    out.push(DgpId { shape, snr, corr });
                }
            }
        }
        out
    }
}

/// A simulation scenario: a DGP estimated at one model size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub dgp: DgpId,
    pub j_total: usize,
    pub n: usize,
    pub reps: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub fn id(&self) -> String {
        format!("{}-j{}", self.dgp.id(), self.j_total)
    }

    pub fn parse_id(id: &str, master_seed: u64, n: usize, reps: usize) -> Result<Scenario> {
        let parts: Vec<&str> = id.split('-').collect();
        // shape, "low"/"high", "snr", corr, jN
        if parts.len() != 5 {
            return Err(Error::Config(format!("unknown scenario '{id}'")));
        }
        let shape = ShapeKind::parse(parts[0])
            .ok_or_else(|| Error::Config(format!("unknown scenario '{id}'")))?;
        let snr = match (parts[1], parts[2]) {
            ("low", "snr") => Snr::Low,
            ("high", "snr") => Snr::High,
            _ => return Err(Error::Config(format!("unknown scenario '{id}'"))),
        };
        let corr = match parts[3] {
            "fullcorr" => CorrScale::Full,
            "lowcorr" => CorrScale::Half,
            _ => return Err(Error::Config(format!("unknown scenario '{id}'"))),
        };
        let j_total = match parts[4] {
            "j6" => 6,
            "j12" => 12,
            _ => return Err(Error::Config(format!("unknown scenario '{id}'"))),
        };
        Ok(Scenario {
            dgp: DgpId { shape, snr, corr },
            j_total,
            n,
            reps,
            master_seed,
        })
    }
}

/// All 32 scenarios (16 DGPs at two model sizes).
pub fn enumerate_scenarios(master_seed: u64, n: usize, reps: usize) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(32);
    for dgp in DgpId::all() {
        for j_total in [6usize, 12] {
            out.push(Scenario {
                dgp,
                j_total,
                n,
                reps,
                master_seed,
            });
        }
    }
    out
}

/// sigma^2 for a target R^2 given the signal variance.
pub fn sigma2_for_r2(signal_variance: f64, r2: f64) -> Result<f64> {
    if signal_variance <= 0.0 {
        return Err(Error::Calibration(
            "signal variance is zero; cannot calibrate noise".into(),
        ));
    }
    Ok(signal_variance * (1.0 - r2) / r2)
}

/// A DGP with calibrated shapes and noise, ready to generate datasets.
#[derive(Debug, Clone)]
pub struct DgpModel {
    pub dgp: DgpId,
    pub master_seed: u64,
    /// Dependence-scaled copula over all 12 exposures.
    pub copula: CopulaModel,
    /// Calibrated shape per associated exposure, in `ASSOCIATED` order.
    pub shapes: Vec<ResponseShape>,
    /// Column index of each associated exposure in the copula panel.
    pub associated_idx: Vec<usize>,
    pub sigma: f64,
    pub signal_variance: f64,
}

impl DgpModel {
    /// Calibrate shapes and noise for one DGP against the fitted copula.
    pub fn build(
        dgp: DgpId,
        copula: &CopulaModel,
        master_seed: u64,
        params: ShapeParams,
    ) -> Result<DgpModel> {
        let scaled = scale_dependence(copula, dgp.corr.factor())?;
        let mut shapes = Vec::with_capacity(4);
        let mut associated_idx = Vec::with_capacity(4);
        for (name, strength) in ASSOCIATED {
            let idx = scaled
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("copula panel lacks exposure '{name}'")))?;
            let marginal = &scaled.marginals[idx];
            shapes.push(calibrate_scale(
                dgp.shape, strength, marginal.lo, marginal.hi, params,
            )?);
            associated_idx.push(idx);
        }
        // Monte Carlo noise calibration on a large copula draw.
        let mut rng = derive_rng(master_seed, "sigma-calibration", &[dgp.index()]);
        let panel = sample_panel(&scaled, SIGMA_CALIBRATION_DRAWS, &mut rng)?;
        let signal: Vec<f64> = (0..panel.n())
            .map(|i| {
                shapes
                    .iter()
                    .zip(&associated_idx)
                    .map(|(s, &j)| s.eval(panel.x[[i, j]]))
                    .sum()
            })
            .collect();
        let signal_variance = stats::variance(&signal);
        let sigma2 = sigma2_for_r2(signal_variance, dgp.snr.r_squared())?;
        Ok(DgpModel {
            dgp,
            master_seed,
            copula: scaled,
            shapes,
            associated_idx,
            sigma: sigma2.sqrt(),
            signal_variance,
        })
    }

    /// Signal value for one row of a full 12-column panel.
    pub fn signal(&self, panel: &ExposurePanel, row: usize) -> f64 {
        self.shapes
            .iter()
            .zip(&self.associated_idx)
            .map(|(s, &j)| s.eval(panel.x[[row, j]]))
            .sum()
    }
}

/// One replicated dataset restricted to a scenario's columns.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub scenario: Scenario,
    pub rep: usize,
    pub x: Array2<f64>,
    pub names: Vec<String>,
    pub y: Vec<f64>,
    pub truth: Vec<bool>,
    pub sigma: f64,
    /// Calibrated true curve per associated exposure, keyed by column index.
    pub true_shapes: Vec<(usize, ResponseShape)>,
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn j(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).to_vec()
    }

    pub fn truth_count(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }
}

/// Generate the shared full-panel dataset for (DGP, rep) and restrict it to
/// the scenario's columns. The J=6 and J=12 scenarios of the same DGP share
/// identical draws, hence identical responses.
pub fn generate_dataset(model: &DgpModel, scenario: &Scenario, rep: usize) -> Result<SimDataset> {
    assert_eq!(model.dgp, scenario.dgp, "scenario does not match the DGP model");
    let mut rng: TaskRng = derive_rng(
        scenario.master_seed,
        "dataset",
        &[model.dgp.index(), rep as u64],
    );
    let panel = sample_panel(&model.copula, scenario.n, &mut rng)?;
    let mut y = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let noise: f64 = StandardNormal.sample(&mut rng);
        y.push(model.signal(&panel, i) + model.sigma * noise);
    }

    let keep: Vec<usize> = if scenario.j_total == panel.j() {
        (0..panel.j()).collect()
    } else {
        J6_COLUMNS
            .iter()
            .map(|name| {
                panel
                    .index_of(name)
                    .ok_or_else(|| Error::Config(format!("panel lacks exposure '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if keep.len() != scenario.j_total {
        return Err(Error::Config(format!(
            "scenario expects {} columns, selected {}",
            scenario.j_total,
            keep.len()
        )));
    }

    let n = scenario.n;
    let mut x = Array2::<f64>::zeros((n, keep.len()));
    let mut names = Vec::with_capacity(keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        names.push(panel.names[src].clone());
        for i in 0..n {
            x[[i, dst]] = panel.x[[i, src]];
        }
    }
    let truth: Vec<bool> = names
        .iter()
        .map(|n| ASSOCIATED.iter().any(|(a, _)| a == n))
        .collect();
    let true_shapes: Vec<(usize, ResponseShape)> = ASSOCIATED
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let col = names.iter().position(|n| n == name).expect("associated column kept");
            (col, model.shapes[k].clone())
        })
        .collect();

    Ok(SimDataset {
        scenario: scenario.clone(),
        rep,
        x,
        names,
        y,
        truth,
        sigma: model.sigma,
        true_shapes,
    })
}

/// R^2 of the response on the true signal (used by calibration checks).
pub fn empirical_r2(model: &DgpModel, dataset: &SimDataset) -> f64 {
    let signal: Vec<f64> = (0..dataset.n())
        .map(|i| {
            dataset
                .true_shapes
                .iter()
                .map(|(col, shape)| shape.eval(dataset.x[[i, *col]]))
                .sum()
        })
        .collect();
    let _ = model;
    // R^2 from the simple regression of y on the signal.
    let r = stats::pearson(&signal, &dataset.y);
    r * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{fit_copula, pseudo_observations, CopulaFamily, MarginalKde};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// A small synthetic 12-column copula standing in for the fitted model.
    pub fn toy_copula(seed: u64) -> CopulaModel {
        let names: Vec<String> = crate::dgp::tests::panel_names();
        let j = names.len();
        let n = 120;
        let mut rng = derive_rng(seed, "toy-copula", &[]);
        let mut x = Array2::<f64>::zeros((n, j));
        for i in 0..n {
            let shared: f64 = rng.sample(StandardNormal);
            for k in 0..j {
                let e: f64 = rng.sample(StandardNormal);
                x[[i, k]] = 0.6 * shared + e;
            }
        }
        ExposurePanel::standardize_columns(&mut x).unwrap();
        let panel = ExposurePanel { x, names: names.clone() };
        let u = pseudo_observations(&panel);
        let marginals: Vec<MarginalKde> = (0..j)
            .map(|k| MarginalKde::fit(&panel.column(k)).unwrap())
            .collect();
        fit_copula(&u, marginals, names, CopulaFamily::Gaussian).unwrap()
    }

    pub fn panel_names() -> Vec<String> {
        ["MPB", "PPB", "BP3", "BPA", "MEP", "MHH", "MOH", "ECP", "COP", "MZP", "MBP", "MIB"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn scenario_enumeration_counts() {
        let scenarios = enumerate_scenarios(42, DEFAULT_N, DEFAULT_REPS);
        assert_eq!(scenarios.len(), 32);
        assert_eq!(DgpId::all().len(), 16);
        // 16 DGPs x 100 reps of shared datasets
        let datasets: usize = DgpId::all().len() * DEFAULT_REPS;
        assert_eq!(datasets, 1600);
        // ids are unique and parseable
        for s in &scenarios {
            let parsed = Scenario::parse_id(&s.id(), 42, DEFAULT_N, DEFAULT_REPS).unwrap();
            assert_eq!(parsed.id(), s.id());
        }
        assert!(Scenario::parse_id("nope-high-snr-lowcorr-j6", 42, 250, 100).is_err());
    }

    #[test]
    fn sigma2_formula_examples() {
        assert_abs_diff_eq!(sigma2_for_r2(1.0, 0.10).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma2_for_r2(1.0, 0.30).unwrap(), 7.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma2_for_r2(1.0, 0.999999).unwrap(), 0.0, epsilon = 1e-5);
        assert!(sigma2_for_r2(0.0, 0.3).is_err());
    }

    #[test]
    fn datasets_are_deterministic_and_shared_across_model_sizes() {
        let copula = toy_copula(3);
        let dgp = DgpId {
            shape: ShapeKind::Quadratic,
            snr: Snr::High,
            corr: CorrScale::Half,
        };
        let model = DgpModel::build(dgp, &copula, 42, ShapeParams::default()).unwrap();
        let s12 = Scenario { dgp, j_total: 12, n: 100, reps: 2, master_seed: 42 };
        let s6 = Scenario { dgp, j_total: 6, n: 100, reps: 2, master_seed: 42 };

        let a = generate_dataset(&model, &s12, 1).unwrap();
        let b = generate_dataset(&model, &s12, 1).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);

        let c = generate_dataset(&model, &s6, 1).unwrap();
        assert_eq!(c.j(), 6);
        assert_eq!(a.y, c.y, "responses shared across model sizes");
        for name in J6_COLUMNS {
            let ja = a.names.iter().position(|n| n == name).unwrap();
            let jc = c.names.iter().position(|n| n == name).unwrap();
            for i in 0..a.n() {
                assert_eq!(a.x[[i, ja]], c.x[[i, jc]]);
            }
        }
    }

    #[test]
    fn truth_mask_counts_and_phthalates_false() {
        let copula = toy_copula(4);
        let dgp = DgpId {
            shape: ShapeKind::Linear,
            snr: Snr::Low,
            corr: CorrScale::Full,
        };
        let model = DgpModel::build(dgp, &copula, 7, ShapeParams::default()).unwrap();
        let s12 = Scenario { dgp, j_total: 12, n: 60, reps: 1, master_seed: 7 };
        let d = generate_dataset(&model, &s12, 0).unwrap();
        assert_eq!(d.truth_count(), 4);
        let phthalates = ["MEP", "MHH", "MOH", "ECP", "COP", "MZP", "MBP", "MIB"];
        for p in phthalates {
            let j = d.names.iter().position(|n| n == p).unwrap();
            assert!(!d.truth[j], "{p} must be unassociated");
        }
    }

    #[test]
    fn signal_uses_only_associated_columns() {
        let copula = toy_copula(5);
        let dgp = DgpId {
            shape: ShapeKind::DawsonSkew,
            snr: Snr::High,
            corr: CorrScale::Full,
        };
        let model = DgpModel::build(dgp, &copula, 11, ShapeParams::default()).unwrap();
        let s12 = Scenario { dgp, j_total: 12, n: 50, reps: 1, master_seed: 11 };
        let d = generate_dataset(&model, &s12, 0).unwrap();
        // recompute signal from the four truth columns only
        for i in 0..d.n() {
            let sig: f64 = d
                .true_shapes
                .iter()
                .map(|(col, shape)| shape.eval(d.x[[i, *col]]))
                .sum();
            // y - signal is pure noise; verify it has no dependence on decoys
            assert!((d.y[i] - sig).abs() < 12.0 * d.sigma);
        }
    }

    #[test]
    fn empirical_r2_tracks_target_over_replications() {
        let copula = toy_copula(6);
        let dgp = DgpId {
            shape: ShapeKind::Linear,
            snr: Snr::High,
            corr: CorrScale::Half,
        };
        let model = DgpModel::build(dgp, &copula, 21, ShapeParams::default()).unwrap();
        let s = Scenario { dgp, j_total: 12, n: 250, reps: 40, master_seed: 21 };
        let mut r2s = Vec::new();
        for rep in 0..40 {
            let d = generate_dataset(&model, &s, rep).unwrap();
            r2s.push(empirical_r2(&model, &d));
        }
        let mean_r2 = stats::mean(&r2s);
        assert_abs_diff_eq!(mean_r2, 0.30, epsilon = 0.03);
    }
}

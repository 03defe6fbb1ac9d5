//! Elliptical copulas with truncated kernel-smoothed marginals.
//!
//! Dependence is parameterised on the Spearman scale (moment inversion to
//! the Pearson scale), the Student-t degrees of freedom are fitted by
//! maximum likelihood, and sampling routes uniforms through the marginal
//! quantile tables.

use crate::error::{Error, Result};
use crate::ingest::{CorrMatrix, ExposurePanel};
use crate::linalg::{min_eigenvalue, nearest_correlation, Chol};
use crate::rng::TaskRng;
use crate::special::{norm_cdf, norm_quantile, t_cdf, t_pdf_ln, t_quantile};
use crate::stats;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub const CDF_GRID_POINTS: usize = 2048;
const MIN_EIGEN_FOR_PD: f64 = 1e-10;

/// Gaussian-kernel density estimate truncated to the observed range, with
/// a tabulated CDF for quantile lookups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalKde {
    /// Sorted sample the KDE smooths.
    pub support: Vec<f64>,
    pub bandwidth: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(skip)]
    cdf_grid: Vec<f64>,
}

impl MarginalKde {
    /// Fit with Silverman bandwidth 0.9 min(sd, IQR/1.34) n^{-1/5},
    /// renormalised over [min(x), max(x)].
    pub fn fit(x: &[f64]) -> Result<Self> {
        if x.len() < 10 {
            return Err(Error::Domain(format!(
                "marginal KDE needs at least 10 points, got {}",
                x.len()
            )));
        }
        let sd = stats::sd(x);
        if sd <= 0.0 {
            return Err(Error::Domain("degenerate column: zero variance".into()));
        }
        let mut support = x.to_vec();
        support.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = stats::quantile(&support, 0.75) - stats::quantile(&support, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = 0.9 * spread * (x.len() as f64).powf(-0.2);
        let lo = support[0];
        let hi = support[support.len() - 1];
        let mut kde = Self {
            support,
            bandwidth,
            lo,
            hi,
            cdf_grid: Vec::new(),
        };
        kde.rebuild_grid();
        Ok(kde)
    }

    /// Recompute the CDF table; needed after deserialisation.
    pub fn rebuild_grid(&mut self) {
        let n = self.support.len() as f64;
        let h = self.bandwidth;
        let raw = |t: f64| -> f64 {
            self.support.iter().map(|&xi| norm_cdf((t - xi) / h)).sum::<f64>() / n
        };
        let g_lo = raw(self.lo);
        let g_hi = raw(self.hi);
        let scale = g_hi - g_lo;
        let mut grid = Vec::with_capacity(CDF_GRID_POINTS);
        for k in 0..CDF_GRID_POINTS {
            let t = self.lo + (self.hi - self.lo) * k as f64 / (CDF_GRID_POINTS - 1) as f64;
            grid.push((raw(t) - g_lo) / scale);
        }
        grid[0] = 0.0;
        let last = CDF_GRID_POINTS - 1;
        grid[last] = 1.0;
        // The smoothed CDF is strictly increasing in exact arithmetic;
        // guard the table against rounding-induced ties.
        for k in 1..CDF_GRID_POINTS {
            if grid[k] <= grid[k - 1] {
                grid[k] = grid[k - 1] + 1e-15;
            }
        }
        grid[last] = grid[last].max(1.0);
        self.cdf_grid = grid;
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / (CDF_GRID_POINTS - 1) as f64
    }

    /// Truncated CDF by linear interpolation of the table.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let pos = (x - self.lo) / self.step();
        let k = (pos.floor() as usize).min(CDF_GRID_POINTS - 2);
        let frac = pos - k as f64;
        self.cdf_grid[k] + frac * (self.cdf_grid[k + 1] - self.cdf_grid[k])
    }

    /// Quantile by inverse interpolation; clamps into [lo, hi].
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lo;
        }
        if u >= 1.0 {
            return self.hi;
        }
        let k = match self
            .cdf_grid
            .binary_search_by(|v| v.partial_cmp(&u).unwrap())
        {
            Ok(k) => return self.lo + k as f64 * self.step(),
            Err(k) => k,
        };
        let k1 = k.clamp(1, CDF_GRID_POINTS - 1);
        let (c0, c1) = (self.cdf_grid[k1 - 1], self.cdf_grid[k1]);
        let frac = (u - c0) / (c1 - c0);
        self.lo + ((k1 - 1) as f64 + frac) * self.step()
    }
}

/// Rank-transformed panel in (0,1).
#[derive(Debug, Clone)]
pub struct PseudoObservations {
    pub u: Array2<f64>,
}

impl PseudoObservations {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn j(&self) -> usize {
        self.u.ncols()
    }
}

/// U[i][j] = rank(x_ij) / (N+1) with average ranks for ties.
pub fn pseudo_observations(panel: &ExposurePanel) -> PseudoObservations {
    let n = panel.n();
    let j = panel.j();
    let mut u = Array2::<f64>::zeros((n, j));
    for k in 0..j {
        let ranks = stats::midranks(&panel.column(k));
        for i in 0..n {
            u[[i, k]] = ranks[i] / (n as f64 + 1.0);
        }
    }
    PseudoObservations { u }
}

/// Elementwise Spearman -> Pearson moment map for elliptical copulas.
pub fn spearman_to_pearson_elem(r: f64) -> f64 {
    2.0 * (std::f64::consts::PI * r / 6.0).sin()
}

/// Matrix Spearman -> Pearson map, with a nearest-correlation projection
/// when the result loses positive definiteness.
pub fn spearman_to_pearson(r_s: &CorrMatrix) -> Result<CorrMatrix> {
    let j = r_s.j();
    let mut p = Array2::<f64>::eye(j);
    for a in 0..j {
        for b in 0..j {
            if a != b {
                p[[a, b]] = spearman_to_pearson_elem(r_s.0[[a, b]]);
            }
        }
    }
    if min_eigenvalue(&p) < MIN_EIGEN_FOR_PD {
        p = nearest_correlation(&p, 1e-8, MIN_EIGEN_FOR_PD)?;
    }
    Ok(CorrMatrix(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    Gaussian,
    StudentT,
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CopulaFamily::Gaussian => write!(f, "gaussian"),
            CopulaFamily::StudentT => write!(f, "student_t"),
        }
    }
}

/// Fitted copula: dependence matrices on both scales, optional degrees of
/// freedom, and the per-column marginals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaModel {
    pub family: CopulaFamily,
    pub names: Vec<String>,
    /// Pearson-scale dependence (row-major when serialised).
    pub pearson: Vec<Vec<f64>>,
    /// Spearman-scale dependence the Pearson matrix was derived from.
    pub spearman: Vec<Vec<f64>>,
    /// Degrees of freedom; absent for the Gaussian family.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu: Option<f64>,
    /// Maximised copula log-likelihood; absent after dependence scaling.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loglik: Option<f64>,
    pub marginals: Vec<MarginalKde>,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let j = rows.len();
    let mut m = Array2::<f64>::zeros((j, j));
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            m[[i, k]] = *v;
        }
    }
    m
}

impl CopulaModel {
    pub fn j(&self) -> usize {
        self.names.len()
    }

    pub fn pearson_matrix(&self) -> Array2<f64> {
        from_rows(&self.pearson)
    }

    pub fn spearman_matrix(&self) -> Array2<f64> {
        from_rows(&self.spearman)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: CopulaModel = serde_json::from_str(text)?;
        for m in &mut model.marginals {
            m.rebuild_grid();
        }
        Ok(model)
    }

    /// Restrict the model to a subset of columns (elliptical copulas are
    /// closed under margins).
    pub fn restrict(&self, indices: &[usize]) -> Self {
        let pick = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            indices
                .iter()
                .map(|&a| indices.iter().map(|&b| rows[a][b]).collect())
                .collect()
        };
        Self {
            family: self.family,
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            pearson: pick(&self.pearson),
            spearman: pick(&self.spearman),
            nu: self.nu,
            loglik: None,
            marginals: indices.iter().map(|&i| self.marginals[i].clone()).collect(),
        }
    }
}

/// Gaussian copula log-likelihood at pseudo-observations.
fn gaussian_loglik(u: &PseudoObservations, p: &Array2<f64>) -> Result<f64> {
    let j = u.j();
    if j == 1 {
        return Ok(0.0);
    }
    let chol = Chol::from_array(p, 0.0)
        .map_err(|_| Error::Fit("dependence matrix is not positive definite".into()))?;
    let log_det = chol.log_det();
    let mut ll = 0.0;
    let mut z = vec![0.0; j];
    for i in 0..u.n() {
        for k in 0..j {
            z[k] = norm_quantile(u.u[[i, k]]);
        }
        let q = chol.quad_form(&z);
        let zz: f64 = z.iter().map(|v| v * v).sum();
        ll += -0.5 * log_det - 0.5 * (q - zz);
    }
    Ok(ll)
}

/// Student-t copula log-likelihood at pseudo-observations.
fn student_t_loglik(u: &PseudoObservations, p: &Array2<f64>, nu: f64) -> Result<f64> {
    let j = u.j();
    if j == 1 {
        return Ok(0.0);
    }
    let chol = Chol::from_array(p, 0.0)
        .map_err(|_| Error::Fit("dependence matrix is not positive definite".into()))?;
    let log_det = chol.log_det();
    let jf = j as f64;
    let const_mv = ln_gamma((nu + jf) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * jf * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det;
    let mut ll = 0.0;
    let mut t = vec![0.0; j];
    for i in 0..u.n() {
        let mut marg = 0.0;
        for k in 0..j {
            t[k] = t_quantile(u.u[[i, k]], nu);
            marg += t_pdf_ln(t[k], nu);
        }
        let q = chol.quad_form(&t);
        ll += const_mv - 0.5 * (nu + jf) * (1.0 + q / nu).ln() - marg;
    }
    Ok(ll)
}

/// Sample Spearman matrix of pseudo-observations (ranks are affine in U).
fn spearman_of_u(u: &PseudoObservations) -> CorrMatrix {
    let j = u.j();
    let cols: Vec<Vec<f64>> = (0..j).map(|k| u.u.column(k).to_vec()).collect();
    let mut r = Array2::<f64>::eye(j);
    for a in 0..j {
        for b in 0..a {
            let c = stats::pearson(&cols[a], &cols[b]);
            r[[a, b]] = c;
            r[[b, a]] = c;
        }
    }
    CorrMatrix(r)
}

const NU_LOG_LO: f64 = 0.7419373447293773; // ln 2.1
const NU_LOG_HI: f64 = 4.605170185988092; // ln 100

/// Golden-section maximisation of the t-copula log-likelihood over ln(nu).
fn fit_nu(u: &PseudoObservations, p: &Array2<f64>) -> Result<(f64, f64)> {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = NU_LOG_LO;
    let mut b = NU_LOG_HI;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = student_t_loglik(u, p, c.exp())?;
    let mut fd = student_t_loglik(u, p, d.exp())?;
    while (b - a).abs() > 1e-4 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = student_t_loglik(u, p, c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = student_t_loglik(u, p, d.exp())?;
        }
    }
    let ln_nu = 0.5 * (a + b);
    let nu = ln_nu.exp();
    Ok((nu, student_t_loglik(u, p, nu)?))
}

/// Fit a copula of the requested family: dependence by Spearman moment
/// inversion, Student-t degrees of freedom by maximum likelihood.
pub fn fit_copula(
    u: &PseudoObservations,
    marginals: Vec<MarginalKde>,
    names: Vec<String>,
    family: CopulaFamily,
) -> Result<CopulaModel> {
    let spearman = spearman_of_u(u);
    let pearson = spearman_to_pearson(&spearman)?;
    if min_eigenvalue(&pearson.0) < MIN_EIGEN_FOR_PD {
        return Err(Error::Fit(
            "dependence matrix not positive definite after projection".into(),
        ));
    }
    let (nu, loglik) = match family {
        CopulaFamily::Gaussian => (None, gaussian_loglik(u, &pearson.0)?),
        CopulaFamily::StudentT => {
            if u.j() == 1 {
                (Some(2.1f64.max(100.0f64.min(10.0))), 0.0)
            } else {
                let (nu, ll) = fit_nu(u, &pearson.0)?;
                (Some(nu), ll)
            }
        }
    };
    Ok(CopulaModel {
        family,
        names,
        pearson: to_rows(&pearson.0),
        spearman: to_rows(&spearman.0),
        nu,
        loglik: Some(loglik),
        marginals,
    })
}

/// Both family fits sorted by log-likelihood, best first.
#[derive(Debug, Clone)]
pub struct FamilyComparison {
    pub ranked: Vec<CopulaModel>,
    /// loglik(best) - loglik(second).
    pub loglik_diff: f64,
}

pub fn compare_families(
    u: &PseudoObservations,
    marginals: &[MarginalKde],
    names: &[String],
) -> Result<FamilyComparison> {
    let gauss = fit_copula(u, marginals.to_vec(), names.to_vec(), CopulaFamily::Gaussian)?;
    let t = fit_copula(u, marginals.to_vec(), names.to_vec(), CopulaFamily::StudentT)?;
    let mut ranked = vec![gauss, t];
    ranked.sort_by(|a, b| b.loglik.unwrap().partial_cmp(&a.loglik.unwrap()).unwrap());
    let diff = ranked[0].loglik.unwrap() - ranked[1].loglik.unwrap();
    Ok(FamilyComparison {
        ranked,
        loglik_diff: diff,
    })
}

/// Multiply Spearman off-diagonals by `factor` and re-map to the Pearson
/// scale. Marginals and degrees of freedom are unchanged.
pub fn scale_dependence(model: &CopulaModel, factor: f64) -> Result<CopulaModel> {
    assert!(factor > 0.0 && factor <= 1.0, "factor must be in (0, 1]");
    let j = model.j();
    let mut spearman = model.spearman_matrix();
    for a in 0..j {
        for b in 0..j {
            if a != b {
                spearman[[a, b]] *= factor;
            }
        }
    }
    let pearson = spearman_to_pearson(&CorrMatrix(spearman.clone()))?;
    Ok(CopulaModel {
        family: model.family,
        names: model.names.clone(),
        pearson: to_rows(&pearson.0),
        spearman: to_rows(&spearman),
        nu: model.nu,
        loglik: if factor == 1.0 { model.loglik } else { None },
        marginals: model.marginals.clone(),
    })
}

/// Draw `n` rows on the elliptical scale and map through the marginal
/// quantiles. Values stay inside the marginal truncation bounds.
pub fn sample_raw(model: &CopulaModel, n: usize, rng: &mut TaskRng) -> Result<Array2<f64>> {
    assert!(n >= 1);
    let j = model.j();
    let p = model.pearson_matrix();
    let chol = Chol::from_array(&p, 0.0)
        .map_err(|_| Error::Fit("dependence matrix is not positive definite".into()))?;
    let nu = model.nu;
    if model.family == CopulaFamily::StudentT {
        assert!(nu.is_some(), "Student-t model must carry degrees of freedom");
    }
    let chi = match (model.family, nu) {
        (CopulaFamily::StudentT, Some(nu)) => Some(ChiSquared::new(nu).unwrap()),
        _ => None,
    };
    let mut out = Array2::<f64>::zeros((n, j));
    let mut z = vec![0.0; j];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let mut x = chol.mul_lower(&z);
        if let Some(chi) = &chi {
            let w: f64 = chi.sample(rng);
            let nu = nu.unwrap();
            let scale = (nu / w).sqrt();
            for v in x.iter_mut() {
                *v *= scale;
            }
        }
        for (k, &v) in x.iter().enumerate() {
            let u = match model.family {
                CopulaFamily::Gaussian => norm_cdf(v),
                CopulaFamily::StudentT => t_cdf(v, nu.unwrap()),
            };
            out[[i, k]] = model.marginals[k].quantile(u);
        }
    }
    Ok(out)
}

/// Sample a synthetic exposure panel: raw copula draws re-standardised to
/// mean 0 / sd 1 per column.
pub fn sample_panel(model: &CopulaModel, n: usize, rng: &mut TaskRng) -> Result<ExposurePanel> {
    let mut x = sample_raw(model, n, rng)?;
    ExposurePanel::standardize_columns(&mut x)?;
    Ok(ExposurePanel {
        x,
        names: model.names.clone(),
    })
}

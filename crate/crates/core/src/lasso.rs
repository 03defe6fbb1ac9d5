//! Gaussian lasso by cyclic coordinate descent over a log-spaced
//! regularisation path, tuned by 10-fold cross-validation with fold
//! assignments fixed per replication.

use crate::error::{Error, Result};
use crate::method::{MethodKind, MethodOutput, ScoreKind};
use crate::rng::TaskRng;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub const PATH_LENGTH: usize = 100;
pub const LAMBDA_MIN_RATIO: f64 = 0.001;
pub const CONVERGENCE_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 100_000;
pub const CV_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Pick lambda at the CV minimum, or the one-standard-error rule.
    pub one_se_rule: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { one_se_rule: false }
    }
}

/// Coefficients at one penalty level; intercept unpenalised.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub path: Vec<PathPoint>,
    /// Mean CV MSE per path point.
    pub cv_mse: Vec<f64>,
    /// Standard error of the CV MSE per path point.
    pub cv_se: Vec<f64>,
    pub selected_index: usize,
    pub selected_lambda: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub selected: Vec<bool>,
}

/// lambda at which the whole path is zero: max_j |<x_j, y - ybar>| / N.
pub fn lambda_max(x: &Array2<f64>, y: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let mut best = 0.0f64;
    for j in 0..x.ncols() {
        let dot: f64 = x
            .column(j)
            .iter()
            .zip(y)
            .map(|(xij, yi)| xij * (yi - ybar))
            .sum();
        best = best.max((dot / n).abs());
    }
    best
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Minimise (1/2N) ||y - b0 - X b||^2 + lambda ||b||_1 by cyclic
/// coordinate descent from a warm start.
pub fn coordinate_descent(
    x: &Array2<f64>,
    y: &[f64],
    lambda: f64,
    warm: &[f64],
) -> Result<PathPoint> {
    let n = x.nrows();
    let p = x.ncols();
    assert_eq!(y.len(), n);
    assert_eq!(warm.len(), p);
    let nf = n as f64;
    let col_means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    // Gram diagonal of the centred columns.
    let col_norms: Vec<f64> = (0..p)
        .map(|j| {
            x.column(j)
                .iter()
                .map(|v| {
                    let c = v - col_means[j];
                    c * c
                })
                .sum::<f64>()
                / nf
        })
        .collect();

    let mut beta = warm.to_vec();
    // Residual of the centred problem.
    let mut r: Vec<f64> = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|j| (x[[i, j]] - col_means[j]) * beta[j]).sum();
            (y[i] - y_mean) - fit
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_norms[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let mut dot = 0.0;
            for i in 0..n {
                dot += (x[[i, j]] - col_means[j]) * r[i];
            }
            let z = dot / nf + col_norms[j] * old;
            let new = soft_threshold(z, lambda) / col_norms[j];
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    r[i] -= (x[[i, j]] - col_means[j]) * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < CONVERGENCE_TOL {
            let intercept = y_mean - (0..p).map(|j| col_means[j] * beta[j]).sum::<f64>();
            return Ok(PathPoint {
                lambda,
                intercept,
                coefficients: beta,
            });
        }
    }
    Err(Error::Numeric(format!(
        "coordinate descent did not converge at lambda {lambda}"
    )))
}

/// Solve the whole descending path with warm starts.
pub fn fit_path(x: &Array2<f64>, y: &[f64], lambdas: &[f64]) -> Result<Vec<PathPoint>> {
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm = vec![0.0; x.ncols()];
    for &lambda in lambdas {
        let point = coordinate_descent(x, y, lambda, &warm)?;
        warm = point.coefficients.clone();
        out.push(point);
    }
    Ok(out)
}

pub fn lambda_path(lmax: f64) -> Vec<f64> {
    let lmin = LAMBDA_MIN_RATIO * lmax;
    (0..PATH_LENGTH)
        .map(|k| {
            let t = k as f64 / (PATH_LENGTH - 1) as f64;
            (lmax.ln() + t * (lmin.ln() - lmax.ln())).exp()
        })
        .collect()
}

/// Fold assignment fixed by the replication seed: a shuffled deal into
/// `CV_FOLDS` nearly equal folds.
pub fn assign_folds(n: usize, rng: &mut TaskRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % CV_FOLDS;
    }
    folds
}

/// 10-fold cross-validated lasso fit.
pub fn cv_select(x: &Array2<f64>, y: &[f64], rng: &mut TaskRng, config: &LassoConfig) -> Result<LassoFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 20 {
        return Err(Error::Domain(format!("cross-validation needs N >= 20, got {n}")));
    }
    let lambdas = lambda_path(lambda_max(x, y));
    let folds = assign_folds(n, rng);

    // Squared prediction errors per path point, accumulated across folds.
    let mut sq_errors: Vec<Vec<f64>> = vec![Vec::with_capacity(n); lambdas.len()];
    for fold in 0..CV_FOLDS {
        let train_idx: Vec<usize> = (0..n).filter(|i| folds[*i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|i| folds[*i] == fold).collect();
        if test_idx.is_empty() {
            continue;
        }
        let mut xt = Array2::<f64>::zeros((train_idx.len(), p));
        let mut yt = Vec::with_capacity(train_idx.len());
        for (dst, &src) in train_idx.iter().enumerate() {
            for j in 0..p {
                xt[[dst, j]] = x[[src, j]];
            }
            yt.push(y[src]);
        }
        let path = fit_path(&xt, &yt, &lambdas)?;
        for (k, point) in path.iter().enumerate() {
            for &i in &test_idx {
                let pred: f64 = point.intercept
                    + (0..p).map(|j| x[[i, j]] * point.coefficients[j]).sum::<f64>();
                let e = y[i] - pred;
                sq_errors[k].push(e * e);
            }
        }
    }

    let cv_mse: Vec<f64> = sq_errors.iter().map(|e| crate::stats::mean(e)).collect();
    let cv_se: Vec<f64> = sq_errors
        .iter()
        .map(|e| crate::stats::sd(e) / (e.len() as f64).sqrt())
        .collect();
    let min_index = cv_mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap();
    let selected_index = if config.one_se_rule {
        let bound = cv_mse[min_index] + cv_se[min_index];
        // Largest lambda whose CV error is within one SE of the minimum.
        (0..=min_index).find(|&k| cv_mse[k] <= bound).unwrap_or(min_index)
    } else {
        min_index
    };

    let path = fit_path(x, y, &lambdas)?;
    let chosen = &path[selected_index];
    let selected: Vec<bool> = chosen.coefficients.iter().map(|b| *b != 0.0).collect();
    Ok(LassoFit {
        selected_lambda: lambdas[selected_index],
        selected_index,
        coefficients: chosen.coefficients.clone(),
        intercept: chosen.intercept,
        selected,
        path,
        cv_mse,
        cv_se,
    })
}

/// Selected set and |coefficient| ranking scores (diagnostic only).
pub fn select_variables(fit: &LassoFit) -> (Vec<bool>, Vec<f64>) {
    let scores: Vec<f64> = fit.coefficients.iter().map(|b| b.abs()).collect();
    (fit.selected.clone(), scores)
}

/// Full lasso pipeline for one dataset.
pub fn run_lasso(
    data: &crate::dgp::SimDataset,
    config: &LassoConfig,
    rng: &mut TaskRng,
) -> Result<MethodOutput> {
    let fit = cv_select(&data.x, &data.y, rng, config)?;
    let (selected, scores) = select_variables(&fit);
    Ok(MethodOutput {
        method: MethodKind::Lasso,
        exposures: data.names.clone(),
        scores,
        score_kind: ScoreKind::AbsCoefficient,
        selected,
        curves: Vec::new(),
        diagnostics: serde_json::json!({
            "selected_lambda": fit.selected_lambda,
            "cv_mse_min": fit.cv_mse[fit.selected_index],
            "nonzero": fit.selected.iter().filter(|&&s| s).count(),
        }),
        traces: None,
    })
}

/// Max KKT violation over the path: |<x_j, r>/N| <= lambda (inactive) and
/// = lambda sign(b_j) (active).
pub fn kkt_violation(x: &Array2<f64>, y: &[f64], point: &PathPoint) -> f64 {
    let n = x.nrows();
    let nf = n as f64;
    let r: Vec<f64> = (0..n)
        .map(|i| {
            let fit: f64 = (0..x.ncols()).map(|j| x[[i, j]] * point.coefficients[j]).sum();
            y[i] - point.intercept - fit
        })
        .collect();
    let mut worst = 0.0f64;
    for j in 0..x.ncols() {
        let g: f64 = x.column(j).iter().zip(&r).map(|(xij, ri)| xij * ri).sum::<f64>() / nf;
        let b = point.coefficients[j];
        let v = if b == 0.0 {
            (g.abs() - point.lambda).max(0.0)
        } else {
            (g - point.lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

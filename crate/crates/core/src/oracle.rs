//! Benchmark smoother: an additive penalised B-spline model fitted to the
//! four truly associated exposures only, with smoothing parameters chosen
//! by the Gaussian REML criterion.

use crate::dgp::SimDataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Chol};
use crate::method::{
    ExposureCurve, MethodKind, MethodOutput, PredictionGrid, ScoreKind, GRID_PERCENTILES,
};
use crate::splines::{constraint_null_basis, second_diff_penalty, BSplineBasis};
use ndarray::{Array1, Array2};

pub const N_BASIS: usize = 20;
const LOG10_LAMBDA_LO: f64 = -4.0;
const LOG10_LAMBDA_HI: f64 = 6.0;
const GOLDEN_TOL: f64 = 1e-3;
const REML_SWEEPS: usize = 2;
/// 90% interval half-width multiplier.
const Z90: f64 = 1.645;

struct SmoothTerm {
    col: usize,
    basis: BSplineBasis,
    /// Constraint null basis absorbing the sum-to-zero constraint.
    z: Array2<f64>,
    /// Z' P Z penalty (rank d-1).
    penalty: Array2<f64>,
    /// D2 Z, so b' (Z'PZ) b = ||root b||^2 without cancellation.
    penalty_root: Array2<f64>,
    /// log generalized determinant of `penalty`.
    log_det_plus: f64,
    rank: usize,
    /// Column offset of this block in the full design.
    offset: usize,
    dim: usize,
}

impl SmoothTerm {
    /// Non-negative quadratic form b' (Z'PZ) b.
    fn penalty_quad(&self, b: &[f64]) -> f64 {
        let mut q = 0.0;
        for r in 0..self.penalty_root.nrows() {
            let mut s = 0.0;
            for j in 0..self.dim {
                s += self.penalty_root[[r, j]] * b[j];
            }
            q += s * s;
        }
        q
    }
}

pub struct GamFit {
    terms: Vec<SmoothTerm>,
    pub lambdas: Vec<f64>,
    pub beta: Vec<f64>,
    /// Bayesian covariance of beta.
    covariance: Array2<f64>,
    pub edf: Vec<f64>,
    pub sigma2: f64,
    pub reml_trace: Vec<f64>,
    design: Array2<f64>,
}

fn build_design(x: &Array2<f64>, cols: &[usize]) -> Result<(Array2<f64>, Vec<SmoothTerm>)> {
    let n = x.nrows();
    let mut terms = Vec::with_capacity(cols.len());
    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(cols.len());
    let mut offset = 1usize;
    for &col in cols {
        let xs: Vec<f64> = x.column(col).to_vec();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Domain(format!("column {col} is degenerate")));
        }
        let basis = BSplineBasis::new(lo, hi, N_BASIS);
        let b = basis.design(&xs);
        // Absorb the sum-to-zero constraint 1'Bb = 0.
        let colsum = Array1::from_iter((0..N_BASIS).map(|j| b.column(j).sum()));
        let z = constraint_null_basis(&colsum);
        let bz = b.dot(&z);
        let p_full = second_diff_penalty(N_BASIS);
        let penalty = z.t().dot(&p_full).dot(&z);
        // D2 as an explicit banded matrix, mapped through Z.
        let mut d2 = Array2::<f64>::zeros((N_BASIS - 2, N_BASIS));
        for r in 0..N_BASIS - 2 {
            d2[[r, r]] = 1.0;
            d2[[r, r + 1]] = -2.0;
            d2[[r, r + 2]] = 1.0;
        }
        let penalty_root = d2.dot(&z);
        let (vals, _) = sym_eigen(&penalty);
        let tol = 1e-10 * vals[vals.len() - 1].max(1.0);
        let positive: Vec<f64> = vals.iter().copied().filter(|v| *v > tol).collect();
        let rank = positive.len();
        let log_det_plus = positive.iter().map(|v| v.ln()).sum();
        let dim = z.ncols();
        terms.push(SmoothTerm {
            col,
            basis,
            z,
            penalty,
            penalty_root,
            log_det_plus,
            rank,
            offset,
            dim,
        });
        blocks.push(bz);
        offset += dim;
    }
    let p_total = offset;
    let mut design = Array2::<f64>::zeros((n, p_total));
    for i in 0..n {
        design[[i, 0]] = 1.0;
    }
    for (term, block) in terms.iter().zip(&blocks) {
        for i in 0..n {
            for j in 0..term.dim {
                design[[i, term.offset + j]] = block[[i, j]];
            }
        }
    }
    Ok((design, terms))
}

struct RemlEval {
    score: f64,
    beta: Vec<f64>,
    rss_pen: f64,
    chol: Chol,
}

fn reml_eval(
    design: &Array2<f64>,
    xtx: &[f64],
    xty: &[f64],
    y: &[f64],
    terms: &[SmoothTerm],
    lambdas: &[f64],
    null_dim: usize,
) -> Result<RemlEval> {
    let n = design.nrows();
    let p = design.ncols();
    let mut a = xtx.to_vec();
    for (term, &lam) in terms.iter().zip(lambdas) {
        for j in 0..term.dim {
            for k in 0..term.dim {
                a[(term.offset + k) * p + (term.offset + j)] += lam * term.penalty[[j, k]];
            }
        }
    }
    let chol = Chol::factor_with_jitter(&a, p, 1e-10)?;
    let beta = chol.solve_vec(xty);
    let mut rss = 0.0;
    for i in 0..n {
        let fit: f64 = (0..p).map(|j| design[[i, j]] * beta[j]).sum();
        let e = y[i] - fit;
        rss += e * e;
    }
    let mut pen = 0.0;
    for (term, &lam) in terms.iter().zip(lambdas) {
        let b = &beta[term.offset..term.offset + term.dim];
        pen += lam * term.penalty_quad(b);
    }
    let rss_pen = (rss + pen).max(1e-300);
    let log_det_s: f64 = terms
        .iter()
        .zip(lambdas)
        .map(|(t, &lam)| t.rank as f64 * lam.ln() + t.log_det_plus)
        .sum();
    let score = -((n - null_dim) as f64) * rss_pen.ln() - chol.log_det() + log_det_s;
    Ok(RemlEval {
        score,
        beta,
        rss_pen,
        chol,
    })
}

/// Fit the additive penalised-spline model on `cols`, smoothing parameters
/// by coordinate-wise golden-section REML search.
pub fn fit_gam(x: &Array2<f64>, y: &[f64], cols: &[usize]) -> Result<GamFit> {
    let (design, terms) = build_design(x, cols)?;
    let n = design.nrows();
    let p = design.ncols();
    // intercept + one penalty-null direction per smooth
    let null_dim = 1 + terms.len();

    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for j in 0..p {
        for k in j..p {
            let mut s = 0.0;
            for i in 0..n {
                s += design[[i, j]] * design[[i, k]];
            }
            xtx[k * p + j] = s;
            xtx[j * p + k] = s;
        }
        xty[j] = (0..n).map(|i| design[[i, j]] * y[i]).sum();
    }

    let mut log_lambdas = vec![0.0f64; terms.len()];
    let eval_at = |log_lams: &[f64]| -> Result<RemlEval> {
        let lams: Vec<f64> = log_lams.iter().map(|l| 10f64.powf(*l)).collect();
        reml_eval(&design, &xtx, &xty, y, &terms, &lams, null_dim)
    };
    let mut current = eval_at(&log_lambdas)?;
    let mut reml_trace = vec![current.score];

    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    for _sweep in 0..REML_SWEEPS {
        for t in 0..terms.len() {
            let mut a = LOG10_LAMBDA_LO;
            let mut b = LOG10_LAMBDA_HI;
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let score_at = |v: f64, log_lambdas: &[f64]| -> Result<f64> {
                let mut trial = log_lambdas.to_vec();
                trial[t] = v;
                Ok(eval_at(&trial)?.score)
            };
            let mut fc = score_at(c, &log_lambdas)?;
            let mut fd = score_at(d, &log_lambdas)?;
            while (b - a).abs() > GOLDEN_TOL {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = score_at(c, &log_lambdas)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = score_at(d, &log_lambdas)?;
                }
            }
            let candidate = 0.5 * (a + b);
            let trial_score = score_at(candidate, &log_lambdas)?;
            // Coordinate steps are accepted only when they improve REML.
            if trial_score > current.score {
                log_lambdas[t] = candidate;
                let mut trial = log_lambdas.clone();
                trial[t] = candidate;
                current = eval_at(&trial)?;
                reml_trace.push(current.score);
            }
        }
    }

    let lambdas: Vec<f64> = log_lambdas.iter().map(|l| 10f64.powf(*l)).collect();
    let sigma2 = current.rss_pen / (n - null_dim) as f64;

    // Covariance sigma^2 A^{-1} and per-term effective degrees of freedom.
    let mut a_inv_cols = vec![0.0; p * p];
    for j in 0..p {
        a_inv_cols[j * p + j] = 1.0;
    }
    current.chol.solve_in_place(&mut a_inv_cols);
    let mut covariance = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        for i in 0..p {
            covariance[[i, j]] = sigma2 * a_inv_cols[j * p + i];
        }
    }
    let mut edf = Vec::with_capacity(terms.len());
    for term in &terms {
        // tr(A^{-1} X'X) over the block, plus the constant absorbed into
        // the intercept so a frozen smooth reports 2 degrees of freedom.
        let mut tr = 0.0;
        for j in term.offset..term.offset + term.dim {
            for k in 0..p {
                tr += a_inv_cols[j * p + k] * xtx[j * p + k];
            }
        }
        edf.push(tr + 1.0);
    }

    Ok(GamFit {
        terms,
        lambdas,
        beta: current.beta,
        covariance,
        edf,
        sigma2,
        reml_trace,
        design,
    })
}

impl GamFit {
    pub fn fitted(&self) -> Vec<f64> {
        let n = self.design.nrows();
        let p = self.design.ncols();
        (0..n)
            .map(|i| (0..p).map(|j| self.design[[i, j]] * self.beta[j]).sum())
            .collect()
    }

    fn term_for_col(&self, col: usize) -> Option<&SmoothTerm> {
        self.terms.iter().find(|t| t.col == col)
    }

    /// Contrast estimate f(x) - f(anchor) with its standard error.
    pub fn contrast(&self, col: usize, x: f64, anchor: f64) -> (f64, f64) {
        let term = self.term_for_col(col).expect("column was fitted");
        let row_x = Array1::from_vec(term.basis.row(x));
        let row_a = Array1::from_vec(term.basis.row(anchor));
        let d_x = row_x.dot(&term.z);
        let d_a = row_a.dot(&term.z);
        let v: Vec<f64> = (0..term.dim).map(|j| d_x[j] - d_a[j]).collect();
        let mut mean = 0.0;
        for j in 0..term.dim {
            mean += v[j] * self.beta[term.offset + j];
        }
        let mut var = 0.0;
        for j in 0..term.dim {
            for k in 0..term.dim {
                var += v[j] * self.covariance[[term.offset + j, term.offset + k]] * v[k];
            }
        }
        (mean, var.max(0.0).sqrt())
    }
}

/// Fit the oracle on the truth columns of a dataset and report curves.
pub fn run_oracle(data: &SimDataset) -> Result<MethodOutput> {
    let cols: Vec<usize> = data
        .truth
        .iter()
        .enumerate()
        .filter_map(|(j, &t)| if t { Some(j) } else { None })
        .collect();
    let fit = fit_gam(&data.x, &data.y, &cols)?;
    let grid = PredictionGrid::for_dataset(data);
    let mut curves = Vec::new();
    for (e, (col, name, xs)) in grid.exposures.iter().enumerate() {
        let anchor = grid.col_means[*col];
        let points = xs
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (mean, se) = fit.contrast(*col, x, anchor);
                crate::method::CurvePoint {
                    percentile: GRID_PERCENTILES[k],
                    x,
                    mean,
                    lo: mean - Z90 * se,
                    hi: mean + Z90 * se,
                    truth: grid.true_contrasts[e][k],
                }
            })
            .collect();
        curves.push(ExposureCurve {
            exposure: name.clone(),
            col: *col,
            anchor_x: anchor,
            points,
        });
    }
    Ok(MethodOutput {
        method: MethodKind::Oracle,
        exposures: data.names.clone(),
        scores: Vec::new(),
        score_kind: ScoreKind::None,
        selected: data.truth.clone(),
        curves,
        diagnostics: serde_json::json!({
            "lambdas": fit.lambdas,
            "edf": fit.edf,
            "sigma2": fit.sigma2,
        }),
        traces: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn column_matrix(cols: Vec<Vec<f64>>) -> Array2<f64> {
        let n = cols[0].len();
        let mut x = Array2::<f64>::zeros((n, cols.len()));
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                x[[i, j]] = col[i];
            }
        }
        x
    }

    #[test]
    fn near_noiseless_linear_fit_collapses_to_line() {
        // Exactly noiseless data leave lambda unidentified (every lambda
        // fits perfectly), so use negligible noise to pin the REML optimum.
        let n = 120;
        let mut rng = derive_rng(2, "oracle-linear", &[]);
        let xs: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|x| 1.0 + 2.0 * x + 1e-6 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = column_matrix(vec![xs.clone()]);
        let fit = fit_gam(&x, &y, &[0]).unwrap();
        let fitted = fit.fitted();
        for (f, t) in fitted.iter().zip(&y) {
            assert_abs_diff_eq!(f, t, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(fit.edf[0], 2.0, epsilon = 0.05);
        // contrast mean reproduces the linear slope
        let (c, _) = fit.contrast(0, 1.0, 0.0);
        assert_abs_diff_eq!(c, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn huge_lambda_forces_a_line() {
        let mut rng = derive_rng(3, "oracle-line", &[]);
        let n = 150;
        let xs: Vec<f64> = (0..n).map(|i| -1.5 + 3.0 * i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|x| (3.0 * x).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = column_matrix(vec![xs.clone()]);
        let (design, terms) = build_design(&x, &[0]).unwrap();
        let p = design.ncols();
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        for j in 0..p {
            for k in 0..p {
                xtx[k * p + j] = (0..n).map(|i| design[[i, j]] * design[[i, k]]).sum();
            }
            xty[j] = (0..n).map(|i| design[[i, j]] * y[i]).sum();
        }
        let eval = reml_eval(&design, &xtx, &xty, &y, &terms, &[1e12], 2).unwrap();
        // fitted values must be affine in x
        let fitted: Vec<f64> = (0..n)
            .map(|i| (0..p).map(|j| design[[i, j]] * eval.beta[j]).sum())
            .collect();
        let slope = (fitted[n - 1] - fitted[0]) / (xs[n - 1] - xs[0]);
        for i in 0..n {
            let line = fitted[0] + slope * (xs[i] - xs[0]);
            assert_abs_diff_eq!(fitted[i], line, epsilon = 1e-5);
        }
    }

    #[test]
    fn reml_trace_is_monotone_and_fit_equivariant_to_column_order() {
        let mut rng = derive_rng(4, "oracle-equi", &[]);
        let n = 100;
        let c0: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let c1: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (c0[i]).powi(2) * 0.5 + c1[i] + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = column_matrix(vec![c0.clone(), c1.clone()]);
        let fit = fit_gam(&x, &y, &[0, 1]).unwrap();
        for w in fit.reml_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "REML decreased: {} -> {}", w[0], w[1]);
        }
        let x_swapped = column_matrix(vec![c1, c0]);
        let fit_swapped = fit_gam(&x_swapped, &y, &[0, 1]).unwrap();
        assert_abs_diff_eq!(fit.lambdas[0], fit_swapped.lambdas[1], epsilon = 1e-6);
        assert_abs_diff_eq!(fit.lambdas[1], fit_swapped.lambdas[0], epsilon = 1e-6);
        let f1 = fit.fitted();
        let f2 = fit_swapped.fitted();
        for i in 0..n {
            assert_abs_diff_eq!(f1[i], f2[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn reml_recovers_known_smoothing_scale() {
        // Simulate from a penalised spline with known lambda and check the
        // REML pick lands within an order of magnitude (median of 20 reps).
        let n = 200;
        let true_log10 = 1.0;
        let mut ratios = Vec::new();
        for rep in 0..20u64 {
            let mut rng = derive_rng(rep, "oracle-siml", &[]);
            let xs: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
            let x = column_matrix(vec![xs.clone()]);
            let (design, terms) = build_design(&x, &[0]).unwrap();
            let p = design.ncols();
            // draw a coefficient vector from the implied smoothing prior:
            // beta ~ N(0, (lambda P)^-) on the penalised subspace
            let (vals, vecs) = sym_eigen(&terms[0].penalty);
            let lam = 10f64.powf(true_log10);
            let mut beta = vec![0.0; terms[0].dim];
            for k in 0..terms[0].dim {
                if vals[k] > 1e-8 {
                    let sd = 1.0 / (lam * vals[k]).sqrt();
                    let zdraw: f64 = rng.sample(StandardNormal);
                    for j in 0..terms[0].dim {
                        beta[j] += vecs[[j, k]] * sd * zdraw;
                    }
                }
            }
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let mut f = 0.0;
                    for j in 0..terms[0].dim {
                        f += design[[i, 1 + j]] * beta[j];
                    }
                    f + rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let _ = p;
            let fit = fit_gam(&x, &y, &[0]).unwrap();
            ratios.push((fit.lambdas[0].log10() - true_log10).abs());
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[10];
        assert!(median <= 1.0, "median |log10 ratio| {median}");
    }

    #[test]
    fn contrast_zero_at_anchor_and_interval_shrinks_with_n() {
        let mut widths = Vec::new();
        for &n in &[250usize, 1000] {
            let mut rng = derive_rng(5, "oracle-width", &[n as u64]);
            let xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = xs
                .iter()
                .map(|x| x * x * 0.3 + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x = column_matrix(vec![xs.clone()]);
            let fit = fit_gam(&x, &y, &[0]).unwrap();
            let anchor = crate::stats::mean(&xs);
            let (c, _) = fit.contrast(0, anchor, anchor);
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
            let (_, se) = fit.contrast(0, anchor + 1.0, anchor);
            widths.push(se);
        }
        assert!(widths[1] < widths[0], "se did not shrink: {widths:?}");
    }
}

//! Spike–slab structured additive regression: each exposure enters as a
//! centred linear term plus a reduced-rank penalised-spline term, every
//! coefficient group carries the parameter-expanded normal-mixture-of-
//! inverse-gammas prior, and estimation pools several independent
//! blockwise Gibbs chains.

use crate::dgp::SimDataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Chol};
use crate::method::{MethodKind, MethodOutput, PredictionGrid, ScoreKind, Traces};
use crate::rng::{derive_rng, TaskRng};
use crate::splines::{second_diff_penalty, BSplineBasis};
use crate::stats;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SsgamConfig {
    /// Spike shrink factor for the group variance.
    pub v0: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_w: f64,
    pub b_w: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub n_basis: usize,
    /// Eigenvalue-energy fraction kept in the reduced-rank smooth.
    pub energy: f64,
    pub chains: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub pip_threshold: f64,
}

impl Default for SsgamConfig {
    fn default() -> Self {
        Self {
            v0: 0.025,
            a_tau: 5.0,
            b_tau: 40.0,
            a_w: 1.0,
            b_w: 1.0,
            a_sigma: 0.001,
            b_sigma: 0.001,
            n_basis: 20,
            energy: 0.995,
            chains: 5,
            burn_in: 8_000,
            retained: 2_000,
            pip_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Linear,
    Smooth,
}

enum PredictMap {
    Linear {
        x_mean: f64,
    },
    Smooth {
        basis: BSplineBasis,
        /// 20 x L map from the raw basis row to the truncated scores.
        transform: Array2<f64>,
        /// Residualisation against [1, x - x_mean]: per column a + b t.
        resid_a: Vec<f64>,
        resid_b: Vec<f64>,
        x_mean: f64,
        col_scale: Vec<f64>,
    },
}

pub struct TermBlock {
    pub exposure: usize,
    pub kind: BlockKind,
    pub design: Array2<f64>,
    pub dim: usize,
    /// B' B, reused by the xi update.
    gram: Array2<f64>,
    predict: PredictMap,
}

impl TermBlock {
    /// Design row for a new x value of this block's exposure.
    pub fn row(&self, x: f64) -> Vec<f64> {
        match &self.predict {
            PredictMap::Linear { x_mean } => vec![x - x_mean],
            PredictMap::Smooth {
                basis,
                transform,
                resid_a,
                resid_b,
                x_mean,
                col_scale,
            } => {
                let raw = Array1::from_vec(basis.row(x));
                let scores = raw.dot(transform);
                (0..self.dim)
                    .map(|c| {
                        (scores[c] - resid_a[c] - resid_b[c] * (x - x_mean)) / col_scale[c]
                    })
                    .collect()
            }
        }
    }
}

/// Build the linear + reduced-rank smooth blocks for every exposure.
pub fn build_term_blocks(x: &Array2<f64>, config: &SsgamConfig) -> Result<Vec<TermBlock>> {
    let n = x.nrows();
    let mut blocks = Vec::with_capacity(2 * x.ncols());
    for exposure in 0..x.ncols() {
        let col: Vec<f64> = x.column(exposure).to_vec();
        let x_mean = stats::mean(&col);
        let centred: Vec<f64> = col.iter().map(|v| v - x_mean).collect();
        let mut lin = Array2::<f64>::zeros((n, 1));
        for i in 0..n {
            lin[[i, 0]] = centred[i];
        }
        let lin_gram = lin.t().dot(&lin);
        blocks.push(TermBlock {
            exposure,
            kind: BlockKind::Linear,
            design: lin,
            dim: 1,
            gram: lin_gram,
            predict: PredictMap::Linear { x_mean },
        });

        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Domain(format!("exposure {exposure} is degenerate")));
        }
        let basis = BSplineBasis::new(lo, hi, config.n_basis);
        let b = basis.design(&col);
        let penalty = second_diff_penalty(config.n_basis);
        let (vals, vecs) = sym_eigen(&penalty);
        // positive eigenpairs: the difference penalty's null space
        // (constant + linear coefficients) is excluded here
        let tol = 1e-10 * vals[vals.len() - 1];
        let pos: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > tol).collect();
        let mut u_scaled = Array2::<f64>::zeros((config.n_basis, pos.len()));
        for (c, &k) in pos.iter().enumerate() {
            let s = vals[k].sqrt();
            for r in 0..config.n_basis {
                u_scaled[[r, c]] = vecs[[r, k]] / s;
            }
        }
        let c_mat = b.dot(&u_scaled);
        // Energy truncation through the Gram spectrum of the projection.
        let gram = c_mat.t().dot(&c_mat);
        let (evals, evecs) = sym_eigen(&gram);
        let total: f64 = evals.iter().map(|v| v.max(0.0)).sum();
        let mut order: Vec<usize> = (0..evals.len()).collect();
        order.sort_by(|&a, &b| evals[b].partial_cmp(&evals[a]).unwrap());
        let mut kept = Vec::new();
        let mut acc = 0.0;
        for &k in &order {
            kept.push(k);
            acc += evals[k].max(0.0);
            if acc >= config.energy * total {
                break;
            }
        }
        let l = kept.len();
        if l < 2 {
            return Err(Error::Fit(format!(
                "smooth block for exposure {exposure} collapsed to rank {l}"
            )));
        }
        let mut v_pca = Array2::<f64>::zeros((evals.len(), l));
        for (c, &k) in kept.iter().enumerate() {
            for r in 0..evals.len() {
                v_pca[[r, c]] = evecs[[r, k]];
            }
        }
        let mut scores = c_mat.dot(&v_pca);
        let transform = u_scaled.dot(&v_pca);

        // Residualise against intercept and the centred linear column,
        // then scale every column to unit sample sd.
        let lin_ss: f64 = centred.iter().map(|v| v * v).sum();
        let mut resid_a = Vec::with_capacity(l);
        let mut resid_b = Vec::with_capacity(l);
        let mut col_scale = Vec::with_capacity(l);
        for c in 0..l {
            let z: Vec<f64> = (0..n).map(|i| scores[[i, c]]).collect();
            let a = stats::mean(&z);
            let b_coef = z
                .iter()
                .zip(&centred)
                .map(|(zi, li)| zi * li)
                .sum::<f64>()
                / lin_ss;
            let resid: Vec<f64> = (0..n).map(|i| z[i] - a - b_coef * centred[i]).collect();
            let sd = stats::sd(&resid);
            if sd <= 1e-12 {
                return Err(Error::Fit(format!(
                    "smooth column {c} of exposure {exposure} collapsed after residualisation"
                )));
            }
            for i in 0..n {
                scores[[i, c]] = resid[i] / sd;
            }
            resid_a.push(a);
            resid_b.push(b_coef);
            col_scale.push(sd);
        }
        let gram = scores.t().dot(&scores);
        blocks.push(TermBlock {
            exposure,
            kind: BlockKind::Smooth,
            dim: l,
            gram,
            design: scores,
            predict: PredictMap::Smooth {
                basis,
                transform,
                resid_a,
                resid_b,
                x_mean,
                col_scale,
            },
        });
    }
    Ok(blocks)
}

/// P(m = 1 | xi) under the two-point +-1 prior mean.
pub fn m_slab_probability(xi: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * xi).exp())
}

/// P(gamma = 1 | alpha, tau^2, w).
pub fn gamma_slab_probability(alpha: f64, tau2: f64, w: f64, v0: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    if w >= 1.0 {
        return 1.0;
    }
    let log_odds =
        (w / (1.0 - w)).ln() + 0.5 * v0.ln() + alpha * alpha / (2.0 * tau2) * (1.0 / v0 - 1.0);
    1.0 / (1.0 + (-log_odds).exp())
}

/// Inverse-gamma posterior parameters for the block hypervariance.
pub fn tau2_posterior_params(alpha: f64, gamma: f64, a_tau: f64, b_tau: f64) -> (f64, f64) {
    (a_tau + 0.5, b_tau + alpha * alpha / (2.0 * gamma))
}

/// Beta posterior parameters for the slab weight.
pub fn w_posterior_params(n_slab: usize, n_spike: usize, a_w: f64, b_w: f64) -> (f64, f64) {
    (a_w + n_slab as f64, b_w + n_spike as f64)
}

#[derive(Debug, Clone)]
pub struct BlockState {
    pub alpha: f64,
    pub xi: Vec<f64>,
    pub m: Vec<f64>,
    pub gamma_slab: bool,
    pub tau2: f64,
}

impl BlockState {
    pub fn gamma(&self, v0: f64) -> f64 {
        if self.gamma_slab {
            1.0
        } else {
            v0
        }
    }

    /// Block coefficients beta = alpha xi.
    pub fn beta(&self) -> Vec<f64> {
        self.xi.iter().map(|x| self.alpha * x).collect()
    }
}

pub struct SsgamSampler<'a> {
    pub config: SsgamConfig,
    blocks: &'a [TermBlock],
    y: &'a [f64],
    pub states: Vec<BlockState>,
    pub w: f64,
    pub sigma2: f64,
    pub intercept: f64,
    /// Collapsed block columns c_j = B_j xi_j.
    cols: Vec<Vec<f64>>,
    /// Current residual y - intercept - sum alpha_j c_j.
    residual: Vec<f64>,
    neutralized: bool,
}

impl<'a> SsgamSampler<'a> {
    pub fn new(
        blocks: &'a [TermBlock],
        y: &'a [f64],
        config: SsgamConfig,
        rng: &mut TaskRng,
    ) -> Self {
        let n = y.len();
        let mut states = Vec::with_capacity(blocks.len());
        for _ in blocks {
            let tau2 = draw_inv_gamma_local(config.a_tau, config.b_tau, rng);
            states.push(BlockState {
                alpha: 0.0,
                xi: Vec::new(),
                m: Vec::new(),
                gamma_slab: true,
                tau2,
            });
        }
        for (state, block) in states.iter_mut().zip(blocks) {
            state.m = (0..block.dim)
                .map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 })
                .collect();
            state.xi = state
                .m
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z: f64 = rng.sample(StandardNormal);
            state.alpha = z * (state.tau2).sqrt() * 0.1;
        }
        let intercept = stats::mean(y);
        let mut sampler = Self {
            cols: vec![vec![0.0; n]; blocks.len()],
            residual: vec![0.0; n],
            states,
            w: 0.5,
            sigma2: stats::variance(y).max(1e-8),
            intercept,
            blocks,
            y,
            config,
            neutralized: false,
        };
        sampler.refresh_cols_and_residual();
        sampler
    }

    /// Prior-recovery sampler: every data-dependent conditional collapses
    /// to its prior.
    pub fn neutralized(
        blocks: &'a [TermBlock],
        y: &'a [f64],
        config: SsgamConfig,
        rng: &mut TaskRng,
    ) -> Self {
        let mut s = Self::new(blocks, y, config, rng);
        s.neutralized = true;
        s
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn refresh_cols_and_residual(&mut self) {
        let n = self.n();
        for (col, (block, state)) in self
            .cols
            .iter_mut()
            .zip(self.blocks.iter().zip(&self.states))
        {
            for i in 0..n {
                let mut s = 0.0;
                for d in 0..block.dim {
                    s += block.design[[i, d]] * state.xi[d];
                }
                col[i] = s;
            }
        }
        for i in 0..n {
            let fit: f64 = self
                .cols
                .iter()
                .zip(&self.states)
                .map(|(c, s)| c[i] * s.alpha)
                .sum();
            self.residual[i] = self.y[i] - self.intercept - fit;
        }
    }

    /// Joint draw of all block importances given the collapsed columns.
    pub fn gibbs_alpha(&mut self, rng: &mut TaskRng) -> Result<()> {
        let b = self.blocks.len();
        if self.neutralized {
            for state in self.states.iter_mut() {
                let var = state.gamma(self.config.v0) * state.tau2;
                let z: f64 = rng.sample(StandardNormal);
                state.alpha = z * var.sqrt();
            }
            return Ok(());
        }
        let n = self.n();
        // target = y - intercept
        let mut target = vec![0.0; n];
        for i in 0..n {
            target[i] = self.y[i] - self.intercept;
        }
        // precision M = C'C/sigma2 + diag(1/(gamma tau2)), rhs = C'target/sigma2
        let mut m = vec![0.0; b * b];
        let mut rhs = vec![0.0; b];
        for a in 0..b {
            for c in 0..=a {
                let dot: f64 = self.cols[a].iter().zip(&self.cols[c]).map(|(x, z)| x * z).sum();
                m[c * b + a] = dot / self.sigma2;
                m[a * b + c] = dot / self.sigma2;
            }
            let prior_var = self.states[a].gamma(self.config.v0) * self.states[a].tau2;
            m[a * b + a] += 1.0 / prior_var;
            rhs[a] = self.cols[a].iter().zip(&target).map(|(x, z)| x * z).sum::<f64>() / self.sigma2;
        }
        let chol = Chol::factor_with_jitter(&m, b, 1e-10)?;
        let mean = chol.solve_vec(&rhs);
        let mut z: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
        let alpha = chol.precision_sample(&mean, &mut z);
        for (state, a) in self.states.iter_mut().zip(&alpha) {
            state.alpha = *a;
        }
        self.refresh_residual_only();
        Ok(())
    }

    fn refresh_residual_only(&mut self) {
        let n = self.n();
        for i in 0..n {
            let fit: f64 = self
                .cols
                .iter()
                .zip(&self.states)
                .map(|(c, s)| c[i] * s.alpha)
                .sum();
            self.residual[i] = self.y[i] - self.intercept - fit;
        }
    }

    /// Blockwise draw of the expanded coefficients.
    pub fn gibbs_xi(&mut self, rng: &mut TaskRng) -> Result<()> {
        if self.neutralized {
            for state in self.states.iter_mut() {
                for (x, m) in state.xi.iter_mut().zip(&state.m) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = m + z;
                }
            }
            return Ok(());
        }
        let n = self.n();
        for (k, block) in self.blocks.iter().enumerate() {
            let alpha = self.states[k].alpha;
            let d = block.dim;
            // partial residual including this block's contribution
            let mut partial = vec![0.0; n];
            for i in 0..n {
                partial[i] = self.residual[i] + self.cols[k][i] * alpha;
            }
            // precision A = alpha^2 G / sigma2 + I
            let mut a = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    a[c * d + r] = alpha * alpha * block.gram[[r, c]] / self.sigma2;
                }
                a[r * d + r] += 1.0;
            }
            let mut rhs = vec![0.0; d];
            for c in 0..d {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += block.design[[i, c]] * partial[i];
                }
                rhs[c] = alpha * dot / self.sigma2 + self.states[k].m[c];
            }
            let chol = Chol::factor_with_jitter(&a, d, 1e-10)?;
            let mean = chol.solve_vec(&rhs);
            let mut z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let xi = chol.precision_sample(&mean, &mut z);
            // update collapsed column and residual
            for i in 0..n {
                let mut s = 0.0;
                for c in 0..d {
                    s += block.design[[i, c]] * xi[c];
                }
                self.residual[i] = partial[i] - s * alpha;
                self.cols[k][i] = s;
            }
            self.states[k].xi = xi;
        }
        Ok(())
    }

    pub fn gibbs_m(&mut self, rng: &mut TaskRng) {
        for state in self.states.iter_mut() {
            for (m, xi) in state.m.iter_mut().zip(&state.xi) {
                let p = m_slab_probability(*xi);
                *m = if rng.gen::<f64>() < p { 1.0 } else { -1.0 };
            }
        }
    }

    pub fn gibbs_gamma_tau_w(&mut self, rng: &mut TaskRng) {
        let v0 = self.config.v0;
        for state in self.states.iter_mut() {
            let p = gamma_slab_probability(state.alpha, state.tau2, self.w, v0);
            state.gamma_slab = rng.gen::<f64>() < p;
            let (shape, scale) = tau2_posterior_params(
                state.alpha,
                state.gamma(v0),
                self.config.a_tau,
                self.config.b_tau,
            );
            state.tau2 = draw_inv_gamma_local(shape, scale, rng);
        }
        let n_slab = self.states.iter().filter(|s| s.gamma_slab).count();
        let (a, b) = w_posterior_params(
            n_slab,
            self.states.len() - n_slab,
            self.config.a_w,
            self.config.b_w,
        );
        self.w = BetaDist::new(a, b).unwrap().sample(rng);
    }

    pub fn gibbs_sigma2_intercept(&mut self, rng: &mut TaskRng) {
        if self.neutralized {
            self.sigma2 = draw_inv_gamma_local(self.config.a_sigma, self.config.b_sigma, rng);
            return;
        }
        let n = self.n() as f64;
        let rss: f64 = self.residual.iter().map(|r| r * r).sum();
        self.sigma2 = draw_inv_gamma_local(
            self.config.a_sigma + n / 2.0,
            self.config.b_sigma + rss / 2.0,
            rng,
        );
        // intercept under a flat prior
        let resid_mean = self.residual.iter().sum::<f64>() / n + self.intercept;
        let z: f64 = rng.sample(StandardNormal);
        let new_intercept = resid_mean + z * (self.sigma2 / n).sqrt();
        let shift = new_intercept - self.intercept;
        self.intercept = new_intercept;
        for r in self.residual.iter_mut() {
            *r -= shift;
        }
    }

    /// One full iteration in the documented update order.
    pub fn sweep(&mut self, rng: &mut TaskRng) -> Result<()> {
        self.gibbs_alpha(rng)?;
        self.gibbs_xi(rng)?;
        self.gibbs_m(rng);
        self.gibbs_gamma_tau_w(rng);
        self.gibbs_sigma2_intercept(rng);
        Ok(())
    }

    pub fn fitted(&self) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.residual)
            .map(|(y, r)| y - r)
            .collect()
    }
}

fn draw_inv_gamma_local(shape: f64, scale: f64, rng: &mut TaskRng) -> f64 {
    let g: f64 = GammaDist::new(shape, 1.0).unwrap().sample(rng);
    scale / g.max(1e-300)
}

/// Pooled posterior summaries over all chains.
#[derive(Debug, Clone)]
pub struct SsgamPosterior {
    /// Union inclusion probability per exposure.
    pub pip: Vec<f64>,
    /// Per-chain PIPs (mixing diagnostics).
    pub chain_pips: Vec<Vec<f64>>,
    /// Slab probability per block, pooled.
    pub block_pips: Vec<f64>,
    pub curve_draws: Vec<Vec<f64>>,
    /// Pooled (w, sigma2) trace.
    pub trace: Vec<(f64, f64)>,
}

struct ChainResult {
    gamma_draws: Vec<Vec<bool>>,
    curve_draws: Vec<Vec<f64>>,
    trace: Vec<(f64, f64)>,
}

fn run_chain(
    blocks: &[TermBlock],
    y: &[f64],
    config: &SsgamConfig,
    grid_diffs: &[(usize, Vec<Vec<f64>>)],
    seed: u64,
    chain: usize,
) -> Result<ChainResult> {
    let mut rng = derive_rng(seed, "ssgam-chain", &[chain as u64]);
    let mut sampler = SsgamSampler::new(blocks, y, *config, &mut rng);
    let mut gamma_draws = Vec::with_capacity(config.retained);
    let mut curve_draws = Vec::with_capacity(config.retained);
    let mut trace = Vec::with_capacity(config.retained);
    for iter in 0..(config.burn_in + config.retained) {
        sampler.sweep(&mut rng).map_err(|e| {
            Error::Numeric(format!("ssgam chain {chain} failed at iteration {iter}: {e}"))
        })?;
        if iter >= config.burn_in {
            gamma_draws.push(sampler.states.iter().map(|s| s.gamma_slab).collect());
            let mut row = Vec::new();
            for (block_idx, diffs) in grid_diffs {
                let beta = sampler.states[*block_idx].beta();
                for diff in diffs {
                    let v: f64 = diff.iter().zip(&beta).map(|(d, b)| d * b).sum();
                    row.push(v);
                }
            }
            curve_draws.push(row);
            trace.push((sampler.w, sampler.sigma2));
        }
    }
    Ok(ChainResult {
        gamma_draws,
        curve_draws,
        trace,
    })
}

/// Union PIP per exposure from pooled per-block slab draws.
pub fn union_pips(
    gamma_draws: &[Vec<bool>],
    blocks: &[(usize, BlockKind)],
    n_exposures: usize,
) -> Vec<f64> {
    let mut pip = vec![0.0; n_exposures];
    for draw in gamma_draws {
        let mut seen = vec![false; n_exposures];
        for (b, &(exposure, _)) in blocks.iter().enumerate() {
            if draw[b] && !seen[exposure] {
                seen[exposure] = true;
                pip[exposure] += 1.0;
            }
        }
    }
    for p in pip.iter_mut() {
        *p /= gamma_draws.len() as f64;
    }
    pip
}

/// Run the pooled multi-chain sampler on one dataset.
pub fn run_ssgam(
    data: &SimDataset,
    config: &SsgamConfig,
    rng: &mut TaskRng,
) -> Result<(SsgamPosterior, MethodOutput)> {
    let blocks = build_term_blocks(&data.x, config)?;
    let grid = PredictionGrid::for_dataset(data);
    // Precompute contrast design rows per associated exposure: the grid
    // row minus the anchor row touches only that exposure's blocks.
    let mut grid_diffs: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (col, _, xs) in &grid.exposures {
        let anchor = grid.col_means[*col];
        for (b, block) in blocks.iter().enumerate() {
            if block.exposure == *col {
                let anchor_row = block.row(anchor);
                let diffs: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|&x| {
                        block
                            .row(x)
                            .iter()
                            .zip(&anchor_row)
                            .map(|(a, b)| a - b)
                            .collect()
                    })
                    .collect();
                grid_diffs.push((b, diffs));
            }
        }
    }

    let seed: u64 = rng.gen();
    let chain_results: Result<Vec<ChainResult>> = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_chain(&blocks, &data.y, config, &grid_diffs, seed, chain))
        .collect();
    let chain_results = chain_results?;

    let block_meta: Vec<(usize, BlockKind)> =
        blocks.iter().map(|b| (b.exposure, b.kind)).collect();
    let chain_pips: Vec<Vec<f64>> = chain_results
        .iter()
        .map(|c| union_pips(&c.gamma_draws, &block_meta, data.j()))
        .collect();
    let pooled_gamma: Vec<Vec<bool>> = chain_results
        .iter()
        .flat_map(|c| c.gamma_draws.iter().cloned())
        .collect();
    let pip = union_pips(&pooled_gamma, &block_meta, data.j());
    let mut block_pips = vec![0.0; blocks.len()];
    for draw in &pooled_gamma {
        for (acc, on) in block_pips.iter_mut().zip(draw) {
            if *on {
                *acc += 1.0;
            }
        }
    }
    for p in block_pips.iter_mut() {
        *p /= pooled_gamma.len() as f64;
    }

    // The grid-diff rows were emitted per exposure in `grid.exposures`
    // order, linear block before smooth block; fold both into the curve.
    let g = crate::method::GRID_PERCENTILES.len();
    let n_exp = grid.exposures.len();
    let mut curve_draws = Vec::new();
    for chain in &chain_results {
        for row in &chain.curve_draws {
            // row holds 2 blocks x g points per exposure; sum the pair
            let mut folded = vec![0.0; n_exp * g];
            for e in 0..n_exp {
                for k in 0..g {
                    folded[e * g + k] = row[2 * e * g + k] + row[(2 * e + 1) * g + k];
                }
            }
            curve_draws.push(folded);
        }
    }
    let trace: Vec<(f64, f64)> = chain_results.iter().flat_map(|c| c.trace.clone()).collect();

    let posterior = SsgamPosterior {
        pip: pip.clone(),
        chain_pips,
        block_pips,
        curve_draws,
        trace,
    };
    let curves = grid.curves_from_draws(&posterior.curve_draws);
    let output = MethodOutput {
        method: MethodKind::Ssgam,
        exposures: data.names.clone(),
        scores: pip.clone(),
        score_kind: ScoreKind::PosteriorInclusionProbability,
        selected: pip.iter().map(|&p| p >= config.pip_threshold).collect(),
        curves,
        diagnostics: serde_json::json!({
            "chain_pips": posterior.chain_pips,
            "block_pips": posterior.block_pips,
        }),
        traces: Some(Traces {
            names: vec!["w".into(), "sigma2".into()],
            draws: posterior.trace.iter().map(|(w, s)| vec![*w, *s]).collect(),
        }),
    };
    Ok((posterior, output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_x(n: usize, j: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, "ssgam-x", &[n as u64, j as u64]);
        let mut x = Array2::<f64>::zeros((n, j));
        for i in 0..n {
            for k in 0..j {
                x[[i, k]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        x
    }

    #[test]
    fn term_blocks_shapes_and_orthogonality() {
        let x = toy_x(120, 2, 1);
        let blocks = build_term_blocks(&x, &SsgamConfig::default()).unwrap();
        assert_eq!(blocks.len(), 4);
        for pair in blocks.chunks(2) {
            let lin = &pair[0];
            let smooth = &pair[1];
            assert_eq!(lin.kind, BlockKind::Linear);
            assert_eq!(lin.dim, 1);
            assert_eq!(smooth.kind, BlockKind::Smooth);
            // 20 basis functions minus the 2-dimensional penalty null space
            assert!(smooth.dim <= 18, "smooth dim {}", smooth.dim);
            assert!(smooth.dim >= 2);
            // orthogonal to the intercept and to the linear column
            for c in 0..smooth.dim {
                let col_sum: f64 = (0..120).map(|i| smooth.design[[i, c]]).sum();
                assert_abs_diff_eq!(col_sum / 120.0, 0.0, epsilon = 1e-8);
                let dot: f64 = (0..120)
                    .map(|i| smooth.design[[i, c]] * lin.design[[i, 0]])
                    .sum();
                assert!(dot.abs() < 1e-8, "gram product {dot}");
            }
        }
    }

    #[test]
    fn prediction_rows_match_training_design() {
        let x = toy_x(60, 1, 2);
        let blocks = build_term_blocks(&x, &SsgamConfig::default()).unwrap();
        for block in &blocks {
            for i in [0usize, 13, 59] {
                let row = block.row(x[[i, 0]]);
                for c in 0..block.dim {
                    assert_abs_diff_eq!(row[c], block.design[[i, c]], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn m_probability_examples() {
        assert_abs_diff_eq!(m_slab_probability(0.0), 0.5);
        assert_abs_diff_eq!(m_slab_probability(3.0), 0.9975273768433653, epsilon = 1e-12);
        assert!(m_slab_probability(-40.0) < 1e-10);
    }

    #[test]
    fn gamma_conditional_examples() {
        // alpha = 0: density ratio is sqrt(v0)
        let p = gamma_slab_probability(0.0, 3.0, 0.5, 0.025);
        let expect = 0.025f64.sqrt() / (1.0 + 0.025f64.sqrt());
        assert_abs_diff_eq!(p, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.13652705949581434, epsilon = 1e-12);
        // large alpha favours the slab
        assert!(gamma_slab_probability(3.0, 1.0, 0.5, 0.025) > 0.999);
    }

    #[test]
    fn tau2_and_w_posterior_params() {
        let (a, b) = tau2_posterior_params(0.0, 1.0, 5.0, 40.0);
        assert_abs_diff_eq!(a, 5.5);
        assert_abs_diff_eq!(b, 40.0);
        let (a, b) = w_posterior_params(8, 0, 1.0, 1.0);
        assert_abs_diff_eq!(a, 9.0);
        assert_abs_diff_eq!(b, 1.0);
    }

    #[test]
    fn alpha_conditional_ridge_closed_form() {
        // single block with an orthonormal collapsed column, sigma2 = 1,
        // prior variance 1: posterior N(c'y / 2, 1/2).
        let n = 64;
        let mut x = Array2::<f64>::zeros((n, 1));
        for i in 0..n {
            x[[i, 0]] = ((i as f64 + 0.7) * 0.61).sin();
        }
        let blocks = build_term_blocks(&x, &SsgamConfig::default()).unwrap();
        let lin = &blocks[..1];
        let mut rng = derive_rng(3, "ssgam-ridge", &[]);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut sampler = SsgamSampler::new(lin, &y, SsgamConfig::default(), &mut rng);
        // normalise the collapsed column to unit length via xi
        let norm: f64 = lin[0]
            .design
            .column(0)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        sampler.states[0].xi = vec![1.0 / norm];
        sampler.states[0].m = vec![1.0];
        sampler.states[0].tau2 = 1.0;
        sampler.states[0].gamma_slab = true;
        sampler.sigma2 = 1.0;
        sampler.intercept = 0.0;
        sampler.refresh_cols_and_residual();
        let cy: f64 = (0..n).map(|i| lin[0].design[[i, 0]] / norm * y[i]).sum();
        let mut draws = Vec::new();
        for _ in 0..40_000 {
            sampler.gibbs_alpha(&mut rng).unwrap();
            draws.push(sampler.states[0].alpha);
        }
        let mean = stats::mean(&draws);
        let var = stats::variance(&draws);
        assert_abs_diff_eq!(mean, cy / 2.0, epsilon = 0.02);
        assert_abs_diff_eq!(var, 0.5, epsilon = 0.02);
    }

    #[test]
    fn xi_conditional_closed_form_one_dim() {
        // 1-dim block, alpha = 1, orthonormal design, sigma2 = 1, m = 1:
        // posterior N((B'y + 1)/2, 1/2).
        let n = 36;
        let mut x = Array2::<f64>::zeros((n, 1));
        for i in 0..n {
            x[[i, 0]] = ((i as f64) * 0.83).cos() * 1.4;
        }
        let blocks = build_term_blocks(&x, &SsgamConfig::default()).unwrap();
        let lin = &blocks[..1];
        let mut rng = derive_rng(4, "ssgam-xi", &[]);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut sampler = SsgamSampler::new(lin, &y, SsgamConfig::default(), &mut rng);
        let norm: f64 = lin[0]
            .design
            .column(0)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        // rescale the design to unit norm by folding into xi-space: use
        // alpha = 1 and design as-is, with B'B = norm^2; expected posterior
        // precision = norm^2 + 1 and mean = (B'y + 1) / (norm^2 + 1).
        sampler.states[0].alpha = 1.0;
        sampler.states[0].m = vec![1.0];
        sampler.sigma2 = 1.0;
        sampler.intercept = 0.0;
        sampler.refresh_cols_and_residual();
        let by: f64 = (0..n).map(|i| lin[0].design[[i, 0]] * y[i]).sum();
        let precision = norm * norm + 1.0;
        let mut draws = Vec::new();
        for _ in 0..40_000 {
            sampler.states[0].xi = vec![0.0];
            sampler.refresh_cols_and_residual();
            sampler.gibbs_xi(&mut rng).unwrap();
            draws.push(sampler.states[0].xi[0]);
        }
        let mean = stats::mean(&draws);
        let var = stats::variance(&draws);
        assert_abs_diff_eq!(mean, (by + 1.0) / precision, epsilon = 0.02);
        assert_abs_diff_eq!(var, 1.0 / precision, epsilon = 0.02);
    }

    #[test]
    fn sign_flip_leaves_fit_invariant() {
        let x = toy_x(50, 1, 5);
        let blocks = build_term_blocks(&x, &SsgamConfig::default()).unwrap();
        let mut rng = derive_rng(6, "ssgam-flip", &[]);
        let y: Vec<f64> = (0..50).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut sampler = SsgamSampler::new(&blocks, &y, SsgamConfig::default(), &mut rng);
        for _ in 0..5 {
            sampler.sweep(&mut rng).unwrap();
        }
        let fit_before = sampler.fitted();
        for state in sampler.states.iter_mut() {
            state.alpha = -state.alpha;
            for xv in state.xi.iter_mut() {
                *xv = -*xv;
            }
        }
        sampler.refresh_cols_and_residual();
        let fit_after = sampler.fitted();
        for (a, b) in fit_before.iter().zip(&fit_after) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // beta reconstruction is alpha * xi by definition
        let s = &sampler.states[0];
        for (b, xi) in s.beta().iter().zip(&s.xi) {
            assert_abs_diff_eq!(*b, s.alpha * xi, epsilon = 1e-15);
        }
    }

    #[test]
    fn neutralized_chain_recovers_priors() {
        let x = toy_x(30, 2, 7);
        let config = SsgamConfig::default();
        let blocks = build_term_blocks(&x, &config).unwrap();
        let mut rng = derive_rng(8, "ssgam-neutral", &[]);
        let y: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut sampler = SsgamSampler::neutralized(&blocks, &y, config, &mut rng);
        let sweeps = 30_000;
        let mut slab = 0.0;
        let mut tau2_sum = 0.0;
        let mut tau2_sq = 0.0;
        let mut count = 0.0;
        for _ in 0..sweeps {
            sampler.sweep(&mut rng).unwrap();
            for state in &sampler.states {
                slab += f64::from(u8::from(state.gamma_slab));
                tau2_sum += state.tau2;
                tau2_sq += state.tau2 * state.tau2;
                count += 1.0;
            }
        }
        let p_slab = slab / count;
        assert!((p_slab - 0.5).abs() < 0.02, "P(gamma=1) = {p_slab}");
        // tau2 ~ InvGamma(5, 40): mean 10, sd 40/(4 sqrt 3)
        let mean = tau2_sum / count;
        let sd = (tau2_sq / count - mean * mean).sqrt();
        assert!((mean - 10.0).abs() / 10.0 < 0.05, "tau2 mean {mean}");
        let expect_sd = 40.0 / (4.0 * 3.0f64.sqrt());
        assert!((sd - expect_sd).abs() / expect_sd < 0.1, "tau2 sd {sd}");
    }

    #[test]
    fn union_pip_of_disjoint_events() {
        // gamma_lin on in 30% of draws, gamma_smooth in a disjoint 30%.
        let blocks = vec![(0usize, BlockKind::Linear), (0, BlockKind::Smooth)];
        let mut draws = Vec::new();
        for i in 0..100 {
            let lin = i < 30;
            let smooth = (30..60).contains(&i);
            draws.push(vec![lin, smooth]);
        }
        let pip = union_pips(&draws, &blocks, 1);
        assert_abs_diff_eq!(pip[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn intercept_posterior_centres_on_zero_for_centred_noise() {
        let x = toy_x(80, 1, 9);
        let config = SsgamConfig::default();
        let blocks = build_term_blocks(&x, &config).unwrap();
        let mut rng = derive_rng(10, "ssgam-int", &[]);
        let mut y: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let m = stats::mean(&y);
        for v in y.iter_mut() {
            *v -= m;
        }
        let mut sampler = SsgamSampler::new(&blocks, &y, config, &mut rng);
        // zero out the regression part
        for state in sampler.states.iter_mut() {
            state.alpha = 0.0;
        }
        sampler.refresh_cols_and_residual();
        let mut sum = 0.0;
        let reps = 20_000;
        for _ in 0..reps {
            sampler.gibbs_sigma2_intercept(&mut rng);
            sum += sampler.intercept;
        }
        assert_abs_diff_eq!(sum / reps as f64, 0.0, epsilon = 0.01);
    }

    #[test]
    fn sigma2_posterior_mean_matches_analytic() {
        let x = toy_x(40, 1, 11);
        let config = SsgamConfig::default();
        let blocks = build_term_blocks(&x, &config).unwrap();
        let mut rng = derive_rng(12, "ssgam-sig", &[]);
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut sampler = SsgamSampler::new(&blocks, &y, config, &mut rng);
        for state in sampler.states.iter_mut() {
            state.alpha = 0.0;
        }
        sampler.intercept = 0.0;
        sampler.refresh_cols_and_residual();
        let rss: f64 = y.iter().map(|v| v * v).sum();
        let shape = config.a_sigma + 20.0;
        let scale = config.b_sigma + rss / 2.0;
        let analytic = scale / (shape - 1.0);
        let mut sum = 0.0;
        let reps = 100_000;
        for _ in 0..reps {
            // keep the state fixed: redraw sigma2 only
            sampler.intercept = 0.0;
            sampler.refresh_cols_and_residual();
            sampler.gibbs_sigma2_intercept(&mut rng);
            sum += sampler.sigma2;
        }
        let mean = sum / reps as f64;
        assert!((mean - analytic).abs() / analytic < 0.01, "mean {mean} vs {analytic}");
    }
}

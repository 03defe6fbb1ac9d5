//! Sum-of-trees regression with a shallow-tree regularisation prior,
//! backfitting MCMC over grow/prune/change proposals, split-proportion
//! variable importance, and permutation-null local-threshold selection.

use crate::dgp::SimDataset;
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::method::{MethodKind, MethodOutput, PredictionGrid, ScoreKind, Traces};
use crate::rng::{derive_rng, TaskRng};
use crate::special::inv_gamma_cdf;
use crate::stats;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BartConfig {
    pub n_trees: usize,
    /// Tree-structure prior: depth-d nodes split with prob alpha (1+d)^-beta.
    pub alpha: f64,
    pub beta: f64,
    /// Half-width (in leaf-prior standard deviations) mapped to the
    /// response range.
    pub m: f64,
    /// Error-variance prior shape and calibration quantile.
    pub nu: f64,
    pub q: f64,
    pub p_grow: f64,
    pub p_prune: f64,
    pub p_change: f64,
    pub burn_in: usize,
    pub retained: usize,
    /// Permutation reruns for the local selection threshold.
    pub permutations: usize,
    pub alpha_sel: f64,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            alpha: 0.95,
            beta: 2.0,
            m: 2.0,
            nu: 3.0,
            q: 0.9,
            p_grow: 0.2,
            p_prune: 0.6,
            p_change: 0.2,
            burn_in: 4_000,
            retained: 2_000,
            permutations: 20,
            alpha_sel: 0.05,
        }
    }
}

/// Map the response to [-0.5, 0.5]; returns the transform pair.
pub struct ResponseScale {
    pub y_min: f64,
    pub y_max: f64,
}

impl ResponseScale {
    pub fn fit(y: &[f64]) -> Result<Self> {
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(y_max > y_min) {
            return Err(Error::Domain("constant response cannot be scaled".into()));
        }
        Ok(Self { y_min, y_max })
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min) - 0.5
    }

    pub fn inverse(&self, y_t: f64) -> f64 {
        (y_t + 0.5) * (self.y_max - self.y_min) + self.y_min
    }

    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Leaf-prior standard deviation: 0.5 / (m sqrt(K)).
pub fn leaf_prior_sd(m: f64, n_trees: usize) -> f64 {
    0.5 / (m * (n_trees as f64).sqrt())
}

/// Probability that a depth-d node is non-terminal.
pub fn depth_split_prob(alpha: f64, beta: f64, depth: usize) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Calibrate the inverse-gamma scale so P(sigma^2 < sigma_hat^2) = q.
pub fn calibrate_sigma_prior(nu: f64, q: f64, sigma_hat: f64) -> f64 {
    let target = sigma_hat * sigma_hat;
    let cdf = |lambda: f64| inv_gamma_cdf(target, nu / 2.0, nu * lambda / 2.0);
    // CDF is decreasing in lambda; bisect on the log scale.
    let mut lo = 1e-12f64;
    let mut hi = 1e12f64;
    assert!(cdf(lo) >= q && cdf(hi) <= q, "calibration target out of range");
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()).exp_m1().mul_add(0.0, ((lo.ln() + hi.ln()) / 2.0).exp());
        if cdf(mid) >= q {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi / lo - 1.0).abs() < 1e-8 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// Data-based residual scale for the variance prior, with a fallback to
/// the response scale when the regression is unusable.
pub fn sigma_hat_from_ols(x: &Array2<f64>, y_t: &[f64]) -> (f64, bool) {
    let n = x.nrows();
    let p = x.ncols();
    if n <= p + 1 {
        return (stats::sd(y_t), true);
    }
    let mut design = Array2::<f64>::zeros((n, p + 1));
    for i in 0..n {
        design[[i, 0]] = 1.0;
        for j in 0..p {
            design[[i, j + 1]] = x[[i, j]];
        }
    }
    match least_squares(&design, y_t) {
        Ok(beta) => {
            let mut rss = 0.0;
            for i in 0..n {
                let fit: f64 = (0..=p).map(|j| design[[i, j]] * beta[j]).sum();
                rss += (y_t[i] - fit) * (y_t[i] - fit);
            }
            let sigma = (rss / (n - p - 1) as f64).sqrt();
            if sigma.is_finite() && sigma > 0.0 {
                (sigma, false)
            } else {
                (stats::sd(y_t), true)
            }
        }
        Err(_) => (stats::sd(y_t), true),
    }
}

#[derive(Debug, Clone)]
pub enum TreeNode {
    Leaf {
        mu: f64,
    },
    Split {
        var: usize,
        value: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { mu } => *mu,
            TreeNode::Split { var, value, left, right } => {
                if row[*var] <= *value {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn count_splits(&self, counts: &mut [u64]) {
        if let TreeNode::Split { var, left, right, .. } = self {
            counts[*var] += 1;
            left.count_splits(counts);
            right.count_splits(counts);
        }
    }

    fn node_mut(&mut self, path: &[bool]) -> &mut TreeNode {
        let mut node = self;
        for &go_right in path {
            node = match node {
                TreeNode::Split { left, right, .. } => {
                    if go_right {
                        right.as_mut()
                    } else {
                        left.as_mut()
                    }
                }
                TreeNode::Leaf { .. } => unreachable!("path descends past a leaf"),
            };
        }
        node
    }

    fn node_at(&self, path: &[bool]) -> &TreeNode {
        let mut node = self;
        for &go_right in path {
            node = match node {
                TreeNode::Split { left, right, .. } => {
                    if go_right {
                        right.as_ref()
                    } else {
                        left.as_ref()
                    }
                }
                TreeNode::Leaf { .. } => unreachable!("path descends past a leaf"),
            };
        }
        node
    }
}

struct LeafSite {
    path: Vec<bool>,
    depth: usize,
    rows: Vec<u32>,
}

struct SplitSite {
    path: Vec<bool>,
    depth: usize,
    rows: Vec<u32>,
    singly_internal: bool,
}

fn collect_sites(
    node: &TreeNode,
    x: &Array2<f64>,
    rows: Vec<u32>,
    path: Vec<bool>,
    leaves: &mut Vec<LeafSite>,
    splits: &mut Vec<SplitSite>,
) {
    match node {
        TreeNode::Leaf { .. } => leaves.push(LeafSite {
            depth: path.len(),
            path,
            rows,
        }),
        TreeNode::Split { var, value, left, right } => {
            let mut l_rows = Vec::new();
            let mut r_rows = Vec::new();
            for &i in &rows {
                if x[[i as usize, *var]] <= *value {
                    l_rows.push(i);
                } else {
                    r_rows.push(i);
                }
            }
            let singly = matches!(
                (left.as_ref(), right.as_ref()),
                (TreeNode::Leaf { .. }, TreeNode::Leaf { .. })
            );
            splits.push(SplitSite {
                depth: path.len(),
                rows,
                singly_internal: singly,
                path: path.clone(),
            });
            let mut l_path = path.clone();
            l_path.push(false);
            let mut r_path = path;
            r_path.push(true);
            collect_sites(left, x, l_rows, l_path, leaves, splits);
            collect_sites(right, x, r_rows, r_path, leaves, splits);
        }
    }
}

/// Distinct observed values of a variable within a node's data region.
fn region_values(x: &Array2<f64>, rows: &[u32], var: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i as usize, var]]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    vals
}

/// log of the leaf-marginalised likelihood factor for one node,
/// integrating the leaf mean against N(0, sigma_mu^2).
fn log_node_marginal(n: usize, sum: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let nf = n as f64;
    let denom = sigma2 + nf * sigma_mu2;
    0.5 * (sigma2 / denom).ln() + sigma_mu2 * sum * sum / (2.0 * sigma2 * denom)
}

fn sum_residuals(rows: &[u32], residual: &[f64]) -> f64 {
    rows.iter().map(|&i| residual[i as usize]).sum()
}

pub struct BartSampler<'a> {
    pub config: BartConfig,
    x: &'a Array2<f64>,
    y_t: Vec<f64>,
    sigma_mu2: f64,
    lambda_prior: f64,
    pub sigma2: f64,
    trees: Vec<TreeNode>,
    tree_fits: Vec<Vec<f64>>,
    total_fit: Vec<f64>,
    all_rows: Vec<u32>,
    tries: [u64; 3],
    accepts: [u64; 3],
    pub used_sd_fallback: bool,
    iterations_done: usize,
}

const MOVE_GROW: usize = 0;
const MOVE_PRUNE: usize = 1;
const MOVE_CHANGE: usize = 2;

impl<'a> BartSampler<'a> {
    pub fn new(x: &'a Array2<f64>, y: &[f64], config: BartConfig) -> Result<Self> {
        let scale = ResponseScale::fit(y)?;
        let y_t: Vec<f64> = y.iter().map(|v| scale.forward(*v)).collect();
        let (sigma_hat, used_sd_fallback) = sigma_hat_from_ols(x, &y_t);
        let lambda_prior = calibrate_sigma_prior(config.nu, config.q, sigma_hat);
        let n = y.len();
        let trees: Vec<TreeNode> = (0..config.n_trees).map(|_| TreeNode::Leaf { mu: 0.0 }).collect();
        Ok(Self {
            sigma_mu2: leaf_prior_sd(config.m, config.n_trees).powi(2),
            lambda_prior,
            sigma2: sigma_hat * sigma_hat,
            tree_fits: vec![vec![0.0; n]; config.n_trees],
            total_fit: vec![0.0; n],
            all_rows: (0..n as u32).collect(),
            trees,
            config,
            x,
            y_t,
            tries: [0; 3],
            accepts: [0; 3],
            used_sd_fallback,
            iterations_done: 0,
        })
    }

    fn n(&self) -> usize {
        self.y_t.len()
    }

    fn j(&self) -> usize {
        self.x.ncols()
    }

    fn split_prob(&self, depth: usize) -> f64 {
        depth_split_prob(self.config.alpha, self.config.beta, depth)
    }

    /// One structure proposal on tree `k` against `residual`.
    fn tree_move(&mut self, k: usize, residual: &[f64], rng: &mut TaskRng) -> Result<()> {
        let mut leaves = Vec::new();
        let mut splits = Vec::new();
        collect_sites(
            &self.trees[k],
            self.x,
            self.all_rows.clone(),
            Vec::new(),
            &mut leaves,
            &mut splits,
        );
        let u_move: f64 = rng.gen();
        if u_move < self.config.p_grow {
            self.try_grow(k, &leaves, &splits, residual, rng)
        } else if u_move < self.config.p_grow + self.config.p_prune {
            self.try_prune(k, &leaves, &splits, residual, rng)
        } else {
            self.try_change(k, &splits, residual, rng)
        }
    }

    fn try_grow(
        &mut self,
        k: usize,
        leaves: &[LeafSite],
        splits: &[SplitSite],
        residual: &[f64],
        rng: &mut TaskRng,
    ) -> Result<()> {
        self.tries[MOVE_GROW] += 1;
        let leaf = &leaves[rng.gen_range(0..leaves.len())];
        let var = rng.gen_range(0..self.j());
        let values = region_values(self.x, &leaf.rows, var);
        if values.is_empty() {
            return Ok(());
        }
        let value = values[rng.gen_range(0..values.len())];
        let u: f64 = rng.gen();
        let (mut n_l, mut s_l) = (0usize, 0.0);
        let (mut n_r, mut s_r) = (0usize, 0.0);
        for &i in &leaf.rows {
            let r = residual[i as usize];
            if self.x[[i as usize, var]] <= value {
                n_l += 1;
                s_l += r;
            } else {
                n_r += 1;
                s_r += r;
            }
        }
        if n_l == 0 || n_r == 0 {
            // empty-leaf proposals are rejected outright
            return Ok(());
        }
        let s_tot = s_l + s_r;
        let lik = log_node_marginal(n_l, s_l, self.sigma2, self.sigma_mu2)
            + log_node_marginal(n_r, s_r, self.sigma2, self.sigma_mu2)
            - log_node_marginal(leaf.rows.len(), s_tot, self.sigma2, self.sigma_mu2);
        let p_d = self.split_prob(leaf.depth);
        let p_child = self.split_prob(leaf.depth + 1);
        let structure = (p_d * (1.0 - p_child) * (1.0 - p_child) / (1.0 - p_d)).ln();
        // singly-internal count after growing this leaf
        let parent_singly = if leaf.path.is_empty() {
            false
        } else {
            let parent = self.trees[k].node_at(&leaf.path[..leaf.path.len() - 1]);
            matches!(
                parent,
                TreeNode::Split { left, right, .. }
                    if matches!((left.as_ref(), right.as_ref()), (TreeNode::Leaf { .. }, TreeNode::Leaf { .. }))
            )
        };
        let w_after = splits.iter().filter(|s| s.singly_internal).count() + 1
            - usize::from(parent_singly);
        let proposal =
            (self.config.p_prune * leaves.len() as f64 / (self.config.p_grow * w_after as f64)).ln();
        if u.ln() < lik + structure + proposal {
            let node = self.trees[k].node_mut(&leaf.path);
            *node = TreeNode::Split {
                var,
                value,
                left: Box::new(TreeNode::Leaf { mu: 0.0 }),
                right: Box::new(TreeNode::Leaf { mu: 0.0 }),
            };
            self.accepts[MOVE_GROW] += 1;
        }
        Ok(())
    }

    fn try_prune(
        &mut self,
        k: usize,
        leaves: &[LeafSite],
        splits: &[SplitSite],
        residual: &[f64],
        rng: &mut TaskRng,
    ) -> Result<()> {
        self.tries[MOVE_PRUNE] += 1;
        let prunable: Vec<&SplitSite> = splits.iter().filter(|s| s.singly_internal).collect();
        if prunable.is_empty() {
            // a single-leaf stump has nothing to prune
            return Ok(());
        }
        let site = prunable[rng.gen_range(0..prunable.len())];
        let u: f64 = rng.gen();
        let (var, value) = match self.trees[k].node_at(&site.path) {
            TreeNode::Split { var, value, .. } => (*var, *value),
            TreeNode::Leaf { .. } => unreachable!(),
        };
        let (mut n_l, mut s_l) = (0usize, 0.0);
        let (mut n_r, mut s_r) = (0usize, 0.0);
        for &i in &site.rows {
            let r = residual[i as usize];
            if self.x[[i as usize, var]] <= value {
                n_l += 1;
                s_l += r;
            } else {
                n_r += 1;
                s_r += r;
            }
        }
        let s_tot = s_l + s_r;
        let lik = log_node_marginal(site.rows.len(), s_tot, self.sigma2, self.sigma_mu2)
            - log_node_marginal(n_l, s_l, self.sigma2, self.sigma_mu2)
            - log_node_marginal(n_r, s_r, self.sigma2, self.sigma_mu2);
        let p_d = self.split_prob(site.depth);
        let p_child = self.split_prob(site.depth + 1);
        let structure = ((1.0 - p_d) / (p_d * (1.0 - p_child) * (1.0 - p_child))).ln();
        let leaves_after = leaves.len() - 1;
        let proposal = (self.config.p_grow * prunable.len() as f64
            / (self.config.p_prune * leaves_after as f64))
            .ln();
        if u.ln() < lik + structure + proposal {
            let node = self.trees[k].node_mut(&site.path);
            *node = TreeNode::Leaf { mu: 0.0 };
            self.accepts[MOVE_PRUNE] += 1;
        }
        Ok(())
    }

    fn try_change(
        &mut self,
        k: usize,
        splits: &[SplitSite],
        residual: &[f64],
        rng: &mut TaskRng,
    ) -> Result<()> {
        self.tries[MOVE_CHANGE] += 1;
        if splits.is_empty() {
            return Ok(());
        }
        let site = &splits[rng.gen_range(0..splits.len())];
        let var = rng.gen_range(0..self.j());
        let values = region_values(self.x, &site.rows, var);
        if values.is_empty() {
            return Ok(());
        }
        let value = values[rng.gen_range(0..values.len())];
        let u: f64 = rng.gen();

        // Marginal likelihood of the subtree under old and new rules; the
        // uniform rule prior cancels against the symmetric rule proposal.
        let subtree = self.trees[k].node_at(&site.path);
        let old_lik = subtree_log_marginal(
            subtree,
            self.x,
            &site.rows,
            residual,
            self.sigma2,
            self.sigma_mu2,
        );
        let mut proposed = subtree.clone();
        if let TreeNode::Split { var: v, value: c, .. } = &mut proposed {
            *v = var;
            *c = value;
        }
        let new_lik = subtree_log_marginal(
            &proposed,
            self.x,
            &site.rows,
            residual,
            self.sigma2,
            self.sigma_mu2,
        );
        let (Some(old_lik), Some(new_lik)) = (old_lik, new_lik) else {
            return Ok(()); // empty leaf under the proposed rule
        };
        if u.ln() < new_lik - old_lik {
            let node = self.trees[k].node_mut(&site.path);
            *node = proposed;
            self.accepts[MOVE_CHANGE] += 1;
        }
        Ok(())
    }

    /// Redraw every leaf of tree `k` from its conjugate conditional.
    fn draw_leaves(&mut self, k: usize, residual: &[f64], rng: &mut TaskRng) {
        let mut leaves = Vec::new();
        let mut splits = Vec::new();
        collect_sites(
            &self.trees[k],
            self.x,
            self.all_rows.clone(),
            Vec::new(),
            &mut leaves,
            &mut splits,
        );
        for leaf in &leaves {
            let n_leaf = leaf.rows.len() as f64;
            let s = sum_residuals(&leaf.rows, residual);
            let shrink = self.sigma2 / self.sigma_mu2;
            let mean = s / (n_leaf + shrink);
            let sd = (self.sigma2 / (n_leaf + shrink)).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            let mu = mean + sd * z;
            if let TreeNode::Leaf { mu: slot } = self.trees[k].node_mut(&leaf.path) {
                *slot = mu;
            }
        }
    }

    fn refresh_tree_fit(&mut self, k: usize) {
        let n = self.n();
        for i in 0..n {
            let new = self.trees[k].predict(self.x.row(i).to_slice().unwrap());
            self.total_fit[i] += new - self.tree_fits[k][i];
            self.tree_fits[k][i] = new;
        }
    }

    pub fn draw_sigma2(&mut self, rng: &mut TaskRng) {
        let rss: f64 = self
            .y_t
            .iter()
            .zip(&self.total_fit)
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        let shape = self.config.nu / 2.0 + self.n() as f64 / 2.0;
        let scale = self.config.nu * self.lambda_prior / 2.0 + rss / 2.0;
        let g: f64 = GammaDist::new(shape, 1.0).unwrap().sample(rng);
        self.sigma2 = scale / g.max(1e-300);
    }

    /// One backfitting iteration over every tree, then the variance draw.
    pub fn iterate(&mut self, rng: &mut TaskRng) -> Result<()> {
        let n = self.n();
        let mut residual = vec![0.0; n];
        for k in 0..self.config.n_trees {
            for i in 0..n {
                residual[i] = self.y_t[i] - (self.total_fit[i] - self.tree_fits[k][i]);
            }
            self.tree_move(k, &residual, rng)?;
            self.draw_leaves(k, &residual, rng);
            self.refresh_tree_fit(k);
        }
        self.draw_sigma2(rng);
        self.iterations_done += 1;
        if self.iterations_done % 100 == 0 {
            self.check_fit_consistency()?;
        }
        Ok(())
    }

    /// Recompute the sum-of-trees fit from scratch and compare.
    fn check_fit_consistency(&self) -> Result<()> {
        for i in 0..self.n() {
            let direct: f64 = self
                .trees
                .iter()
                .map(|t| t.predict(self.x.row(i).to_slice().unwrap()))
                .sum();
            if (direct - self.total_fit[i]).abs() > 1e-8 {
                return Err(Error::Numeric(format!(
                    "sum-of-trees fit drifted at row {i}: {} vs {}",
                    direct, self.total_fit[i]
                )));
            }
        }
        Ok(())
    }

    /// Per-draw inclusion proportions (uniform when the forest is splitless).
    pub fn inclusion_proportions(&self) -> Vec<f64> {
        let mut counts = vec![0u64; self.j()];
        for tree in &self.trees {
            tree.count_splits(&mut counts);
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            vec![1.0 / self.j() as f64; self.j()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        }
    }

    pub fn mean_leaf_count(&self) -> f64 {
        let total: usize = self.trees.iter().map(|t| t.leaf_count()).sum();
        total as f64 / self.trees.len() as f64
    }

    pub fn acceptance_rates(&self) -> (f64, f64, f64) {
        let rate = |m: usize| {
            if self.tries[m] == 0 {
                0.0
            } else {
                self.accepts[m] as f64 / self.tries[m] as f64
            }
        };
        (rate(MOVE_GROW), rate(MOVE_PRUNE), rate(MOVE_CHANGE))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|row| self.trees.iter().map(|t| t.predict(row)).sum())
            .collect()
    }

    pub fn training_fit(&self) -> &[f64] {
        &self.total_fit
    }

    pub fn y_transformed(&self) -> &[f64] {
        &self.y_t
    }
}

/// Marginal likelihood of a subtree's leaves; None when a leaf is empty.
fn subtree_log_marginal(
    node: &TreeNode,
    x: &Array2<f64>,
    rows: &[u32],
    residual: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
) -> Option<f64> {
    match node {
        TreeNode::Leaf { .. } => {
            if rows.is_empty() {
                return None;
            }
            let s = sum_residuals(rows, residual);
            Some(log_node_marginal(rows.len(), s, sigma2, sigma_mu2))
        }
        TreeNode::Split { var, value, left, right } => {
            let mut l_rows = Vec::new();
            let mut r_rows = Vec::new();
            for &i in rows {
                if x[[i as usize, *var]] <= *value {
                    l_rows.push(i);
                } else {
                    r_rows.push(i);
                }
            }
            let l = subtree_log_marginal(left, x, &l_rows, residual, sigma2, sigma_mu2)?;
            let r = subtree_log_marginal(right, x, &r_rows, residual, sigma2, sigma_mu2)?;
            Some(l + r)
        }
    }
}

/// Simulate a tree from the structure prior alone (rules drawn uniformly
/// over the region's observed values; invalid splits terminate the branch).
pub fn simulate_prior_tree(x: &Array2<f64>, config: &BartConfig, rng: &mut TaskRng) -> TreeNode {
    fn grow(
        x: &Array2<f64>,
        config: &BartConfig,
        rows: Vec<u32>,
        depth: usize,
        rng: &mut TaskRng,
    ) -> TreeNode {
        let p = depth_split_prob(config.alpha, config.beta, depth);
        let u: f64 = rng.gen();
        if u >= p || rows.len() < 2 {
            return TreeNode::Leaf { mu: 0.0 };
        }
        let var = rng.gen_range(0..x.ncols());
        let values = region_values(x, &rows, var);
        let value = values[rng.gen_range(0..values.len())];
        let mut l_rows = Vec::new();
        let mut r_rows = Vec::new();
        for &i in &rows {
            if x[[i as usize, var]] <= value {
                l_rows.push(i);
            } else {
                r_rows.push(i);
            }
        }
        if l_rows.is_empty() || r_rows.is_empty() {
            return TreeNode::Leaf { mu: 0.0 };
        }
        TreeNode::Split {
            var,
            value,
            left: Box::new(grow(x, config, l_rows, depth + 1, rng)),
            right: Box::new(grow(x, config, r_rows, depth + 1, rng)),
        }
    }
    grow(x, config, (0..x.nrows() as u32).collect(), 0, rng)
}

#[derive(Debug, Clone)]
pub struct BartPosterior {
    /// Split-proportion importance averaged over retained draws.
    pub inclusion_proportions: Vec<f64>,
    pub per_draw_proportions: Vec<Vec<f64>>,
    pub sigma2_draws: Vec<f64>,
    pub curve_draws: Vec<Vec<f64>>,
    /// Inclusion proportions of each permutation rerun (selection nulls).
    pub null_proportions: Vec<Vec<f64>>,
    pub selected: Vec<bool>,
    pub accept_grow: f64,
    pub accept_prune: f64,
    pub accept_change: f64,
    pub mean_leaves: f64,
    pub used_sd_fallback: bool,
}

/// Core run: posterior draws plus optional grid predictions.
fn run_chain(
    x: &Array2<f64>,
    y: &[f64],
    config: &BartConfig,
    grid_rows: Option<&[Vec<f64>]>,
    rng: &mut TaskRng,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, BartChainStats)> {
    let scale = ResponseScale::fit(y)?;
    let mut sampler = BartSampler::new(x, y, *config)?;
    let mut per_draw = Vec::with_capacity(config.retained);
    let mut sigma2_draws = Vec::with_capacity(config.retained);
    let mut curve_draws = Vec::new();
    let mut leaf_count_sum = 0.0;
    for iter in 0..(config.burn_in + config.retained) {
        sampler
            .iterate(rng)
            .map_err(|e| Error::Numeric(format!("bart failed at iteration {iter}: {e}")))?;
        if iter >= config.burn_in {
            per_draw.push(sampler.inclusion_proportions());
            sigma2_draws.push(sampler.sigma2 * scale.range() * scale.range());
            leaf_count_sum += sampler.mean_leaf_count();
            if let Some(rows) = grid_rows {
                let pred = sampler.predict_rows(rows);
                let anchor = pred[rows.len() - 1];
                curve_draws.push(
                    pred[..rows.len() - 1]
                        .iter()
                        .map(|v| (v - anchor) * scale.range())
                        .collect(),
                );
            }
        }
    }
    let (accept_grow, accept_prune, accept_change) = sampler.acceptance_rates();
    let stats = BartChainStats {
        accept_grow,
        accept_prune,
        accept_change,
        mean_leaves: leaf_count_sum / config.retained as f64,
        used_sd_fallback: sampler.used_sd_fallback,
    };
    Ok((per_draw, sigma2_draws, curve_draws, stats))
}

struct BartChainStats {
    accept_grow: f64,
    accept_prune: f64,
    accept_change: f64,
    mean_leaves: f64,
    used_sd_fallback: bool,
}

fn average_proportions(per_draw: &[Vec<f64>]) -> Vec<f64> {
    let j = per_draw[0].len();
    let mut avg = vec![0.0; j];
    for draw in per_draw {
        for (a, v) in avg.iter_mut().zip(draw) {
            *a += v;
        }
    }
    for a in avg.iter_mut() {
        *a /= per_draw.len() as f64;
    }
    avg
}

/// Local permutation threshold: keep variable j when its real proportion
/// strictly exceeds the (1 - alpha_sel) quantile of its own nulls.
pub fn local_threshold_select(real: &[f64], nulls: &[Vec<f64>], alpha_sel: f64) -> Vec<bool> {
    let j = real.len();
    (0..j)
        .map(|var| {
            let col: Vec<f64> = nulls.iter().map(|row| row[var]).collect();
            let cut = stats::quantile_of(&col, 1.0 - alpha_sel);
            real[var] > cut
        })
        .collect()
}

/// Full pipeline on one dataset: posterior, permutation nulls, selection.
pub fn run_bart(
    data: &SimDataset,
    config: &BartConfig,
    rng: &mut TaskRng,
) -> Result<(BartPosterior, MethodOutput)> {
    let grid = PredictionGrid::for_dataset(data);
    let grid_rows = grid.rows();
    let (per_draw, sigma2_draws, curve_draws, chain_stats) =
        run_chain(&data.x, &data.y, config, Some(&grid_rows), rng)?;
    let real = average_proportions(&per_draw);

    let mut null_proportions = Vec::with_capacity(config.permutations);
    let perm_master: u64 = rng.gen();
    for p in 0..config.permutations {
        let mut perm_rng = derive_rng(perm_master, "bart-perm", &[p as u64]);
        let mut y_perm = data.y.clone();
        y_perm.shuffle(&mut perm_rng);
        let (null_draws, _, _, _) = run_chain(&data.x, &y_perm, config, None, &mut perm_rng)?;
        null_proportions.push(average_proportions(&null_draws));
    }
    let selected = if config.permutations > 0 {
        local_threshold_select(&real, &null_proportions, config.alpha_sel)
    } else {
        vec![false; data.j()]
    };

    let posterior = BartPosterior {
        inclusion_proportions: real.clone(),
        per_draw_proportions: per_draw,
        sigma2_draws: sigma2_draws.clone(),
        curve_draws,
        null_proportions,
        selected: selected.clone(),
        accept_grow: chain_stats.accept_grow,
        accept_prune: chain_stats.accept_prune,
        accept_change: chain_stats.accept_change,
        mean_leaves: chain_stats.mean_leaves,
        used_sd_fallback: chain_stats.used_sd_fallback,
    };
    let curves = grid.curves_from_draws(&posterior.curve_draws);
    let output = MethodOutput {
        method: MethodKind::Bart,
        exposures: data.names.clone(),
        scores: real,
        score_kind: ScoreKind::InclusionProportion,
        selected,
        curves,
        diagnostics: serde_json::json!({
            "accept_grow": posterior.accept_grow,
            "accept_prune": posterior.accept_prune,
            "accept_change": posterior.accept_change,
            "mean_leaves": posterior.mean_leaves,
            "sigma_prior_fallback": posterior.used_sd_fallback,
        }),
        traces: Some(Traces {
            names: vec!["sigma2".into()],
            draws: sigma2_draws.iter().map(|s| vec![*s]).collect(),
        }),
    };
    Ok((posterior, output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_x(n: usize, j: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, "bart-x", &[n as u64, j as u64]);
        let mut x = Array2::<f64>::zeros((n, j));
        for i in 0..n {
            for k in 0..j {
                x[[i, k]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        x
    }

    #[test]
    fn response_scale_examples() {
        let scale = ResponseScale::fit(&[0.0, 10.0]).unwrap();
        assert_abs_diff_eq!(scale.forward(0.0), -0.5);
        assert_abs_diff_eq!(scale.forward(10.0), 0.5);
        for y in [0.0, 3.7, 10.0] {
            assert_abs_diff_eq!(scale.inverse(scale.forward(y)), y, epsilon = 1e-12);
        }
        assert!(ResponseScale::fit(&[2.0, 2.0]).is_err());
        assert_abs_diff_eq!(leaf_prior_sd(2.0, 50), 0.035355339059327376, epsilon = 1e-15);
    }

    #[test]
    fn depth_prior_examples() {
        assert_abs_diff_eq!(depth_split_prob(0.95, 2.0, 0), 0.95);
        assert_abs_diff_eq!(depth_split_prob(0.95, 2.0, 1), 0.2375);
        assert!(depth_split_prob(0.95, 2.0, 50) < 1e-3);
    }

    #[test]
    fn sigma_prior_calibration_round_trip() {
        let lambda = calibrate_sigma_prior(3.0, 0.9, 0.1);
        let c = inv_gamma_cdf(0.01, 1.5, 1.5 * lambda);
        assert_abs_diff_eq!(c, 0.9, epsilon = 1e-6);
        // q = 0.5 puts sigma_hat^2 at the prior median
        let lambda = calibrate_sigma_prior(3.0, 0.5, 0.3);
        let c = inv_gamma_cdf(0.09, 1.5, 1.5 * lambda);
        assert_abs_diff_eq!(c, 0.5, epsilon = 1e-6);
        // more prior mass below sigma_hat as q grows
        let l_low = calibrate_sigma_prior(3.0, 0.3, 0.2);
        let l_high = calibrate_sigma_prior(3.0, 0.95, 0.2);
        let c_low = inv_gamma_cdf(0.04, 1.5, 1.5 * l_low);
        let c_high = inv_gamma_cdf(0.04, 1.5, 1.5 * l_high);
        assert!(c_high > c_low);
    }

    #[test]
    fn leaf_posterior_flat_prior_limit() {
        // As sigma_mu -> infinity the leaf mean tends to the residual mean:
        // mean = s / (n + sigma2/sigma_mu2) -> s / n.
        let s = 6.0;
        let n = 4.0;
        let sigma2 = 2.0;
        let mean = |sigma_mu2: f64| s / (n + sigma2 / sigma_mu2);
        assert_abs_diff_eq!(mean(1e12), s / n, epsilon = 1e-9);
        assert!(mean(0.01) < mean(1e12));
    }

    #[test]
    fn sigma2_posterior_params_hand_check() {
        // N=4 toy: shape = nu/2 + 2, scale = nu*lambda/2 + rss/2.
        let x = toy_x(4, 2, 1);
        let y = [0.1, -0.4, 0.7, 0.2];
        let config = BartConfig {
            burn_in: 0,
            retained: 1,
            permutations: 0,
            ..BartConfig::default()
        };
        let sampler = BartSampler::new(&x, &y, config).unwrap();
        // all-stump forest: fit = 0, rss = sum y_t^2
        let rss: f64 = sampler.y_t.iter().map(|v| v * v).sum();
        let shape = 3.0 / 2.0 + 2.0;
        let scale = 3.0 * sampler.lambda_prior / 2.0 + rss / 2.0;
        assert_abs_diff_eq!(shape, 3.5);
        assert!(scale > 0.0);
    }

    #[test]
    fn grow_and_inverse_prune_ratios_are_reciprocal() {
        // 5-row instance, single tree; compute both directions analytically.
        let mut x = Array2::<f64>::zeros((5, 1));
        for i in 0..5 {
            x[[i, 0]] = i as f64;
        }
        let residual = [0.5, -0.2, 0.3, 0.9, -1.1];
        let sigma2 = 0.8;
        let sigma_mu2 = 0.05;
        let value = 2.0; // split rows {0,1,2} | {3,4}
        let (n_l, s_l) = (3usize, 0.5 - 0.2 + 0.3);
        let (n_r, s_r) = (2usize, 0.9 - 1.1);
        let lik_grow = log_node_marginal(n_l, s_l, sigma2, sigma_mu2)
            + log_node_marginal(n_r, s_r, sigma2, sigma_mu2)
            - log_node_marginal(5, s_l + s_r, sigma2, sigma_mu2);
        let p0 = depth_split_prob(0.95, 2.0, 0);
        let p1 = depth_split_prob(0.95, 2.0, 1);
        let structure_grow = (p0 * (1.0 - p1) * (1.0 - p1) / (1.0 - p0)).ln();
        // stump: b = 1 leaf, after grow w' = 1
        let proposal_grow = (0.6f64 * 1.0 / (0.2 * 1.0)).ln();
        let grow_ratio = lik_grow + structure_grow + proposal_grow;

        // prune of the same split from the grown tree
        let lik_prune = -lik_grow;
        let structure_prune = -structure_grow;
        // from grown tree: w = 1 prunable, leaves after prune = 1
        let proposal_prune = (0.2f64 * 1.0 / (0.6 * 1.0)).ln();
        let prune_ratio = lik_prune + structure_prune + proposal_prune;
        assert_abs_diff_eq!(grow_ratio, -prune_ratio, epsilon = 1e-12);
        let _ = value;
    }

    #[test]
    fn noise_keeps_trees_shallow() {
        let n = 120;
        let x = toy_x(n, 5, 2);
        let mut rng = derive_rng(3, "bart-noise", &[]);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let config = BartConfig {
            burn_in: 300,
            retained: 300,
            permutations: 0,
            ..BartConfig::default()
        };
        let (_, _, _, stats) = run_chain(&x, &y, &config, None, &mut rng).unwrap();
        assert!(stats.mean_leaves <= 3.5, "mean leaves {}", stats.mean_leaves);
    }

    #[test]
    fn prior_forest_mode_at_two_or_three_leaves() {
        let x = toy_x(250, 12, 4);
        let config = BartConfig::default();
        let mut rng = derive_rng(5, "bart-prior", &[]);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..4000 {
            let t = simulate_prior_tree(&x, &config, &mut rng);
            *counts.entry(t.leaf_count()).or_insert(0usize) += 1;
        }
        let mode = counts.iter().max_by_key(|(_, c)| **c).map(|(k, _)| *k).unwrap();
        assert!(mode == 2 || mode == 3, "mode {mode}, counts {counts:?}");
    }

    #[test]
    fn single_variable_gets_all_inclusion() {
        let n = 100;
        let x = toy_x(n, 1, 6);
        let mut rng = derive_rng(7, "bart-single", &[]);
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let config = BartConfig {
            burn_in: 200,
            retained: 100,
            permutations: 0,
            ..BartConfig::default()
        };
        let (per_draw, _, _, _) = run_chain(&x, &y, &config, None, &mut rng).unwrap();
        for draw in per_draw {
            assert_abs_diff_eq!(draw[0], 1.0);
        }
    }

    #[test]
    fn strong_signal_dominates_inclusion_and_fit() {
        let mut wins = 0;
        let mut r2_ok = 0;
        for rep in 0..10u64 {
            let n = 250;
            let x = toy_x(n, 6, 100 + rep);
            let mut rng = derive_rng(8, "bart-strong", &[rep]);
            let sigma = (4.0 * (1.0 - 0.3) / 0.3f64).sqrt();
            let y: Vec<f64> = (0..n)
                .map(|i| 2.0 * x[[i, 0]] + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let config = BartConfig {
                burn_in: 1000,
                retained: 600,
                permutations: 0,
                ..BartConfig::default()
            };
            let scale = ResponseScale::fit(&y).unwrap();
            let mut sampler = BartSampler::new(&x, &y, config).unwrap();
            let mut avg = vec![0.0; 6];
            for it in 0..(config.burn_in + config.retained) {
                sampler.iterate(&mut rng).unwrap();
                if it >= config.burn_in {
                    for (a, v) in avg.iter_mut().zip(sampler.inclusion_proportions()) {
                        *a += v;
                    }
                }
            }
            for a in avg.iter_mut() {
                *a /= config.retained as f64;
            }
            if (1..6).all(|j| avg[0] > avg[j]) {
                wins += 1;
            }
            // training R^2 on the transformed scale
            let fit = sampler.training_fit();
            let y_t: Vec<f64> = y.iter().map(|v| scale.forward(*v)).collect();
            let ss_res: f64 = y_t.iter().zip(fit).map(|(a, b)| (a - b) * (a - b)).sum();
            let ss_tot: f64 = {
                let m = stats::mean(&y_t);
                y_t.iter().map(|v| (v - m) * (v - m)).sum()
            };
            if 1.0 - ss_res / ss_tot > 0.2 {
                r2_ok += 1;
            }
        }
        assert!(wins >= 8, "signal variable won {wins}/10");
        assert!(r2_ok >= 8, "training R2 floor met {r2_ok}/10");
    }

    #[test]
    fn local_threshold_edge_cases() {
        let nulls: Vec<Vec<f64>> = (0..20).map(|i| vec![0.02 + 0.001 * i as f64, 0.5]).collect();
        // real below every null draw
        let sel = local_threshold_select(&[0.001, 0.9], &nulls, 0.05);
        assert_eq!(sel, vec![false, true]);
        // real above every null draw
        let sel = local_threshold_select(&[0.5, 0.2], &nulls, 0.05);
        assert_eq!(sel, vec![true, false]);
        // ties fail the strict comparison
        let tied: Vec<Vec<f64>> = (0..20).map(|_| vec![0.3]).collect();
        let sel = local_threshold_select(&[0.3], &tied, 0.05);
        assert_eq!(sel, vec![false]);
    }
}

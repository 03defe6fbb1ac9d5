//! Cubic B-spline bases on equidistant knots with difference penalties.
//!
//! Shared by the spike–slab additive sampler and the oracle smoother so the
//! two differ only in their priors.

use ndarray::{Array1, Array2};

/// Cubic B-spline basis with equidistant knots spanning `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub n_basis: usize,
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Self {
        assert!(hi > lo, "basis range must be non-degenerate");
        assert!(n_basis >= 4);
        let degree = 3usize;
        let nseg = n_basis - degree;
        let h = (hi - lo) / nseg as f64;
        // Equidistant knots extended `degree` steps beyond each boundary.
        let knots: Vec<f64> = (0..(n_basis + degree + 1))
            .map(|i| lo + (i as f64 - degree as f64) * h)
            .collect();
        Self {
            lo,
            hi,
            n_basis,
            knots,
            degree,
        }
    }

    /// Evaluate all basis functions at `x` (Cox–de Boor). Points outside
    /// `[lo, hi]` use the polynomial extension of the boundary segment.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let d = self.degree;
        let nseg = self.n_basis - d;
        let h = (self.hi - self.lo) / nseg as f64;
        let seg = (((x - self.lo) / h).floor() as isize).clamp(0, nseg as isize - 1) as usize;
        // Knot interval index in the padded knot vector.
        let k = seg + d;
        // de Boor's recursion restricted to the d+1 active functions.
        let mut b = vec![0.0; d + 1];
        b[0] = 1.0;
        for r in 1..=d {
            let mut saved = 0.0;
            for j in 0..r {
                let left = self.knots[k - r + 1 + j];
                let right = self.knots[k + 1 + j];
                let alpha = (x - left) / (right - left);
                let tmp = b[j];
                b[j] = saved + (1.0 - alpha) * tmp;
                saved = alpha * tmp;
            }
            b[r] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        for (j, val) in b.iter().enumerate() {
            out[k - d + j] = *val;
        }
        out
    }

    pub fn design(&self, xs: &[f64]) -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((xs.len(), self.n_basis));
        for (i, &x) in xs.iter().enumerate() {
            for (j, v) in self.row(x).into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }
}

/// Second-order difference penalty D2' D2 for `n_basis` coefficients
/// (rank n_basis - 2; null space spans constant and linear coefficients).
pub fn second_diff_penalty(n_basis: usize) -> Array2<f64> {
    let rows = n_basis - 2;
    let mut p = Array2::<f64>::zeros((n_basis, n_basis));
    for r in 0..rows {
        let idx = [r, r + 1, r + 2];
        let w = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                p[[idx[a], idx[b]]] += w[a] * w[b];
            }
        }
    }
    p
}

/// Orthonormal basis of the null space of the single constraint c'b = 0,
/// built from a Householder reflection. Returns an n x (n-1) matrix Z with
/// orthonormal columns satisfying c' Z = 0.
pub fn constraint_null_basis(c: &Array1<f64>) -> Array2<f64> {
    let n = c.len();
    let norm = c.dot(c).sqrt();
    assert!(norm > 0.0, "constraint vector must be nonzero");
    let mut u = c.clone();
    u[0] += c[0].signum().max(-1.0).min(1.0) * norm;
    if c[0] == 0.0 {
        u[0] += norm;
    }
    let uu = u.dot(&u);
    // H = I - 2 u u' / (u'u); columns 1..n of H span the null space of c.
    let mut z = Array2::<f64>::zeros((n, n - 1));
    for col in 1..n {
        for row in 0..n {
            let e = if row == col { 1.0 } else { 0.0 };
            z[[row, col - 1]] = e - 2.0 * u[row] * u[col] / uu;
        }
    }
    z
}

//! Dense linear algebra used by the samplers and smoothers.
//!
//! The N x N factorizations in the kernel-machine sampler dominate the
//! benchmark's runtime, so Cholesky goes through LAPACK (system OpenBLAS).
//! Everything else (correlation matrices, penalty eigenproblems) is at most
//! ~80-dimensional and uses a cyclic Jacobi eigensolver.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use std::os::raw::{c_char, c_int};
use std::sync::OnceLock;

extern "C" {
    fn dpotrf_(uplo: *const c_char, n: *const c_int, a: *mut f64, lda: *const c_int, info: *mut c_int);
    fn dpotrs_(
        uplo: *const c_char,
        n: *const c_int,
        nrhs: *const c_int,
        a: *const f64,
        lda: *const c_int,
        b: *mut f64,
        ldb: *const c_int,
        info: *mut c_int,
    );
    fn dtrsv_(
        uplo: *const c_char,
        trans: *const c_char,
        diag: *const c_char,
        n: *const c_int,
        a: *const f64,
        lda: *const c_int,
        x: *mut f64,
        incx: *const c_int,
    );
    fn openblas_set_num_threads(n: c_int);
}

const L: *const c_char = b"L\0".as_ptr() as *const c_char;
const N: *const c_char = b"N\0".as_ptr() as *const c_char;
const T: *const c_char = b"T\0".as_ptr() as *const c_char;

/// Task-level parallelism lives above BLAS; keep BLAS single-threaded.
fn pin_blas_threads() {
    static ONCE: OnceLock<()> = OnceLock::new();
    ONCE.get_or_init(|| unsafe { openblas_set_num_threads(1) });
}

/// Cholesky factor of a symmetric positive-definite matrix, stored as the
/// lower triangle of a column-major n x n buffer.
pub struct Chol {
    l: Vec<f64>,
    n: usize,
}

impl Chol {
    /// Factor a symmetric matrix given as a flat n x n buffer. Only the
    /// lower triangle in column-major order (equivalently the upper in
    /// row-major order) is read; by symmetry callers may pass either
    /// layout of the full matrix.
    pub fn factor(mut a: Vec<f64>, n: usize) -> std::result::Result<Self, Vec<f64>> {
        pin_blas_threads();
        debug_assert_eq!(a.len(), n * n);
        let mut info: c_int = 0;
        let nn = n as c_int;
        unsafe { dpotrf_(L, &nn, a.as_mut_ptr(), &nn, &mut info) };
        if info == 0 {
            Ok(Self { l: a, n })
        } else {
            Err(a)
        }
    }

    /// Factor with a single jitter retry on the diagonal, then fail.
    pub fn factor_with_jitter(a: &[f64], n: usize, jitter: f64) -> Result<Self> {
        match Self::factor(a.to_vec(), n) {
            Ok(c) => Ok(c),
            Err(_) => {
                let mut b = a.to_vec();
                for i in 0..n {
                    b[i * n + i] += jitter;
                }
                Self::factor(b, n).map_err(|_| {
                    Error::Numeric(format!(
                        "Cholesky failed for {n}x{n} matrix even after {jitter:e} jitter"
                    ))
                })
            }
        }
    }

    pub fn from_array(a: &Array2<f64>, jitter: f64) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let flat: Vec<f64> = a.iter().copied().collect();
        Self::factor_with_jitter(&flat, n, jitter)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// log det of the factored matrix (2 * sum log diag L).
    pub fn log_det(&self) -> f64 {
        let n = self.n;
        2.0 * (0..n).map(|i| self.l[i * n + i].ln()).sum::<f64>()
    }

    /// Solve L z = y in place.
    pub fn solve_lower(&self, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        let nn = self.n as c_int;
        let one: c_int = 1;
        unsafe { dtrsv_(L, N, N, &nn, self.l.as_ptr(), &nn, y.as_mut_ptr(), &one) };
    }

    /// Solve L' z = y in place.
    pub fn solve_lower_t(&self, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        let nn = self.n as c_int;
        let one: c_int = 1;
        unsafe { dtrsv_(L, T, N, &nn, self.l.as_ptr(), &nn, y.as_mut_ptr(), &one) };
    }

    /// y' A^{-1} y via one triangular solve.
    pub fn quad_form(&self, y: &[f64]) -> f64 {
        let mut z = y.to_vec();
        self.solve_lower(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    /// Solve A x = b for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solve A X = B for `nrhs` column-major right-hand sides in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let nrhs = (b.len() / self.n) as c_int;
        debug_assert_eq!(b.len(), self.n * nrhs as usize);
        let nn = self.n as c_int;
        let mut info: c_int = 0;
        unsafe { dpotrs_(L, &nn, &nrhs, self.l.as_ptr(), &nn, b.as_mut_ptr(), &nn, &mut info) };
        debug_assert_eq!(info, 0);
    }

    /// Sample from N(mu, A^{-1}) given this factor of the precision A:
    /// x = mu + L^{-T} z with z standard normal.
    pub fn precision_sample(&self, mu: &[f64], z: &mut [f64]) -> Vec<f64> {
        self.solve_lower_t(z);
        mu.iter().zip(z.iter()).map(|(m, d)| m + d).collect()
    }

    /// Lower-triangular factor element L[i][j] (i >= j).
    pub fn l_elem(&self, i: usize, j: usize) -> f64 {
        self.l[j * self.n + i]
    }

    /// Give the factor buffer back for reuse.
    pub fn into_buf(self) -> Vec<f64> {
        self.l
    }

    /// Multiply x by the factor: y = L x (used to draw from N(0, A)).
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                let col = &self.l[j * n..(j + 1) * n];
                for i in j..n {
                    y[i] += col[i] * xj;
                }
            }
        }
        y
    }
}

/// Eigendecomposition of a small symmetric matrix by cyclic Jacobi.
/// Returns (eigenvalues ascending, eigenvectors as columns).
pub fn sym_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.diag().iter().map(|d| d.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[[k, dst]] = v[[k, src]];
        }
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    sym_eigen(a).0[0]
}

/// Project a symmetric unit-diagonal matrix onto the nearest correlation
/// matrix (alternating projections with Dykstra correction).
pub fn nearest_correlation(a: &Array2<f64>, tol: f64, floor: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut ds = Array2::<f64>::zeros((n, n));
    for _ in 0..200 {
        let r = &y - &ds;
        // PSD projection with eigenvalues clipped to `floor`.
        let (vals, vecs) = sym_eigen(&r);
        let mut x = Array2::<f64>::zeros((n, n));
        for (k, &val) in vals.iter().enumerate() {
            let lam = val.max(floor);
            for i in 0..n {
                let vik = vecs[[i, k]] * lam;
                for j in 0..n {
                    x[[i, j]] += vik * vecs[[j, k]];
                }
            }
        }
        ds = &x - &r;
        let mut delta: f64 = 0.0;
        for i in 0..n {
            x[[i, i]] = 1.0;
            for j in 0..n {
                delta = delta.max((x[[i, j]] - y[[i, j]]).abs());
            }
        }
        y = x;
        if delta < tol {
            return Ok(finalize_correlation(&y, floor));
        }
    }
    Err(Error::Numeric(
        "nearest-correlation projection did not converge".into(),
    ))
}

/// Clip the spectrum at `floor`, renormalise to unit diagonal, and
/// symmetrize exactly. Guarantees a positive-definite correlation matrix.
fn finalize_correlation(a: &Array2<f64>, floor: f64) -> Array2<f64> {
    let n = a.nrows();
    let (vals, vecs) = sym_eigen(a);
    let mut x = Array2::<f64>::zeros((n, n));
    for (k, &val) in vals.iter().enumerate() {
        let lam = val.max(floor);
        for i in 0..n {
            let vik = vecs[[i, k]] * lam;
            for j in 0..n {
                x[[i, j]] += vik * vecs[[j, k]];
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|i| x[[i, i]].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            x[[i, j]] /= d[i] * d[j];
        }
    }
    for i in 0..n {
        x[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let m = 0.5 * (x[[i, j]] + x[[j, i]]);
            x[[i, j]] = m;
            x[[j, i]] = m;
        }
    }
    x
}

/// Solve the normal equations X' X b = X' y (ordinary least squares).
pub fn least_squares(x: &Array2<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let p = x.ncols();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for j in 0..p {
        for k in 0..p {
            let mut s = 0.0;
            for i in 0..x.nrows() {
                s += x[[i, j]] * x[[i, k]];
            }
            xtx[k * p + j] = s;
        }
        let mut s = 0.0;
        for i in 0..x.nrows() {
            s += x[[i, j]] * y[i];
        }
        xty[j] = s;
    }
    let chol = Chol::factor_with_jitter(&xtx, p, 1e-10)?;
    Ok(chol.solve_vec(&xty))
}

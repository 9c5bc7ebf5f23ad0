//! Small dense/banded kernels shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Tridiagonal matrix stored by diagonals.
///
/// `lower[i]` is entry `(i + 1, i)` and `upper[i]` is entry `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len() + 1, diag.len().max(1));
        debug_assert_eq!(upper.len(), lower.len());
        Self { lower, diag, upper }
    }

    /// Constant-coefficient matrix `scale * tridiag(sub, main, sup)`.
    pub fn constant(n: usize, sub: f64, main: f64, sup: f64, scale: f64) -> Self {
        let off = n.saturating_sub(1);
        Self {
            lower: vec![scale * sub; off],
            diag: vec![scale * main; n],
            upper: vec![scale * sup; off],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn transpose(&self) -> Self {
        Self {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Tridiagonal, b: f64) -> Self {
        let zip = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
        };
        Self {
            lower: zip(&self.lower, &other.lower),
            diag: zip(&self.diag, &other.diag),
            upper: zip(&self.upper, &other.upper),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            acc
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.lower[i];
                m[(i, i + 1)] = self.upper[i];
            }
        }
        m
    }

    /// Thomas algorithm without pivoting. The systems solved here are
    /// diagonally dominant (mass/dt plus diffusion).
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(invalid(format!(
                "tridiagonal solve: rhs has length {}, expected {n}",
                rhs.len()
            )));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom.abs() < f64::MIN_POSITIVE {
            return Err(Error::Singular("tridiagonal solve"));
        }
        if n > 1 {
            c[0] = self.upper[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
                return Err(Error::Singular("tridiagonal solve"));
            }
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / denom;
        }
        let mut x = DVector::zeros(n);
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        Ok(x)
    }
}

/// Lower Cholesky factor `L` with `m = L Lᵀ`.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite(what))
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("Cholesky factor has a zero on its diagonal")
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a zero on its diagonal")
}

/// Leading `k` left singular vectors and all singular values of `w`.
pub fn leading_left_singular(w: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let rank_bound = w.nrows().min(w.ncols());
    if k > rank_bound {
        // A wide enough matrix is required to return k orthonormal vectors from
        // the thin SVD; pad with zero columns so the SVD is still full-width.
        let mut padded = DMatrix::zeros(w.nrows(), w.nrows());
        padded.columns_mut(0, w.ncols()).copy_from(w);
        return leading_left_singular(&padded, k);
    }
    let svd = w.clone().svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    Ok((u.columns(0, k).into_owned(), svd.singular_values.iter().copied().collect()))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major reshape of `v` into a `rows`-row matrix (inverse of `vec`).
pub fn unvec(v: &[f64], rows: usize) -> DMatrix<f64> {
    assert_eq!(v.len() % rows.max(1), 0);
    DMatrix::from_column_slice(rows, v.len() / rows.max(1), v)
}

/// Trapezoidal quadrature weights for an increasing grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let dt = times[i + 1] - times[i];
        w[i] += 0.5 * dt;
        w[i + 1] += 0.5 * dt;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    /// final residual, ∞-norm
    pub residual: f64,
}

/// Newton's method with a dense direct solve and backtracking on `‖R‖₂`
/// (halving, at most 20 times). Converged when `‖R‖∞ < tol`.
pub fn newton_solve(
    mut x: DVector<f64>,
    tol: f64,
    max_iterations: usize,
    residual: impl Fn(&DVector<f64>) -> DVector<f64>,
    jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64>,
) -> Result<(DVector<f64>, NewtonReport)> {
    let mut r = residual(&x);
    for it in 0..=max_iterations {
        let rinf = r.amax();
        if !rinf.is_finite() {
            break;
        }
        if rinf < tol {
            return Ok((x, NewtonReport { iterations: it, residual: rinf }));
        }
        if it == max_iterations {
            break;
        }
        let dx = jacobian(&x)
            .lu()
            .solve(&(-&r))
            .ok_or(Error::Singular("Newton step"))?;
        let r0 = r.norm();
        let mut step = 1.0;
        let mut trial = &x + &dx;
        let mut rt = residual(&trial);
        for _ in 0..20 {
            if rt.norm() < r0 {
                break;
            }
            step *= 0.5;
            trial = &x + step * &dx;
            rt = residual(&trial);
        }
        x = trial;
        r = rt;
    }
    Err(Error::NoConvergence { iterations: max_iterations, residual: r.amax() })
}

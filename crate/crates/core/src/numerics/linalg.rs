use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use super::{Matrix, NumericsError};

const SVD_MAX_ITER: usize = 10_000;

/// Thin singular value decomposition `m = U · diag(S) · Vᵀ`.
///
/// `U` is `rows x r`, `V` is `cols x r` with `r = min(rows, cols)`;
/// singular values are non-negative and sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Number of singular values above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

pub fn svd(m: &Matrix) -> Result<Svd, NumericsError> {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            v: Matrix::zeros(cols, 0),
        });
    }
    let dm = m.to_nalgebra();
    let dec = SVD::try_new(dm, true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(NumericsError::NoConvergence)?;
    let u = dec.u.ok_or(NumericsError::NoConvergence)?;
    let v_t = dec.v_t.ok_or(NumericsError::NoConvergence)?;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        dec.singular_values[b]
            .total_cmp(&dec.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut u_out = Matrix::zeros(rows, r);
    let mut v_out = Matrix::zeros(cols, r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        s.push(dec.singular_values[src].max(0.0));
        for i in 0..rows {
            u_out.set(i, dst, u[(i, src)]);
        }
        for j in 0..cols {
            v_out.set(j, dst, v_t[(src, j)]);
        }
    }
    Ok(Svd { u: u_out, s, v: v_out })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>, NumericsError> {
    if m.rows() != m.cols() {
        return Err(NumericsError::DimMismatch {
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    let eig = SymmetricEigen::try_new(m.to_nalgebra(), f64::EPSILON, SVD_MAX_ITER)
        .ok_or(NumericsError::NoConvergence)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Solves `a · x = b` for symmetric positive-definite `a`.
///
/// Returns [`NumericsError::Singular`] when the smallest eigenvalue is not
/// positive relative to the largest (`<= 1e-12 · λ_max`).
pub fn solve_symmetric(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(NumericsError::DimMismatch {
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let eig = symmetric_eigenvalues(a)?;
    let (lo, hi) = (eig[0], eig[n - 1]);
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(NumericsError::Singular);
    }
    let am: DMatrix<f64> = a.to_nalgebra();
    let chol = am.cholesky().ok_or(NumericsError::Singular)?;
    let x = chol.solve(&DVector::from_column_slice(b));
    Ok(x.iter().copied().collect())
}

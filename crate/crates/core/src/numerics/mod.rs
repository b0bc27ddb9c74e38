//! Dense linear algebra and statistics primitives.
//!
//! Everything here is deterministic: identical inputs (and identical [`Rng`]
//! seeds) produce bit-identical outputs.

mod linalg;
mod matrix;
mod rng;
mod stats;

pub use linalg::{solve_symmetric, svd, symmetric_eigenvalues, Svd};
pub use matrix::{dot, norm, EmbeddingMatrix, Matrix};
pub use rng::Rng;
pub use stats::{mean, mean_std, percentile};
pub(crate) use stats::percentile_sorted;

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("row {0} has (near-)zero norm")]
    ZeroRow(usize),
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("empty list")]
    EmptyList,
    #[error("iteration did not converge")]
    NoConvergence,
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is singular or numerically rank-deficient")]
    Singular,
}

/// Rows with norm below this are treated as zero.
pub const ZERO_ROW_NORM: f64 = 1e-12;

/// Scales every row to unit Euclidean norm.
pub fn unit_normalize_rows(m: &Matrix) -> Result<Matrix, NumericsError> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n < ZERO_ROW_NORM {
            return Err(NumericsError::ZeroRow(i));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

pub fn column_mean(m: &Matrix) -> Result<Vec<f64>, NumericsError> {
    if m.rows() == 0 {
        return Err(NumericsError::EmptyMatrix);
    }
    Ok(matrix::column_mean_unchecked(m))
}

/// `N x N` matrix of row inner products.
pub fn gram(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let ri = m.row(i);
        for j in i..n {
            let v = dot(ri, m.row(j));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = unit_normalize_rows(&m).unwrap();
        assert!(close(n.get(0, 0), 0.6, 1e-15) && close(n.get(0, 1), 0.8, 1e-15));

        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(unit_normalize_rows(&m).unwrap(), Matrix::identity(2));

        let m = Matrix::from_rows(&[[1e-15, 1e-15, 1e-15]]).unwrap();
        assert_eq!(unit_normalize_rows(&m), Err(NumericsError::ZeroRow(0)));
    }

    #[test]
    fn column_mean_examples() {
        let m = Matrix::from_rows(&[[1.0, 3.0], [3.0, 5.0]]).unwrap();
        assert_eq!(column_mean(&m).unwrap(), vec![2.0, 4.0]);
        let m = Matrix::from_rows(&[[7.0, 7.0]]).unwrap();
        assert_eq!(column_mean(&m).unwrap(), vec![7.0, 7.0]);
        let m = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        assert_eq!(column_mean(&m).unwrap(), vec![0.0]);
        assert_eq!(column_mean(&Matrix::zeros(0, 3)), Err(NumericsError::EmptyMatrix));
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram(&Matrix::identity(3)), Matrix::identity(3));
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(gram(&m).as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        let m = Matrix::from_rows(&[[0.6, 0.8], [0.8, 0.6]]).unwrap();
        let g = gram(&m);
        assert!(close(g.get(0, 0), 1.0, 1e-12));
        assert!(close(g.get(1, 1), 1.0, 1e-12));
        assert!(close(g.get(0, 1), 0.96, 1e-12));
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite { row: 0, col: 1 })
        ));
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn transpose_products_agree() {
        let mut rng = Rng::new(5);
        let a = Matrix::from_fn(7, 3, |_, _| rng.normal()).unwrap();
        let b = Matrix::from_fn(7, 4, |_, _| rng.normal()).unwrap();
        let direct = a.transpose().matmul(&b).unwrap();
        let fused = a.t_matmul(&b).unwrap();
        assert!(direct.max_abs_diff(&fused) < 1e-12);
    }
}

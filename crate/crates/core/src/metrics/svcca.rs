use alloc::vec::Vec;

use super::{check_rows, MetricsError};
use crate::numerics::{svd, Matrix};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis for the column space of `x` (its left singular vectors).
fn column_basis(x: &Matrix, needed: usize) -> Result<Matrix, MetricsError> {
    let dec = svd(x)?;
    let rank = dec.rank(RANK_TOL);
    if rank < needed {
        return Err(MetricsError::RankDeficient { needed, got: rank });
    }
    let keep: Vec<usize> = (0..rank).collect();
    Ok(dec.u.select_columns(&keep))
}

/// Canonical correlations between the column spaces of `x` and `y`,
/// descending. Both are assumed column-centered.
///
/// Each side is whitened to an orthonormal basis; the correlations are the
/// singular values of the whitened cross-covariance.
pub fn canonical_correlations(x: &Matrix, y: &Matrix) -> Result<Vec<f64>, MetricsError> {
    check_rows(x, y)?;
    let qx = column_basis(x, 1)?;
    let qy = column_basis(y, 1)?;
    let cross = qx.t_matmul(&qy)?;
    Ok(svd(&cross)?.s.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())
}

/// SVCCA with `c` retained directions per side.
///
/// Both inputs are column-centered and reduced to their top-`c` left singular
/// vectors scaled by singular values; the result is the mean of the `c`
/// canonical correlations between the reductions, each clamped to `[0, 1]`.
pub fn svcca(f: &Matrix, g: &Matrix, c: usize) -> Result<f64, MetricsError> {
    let n = check_rows(f, g)?;
    if c == 0 {
        return Err(MetricsError::InvalidParameter("svcca needs c >= 1".into()));
    }
    if n <= c {
        return Err(MetricsError::TooFewSamples { needed: c + 1, got: n });
    }
    let max_c = f.cols().min(g.cols());
    if c > max_c {
        return Err(MetricsError::RankDeficient { needed: c, got: max_c });
    }
    let pf = reduce(&f.center_columns(), c)?;
    let pg = reduce(&g.center_columns(), c)?;
    let rho = canonical_correlations(&pf, &pg)?;
    if rho.len() < c {
        return Err(MetricsError::RankDeficient { needed: c, got: rho.len() });
    }
    Ok(rho[..c].iter().sum::<f64>() / c as f64)
}

fn reduce(x: &Matrix, c: usize) -> Result<Matrix, MetricsError> {
    let dec = svd(x)?;
    let rank = dec.rank(RANK_TOL);
    if rank < c {
        return Err(MetricsError::RankDeficient { needed: c, got: rank });
    }
    let mut out = Matrix::zeros(x.rows(), c);
    for i in 0..x.rows() {
        for j in 0..c {
            out.set(i, j, dec.u.get(i, j) * dec.s[j]);
        }
    }
    Ok(out)
}

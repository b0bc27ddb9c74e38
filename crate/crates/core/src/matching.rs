//! Feature matching between two sparse codebooks that are only defined up to
//! a permutation of their columns, plus a row-permutation null test.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{mean_std, Matrix, Rng};
use crate::sae::SparseCodeMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchingError {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("row counts differ: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },
    #[error("need at least 2 null draws, got {0}")]
    TooFewDraws(usize),
    #[error("null distribution has standard deviation {0:e}, z-score undefined")]
    DegenerateNull(f64),
}

/// A column correspondence `permutation[a] = b` between two codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub permutation: Vec<usize>,
    pub total_weight: f64,
    pub correlation: f64,
}

/// Exact maximum-weight perfect matching on a square weight matrix.
///
/// Among all optimal assignments the lexicographically smallest permutation
/// is returned. Runs the O(D³) shortest-augmenting-path method on negated
/// weights, then walks rows in order and moves each to its smallest column
/// that still lies on an optimal matching. Optimal matchings are exactly the
/// perfect matchings of the tight-edge subgraph of the final dual, so each
/// move is an alternating-path swap inside that subgraph.
pub fn assignment_max(weights: &Matrix) -> Result<(Vec<usize>, f64), MatchingError> {
    let (n, cols) = weights.shape();
    if n != cols {
        return Err(MatchingError::NotSquare { rows: n, cols });
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let cost = |i: usize, j: usize| -weights.get(i, j);

    // 1-indexed potentials and column owners; index 0 is the virtual root
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    let mut col_to_row = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
        col_to_row[j - 1] = owner[j] - 1;
    }

    let scale = weights.as_slice().iter().fold(1.0f64, |m, w| m.max(w.abs()));
    let tol = 1e-12 * scale * n as f64;
    let tight = |i: usize, j: usize| cost(i, j) - u[i + 1] - v[j + 1] <= tol;

    lex_smallest_tight(n, &tight, &mut row_to_col, &mut col_to_row);

    let total = (0..n).map(|i| weights.get(i, row_to_col[i])).sum();
    Ok((row_to_col, total))
}

/// Rewrites a perfect matching of the tight subgraph into the lexicographically
/// smallest one.
fn lex_smallest_tight(
    n: usize,
    tight: &impl Fn(usize, usize) -> bool,
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
) {
    let mut col_fixed = vec![false; n];
    // via[r] = column row r moves into when the chain through r is applied
    let mut via = vec![usize::MAX; n];
    let mut reached = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        let home = row_to_col[i];
        let smaller_exists = (0..home).any(|j| !col_fixed[j] && tight(i, j));
        if smaller_exists {
            // rows (after i) that can free their column by cascading into `home`
            reached.iter_mut().for_each(|r| *r = false);
            queue.clear();
            queue.push_back(home);
            while let Some(free_col) = queue.pop_front() {
                for r in i + 1..n {
                    if !reached[r] && tight(r, free_col) {
                        reached[r] = true;
                        via[r] = free_col;
                        queue.push_back(row_to_col[r]);
                    }
                }
            }
            let target = (0..home).find(|&j| !col_fixed[j] && tight(i, j) && reached[col_to_row[j]]);
            if let Some(j) = target {
                let mut r = col_to_row[j];
                row_to_col[i] = j;
                col_to_row[j] = i;
                loop {
                    let next_col = via[r];
                    let next_owner = col_to_row[next_col];
                    row_to_col[r] = next_col;
                    col_to_row[next_col] = r;
                    if next_col == home {
                        break;
                    }
                    r = next_owner;
                }
            }
        }
        col_fixed[row_to_col[i]] = true;
    }
}

/// `Z₁ᵀ Z₂` accumulated over rows, zero-padded to a square matrix.
fn cross_weights(z1: &SparseCodeMatrix, z2: &SparseCodeMatrix) -> Matrix {
    let dim = z1.cols().max(z2.cols());
    let mut w = vec![0.0; dim * dim];
    for r in 0..z1.rows() {
        for (a, x) in z1.row_entries(r) {
            for (b, y) in z2.row_entries(r) {
                w[a * dim + b] += x * y;
            }
        }
    }
    Matrix::from_vec(dim, dim, w).expect("finite codes give finite weights")
}

/// Best column-matched correlation `max_Π ⟨Z₁, Z₂Π⟩ / (‖Z₁‖_F ‖Z₂‖_F)`.
pub fn permutation_correlation(z1: &SparseCodeMatrix, z2: &SparseCodeMatrix) -> Result<MatchResult, MatchingError> {
    if z1.rows() != z2.rows() {
        return Err(MatchingError::RowCountMismatch {
            left: z1.rows(),
            right: z2.rows(),
        });
    }
    let (permutation, total_weight) = assignment_max(&cross_weights(z1, z2))?;
    let denom = z1.frobenius_norm() * z2.frobenius_norm();
    let correlation = if denom > 0.0 { total_weight / denom } else { 0.0 };
    Ok(MatchResult {
        permutation,
        total_weight,
        correlation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub draws: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub observed: f64,
    pub zscore: f64,
}

pub const DEFAULT_NULL_DRAWS: usize = 100;

/// Compares the observed correlation with correlations after shuffling the
/// rows of `z1` (breaking the object pairing).
pub fn permutation_null(
    z1: &SparseCodeMatrix,
    z2: &SparseCodeMatrix,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<NullDistribution, MatchingError> {
    if n_draws < 2 {
        return Err(MatchingError::TooFewDraws(n_draws));
    }
    let observed = permutation_correlation(z1, z2)?.correlation;
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let order = rng.permutation(z1.rows());
        draws.push(permutation_correlation(&z1.select_rows(&order), z2)?.correlation);
    }
    let (mean, std) = mean_std(&draws);
    if std < 1e-12 {
        return Err(MatchingError::DegenerateNull(std));
    }
    let min = draws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NullDistribution {
        draws,
        mean,
        std,
        min,
        max,
        observed,
        zscore: (observed - mean) / std,
    })
}

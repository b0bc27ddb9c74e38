use alloc::vec;
use alloc::vec::Vec;

use super::SaeError;
use crate::numerics::Matrix;

/// One sparse code: `(feature index, activation)` pairs with strictly
/// increasing indices and positive activations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for &(j, v) in &self.entries {
            out[j] = v;
        }
        out
    }
}

/// Non-negative sparse matrix in compressed-row form.
///
/// Stored values are strictly positive and column indices strictly increase
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCodeMatrix {
    pub fn from_rows(cols: usize, rows: &[SparseRow]) -> Result<Self, SaeError> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut last: Option<usize> = None;
            for &(j, v) in &row.entries {
                if j >= cols {
                    return Err(SaeError::IndexOutOfRange { index: j, len: cols });
                }
                if last.is_some_and(|l| l >= j) {
                    return Err(SaeError::InvalidCodes(alloc::format!(
                        "row {r}: indices not strictly increasing"
                    )));
                }
                if !(v > 0.0) || !v.is_finite() {
                    return Err(SaeError::InvalidCodes(alloc::format!(
                        "row {r}: value {v} at column {j} is not a finite positive number"
                    )));
                }
                last = Some(j);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps the strictly positive entries of a dense matrix.
    pub fn from_dense(m: &Matrix) -> Self {
        let rows: Vec<SparseRow> = m
            .row_iter()
            .map(|r| SparseRow {
                entries: r
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect(),
            })
            .collect();
        let mut out = Self::from_rows(m.cols(), &rows).expect("dense positives are valid codes");
        if m.cols() == 0 {
            out.indptr = vec![0; m.rows() + 1];
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, val) = self.row(i);
        idx.iter().copied().zip(val.iter().copied())
    }

    pub fn max_row_nnz(&self) -> usize {
        self.indptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Matrix {
        let mut data = vec![0.0; self.rows() * self.cols];
        for i in 0..self.rows() {
            for (j, v) in self.row_entries(i) {
                data[i * self.cols + j] = v;
            }
        }
        Matrix::from_vec_unchecked(self.rows(), self.cols, data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    /// Number of rows in which each column is non-zero.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for &j in &self.indices {
            counts[j] += 1;
        }
        counts
    }

    /// Rows at `order`, in that order.
    pub fn select_rows(&self, order: &[usize]) -> SparseCodeMatrix {
        let mut indptr = Vec::with_capacity(order.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in order {
            let (idx, val) = self.row(i);
            indices.extend_from_slice(idx);
            values.extend_from_slice(val);
            indptr.push(indices.len());
        }
        SparseCodeMatrix {
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Restricts to `kept` columns; column `kept[q]` becomes column `q`.
    pub fn select_columns(&self, kept: &[usize]) -> SparseCodeMatrix {
        let mut remap = vec![usize::MAX; self.cols];
        for (q, &j) in kept.iter().enumerate() {
            remap[j] = q;
        }
        self.remap_columns(kept.len(), &remap)
    }

    /// Moves column `j` to column `perm[j]`. `perm` must be a permutation.
    pub fn permute_columns(&self, perm: &[usize]) -> SparseCodeMatrix {
        assert_eq!(perm.len(), self.cols);
        self.remap_columns(self.cols, perm)
    }

    fn remap_columns(&self, cols: usize, remap: &[usize]) -> SparseCodeMatrix {
        let mut indptr = Vec::with_capacity(self.indptr.len());
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.rows() {
            buf.clear();
            buf.extend(
                self.row_entries(i)
                    .filter(|&(j, _)| remap[j] != usize::MAX)
                    .map(|(j, v)| (remap[j], v)),
            );
            buf.sort_by_key(|e| e.0);
            for &(j, v) in &buf {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseCodeMatrix {
            cols,
            indptr,
            indices,
            values,
        }
    }
}

/// Result of activation-frequency filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFilter {
    pub kept: Vec<usize>,
    pub activation_frequency: Vec<f64>,
}

/// Keeps features whose activation frequency lies in `[lower, upper]`.
pub fn filter_features(
    codes: &SparseCodeMatrix,
    upper: f64,
    lower: f64,
) -> Result<FeatureFilter, SaeError> {
    if !(upper > lower) || lower < 0.0 || upper > 1.0 {
        return Err(SaeError::BadThresholds { lower, upper });
    }
    let n = codes.rows().max(1) as f64;
    let activation_frequency: Vec<f64> = codes
        .column_counts()
        .into_iter()
        .map(|c| c as f64 / n)
        .collect();
    let kept = activation_frequency
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= lower && f <= upper)
        .map(|(j, _)| j)
        .collect();
    Ok(FeatureFilter {
        kept,
        activation_frequency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeStats {
    pub p5: f64,
    pub p95: f64,
    pub ratio: f64,
}

/// 5th/95th nearest-rank percentiles of the non-zero entries scaled by `√k`.
pub fn magnitude_stats(codes: &SparseCodeMatrix, k: usize) -> Result<MagnitudeStats, SaeError> {
    if codes.nnz() == 0 {
        return Err(SaeError::AllZero);
    }
    let scale = libm::sqrt(k as f64);
    let mut vals: Vec<f64> = codes.values().iter().map(|v| v * scale).collect();
    vals.sort_by(f64::total_cmp);
    let p5 = crate::numerics::percentile_sorted(&vals, 5.0);
    let p95 = crate::numerics::percentile_sorted(&vals, 95.0);
    Ok(MagnitudeStats {
        p5,
        p95,
        ratio: p95 / p5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(cols: usize, rows: &[&[(usize, f64)]]) -> SparseCodeMatrix {
        let rows: Vec<SparseRow> = rows.iter().map(|r| SparseRow::new(r.to_vec())).collect();
        SparseCodeMatrix::from_rows(cols, &rows).unwrap()
    }

    #[test]
    fn validation() {
        let bad = [SparseRow { entries: vec![(2, 1.0), (1, 1.0)] }];
        assert!(SparseCodeMatrix::from_rows(3, &bad).is_err());
        let neg = [SparseRow { entries: vec![(0, -1.0)] }];
        assert!(SparseCodeMatrix::from_rows(3, &neg).is_err());
        let oob = [SparseRow { entries: vec![(3, 1.0)] }];
        assert!(matches!(
            SparseCodeMatrix::from_rows(3, &oob),
            Err(SaeError::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn dense_round_trip() {
        let c = codes(4, &[&[(0, 1.0), (3, 2.0)], &[], &[(1, 0.5)]]);
        assert_eq!(SparseCodeMatrix::from_dense(&c.to_dense()), c);
        assert_eq!(c.max_row_nnz(), 2);
        assert_eq!(c.column_counts(), vec![1, 1, 0, 1]);
    }

    #[test]
    fn column_selection_and_permutation() {
        let c = codes(4, &[&[(0, 1.0), (3, 2.0)], &[(1, 0.5), (2, 4.0)]]);
        let s = c.select_columns(&[3, 1]);
        assert_eq!(s.to_dense().as_slice(), &[2.0, 0.0, 0.0, 0.5]);
        let p = c.permute_columns(&[3, 2, 1, 0]);
        assert_eq!(p.row(0), (&[0usize, 3][..], &[2.0, 1.0][..]));
    }

    #[test]
    fn filter_bounds() {
        // 10 rows: feature 0 always on, feature 1 on exactly once (10%),
        // feature 2 on 3 times, feature 3 never.
        let mut rows: Vec<Vec<(usize, f64)>> = (0..10).map(|_| vec![(0, 1.0)]).collect();
        rows[0].push((1, 1.0));
        for r in rows.iter_mut().take(3) {
            r.push((2, 1.0));
        }
        let rows: Vec<SparseRow> = rows.into_iter().map(SparseRow::new).collect();
        let c = SparseCodeMatrix::from_rows(4, &rows).unwrap();

        let f = filter_features(&c, 0.1, 0.05).unwrap();
        assert_eq!(f.kept, vec![1]);
        assert_eq!(f.activation_frequency, vec![1.0, 0.1, 0.3, 0.0]);

        let all = filter_features(&c, 1.0, 0.0).unwrap();
        assert_eq!(all.kept, vec![0, 1, 2, 3]);

        assert!(matches!(filter_features(&c, 0.1, 0.1), Err(SaeError::BadThresholds { .. })));
    }

    #[test]
    fn magnitudes() {
        let c = codes(3, &[&[(0, 0.5), (2, 0.5)], &[(1, 0.5)]]);
        let s = magnitude_stats(&c, 4).unwrap();
        assert_eq!((s.p5, s.p95, s.ratio), (1.0, 1.0, 1.0));

        let rows: Vec<SparseRow> = (1..=100).map(|i| SparseRow::new(vec![(0, i as f64)])).collect();
        let c = SparseCodeMatrix::from_rows(1, &rows).unwrap();
        let s = magnitude_stats(&c, 1).unwrap();
        assert_eq!((s.p5, s.p95, s.ratio), (5.0, 95.0, 19.0));

        let empty = codes(2, &[&[]]);
        assert_eq!(magnitude_stats(&empty, 1), Err(SaeError::AllZero));
    }
}

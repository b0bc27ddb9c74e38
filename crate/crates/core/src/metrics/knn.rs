use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{check_rows, MetricsError};
use crate::numerics::{gram, Matrix};

/// For each point, the `k` other points with the largest similarity,
/// ordered by descending similarity (ties: ascending index).
pub fn knn_indices(gramian: &Matrix, k: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    let n = gramian.rows();
    if gramian.cols() != n {
        return Err(MetricsError::NotSquare(gramian.shape()));
    }
    if k == 0 || k + 1 > n {
        return Err(MetricsError::KTooLarge { k, n });
    }
    let mut out = Vec::with_capacity(n);
    let mut candidates: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = gramian.row(i);
        let by_similarity =
            |a: &usize, b: &usize| -> Ordering { row[*b].total_cmp(&row[*a]).then(a.cmp(b)) };
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i));
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, by_similarity);
        }
        let top = &mut candidates[..k];
        top.sort_unstable_by(by_similarity);
        out.push(top.to_vec());
    }
    Ok(out)
}

pub fn knn_from_embeddings(f: &Matrix, k: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    knn_indices(&gram(f), k)
}

type Neighbors = Vec<Vec<usize>>;

fn neighbor_lists(f: &Matrix, g: &Matrix, k: usize) -> Result<(Neighbors, Neighbors), MetricsError> {
    let n = check_rows(f, g)?;
    if k == 0 || k + 1 > n {
        return Err(MetricsError::KTooLarge { k, n });
    }
    Ok((knn_from_embeddings(f, k)?, knn_from_embeddings(g, k)?))
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Mean fraction of shared `k`-nearest neighbors.
pub fn mutual_knn_overlap(f: &Matrix, g: &Matrix, k: usize) -> Result<f64, MetricsError> {
    let (nf, ng) = neighbor_lists(f, g, k)?;
    let total: usize = nf.iter().zip(&ng).map(|(a, b)| intersection_size(a, b)).sum();
    Ok(total as f64 / (k * nf.len()) as f64)
}

/// Mean Levenshtein distance between the ordered neighbor lists, divided by `k`.
pub fn knn_edit_distance(f: &Matrix, g: &Matrix, k: usize) -> Result<f64, MetricsError> {
    let (nf, ng) = neighbor_lists(f, g, k)?;
    let total: usize = nf.iter().zip(&ng).map(|(a, b)| levenshtein(a, b)).sum();
    Ok(total as f64 / (k * nf.len()) as f64)
}

/// Edit distance with unit-cost insertion, deletion and substitution.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angles(deg: &[f64]) -> Matrix {
        Matrix::from_fn(deg.len(), 2, |i, j| {
            let t = deg[i].to_radians();
            if j == 0 {
                libm::cos(t)
            } else {
                libm::sin(t)
            }
        })
        .unwrap()
    }

    #[test]
    fn nearest_by_angle() {
        let f = angles(&[0.0, 10.0, 50.0, 60.0]);
        let nn = knn_from_embeddings(&f, 1).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![3], vec![2]]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let nn = knn_from_embeddings(&f, 1).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![0]]);
        let nn = knn_from_embeddings(&f, 2).unwrap();
        assert_eq!(nn, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    }

    #[test]
    fn k_too_large() {
        let f = Matrix::identity(3);
        assert_eq!(
            knn_from_embeddings(&f, 3),
            Err(MetricsError::KTooLarge { k: 3, n: 3 })
        );
        assert!(knn_indices(&Matrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn overlap_by_angle() {
        let f = angles(&[0.0, 10.0, 50.0, 60.0]);
        let g = angles(&[0.0, 10.0, 20.0, 90.0]);
        assert_eq!(knn_from_embeddings(&g, 1).unwrap(), vec![vec![1], vec![0], vec![1], vec![2]]);
        assert_eq!(mutual_knn_overlap(&f, &g, 1).unwrap(), 0.75);
        assert_eq!(mutual_knn_overlap(&f, &f, 2).unwrap(), 1.0);
    }

    #[test]
    fn levenshtein_cases() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3, 2]), 2);
        assert_eq!(levenshtein(&[1, 2], &[3, 4]), 2);
        assert_eq!(levenshtein::<u8>(&[], &[1, 2]), 2);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[0, 1, 2, 3], &[1, 2, 3, 4]), 2);
    }

    #[test]
    fn edit_distance_self_zero() {
        let f = angles(&[0.0, 17.0, 33.0, 80.0, 140.0]);
        assert_eq!(knn_edit_distance(&f, &f, 3).unwrap(), 0.0);
    }
}

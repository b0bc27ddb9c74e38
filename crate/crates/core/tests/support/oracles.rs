//! Slow, direct reference implementations used to cross-check the library.
//!
//! Each oracle follows a different computational route from the code under
//! test (explicit centering matrices, term-by-term sums, eigendecompositions
//! of covariances, full sorts, factorial enumeration).

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use repalign_core::numerics::Matrix;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

fn centering(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// `tr(K H L H)` with explicit Gramians and centering matrix.
fn hsic_biased(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let h = centering(k.nrows());
    (k * &h * l * &h).trace()
}

pub fn linear_cka(f: &Matrix, g: &Matrix) -> f64 {
    let (f, g) = (to_na(f), to_na(g));
    let k = &f * f.transpose();
    let l = &g * g.transpose();
    let denom = (hsic_biased(&k, &k) * hsic_biased(&l, &l)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        hsic_biased(&k, &l) / denom
    }
}

/// Unbiased HSIC written out with explicit loops over index triples.
fn hsic_unbiased(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let nf = n as f64;
    let kt = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { k[(i, j)] });
    let lt = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { l[(i, j)] });
    let trace = (&kt * &lt).trace();
    let ones = DVector::from_element(n, 1.0);
    let k_sum = (ones.transpose() * &kt * &ones)[(0, 0)];
    let l_sum = (ones.transpose() * &lt * &ones)[(0, 0)];
    let cross = (ones.transpose() * &kt * &lt * &ones)[(0, 0)];
    (trace + k_sum * l_sum / ((nf - 1.0) * (nf - 2.0)) - 2.0 * cross / (nf - 2.0)) / (nf * (nf - 3.0))
}

pub fn unbiased_cka(f: &Matrix, g: &Matrix) -> f64 {
    let (f, g) = (to_na(f), to_na(g));
    let k = &f * f.transpose();
    let l = &g * g.transpose();
    let denom = hsic_unbiased(&k, &k) * hsic_unbiased(&l, &l);
    if denom <= 0.0 {
        0.0
    } else {
        hsic_unbiased(&k, &l) / denom.sqrt()
    }
}

fn center(x: &DMatrix<f64>) -> DMatrix<f64> {
    centering(x.nrows()) * x
}

/// Projections onto the top-`c` principal axes, from the covariance eigenbasis.
fn principal_projection(x: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
    let xc = center(x);
    let eig = SymmetricEigen::new(xc.transpose() * &xc);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(x.ncols(), c, |i, j| eig.eigenvectors[(i, order[j])]);
    xc * basis
}

fn inv_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Canonical correlations from `Σxx^{-1/2} Σxy Σyy^{-1/2}`.
pub fn canonical_correlations(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
    let sxx = x.transpose() * x;
    let syy = y.transpose() * y;
    let sxy = x.transpose() * y;
    let t = inv_sqrt_psd(&sxx) * sxy * inv_sqrt_psd(&syy);
    let eig = SymmetricEigen::new(&t * t.transpose());
    let mut rho: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt().min(1.0)).collect();
    rho.sort_by(|a, b| b.total_cmp(a));
    rho
}

pub fn svcca(f: &Matrix, g: &Matrix, c: usize) -> f64 {
    let pf = principal_projection(&to_na(f), c);
    let pg = principal_projection(&to_na(g), c);
    canonical_correlations(&pf, &pg)[..c].iter().sum::<f64>() / c as f64
}

/// Neighbors by a full sort on (−similarity, index), cosine similarity of rows.
pub fn knn(f: &Matrix, k: usize) -> Vec<Vec<usize>> {
    let n = f.rows();
    let sim = |i: usize, j: usize| (0..f.cols()).map(|c| f.get(i, c) * f.get(j, c)).sum::<f64>();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sim(i, j), j)).collect();
            others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn knn_overlap(f: &Matrix, g: &Matrix, k: usize) -> f64 {
    let (a, b) = (knn(f, k), knn(g, k));
    let shared: usize = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().filter(|v| y.contains(v)).count())
        .sum();
    shared as f64 / (k * a.len()) as f64
}

/// Levenshtein distance by memoized recursion on suffixes.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

pub fn knn_edit(f: &Matrix, g: &Matrix, k: usize) -> f64 {
    let (a, b) = (knn(f, k), knn(g, k));
    let total: usize = a.iter().zip(&b).map(|(x, y)| edit_distance(x, y)).sum();
    total as f64 / (k * a.len()) as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Maximum-weight permutation by enumeration in lexicographic order; the
/// first permutation reaching the maximum wins ties.
pub fn assignment_brute_force(w: &Matrix) -> (Vec<usize>, f64) {
    let n = w.rows();
    let mut p: Vec<usize> = (0..n).collect();
    let weight = |p: &[usize]| (0..n).map(|i| w.get(i, p[i])).sum::<f64>();
    let mut best = (p.clone(), weight(&p));
    while next_permutation(&mut p) {
        let v = weight(&p);
        if v > best.1 {
            best = (p.clone(), v);
        }
    }
    best
}

/// `(slope, intercept)` from the 2x2 normal equations by Cramer's rule.
pub fn ols_normal_equations(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

/// Ridge solution by LU on the augmented normal equations.
pub fn ridge(x: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let xn = to_na(x);
    let a = xn.transpose() * &xn + DMatrix::identity(x.cols(), x.cols()) * lambda;
    let b = xn.transpose() * DVector::from_column_slice(y);
    a.lu().solve(&b).expect("non-singular").iter().copied().collect()
}

/// Mean absolute off-diagonal inner product of unit columns.
pub fn mean_abs_coherence(atoms_as_rows: &Matrix) -> f64 {
    let m = atoms_as_rows.rows();
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let v: f64 = (0..atoms_as_rows.cols())
                    .map(|c| atoms_as_rows.get(i, c) * atoms_as_rows.get(j, c))
                    .sum();
                sum += v.abs();
            }
        }
    }
    sum / (m * (m - 1)) as f64
}

/// `E|⟨u, v⟩|` for independent uniform unit vectors in dimension `d`,
/// via the exact Beta-function form `Γ(d/2) / (√π Γ((d+1)/2))`, which tends
/// to `√(2/(πd))`.
pub fn expected_abs_inner_product(d: usize) -> f64 {
    let d = d as f64;
    (libm::lgamma(d / 2.0) - libm::lgamma((d + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

use alloc::vec;

use super::{check_rows, MetricsError};
use crate::numerics::{gram, Matrix};

/// Linear CKA on column-centered features:
/// `‖G_cᵀF_c‖²_F / (‖F_cᵀF_c‖_F · ‖G_cᵀG_c‖_F)`.
///
/// Returns 0 when either centered matrix vanishes.
pub fn linear_cka(f: &Matrix, g: &Matrix) -> Result<f64, MetricsError> {
    let n = check_rows(f, g)?;
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    let fc = f.center_columns();
    let gc = g.center_columns();
    let cross = gc.t_matmul(&fc)?.frobenius_norm();
    let ff = fc.t_matmul(&fc)?.frobenius_norm();
    let gg = gc.t_matmul(&gc)?.frobenius_norm();
    if ff == 0.0 || gg == 0.0 {
        return Ok(0.0);
    }
    Ok((cross * cross / (ff * gg)).clamp(0.0, 1.0))
}

/// Unbiased HSIC estimator on hollow Gramians.
fn hsic_unbiased(k: &Matrix, l: &Matrix) -> f64 {
    let n = k.rows();
    let nf = n as f64;
    let mut trace = 0.0;
    let mut k_sum = 0.0;
    let mut l_sum = 0.0;
    let mut k_rows = vec![0.0; n];
    let mut l_rows = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (kv, lv) = (k.get(i, j), l.get(i, j));
            trace += kv * lv;
            k_rows[i] += kv;
            l_rows[i] += lv;
        }
        k_sum += k_rows[i];
        l_sum += l_rows[i];
    }
    // 1ᵀ K L 1 = (K1)ᵀ(L1) for symmetric K
    let cross: f64 = k_rows.iter().zip(&l_rows).map(|(a, b)| a * b).sum();
    (trace + k_sum * l_sum / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * cross)
        / (nf * (nf - 3.0))
}

/// CKA with the unbiased HSIC estimator. Can be slightly negative.
pub fn unbiased_cka(f: &Matrix, g: &Matrix) -> Result<f64, MetricsError> {
    let n = check_rows(f, g)?;
    if n < 4 {
        return Err(MetricsError::TooFewSamples { needed: 4, got: n });
    }
    let k = gram(f);
    let l = gram(g);
    let kl = hsic_unbiased(&k, &l);
    let kk = hsic_unbiased(&k, &k);
    let ll = hsic_unbiased(&l, &l);
    let denom = kk * ll;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(kl / libm::sqrt(denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.normal()).unwrap()
    }

    #[test]
    fn cka_self_is_one() {
        let f = Matrix::identity(4);
        assert!((linear_cka(&f, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_orthogonal_invariance() {
        let mut rng = Rng::new(10);
        let f = random(&mut rng, 6, 3);
        // rotation in the first two coordinates plus a reflection
        let (c, s) = (libm::cos(0.7), libm::sin(0.7));
        let q = Matrix::from_rows(&[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, -1.0]]).unwrap();
        let g = f.matmul(&q).unwrap();
        assert!((linear_cka(&f, &g).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cka_constant_features_zero() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        let mut rng = Rng::new(1);
        let g = random(&mut rng, 3, 2);
        assert_eq!(linear_cka(&f, &g).unwrap(), 0.0);
    }

    #[test]
    fn unbiased_self_is_one() {
        let mut rng = Rng::new(4);
        let f = random(&mut rng, 10, 5);
        assert!((unbiased_cka(&f, &f).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbiased_needs_four_rows() {
        let f = Matrix::identity(3);
        assert_eq!(
            unbiased_cka(&f, &f),
            Err(MetricsError::TooFewSamples { needed: 4, got: 3 })
        );
    }

    #[test]
    fn row_mismatch() {
        let f = Matrix::identity(3);
        let g = Matrix::identity(4);
        assert!(matches!(
            linear_cka(&f, &g),
            Err(MetricsError::RowCountMismatch { left: 3, right: 4 })
        ));
    }
}

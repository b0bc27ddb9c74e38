#[path = "support/oracles.rs"]
mod oracles;

use repalign_core::analysis::{ols_fit, ridge_fit};
use repalign_core::matching::{assignment_max, permutation_correlation};
use repalign_core::metrics::{knn_edit_distance, linear_cka, mutual_knn_overlap, svcca, unbiased_cka};
use repalign_core::numerics::{unit_normalize_rows, Matrix, Rng};
use repalign_core::sae::{SparseCodeMatrix, SparseRow};
use repalign_core::statmodel::{generate_dictionary, DictionaryKind};

fn gaussian(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.normal()).unwrap()
}

#[test]
fn metrics_match_references_on_random_pairs() {
    let mut rng = Rng::new(2024);
    let mut worst = [0.0f64; 5];
    for _ in 0..100 {
        let f = unit_normalize_rows(&gaussian(&mut rng, 20, 8)).unwrap();
        // correlated partner so the metrics are away from their floors
        let noise = gaussian(&mut rng, 20, 8);
        let g = unit_normalize_rows(&Matrix::from_fn(20, 8, |i, j| f.get(i, j) + 0.7 * noise.get(i, j)).unwrap()).unwrap();
        let diffs = [
            linear_cka(&f, &g).unwrap() - oracles::linear_cka(&f, &g),
            unbiased_cka(&f, &g).unwrap() - oracles::unbiased_cka(&f, &g),
            svcca(&f, &g, 4).unwrap() - oracles::svcca(&f, &g, 4),
            mutual_knn_overlap(&f, &g, 5).unwrap() - oracles::knn_overlap(&f, &g, 5),
            knn_edit_distance(&f, &g, 5).unwrap() - oracles::knn_edit(&f, &g, 5),
        ];
        for (w, d) in worst.iter_mut().zip(diffs) {
            *w = w.max(d.abs());
        }
    }
    assert!(worst.iter().all(|&w| w <= 1e-6), "{worst:?}");
}

#[test]
fn assignment_matches_enumeration() {
    let mut rng = Rng::new(77);
    for trial in 0..600 {
        let d = 1 + trial % 6;
        // alternate continuous weights with small integers that force ties
        let w = if trial % 2 == 0 {
            Matrix::from_fn(d, d, |_, _| rng.normal()).unwrap()
        } else {
            Matrix::from_fn(d, d, |_, _| rng.below(3) as f64).unwrap()
        };
        assert_eq!(assignment_max(&w).unwrap(), oracles::assignment_brute_force(&w), "{w:?}");
    }
}

#[test]
fn correlation_on_truncated_subproblem_matches_enumeration() {
    let mut rng = Rng::new(5);
    let sparse = |rng: &mut Rng| {
        let rows: Vec<SparseRow> = (0..50)
            .map(|_| {
                let idx = rng.sample_without_replacement(16, 3);
                SparseRow::new(idx.into_iter().map(|j| (j, rng.uniform())).collect())
            })
            .collect();
        SparseCodeMatrix::from_rows(16, &rows).unwrap()
    };
    let keep: Vec<usize> = (0..6).collect();
    let z1 = sparse(&mut rng).select_columns(&keep);
    let z2 = sparse(&mut rng).select_columns(&keep);
    let res = permutation_correlation(&z1, &z2).unwrap();
    let w = z1.to_dense().t_matmul(&z2.to_dense()).unwrap();
    let (perm, weight) = oracles::assignment_brute_force(&w);
    assert_eq!(res.permutation, perm);
    assert!((res.total_weight - weight).abs() < 1e-12);
    let expected = weight / (z1.frobenius_norm() * z2.frobenius_norm());
    assert!((res.correlation - expected).abs() < 1e-12);
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = Rng::new(9);
    for _ in 0..20 {
        let x: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 - 1.7 * v + 0.5 * rng.normal()).collect();
        let fit = ols_fit(&x, &y).unwrap();
        let (slope, intercept) = oracles::ols_normal_equations(&x, &y);
        assert!((fit.slope - slope).abs() < 1e-9 && (fit.intercept - intercept).abs() < 1e-9);
    }
}

#[test]
fn ridge_matches_lu_reference() {
    let mut rng = Rng::new(10);
    for lambda in [0.0, 0.01, 1.0, 50.0] {
        let x = gaussian(&mut rng, 40, 6);
        let y: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
        let ours = ridge_fit(&x, &y, lambda).unwrap();
        let reference = oracles::ridge(&x, &y, lambda);
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9, "{lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn gaussian_dictionary_coherence_near_asymptote() {
    let mut rng = Rng::new(11);
    let dict = generate_dictionary(128, 512, DictionaryKind::Gaussian, &mut rng).unwrap();
    let target = (2.0 / (std::f64::consts::PI * 128.0)).sqrt();
    assert!((dict.eps_dict_mean - target).abs() / target < 0.1, "{}", dict.eps_dict_mean);
    let direct = oracles::mean_abs_coherence(dict.atoms());
    assert!((dict.eps_dict_mean - direct).abs() < 1e-12);
    assert!((oracles::expected_abs_inner_product(128) - target).abs() / target < 0.01);
}

use proptest::prelude::*;

use repalign_core::analysis::{debias, ridge_fit, window_count};
use repalign_core::matching::{assignment_max, permutation_correlation};
use repalign_core::metrics::{knn_indices, linear_cka, mutual_knn_overlap, svcca, unbiased_cka};
use repalign_core::numerics::{gram, norm, unit_normalize_rows, Matrix, Rng};
use repalign_core::sae::{filter_features, SparseCodeMatrix, SparseRow};
use repalign_core::statmodel::{
    check_bounds, decompose_inner_product, generate_instance, DictionaryKind, ModelConstants, SyntheticConfig,
};

fn gaussian(seed: u64, n: usize, d: usize) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(n, d, |_, _| rng.normal()).unwrap()
}

/// Householder reflection `I − 2vvᵀ/‖v‖²`, an orthogonal matrix.
fn reflection(seed: u64, d: usize) -> Matrix {
    let mut rng = Rng::new(seed);
    let v = rng.normal_vec(d);
    let nn: f64 = v.iter().map(|x| x * x).sum();
    Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / nn).unwrap()
}

fn sparse_codes(seed: u64, n: usize, cols: usize, k: usize) -> SparseCodeMatrix {
    let mut rng = Rng::new(seed);
    let rows: Vec<SparseRow> = (0..n)
        .map(|_| {
            let idx = rng.sample_without_replacement(cols, k);
            SparseRow::new(idx.into_iter().map(|j| (j, 0.1 + rng.uniform())).collect())
        })
        .collect();
    SparseCodeMatrix::from_rows(cols, &rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>(), n in 1usize..12, d in 1usize..8) {
        let once = unit_normalize_rows(&gaussian(seed, n, d)).unwrap();
        let twice = unit_normalize_rows(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) < 1e-12);
        for r in once.row_iter() {
            prop_assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cka_symmetric_and_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let f = gaussian(seed, 15, 6);
        let g = gaussian(seed ^ 1, 15, 6);
        let base = linear_cka(&f, &g).unwrap();
        prop_assert!((base - linear_cka(&g, &f).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
        let rotated = f.matmul(&reflection(seed ^ 2, 6)).unwrap();
        prop_assert!((linear_cka(&rotated, &g).unwrap() - base).abs() < 1e-9);
        prop_assert!((linear_cka(&f.scale(scale), &g).unwrap() - base).abs() < 1e-9);
        let ub = unbiased_cka(&f, &g).unwrap();
        prop_assert!((unbiased_cka(&rotated.scale(scale), &g).unwrap() - ub).abs() < 1e-9);
    }

    #[test]
    fn svcca_symmetric(seed in any::<u64>()) {
        let f = gaussian(seed, 20, 5);
        let g = gaussian(seed ^ 3, 20, 5);
        prop_assert!((svcca(&f, &g, 3).unwrap() - svcca(&g, &f, 3).unwrap()).abs() < 1e-9);
        let rotated = f.matmul(&reflection(seed, 5)).unwrap();
        prop_assert!((svcca(&f, &rotated, 5).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn knn_invariant_to_monotone_similarity(seed in any::<u64>(), k in 1usize..6) {
        let f = unit_normalize_rows(&gaussian(seed, 12, 4)).unwrap();
        let g = gram(&f);
        let warped = Matrix::from_fn(12, 12, |i, j| {
            let x = g.get(i, j);
            x * x * x + 3.0 * x
        }).unwrap();
        prop_assert_eq!(knn_indices(&g, k).unwrap(), knn_indices(&warped, k).unwrap());
        prop_assert!((mutual_knn_overlap(&f, &f, k).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_beats_any_permutation(seed in any::<u64>(), d in 1usize..9) {
        let w = gaussian(seed, d, d);
        let (perm, total) = assignment_max(&w).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..d).collect::<Vec<_>>());
        let mut rng = Rng::new(seed ^ 4);
        for _ in 0..20 {
            let p = rng.permutation(d);
            let other: f64 = (0..d).map(|i| w.get(i, p[i])).sum();
            prop_assert!(other <= total + 1e-12);
        }
    }

    #[test]
    fn correlation_permutation_invariances(seed in any::<u64>()) {
        let z1 = sparse_codes(seed, 30, 8, 2);
        let z2 = sparse_codes(seed ^ 5, 30, 8, 2);
        let base = permutation_correlation(&z1, &z2).unwrap().correlation;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
        let mut rng = Rng::new(seed ^ 6);
        let rows = rng.permutation(30);
        let same_rows = permutation_correlation(&z1.select_rows(&rows), &z2.select_rows(&rows)).unwrap();
        prop_assert!((same_rows.correlation - base).abs() < 1e-12);
        let cols = rng.permutation(8);
        let shuffled = permutation_correlation(&z1.permute_columns(&cols), &z2).unwrap();
        prop_assert!((shuffled.correlation - base).abs() < 1e-12);
    }

    #[test]
    fn narrower_filter_keeps_subset(seed in any::<u64>(), lo in 0.0f64..0.3, hi in 0.3f64..1.0, shrink in 0.0f64..1.0) {
        let z = sparse_codes(seed, 40, 10, 3);
        let wide = filter_features(&z, hi, lo).unwrap();
        let cut = shrink * (hi - lo) / 3.0;
        let narrow = filter_features(&z, hi - cut, lo + cut).unwrap();
        prop_assert!(narrow.kept.iter().all(|j| wide.kept.contains(j)));
    }

    #[test]
    fn debias_is_idempotent_on_symmetric_inputs(seed in any::<u64>(), offset in 0.0f64..3.0) {
        // rows come in pairs b ± v_i, so every centered row has an antipode
        let v = gaussian(seed, 12, 6);
        let b = Rng::new(seed ^ 8).normal_vec(6);
        let f = Matrix::from_fn(24, 6, |i, j| offset * b[j] + if i % 2 == 0 { 1.0 } else { -1.0 } * v.get(i / 2, j)).unwrap();
        let once = debias(&f).unwrap();
        let twice = debias(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) < 1e-9);
    }

    #[test]
    fn second_debias_moves_rows_by_at_most_twice_the_residual_mean(seed in any::<u64>()) {
        let f = unit_normalize_rows(&gaussian(seed, 25, 6)).unwrap();
        let once = debias(&f).unwrap();
        let twice = debias(&once).unwrap();
        let residual_mean = norm(&repalign_core::numerics::column_mean(&once).unwrap());
        for i in 0..25 {
            let shift: Vec<f64> = once.row(i).iter().zip(twice.row(i)).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&shift) <= 2.0 * residual_mean + 1e-12);
        }
    }

    #[test]
    fn ridge_is_a_minimizer(seed in any::<u64>(), lambda in 0.0f64..5.0) {
        let x = gaussian(seed, 30, 4);
        let mut rng = Rng::new(seed ^ 7);
        let y: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let beta = ridge_fit(&x, &y, lambda).unwrap();
        let objective = |b: &[f64]| {
            let resid: f64 = (0..30)
                .map(|r| {
                    let e = y[r] - (0..4).map(|c| x.get(r, c) * b[c]).sum::<f64>();
                    e * e
                })
                .sum();
            resid + lambda * b.iter().map(|v| v * v).sum::<f64>()
        };
        let best = objective(&beta);
        for c in 0..4 {
            for delta in [1e-4, -1e-4] {
                let mut b = beta.clone();
                b[c] += delta;
                prop_assert!(objective(&b) >= best);
            }
        }
    }

    #[test]
    fn windows_tile_the_range(n in 1usize..5000, window in 1usize..600, step in 1usize..300) {
        let count = window_count(n, window, step);
        if window > n {
            prop_assert_eq!(count, 0);
        } else {
            prop_assert!(count >= 1);
            prop_assert!((count - 1) * step + window <= n);
            prop_assert!(count * step + window > n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_pairs_decompose_exactly(seed in any::<u64>(), k in 1usize..5, raw in 0.0f64..0.05) {
        let config = SyntheticConfig {
            d: 16,
            m: 48,
            k,
            phi: 0.9,
            phi_upper: 1.1,
            eps_noise_raw: raw,
            n_pairs: 10,
            overlap_schedule: (0..=k).collect(),
            seed,
            dictionary: DictionaryKind::Gaussian,
            ..SyntheticConfig::default()
        };
        let inst = generate_instance(&config).unwrap();
        let constants = ModelConstants::of(&inst);
        for p in 0..inst.n_pairs() {
            let dec = decompose_inner_product(&inst, 2 * p, 2 * p + 1).unwrap();
            prop_assert!(dec.additivity_error() < 1e-9);
            prop_assert_eq!(dec.support_overlap, inst.pair_overlaps[p]);
            prop_assert!(check_bounds(&dec, &constants).holds());
        }
        for r in &inst.rows {
            prop_assert!((norm(&r.representation) - 1.0).abs() < 1e-9);
            prop_assert_eq!(r.support.len(), k);
        }
    }
}

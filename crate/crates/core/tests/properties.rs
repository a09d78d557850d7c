use faer::Mat;
use proptest::prelude::*;

use koopman_core::data::{read_csv, write_csv, CsvSchema, NormScope, NormStats};
use koopman_core::embedding::{
    delay_embed, kernel_matrix, markov_normalize, pairwise_delay_distances, build_graph, DelayConfig, DistanceTable,
};
use koopman_core::forecast::{noise_split, rmse};
use koopman_core::linalg::{least_squares, sym_eigen};
use koopman_core::metrics::adjusted_rand_index;
use koopman_core::phate::{metric_mds, stress};
use koopman_core::LoadPanel;

fn panel_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = LoadPanel> {
    (6..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| {
            let ids = (0..d).map(|s| format!("s{s}")).collect();
            LoadPanel::from_fn(n, ids, 60.0, 1000.0, |t, s| v[t * d + s]).unwrap()
        })
    })
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Mat::from_fn(rows, cols, |i, j| v[i * cols + j]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn delay_distances_match_embedding_and_form_a_metric(panel in panel_strategy(30, 3), q in 1usize..5) {
        prop_assume!(q < panel.n_samples());
        let table = pairwise_delay_distances(&panel, q).unwrap();
        let points = delay_embed(&panel, q).unwrap();
        let direct = DistanceTable::from_points(points.as_ref());
        let n = table.len();
        for i in 0..n {
            prop_assert_eq!(table.get(i, i), 0.0);
            for j in 0..n {
                let expected = direct.get(i, j) / q as f64;
                prop_assert!((table.get(i, j) - expected).abs() <= 1e-12 * (1.0 + expected));
                prop_assert_eq!(table.get(i, j), table.get(j, i));
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (a, b, c) = (table.get(i, j).sqrt(), table.get(j, k).sqrt(), table.get(i, k).sqrt());
                    prop_assert!(c <= a + b + 1e-9);
                }
            }
        }
    }

    #[test]
    fn delay_distances_ignore_station_order(panel in panel_strategy(25, 4), q in 1usize..4) {
        prop_assume!(q < panel.n_samples());
        let d = panel.n_stations();
        let order: Vec<usize> = (0..d).rev().collect();
        let permuted = panel.select_stations(&order).unwrap();
        let a = pairwise_delay_distances(&panel, q).unwrap();
        let b = pairwise_delay_distances(&permuted, q).unwrap();
        for i in 0..a.len() {
            for j in 0..a.len() {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-12 * (1.0 + a.get(i, j)));
            }
        }
    }

    #[test]
    fn markov_rows_sum_to_one_and_spectrum_is_bounded(panel in panel_strategy(30, 3), knn in 1usize..8) {
        let q = 2;
        let table = pairwise_delay_distances(&panel, q).unwrap();
        prop_assume!(knn < table.len());
        let graph = build_graph(&table, &DelayConfig::new(q, knn)).unwrap();
        let markov = markov_normalize(&kernel_matrix(&graph).unwrap()).unwrap();
        let p = markov.transition().to_dense();
        for i in 0..p.nrows() {
            let sum: f64 = p.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
        let (eigs, _) = sym_eigen(markov.symmetric_conjugate().as_ref()).unwrap();
        let top = eigs[eigs.len() - 1];
        prop_assert!((top - 1.0).abs() < 1e-10);
        prop_assert!(eigs.iter().all(|&l| (-1.0 - 1e-10..=1.0 + 1e-10).contains(&l)));
    }

    #[test]
    fn normalization_round_trips(panel in panel_strategy(20, 4), global in any::<bool>()) {
        let scope = if global { NormScope::Global } else { NormScope::PerStation };
        let stats = NormStats::fit(&panel, scope);
        let normalized = stats.normalize(&panel).unwrap();
        let back = stats.denormalize(&normalized).unwrap();
        for t in 0..panel.n_samples() {
            for s in 0..panel.n_stations() {
                let v = normalized.value(t, s);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                if !stats.is_constant(s) {
                    prop_assert!((back.value(t, s) - panel.value(t, s)).abs() <= 1e-12 * 10.0);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact(panel in panel_strategy(15, 3)) {
        let mut buf = Vec::new();
        write_csv(&panel, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.values().to_owned(), panel.values().to_owned());
        prop_assert_eq!(back.station_ids(), panel.station_ids());
        prop_assert_eq!(back.sample_interval(), panel.sample_interval());
    }

    #[test]
    fn rmse_detects_translation(x in prop::collection::vec(-10.0f64..10.0, 1..40), c in -3.0f64..3.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let r = rmse(&x, &shifted).unwrap();
        prop_assert!((r - c.abs()).abs() <= 1e-12 * (1.0 + c.abs() + 10.0));
        prop_assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn noise_split_is_exact_orthogonal_and_idempotent(
        c in matrix_strategy(8, 3),
        r in matrix_strategy(12, 8),
    ) {
        let split = noise_split(r.as_ref(), c.as_ref()).unwrap();
        let again = noise_split(split.modal.as_ref(), c.as_ref()).unwrap();
        for t in 0..12 {
            let mut dot = 0.0;
            for s in 0..8 {
                prop_assert!((split.modal[(t, s)] + split.innovation[(t, s)] - r[(t, s)]).abs() <= 1e-12);
                prop_assert!((again.modal[(t, s)] - split.modal[(t, s)]).abs() <= 1e-10);
                dot += split.modal[(t, s)] * split.innovation[(t, s)];
            }
            prop_assert!(dot.abs() <= 1e-10);
            // Innovation is orthogonal to every column of C.
            for j in 0..3 {
                let proj: f64 = (0..8).map(|s| c[(s, j)] * split.innovation[(t, s)]).sum();
                let norm: f64 = (0..8).map(|s| split.innovation[(t, s)].powi(2)).sum::<f64>().sqrt();
                prop_assert!(proj.abs() <= 1e-8 * (1.0 + norm) * 10.0);
            }
        }
    }

    #[test]
    fn least_squares_residual_is_orthogonal_to_design(a in matrix_strategy(20, 4), b in matrix_strategy(20, 2)) {
        let fit = least_squares(a.as_ref(), b.as_ref()).unwrap();
        prop_assume!(fit.ridge == 0.0);
        let residual = &b - &a * &fit.coefficients;
        let normal = a.transpose() * &residual;
        let scale = koopman_core::linalg::frobenius(a.as_ref()) * koopman_core::linalg::frobenius(b.as_ref());
        for v in normal.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()) {
            prop_assert!(v.abs() <= 1e-8 * (1.0 + scale));
        }
    }

    #[test]
    fn ari_is_symmetric_and_label_invariant(a in prop::collection::vec(0usize..4, 2..30), shift in 1usize..4) {
        let b: Vec<usize> = a.iter().map(|l| (l * 7 + 3) % 11).collect();
        prop_assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<usize> = a.iter().enumerate().map(|(i, l)| (l + i * shift) % 3).collect();
        prop_assert!((adjusted_rand_index(&a, &c) - adjusted_rand_index(&c, &a)).abs() < 1e-12);
    }

    #[test]
    fn mds_is_scale_equivariant(points in matrix_strategy(7, 3), scale in 0.1f64..20.0) {
        let gamma = Mat::from_fn(7, 7, |i, j| {
            (0..3).map(|c| (points[(i, c)] - points[(j, c)]).powi(2)).sum::<f64>().sqrt()
        });
        prop_assume!(gamma.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).any(|v| v > 1e-3));
        let scaled = &gamma * faer::Scale(scale);
        let a = metric_mds(gamma.as_ref(), 2, 4).unwrap();
        let b = metric_mds(scaled.as_ref(), 2, 4).unwrap();
        prop_assert!((a.stress - b.stress).abs() <= 1e-6 * (1.0 + a.stress));
        prop_assert!((stress(scaled.as_ref(), b.coordinates.as_ref()) - b.stress).abs() <= 1e-12);
        prop_assert!(a.stress_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(b.stress_history.windows(2).all(|w| w[1] <= w[0]));
    }
}

use koopman_core::metrics::adjusted_rand_index;
use koopman_core::phate::{phate, station_graph, PhateConfig};
use koopman_core::synth::{Family, SynthConfig, ToneSpec};
use koopman_core::{Error, LoadPanel};

fn families() -> (LoadPanel, Vec<usize>) {
    let family = |period: f64, phase: f64| Family {
        tones: vec![ToneSpec::new(period, 0.5, 1.0).with_phase(phase, 0.2)],
    };
    let synth = SynthConfig {
        n_samples: 400,
        n_stations: 12,
        noise: 0.05,
        families: vec![family(24.0, 0.0), family(60.0, 1.5), family(10.0, 3.0)],
        seed: 21,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    (synth.panel, synth.families)
}

fn config() -> PhateConfig {
    PhateConfig {
        knn: 3,
        clusters: 3,
        mds_seed: 1,
        kmeans_seed: 2,
        ..PhateConfig::default()
    }
}

#[test]
fn recovers_families_deterministically() {
    let (panel, truth) = families();
    let a = phate(&panel, &config()).unwrap();
    let b = phate(&panel, &config()).unwrap();
    assert!(adjusted_rand_index(&a.labels, &truth) > 0.99);
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.coordinates, b.coordinates);
    assert!(a.stress_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(a.members().iter().map(Vec::len).sum::<usize>(), 12);
}

#[test]
fn clustering_is_equivariant_under_station_permutation() {
    let (panel, _) = families();
    let order: Vec<usize> = vec![5, 0, 11, 3, 8, 1, 10, 7, 2, 9, 4, 6];
    let permuted = panel.select_stations(&order).unwrap();
    let a = phate(&panel, &config()).unwrap();
    let b = phate(&permuted, &config()).unwrap();
    let relabeled: Vec<usize> = order.iter().map(|&s| a.labels[s]).collect();
    assert!((adjusted_rand_index(&relabeled, &b.labels) - 1.0).abs() < 1e-12);
}

#[test]
fn station_markov_has_unit_top_eigenvalue() {
    let (panel, _) = families();
    let sg = station_graph(&panel, &config()).unwrap();
    let p = sg.markov.transition().to_dense();
    for i in 0..p.nrows() {
        assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let (eigs, _) = koopman_core::linalg::sym_eigen(sg.markov.symmetric_conjugate().as_ref()).unwrap();
    assert!((eigs[eigs.len() - 1] - 1.0).abs() < 1e-10);
}

#[test]
fn two_stations_clamp_knn() {
    let panel = LoadPanel::from_fn(50, vec!["a".into(), "b".into()], 3600.0, 0.0, |t, s| {
        ((t as f64) * 0.3 + s as f64).sin()
    })
    .unwrap();
    let cfg = PhateConfig {
        clusters: 2,
        dims: 1,
        ..PhateConfig::default()
    };
    let emb = phate(&panel, &cfg).unwrap();
    assert_eq!(emb.knn_used, 1);
    assert_ne!(emb.labels[0], emb.labels[1]);
}

#[test]
fn invalid_cluster_counts_are_config_errors() {
    let (panel, _) = families();
    for clusters in [0, 13] {
        let cfg = PhateConfig { clusters, ..config() };
        assert!(matches!(phate(&panel, &cfg), Err(Error::Config(_))));
    }
    let one = panel.select_stations(&[0]).unwrap();
    assert!(matches!(
        station_graph(&one, &config()),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn csv_and_meta_layout() {
    let (panel, _) = families();
    let emb = phate(&panel, &config()).unwrap();
    let mut buf = Vec::new();
    emb.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "station_id,z1,z2,z3,cluster");
    assert_eq!(lines.count(), 12);
    let meta = emb.meta();
    assert_eq!(meta.clusters, 3);
    assert_eq!(meta.knn, 3);
    assert!(meta.diffusion_time >= 1);
}

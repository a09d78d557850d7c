use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use koopman_core::data::save_csv;
use koopman_core::metrics::adjusted_rand_index;
use koopman_core::synth::{Family, SynthConfig, ToneSpec};

fn koopman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = koopman(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn write_panel(dir: &Path, name: &str, cfg: &SynthConfig) -> PathBuf {
    let path = dir.join(name);
    save_csv(&cfg.generate().unwrap().panel, &path).unwrap();
    path
}

fn two_tone() -> SynthConfig {
    SynthConfig {
        n_samples: 600,
        n_stations: 4,
        families: vec![Family {
            tones: vec![ToneSpec::new(24.0, 0.2, 0.4), ToneSpec::new(60.0, 0.1, 0.3)],
        }],
        seed: 1,
        ..SynthConfig::default()
    }
}

fn periodic() -> SynthConfig {
    SynthConfig {
        n_samples: 840,
        n_stations: 6,
        level: 0.0,
        families: vec![Family {
            tones: vec![ToneSpec::new(24.0, 0.3, 1.0), ToneSpec::new(168.0, 0.21, 0.7)],
        }],
        seed: 6,
        ..SynthConfig::default()
    }
}

fn three_families() -> SynthConfig {
    let family = |period: f64, phase: f64| Family {
        tones: vec![ToneSpec::new(period, 0.5, 1.0).with_phase(phase, 0.3)],
    };
    SynthConfig {
        n_samples: 1344,
        n_stations: 30,
        noise: 0.05,
        // Whole-hour periods sampled hourly would revisit a handful of phases
        // and split the delay graph into islands.
        families: vec![family(23.7, 0.0), family(161.3, 1.0), family(12.3, 2.0)],
        seed: 9,
        ..SynthConfig::default()
    }
}

const SPECTRA: &[&str] = &["--delays", "48", "--knn", "20", "--l", "40", "--l-prime", "15", "--export-modes", "4"];

#[test]
fn spectra_recovers_both_tones_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), "panel.csv", &two_tone());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["spectra", "--input", s(&input), "--out", s(out)];
        args.extend_from_slice(SPECTRA);
        ok(&args);
    }

    let m = manifest(&a);
    let freqs: Vec<f64> = m["summary"]["modes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|mode| mode["frequency_hz"].as_f64().unwrap().abs())
        .collect();
    for period in [24.0, 60.0] {
        let target = 1.0 / (period * 3600.0);
        assert!(
            freqs.iter().any(|f| (f - target).abs() <= 0.02 * target),
            "no mode within 2% of the {period} h tone: {freqs:?}"
        );
    }

    let names: Vec<String> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["path"].as_str().unwrap().to_string())
        .collect();
    for name in ["basis.json", "basis.csv", "graph.json", "graph.csv", "markov.csv", "modes.csv", "temporal_3.csv", "spectrum_0.csv"] {
        assert!(names.iter().any(|n| n == name), "{name} missing from {names:?}");
    }
    for name in &names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    let mut ma = manifest(&a);
    let mut mb = manifest(&b);
    ma.as_object_mut().unwrap().remove("created");
    mb.as_object_mut().unwrap().remove("created");
    assert_eq!(ma, mb);
}

#[test]
fn l_prime_above_l_is_rejected_before_reading_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = koopman(&["spectra", "--input", "does-not-exist.csv", "--out", s(&out), "--l", "10", "--l-prime", "11"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("config/invalid"));
    assert!(!out.exists());
}

#[test]
fn missing_input_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = koopman(&["cluster", "--input", s(&dir.path().join("missing.csv")), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("data-io/file"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn occupied_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    let res = koopman(&["synth", "--out", s(&out), "--samples", "10", "--stations", "2"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(out.join("keep.txt").exists());
    ok(&["synth", "--out", s(&out), "--samples", "10", "--stations", "2", "--force"]);
    assert!(!out.join("keep.txt").exists());
    let (header, rows) = read_table(&out.join("panel.csv"));
    assert_eq!(header, ["timestamp", "st000", "st001"]);
    assert_eq!(rows.len(), 10);
}

#[test]
fn two_stations_with_two_clusters_are_singletons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_samples: 200,
        n_stations: 2,
        ..two_tone()
    };
    let input = write_panel(dir.path(), "panel.csv", &cfg);
    let out = dir.path().join("out");
    ok(&["cluster", "--input", s(&input), "--out", s(&out), "--clusters", "2", "--phate-knn", "2"]);
    let (header, rows) = read_table(&out.join("phate.csv"));
    assert_eq!(header, ["station_id", "z1", "z2", "z3", "cluster"]);
    assert_ne!(rows[0][4], rows[1][4]);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("phate_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["clusters"], 2);
}

struct ForecastRun {
    _dir: tempfile::TempDir,
    input: PathBuf,
    out: PathBuf,
}

fn periodic_forecast() -> ForecastRun {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), "panel.csv", &periodic());
    let out = dir.path().join("fc");
    ok(&[
        "forecast", "--input", s(&input), "--out", s(&out), "--delays", "168", "--knn", "30", "--l", "100",
        "--l-prime", "50", "--horizon", "168",
    ]);
    ForecastRun { _dir: dir, input, out }
}

#[test]
fn periodic_forecast_and_evaluation() {
    let run = periodic_forecast();
    let out = &run.out;

    let (_, rmse_rows) = read_table(&out.join("rmse.csv"));
    assert_eq!(rmse_rows.len(), 6);
    for row in &rmse_rows {
        let e: f64 = row[2].parse().unwrap();
        assert!(e < 0.02, "station {} rmse {e}", row[0]);
    }

    let (header, rows) = read_table(&out.join("forecast.csv"));
    assert_eq!(header, ["timestamp", "station", "cluster", "predicted", "actual"]);
    let mut per_station: BTreeMap<String, usize> = BTreeMap::new();
    for row in &rows {
        *per_station.entry(row[1].clone()).or_default() += 1;
    }
    assert_eq!(per_station.len(), 6);
    assert!(per_station.values().all(|&n| n == 168));

    let m = manifest(out);
    assert_eq!(m["summary"]["models"].as_array().unwrap().len(), 1);
    let kpsi: Value = serde_json::from_str(&std::fs::read_to_string(out.join("kpsi.json")).unwrap()).unwrap();
    assert!(kpsi[0]["off_block_fraction"].as_f64().unwrap() < 1e-3);
    for name in ["noise_modal.csv", "noise_innovation.csv"] {
        assert_eq!(read_table(&out.join(name)).1.len(), 6 * 168);
    }

    // Against the panel it was cut from, evaluation reproduces rmse.csv.
    let eval = run.out.with_file_name("eval");
    ok(&["evaluate", "--forecast", s(out), "--truth", s(&run.input), "--out", s(&eval)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval.join("rmse.json")).unwrap()).unwrap();
    for (score, row) in report["stations"].as_array().unwrap().iter().zip(&rmse_rows) {
        assert_eq!(score["station"], row[0].as_str());
        let expected: f64 = row[2].parse().unwrap();
        assert!((score["rmse"].as_f64().unwrap() - expected).abs() < 1e-12);
    }

    let stats: Value = serde_json::from_str(&std::fs::read_to_string(out.join("norm_stats.json")).unwrap()).unwrap();
    let ids: Vec<String> = stats["station_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let span0 = stats["max"][0].as_f64().unwrap() - stats["min"][0].as_f64().unwrap();
    // Truth panels built from the predictions themselves.
    let truth_from = |offset: f64, order: &[usize]| {
        let mut by_time: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for row in &rows {
            let t: i64 = row[0].parse().unwrap();
            let s = ids.iter().position(|id| *id == row[1]).unwrap();
            let v: f64 = row[3].parse().unwrap();
            by_time.entry(t).or_insert_with(|| vec![0.0; ids.len()])[s] = if s == 0 { v + offset * span0 } else { v };
        }
        let mut text = String::from("timestamp");
        for &j in order {
            text.push(',');
            text.push_str(&ids[j]);
        }
        text.push('\n');
        for (t, values) in by_time {
            text.push_str(&t.to_string());
            for &j in order {
                text.push_str(&format!(",{:e}", values[j]));
            }
            text.push('\n');
        }
        text
    };
    let identity: Vec<usize> = (0..ids.len()).collect();
    let dir = run.out.parent().unwrap();

    let exact = dir.join("exact.csv");
    std::fs::write(&exact, truth_from(0.0, &identity)).unwrap();
    let eval_exact = dir.join("eval_exact");
    ok(&["evaluate", "--forecast", s(out), "--truth", s(&exact), "--out", s(&eval_exact)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval_exact.join("rmse.json")).unwrap()).unwrap();
    assert_eq!(report["overall"].as_f64(), Some(0.0));
    assert!(report["stations"].as_array().unwrap().iter().all(|s| s["rmse"].as_f64() == Some(0.0)));

    let shifted = dir.join("shifted.csv");
    std::fs::write(&shifted, truth_from(0.5, &identity)).unwrap();
    let eval_shifted = dir.join("eval_shifted");
    ok(&["evaluate", "--forecast", s(out), "--truth", s(&shifted), "--out", s(&eval_shifted)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval_shifted.join("rmse.json")).unwrap()).unwrap();
    let stations = report["stations"].as_array().unwrap();
    assert!((stations[0]["rmse"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(stations[1..].iter().all(|s| s["rmse"].as_f64().unwrap() < 1e-12));

    let mut swapped = identity.clone();
    swapped.swap(1, 4);
    let shuffled = dir.join("shuffled.csv");
    std::fs::write(&shuffled, truth_from(0.0, &swapped)).unwrap();
    let eval_bad = dir.join("eval_bad");
    let res = koopman(&["evaluate", "--forecast", s(out), "--truth", s(&shuffled), "--out", s(&eval_bad)]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("data-io/alignment"), "{err}");
    assert!(err.contains(&ids[1]) && err.contains(&ids[4]), "{err}");
    assert!(!err.contains(&ids[0]), "{err}");
    assert!(!eval_bad.exists());
}

#[test]
fn three_families_cluster_and_forecast_per_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let synth = three_families();
    let cfg = serde_json::json!({
        "synth": synth,
        "phate": { "clusters": 3, "mds_seed": 3, "kmeans_seed": 5 },
        "koopman": {
            "delay": { "delays": 48, "knn": 20 },
            "spectral": { "l": 40, "l_prime": 15 }
        },
        "forecast": { "horizon": 48 }
    });
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let gen = dir.path().join("gen");
    ok(&["synth", "--config", s(&config), "--out", s(&gen)]);
    let input = gen.join("panel.csv");
    let (_, families) = read_table(&gen.join("families.csv"));
    let truth: Vec<usize> = families.iter().map(|r| r[1].parse().unwrap()).collect();

    let clustered = dir.path().join("clusters");
    ok(&["cluster", "--config", s(&config), "--input", s(&input), "--out", s(&clustered)]);
    let (_, rows) = read_table(&clustered.join("phate.csv"));
    let labels: Vec<usize> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    let ari = adjusted_rand_index(&labels, &truth);
    assert!(ari >= 0.9, "ARI {ari}");

    let out = dir.path().join("fc");
    ok(&[
        "forecast", "--config", s(&config), "--input", s(&input), "--out", s(&out), "--cluster-file",
        s(&clustered.join("phate.csv")),
    ]);
    let m = manifest(&out);
    let models = m["summary"]["models"].as_array().unwrap();
    assert_eq!(models.len(), 3);
    let covered: usize = models.iter().map(|x| x["stations"].as_array().unwrap().len()).sum();
    assert_eq!(covered, 30);
    assert!(m["warnings"].as_array().unwrap().is_empty());

    // A label file that skips an id leaves an empty cluster behind.
    let gapped = dir.path().join("gapped.csv");
    let mut text = String::from("station_id,cluster\n");
    for row in &rows {
        let l: usize = row[4].parse().unwrap();
        text.push_str(&format!("{},{}\n", row[0], if l == 2 { 3 } else { l }));
    }
    std::fs::write(&gapped, text).unwrap();
    let out = dir.path().join("fc_gapped");
    ok(&[
        "forecast", "--config", s(&config), "--input", s(&input), "--out", s(&out), "--cluster-file", s(&gapped),
    ]);
    let m = manifest(&out);
    assert_eq!(m["summary"]["models"].as_array().unwrap().len(), 3);
    let warnings = m["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().contains("cluster 2"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use faultpf_experiment::io::{batches_from_rows, read_measurements};
use faultpf_experiment::{run_filter, run_ground_truth, ScenarioConfig, Variant};
use sha2::{Digest, Sha256};

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        horizon: 150,
        seed: 11,
        ..Default::default()
    };
    cfg.detector.particles = 150;
    cfg.detector.alphas = vec![0.01, 0.1];
    cfg
}

fn faultpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultpf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn hash(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_filter_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("run");
    let o = faultpf(&["simulate", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = (
        hash(&out.join("truth.csv")),
        hash(&out.join("measurements.csv")),
    );

    let again = dir.path().join("again");
    assert!(faultpf(&["simulate", "--config", &cfg, "--out", s(&again)])
        .status
        .success());
    assert_eq!(
        first,
        (
            hash(&again.join("truth.csv")),
            hash(&again.join("measurements.csv"))
        )
    );

    let o = faultpf(&[
        "filter",
        "--config",
        &cfg,
        "--alpha",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = faultpf(&["evaluate", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let rows = read_measurements(&out.join("measurements.csv")).unwrap();
    let gnss = rows
        .iter()
        .filter(|r| r.kind == faultpf_experiment::SensorKind::Gnss)
        .count();
    let c = &metrics["confusion"];
    let total: u64 = [
        "true_positives",
        "false_positives",
        "true_negatives",
        "false_negatives",
    ]
    .iter()
    .map(|k| c[k].as_u64().unwrap())
    .sum();
    assert_eq!(total as usize, gnss);
    assert!(metrics["density_mape_pct"].as_f64().unwrap() >= 0.0);
    assert_eq!(metrics["mape_floor_veh_per_m"].as_f64(), Some(1e-4));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(
        faultpf(&["simulate", "--config", &cfg, "--seed", "1", "--out", s(&a)])
            .status
            .success()
    );
    assert!(
        faultpf(&["simulate", "--config", &cfg, "--seed", "2", "--out", s(&b)])
            .status
            .success()
    );
    assert_ne!(
        hash(&a.join("measurements.csv")),
        hash(&b.join("measurements.csv"))
    );
}

#[test]
fn invalid_config_exits_with_two_and_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small();
    bad.detector.alphas = vec![1.5];
    bad.detector.phi_assumed = 2.0;
    bad.corridor.instrumented = vec![99];
    let cfg = write_config(dir.path(), &bad);
    let o = faultpf(&["simulate", "--config", &cfg, "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["alpha 1.5", "phi_assumed", "instrumented link 99"] {
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn malformed_measurements_exit_with_three_and_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    fs::write(
        dir.path().join("measurements.csv"),
        "k,sensor_kind,link,value,truth_faulty\n1,loop,0,0.01,0\n1,radar,2,3.0,NA\n",
    )
    .unwrap();
    let o = faultpf(&[
        "filter",
        "--config",
        &cfg,
        "--alpha",
        "0.01",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("measurements.csv:3:"), "{err}");
}

#[test]
fn sweep_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let (a, b) = (dir.path().join("w1"), dir.path().join("w3"));
    for (out, w) in [(&a, "1"), (&b, "3")] {
        let o = faultpf(&["sweep", "--config", &cfg, "--workers", w, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 12, "{names:?}");
    for n in &names {
        assert_eq!(hash(&a.join(n)), hash(&b.join(n)), "{n:?}");
    }
    let table = fs::read_to_string(a.join("metrics.txt")).unwrap();
    assert!(table.lines().next().unwrap().contains("accept_all"));
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("cell,alpha,TP,FP,TN,FN,labeling_error_pct,density_mape_pct"));
}

#[test]
fn clean_data_is_never_rejected_at_tiny_alpha() {
    let mut cfg = small();
    cfg.faults.phi_true = 1.0;
    cfg.detector.phi_assumed = 1.0;
    let gt = run_ground_truth(&cfg).unwrap();
    let run = run_filter(&cfg, &gt.batches, Variant::Screened { alpha: 1e-9 }).unwrap();
    assert!(
        run.decisions.len() >= 1000,
        "{} readings",
        run.decisions.len()
    );
    let min = run
        .decisions
        .iter()
        .map(|d| d.density_value)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(run.rejected_count(), 0, "smallest density {min}");
}

#[test]
fn larger_alpha_rejects_a_superset() {
    let cfg = small();
    let gt = run_ground_truth(&cfg).unwrap();
    let rejected = |alpha| -> std::collections::BTreeSet<(u64, usize)> {
        run_filter(&cfg, &gt.batches, Variant::Screened { alpha })
            .unwrap()
            .decisions
            .iter()
            .filter(|d| d.rejected)
            .map(|d| (d.k, d.sensor_seq))
            .collect()
    };
    let (lo, hi) = (rejected(0.001), rejected(0.1));
    assert!(!lo.is_empty());
    assert!(
        lo.is_subset(&hi),
        "{} of {} escape",
        lo.difference(&hi).count(),
        lo.len()
    );
}

#[test]
fn file_round_trip_preserves_filter_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let gt = run_ground_truth(&cfg).unwrap();
    let path = dir.path().join("m.csv");
    faultpf_experiment::io::write_measurements(&path, &gt.measurement_rows().unwrap()).unwrap();
    let back = batches_from_rows(&read_measurements(&path).unwrap(), cfg.horizon).unwrap();
    assert_eq!(back, gt.batches);
}

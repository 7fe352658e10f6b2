use std::path::Path;
use std::process::Command;

use ulmcorr::pipeline::{infer_stage, run_pipeline, simulate_training_stage, train_stage, EstimatorKind, RunConfig};

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig { out: out.to_path_buf(), workers: 1, ..RunConfig::default() };
    cfg.training_set.num_samples = 10;
    cfg.train.batch_size = 4;
    cfg.train.validation_fraction = 0.0;
    cfg
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default();
    cfg.seed = 17;
    cfg.estimator = EstimatorKind::GroundTruth;
    cfg.ulm.fit_fraction = 0.5;
    let text = cfg.canonical().unwrap();
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    assert!(RunConfig::from_toml("no_such_field = 1").is_err());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ulmcorr");
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"seven\"\n").unwrap();
    let code = |args: &[&str]| Command::new(bin).args(args).env("RUST_LOG", "off").stderr(std::process::Stdio::null()).status().unwrap().code();
    assert_eq!(code(&["metrics", "--config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["metrics", "--fit-fraction", "1.5"]), Some(2));
    let empty = tmp.path().join("empty");
    assert_eq!(code(&["train", "--out", empty.to_str().unwrap()]), Some(3));
    assert_eq!(code(&["metrics", "--out", empty.to_str().unwrap()]), Some(3));
}

#[test]
fn training_set_split_and_rerun_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(simulate_training_stage(&small(&a)).unwrap(), (8, 2));
    assert_eq!(simulate_training_stage(&small(&b)).unwrap(), (8, 2));
    for sub in ["dataset/train", "dataset/val"] {
        assert_eq!(dir_bytes(&a.join(sub)), dir_bytes(&b.join(sub)));
    }
}

#[test]
fn resumed_training_equals_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut full = small(&a);
    full.train.epochs = 3;
    simulate_training_stage(&full).unwrap();
    let h = train_stage(&full).unwrap();
    assert_eq!(h.epochs.len(), 3);

    let mut part = small(&b);
    part.train.epochs = 2;
    simulate_training_stage(&part).unwrap();
    assert_eq!(train_stage(&part).unwrap().epochs.len(), 2);
    part.train.epochs = 3;
    let h2 = train_stage(&part).unwrap();
    assert_eq!(h2.epochs.len(), 3);
    assert_eq!(dir_bytes(&a.join("model")), dir_bytes(&b.join("model")));
    assert_eq!(std::fs::read(a.join("history.csv")).unwrap(), std::fs::read(b.join("history.csv")).unwrap());
    let rows = std::fs::read_to_string(a.join("history.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3);

    let inferred = infer_stage(&full, None).unwrap();
    assert_eq!(inferred.len(), 2);
    assert!(inferred.iter().all(|ab| ab.len() == full.probe.num_elements));
}

#[test]
fn no_estimator_leaves_the_map_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.estimator = EstimatorKind::None;
    cfg.phantom.num_frames = 60;
    cfg.ulm.min_track_len = 10;
    cfg.ulm.density_min_len = 10;
    let r = run_pipeline(&cfg).unwrap();
    for m in ["tracks", "density_total", "illuminated_pixels", "frc_resolution"] {
        let (b, a) = (r.value(&format!("{m}_before")), r.value(&format!("{m}_after")));
        assert!(b.is_some(), "{m}");
        assert!(b == a || (b.unwrap().is_nan() && a.unwrap().is_nan()), "{m}: {b:?} vs {a:?}");
    }
}

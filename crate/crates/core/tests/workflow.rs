//! Dataset -> training -> evaluation, exercised through the public API.

use std::fs;
use std::path::Path;

use fbp_core::filters::AnalyticFilter;
use fbp_core::metrics::{evaluate_split, Summary};
use fbp_core::optim::{initial_filter, load_split, train, InitMode, Objective, TrainConfig};
use fbp_core::phantom::{generate_dataset, DatasetConfig, DatasetManifest};
use fbp_core::pipeline::{FilterSource, ReconstructionConfig};
use fbp_core::projector::Geometry;
use fbp_core::FourierSeriesFilter;

fn small_dataset(dir: &Path, train: usize, val: usize, test: usize) -> DatasetManifest {
    let config = DatasetConfig {
        train,
        val,
        test,
        size: 32,
        geometry: Geometry::for_image(32, 48).unwrap(),
        seed: 5,
        ..DatasetConfig::desk_scale()
    };
    generate_dataset(dir, &config).unwrap()
}

#[test]
fn zero_epochs_returns_the_initial_filter() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = small_dataset(&data, 2, 1, 1);
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let run = dir.path().join("run");
    let outcome = train(&config, &manifest, &data, Some(&run)).unwrap();
    let init = initial_filter(InitMode::RamLak, 0).unwrap();
    assert_eq!(outcome.best, init);
    assert_eq!(outcome.last, init);
    assert!(outcome.history.steps.is_empty());
    let saved = FourierSeriesFilter::read_csv(run.join("epoch_0.csv")).unwrap();
    assert_eq!(saved, init);
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = small_dataset(&data, 6, 2, 1);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train(&config, &manifest, &data, Some(&dir.path().join("a"))).unwrap();
    let b = train(&config, &manifest, &data, Some(&dir.path().join("b"))).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.last.to_params(), b.last.to_params());
    for name in ["history.csv", "validation.csv", "epoch_2.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    // 6 samples in batches of 4 -> 2 steps per epoch, numbered consecutively.
    let steps: Vec<usize> = a.history.steps.iter().map(|s| s.step).collect();
    assert_eq!(steps, vec![0, 1, 2, 3]);
    assert_eq!(a.history.epochs.len(), 3);
}

#[test]
fn evaluation_report_matches_its_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = small_dataset(&data, 1, 0, 3);
    let config = ReconstructionConfig::new(
        manifest.geometry,
        manifest.image_size,
        FilterSource::Analytic(AnalyticFilter::Hann),
    )
    .unwrap();
    let report = evaluate_split(&manifest, &data, "test", &config, "hann").unwrap();
    assert_eq!(report.rows.len(), 3);
    let psnr: Vec<f64> = report.rows.iter().map(|r| r.psnr_db).collect();
    let mean = psnr.iter().sum::<f64>() / 3.0;
    let std = (psnr.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let Summary { mean: m, std: s } = report.psnr();
    assert!((m - mean).abs() < 1e-12 && (s - std).abs() < 1e-12);

    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,ssim,mse,psnr_db");
    assert_eq!(lines.len(), 1 + 3 + 2);
    assert!(lines[4].starts_with("mean,") && lines[5].starts_with("std,"));

    assert!(evaluate_split(&manifest, &data, "val", &config, "hann").is_err());
    assert!(evaluate_split(&manifest, &data, "nope", &config, "hann").is_err());
}

#[test]
fn manifest_round_trips_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2, 1, 1);
    let (loaded, root) = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, manifest);
    let objective = Objective::new(
        loaded.geometry,
        loaded.image_size,
        128,
        Default::default(),
        Default::default(),
        fbp_core::losses::GvParams { patch: 4 },
    )
    .unwrap();
    let samples = load_split(&objective, &loaded, &root, "train").unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].gt.width, 32);
}

/// Desk-scale run with default hyperparameters: the hybrid loss over the whole
/// training split must be lower for the final filter than for the initial one.
#[test]
fn desk_scale_training_lowers_the_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(dir.path(), &DatasetConfig::desk_scale()).unwrap();
    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &manifest, dir.path(), None).unwrap();
    let objective = Objective::new(
        manifest.geometry,
        manifest.image_size,
        fbp_core::spectral::default_padded_len(manifest.geometry.num_detectors),
        config.weights,
        config.gee,
        config.gv,
    )
    .unwrap();
    let samples = load_split(&objective, &manifest, dir.path(), "train").unwrap();
    let batch: Vec<_> = samples.iter().collect();
    let initial = objective.loss(&initial_filter(config.init, config.seed).unwrap().to_params(), &batch).unwrap();
    let last = objective.loss(&outcome.last.to_params(), &batch).unwrap();
    println!("training-split loss: initial {initial:?}, final {last:?}");
    assert!(
        last.total < initial.total,
        "training loss rose from {} to {}",
        initial.total,
        last.total
    );
}

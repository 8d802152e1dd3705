//! Runs the `fbp` binary the way a script would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fbp(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FBP_THREADS")
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = fbp(cwd, args);
    assert!(
        out.status.success(),
        "fbp {args:?} exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const GEN: &[&str] = &["gen-data", "--out", "d", "--train", "4", "--val", "2", "--test", "2", "--size", "64", "--seed", "7"];

/// Smaller, faster dataset for commands that only need some data to work on.
fn tiny_dataset(cwd: &Path) {
    ok(cwd, &["gen-data", "--out", "d", "--train", "2", "--val", "1", "--test", "2", "--size", "32", "--angles", "48"]);
}

/// Parses an `omega,value` CSV.
fn spectrum(path: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (w, v) = l.split_once(',').unwrap();
            (w.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn gen_data_writes_every_triple_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GEN);
    let data = dir.path().join("d");
    let mut triples = 0;
    for split in [("train", 4), ("val", 2), ("test", 2)] {
        for i in 0..split.1 {
            for kind in ["gt", "sino", "noisy"] {
                assert!(data.join(format!("{}_{i}_{kind}.fbr", split.0)).is_file());
            }
            triples += 1;
        }
    }
    assert_eq!(triples, 8);
    assert!(data.join("manifest.json").is_file());
    assert!(fs::read_to_string(data.join("config.txt")).unwrap().contains("seed = 7"));

    let first: Vec<_> = ["manifest.json", "train_3_noisy.fbr", "config.txt"]
        .iter()
        .map(|f| fs::read(data.join(f)).unwrap())
        .collect();
    ok(dir.path(), GEN);
    for (f, bytes) in ["manifest.json", "train_3_noisy.fbr", "config.txt"].iter().zip(first) {
        assert_eq!(fs::read(data.join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing_out = fbp(dir.path(), &["gen-data", "--train", "1"]);
    assert_eq!(missing_out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing_out.stderr).contains("out"));

    assert_eq!(fbp(dir.path(), &["gen-data", "--out", "d", "--size", "big"]).status.code(), Some(2));
    assert_eq!(fbp(dir.path(), &["frobnicate"]).status.code(), Some(2));

    fs::write(dir.path().join("bad.txt"), "sise = 32\n").unwrap();
    let bad_key = fbp(dir.path(), &["gen-data", "--out", "d", "--config", "bad.txt"]);
    assert_eq!(bad_key.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.txt"),
        "# small run\nout = d\ntrain = 3\nval = 1\ntest = 1\nsize = 32\nangles = 48\nseed = 3\n",
    )
    .unwrap();
    ok(dir.path(), &["gen-data", "--config", "run.txt", "--seed", "4"]);
    let resolved = fs::read_to_string(dir.path().join("d/config.txt")).unwrap();
    assert!(resolved.contains("seed = 4") && resolved.contains("train = 3"));
    assert!(dir.path().join("d/train_2_gt.fbr").is_file());

    // The recorded config reproduces the run on its own.
    let first = fs::read(dir.path().join("d/train_2_noisy.fbr")).unwrap();
    fs::remove_dir_all(dir.path().join("d/")).unwrap();
    fs::write(dir.path().join("resolved.txt"), &resolved).unwrap();
    ok(dir.path(), &["gen-data", "--config", "resolved.txt"]);
    assert_eq!(fs::read(dir.path().join("d/train_2_noisy.fbr")).unwrap(), first);
}

#[test]
fn train_with_zero_epochs_emits_the_ramp_fit() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    ok(dir.path(), &["train", "--data", "d", "--out", "t", "--epochs", "0"]);
    let t = dir.path().join("t");
    assert_eq!(fs::read(t.join("filter.csv")).unwrap(), fs::read(t.join("epoch_0.csv")).unwrap());

    // Ram-Lak initialization: the exported spectrum is the ramp 2|omega|.
    ok(dir.path(), &["export-filter", "--filter", "t/filter.csv", "--out", "e", "--padded-len", "2048"]);
    let s = spectrum(&dir.path().join("e/spectrum.csv"));
    let rms = (s.iter().map(|(w, v)| (v - 2.0 * w.abs()).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
    assert!(rms < 1e-6, "ramp fit rms {rms}");

    let config = fs::read_to_string(t.join("config.txt")).unwrap();
    assert!(config.contains("epochs = 0\n"));
    let help = ok(dir.path(), &["train", "--help"]);
    assert!(help.contains("--epochs"));
}

#[test]
fn train_defaults() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    ok(dir.path(), &["train", "--data", "d", "--out", "t"]);
    let config = fs::read_to_string(dir.path().join("t/config.txt")).unwrap();
    for line in ["epochs = 20", "base_lr = 0.005", "max_lr = 0.02", "alpha = 10", "beta = 20", "init = ram_lak"] {
        assert!(config.contains(&format!("{line}\n")), "missing `{line}` in\n{config}");
    }
    assert!(dir.path().join("t/epoch_20.csv").is_file());
}

#[test]
fn train_writes_checkpoints_and_history() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    ok(dir.path(), &["train", "--data", "d", "--out", "t", "--epochs", "2", "--batch-size", "1", "--seed", "7"]);
    let t = dir.path().join("t");
    for f in ["epoch_0.csv", "epoch_1.csv", "epoch_2.csv", "filter.csv", "last.csv", "validation.csv"] {
        assert!(t.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(t.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("step,lr,total,mse,gee,gv"));
    assert_eq!(lines.count(), 4);
    let first = fs::read(t.join("history.csv")).unwrap();
    ok(dir.path(), &["train", "--data", "d", "--out", "t2", "--epochs", "2", "--batch-size", "1", "--seed", "7"]);
    assert_eq!(fs::read(dir.path().join("t2/history.csv")).unwrap(), first);
}

#[test]
fn reconstruct_with_analytic_and_csv_filters() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let sino = "d/test_0_noisy.fbr";
    ok(dir.path(), &["reconstruct", "--sino", sino, "--filter", "ram_lak", "--out", "r.fbr", "--preview", "r.pgm"]);
    assert!(dir.path().join("r.fbr").is_file());
    let pgm = fs::read(dir.path().join("r.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n") && pgm.len() == 13 + 32 * 32);
    assert!(dir.path().join("r.fbr.config.txt").is_file());

    ok(dir.path(), &["reconstruct", "--sino", sino, "--filter", "hann", "--out", "h.fbr"]);
    assert_ne!(fs::read(dir.path().join("r.fbr")).unwrap(), fs::read(dir.path().join("h.fbr")).unwrap());

    ok(dir.path(), &["train", "--data", "d", "--out", "t", "--epochs", "0"]);
    ok(dir.path(), &["reconstruct", "--sino", sino, "--filter", "t/filter.csv", "--out", "c.fbr"]);
    ok(dir.path(), &["reconstruct", "--sino", sino, "--filter", "t/filter.csv", "--out", "c2.fbr", "--size", "48"]);

    let missing = fbp(dir.path(), &["reconstruct", "--sino", "nope.fbr", "--out", "x.fbr"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_filter = fbp(dir.path(), &["reconstruct", "--sino", sino, "--filter", "cosine", "--out", "x.fbr"]);
    assert_ne!(bad_filter.status.code(), Some(0));
}

#[test]
fn eval_compares_models_in_argument_order() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    ok(dir.path(), &["train", "--data", "d", "--out", "t", "--epochs", "0"]);
    let table = ok(
        dir.path(),
        &["eval", "--data", "d", "--split", "test", "--filter", "t/filter.csv", "--filter", "hann", "--out", "ev"],
    );
    let ev = dir.path().join("ev");
    for f in ["filter_test.csv", "hann_test.csv", "table_test.txt"] {
        assert!(ev.join(f).is_file(), "{f}");
    }
    let (trained, hann) = (table.find("filter ").unwrap(), table.find("hann ").unwrap());
    assert!(trained < hann, "{table}");
    assert_eq!(fs::read_to_string(ev.join("table_test.txt")).unwrap(), table);
    let report = fs::read_to_string(ev.join("hann_test.csv")).unwrap();
    assert!(report.starts_with("id,ssim,mse,psnr_db\n"));
    assert_eq!(report.lines().count(), 1 + 2 + 2);

    let reversed = ok(dir.path(), &["eval", "--data", "d", "--filter", "hann", "--filter", "ram_lak", "--out", "ev2"]);
    assert!(reversed.find("hann ").unwrap() < reversed.find("ram_lak ").unwrap());

    let unknown = fbp(dir.path(), &["eval", "--data", "d", "--split", "holdout", "--out", "ev3"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn export_filter_at_several_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("l,a,b\n0,0.75,0\n");
    for l in 1..=50 {
        csv.push_str(&format!("{l},0,0\n"));
    }
    fs::write(dir.path().join("flat.csv"), &csv).unwrap();
    for p in ["128", "1024"] {
        let out = format!("e{p}");
        ok(dir.path(), &["export-filter", "--filter", "flat.csv", "--out", &out, "--padded-len", p, "--kernel"]);
        let s = spectrum(&dir.path().join(&out).join("spectrum.csv"));
        assert_eq!(s.len(), p.parse::<usize>().unwrap() / 2 + 1);
        assert!(s.iter().all(|&(_, v)| v == 0.75));
        let coeffs = fs::read_to_string(dir.path().join(&out).join("filter.csv")).unwrap();
        assert_eq!(coeffs.lines().count(), 52);
        assert_eq!(coeffs, csv);
        assert!(dir.path().join(&out).join("kernel.fbr").is_file());
    }
    let bad = fbp(dir.path(), &["export-filter", "--filter", "flat.csv", "--out", "x", "--padded-len", "100"]);
    assert_ne!(bad.status.code(), Some(0));
    fs::write(dir.path().join("broken.csv"), "l,a,b\n0,1\n").unwrap();
    assert_eq!(fbp(dir.path(), &["export-filter", "--filter", "broken.csv", "--out", "y"]).status.code(), Some(1));
}

//! End-to-end tests of the spikegrad binary: exit codes, determinism of
//! seeded runs, the dense/sparse training equivalence at an infinite window,
//! encode round-trips, and bench CSV generation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikegrad_core::data::{
    idx_write_images, idx_write_labels, synthetic_image_set, LabeledRasterSet,
};
use spikegrad_core::rng::Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikegrad"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spikegrad")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spkcli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn no_command_and_unknown_command_are_usage_errors() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = run(&["train", "--config", "/nonexistent/config.cfg"]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--frobnicate", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_zero_trials_is_a_usage_error() {
    assert_eq!(code(&run(&["gradcheck", "--trials", "0"])), 2);
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let out = run(&["gradcheck", "--trials", "40", "--seed", "9"]);
    assert_eq!(
        code(&out),
        0,
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS  equivalence"));

    let out = run(&[
        "gradcheck",
        "--trials",
        "40",
        "--seed",
        "9",
        "--inject-fault",
        "delta-alpha-exponent",
    ]);
    assert_eq!(code(&out), 1, "mutation mode must fail");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("FAIL  delta recurrence"),
        "stdout: {stdout}"
    );
    assert!(
        stdout.contains("delta mismatch layer"),
        "report must localize the fault: {stdout}"
    );
}

fn train_args<'a>(out_dir: &'a str, backward: &'a str, extra: &'a [&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--dataset",
        "fmnist-synth",
        "--subset",
        "96",
        "--test-subset",
        "40",
        "--hidden",
        "16",
        "--steps",
        "30",
        "--batch",
        "32",
        "--epochs",
        "2",
        "--seed",
        "7",
        "--lr",
        "0.001",
        "--backward",
        backward,
        "--out",
        out_dir,
    ];
    v.extend_from_slice(extra);
    v
}

/// Columns of metrics.csv that do not depend on which backward ran the
/// update (loss curve, accuracy, activity) - op counts legitimately differ.
fn trajectory_columns(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|line| line.split(',').take(6).collect::<Vec<_>>().join(","))
        .collect()
}

#[test]
fn same_seed_runs_are_bit_reproducible() {
    let d1 = tmpdir("repro1");
    let d2 = tmpdir("repro2");
    let out = run(&train_args(d1.to_str().unwrap(), "sparse", &[]));
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(&train_args(d2.to_str().unwrap(), "sparse", &[]));
    assert_eq!(code(&out), 0);
    let a = std::fs::read(d1.join("metrics.csv")).unwrap();
    let b = std::fs::read(d2.join("metrics.csv")).unwrap();
    assert_eq!(a, b, "metrics must be byte-identical across same-seed runs");
    let a = std::fs::read(d1.join("checkpoint.bin")).unwrap();
    let b = std::fs::read(d2.join("checkpoint.bin")).unwrap();
    assert_eq!(
        a, b,
        "checkpoints must be byte-identical across same-seed runs"
    );
    std::fs::remove_dir_all(&d1).ok();
    std::fs::remove_dir_all(&d2).ok();
}

#[test]
fn dense_and_sparse_loss_curves_match_with_infinite_window() {
    let d1 = tmpdir("equiv-dense");
    let d2 = tmpdir("equiv-sparse");
    let extra = ["--bth", "inf", "--precision", "f64"];
    let out = run(&train_args(d1.to_str().unwrap(), "dense", &extra));
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(&train_args(d2.to_str().unwrap(), "sparse", &extra));
    assert_eq!(code(&out), 0);
    assert_eq!(
        trajectory_columns(&d1),
        trajectory_columns(&d2),
        "dense and sparse trajectories must be identical at B_th = inf"
    );
    std::fs::remove_dir_all(&d1).ok();
    std::fs::remove_dir_all(&d2).ok();
}

#[test]
fn manifest_is_written_with_resolved_config() {
    let dir = tmpdir("manifest");
    let out = run(&train_args(dir.to_str().unwrap(), "sparse", &[]));
    assert_eq!(code(&out), 0);
    let manifest = std::fs::read_to_string(dir.join("run_manifest.txt")).unwrap();
    for needle in [
        "command = train",
        "B_th = 0.2",
        "tau_hidden = 10",
        "seed = 7",
        "content_hash = ",
    ] {
        assert!(
            manifest.contains(needle),
            "manifest missing '{needle}':\n{manifest}"
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn encode_roundtrip_and_horizon() {
    let dir = tmpdir("encode");
    let mut rng = Rng::seed_from(42);
    let (images, labels) = synthetic_image_set(25, 5, 28, &mut rng);
    idx_write_images(&dir.join("t10k-images-idx3-ubyte"), &images).unwrap();
    idx_write_labels(&dir.join("t10k-labels-idx1-ubyte"), &labels).unwrap();

    let out_file = dir.join("test.spkr");
    let out = run(&[
        "encode",
        "--input",
        dir.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
        "--split",
        "test",
        "--steps",
        "50",
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let set = LabeledRasterSet::read(&out_file).unwrap();
    assert_eq!(set.len(), 25);
    assert_eq!(set.neurons, 784);
    for (k, &label) in labels.iter().enumerate() {
        assert!(
            set.spike_count(k) <= 784,
            "at most one spike per input neuron"
        );
        assert_eq!(set.labels[k], label);
    }

    // theta = 1.0 encodes everything to empty rasters.
    let empty_file = dir.join("empty.spkr");
    let out = run(&[
        "encode",
        "--input",
        dir.to_str().unwrap(),
        "--out",
        empty_file.to_str().unwrap(),
        "--split",
        "test",
        "--theta",
        "1.0",
    ]);
    assert_eq!(code(&out), 0);
    let set = LabeledRasterSet::read(&empty_file).unwrap();
    assert!((0..set.len()).all(|k| set.spike_count(k) == 0));

    // Missing input directory is an I/O error.
    let out = run(&["encode", "--input", "/nonexistent", "--out", "/tmp/x.spkr"]);
    assert_eq!(code(&out), 3);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn trained_raster_container_feeds_training() {
    let dir = tmpdir("rastertrain");
    let mut rng = Rng::seed_from(6);
    let (images, labels) = synthetic_image_set(30, 3, 10, &mut rng);
    idx_write_images(&dir.join("train-images-idx3-ubyte"), &images).unwrap();
    idx_write_labels(&dir.join("train-labels-idx1-ubyte"), &labels).unwrap();
    let container = dir.join("set.spkr");
    let out = run(&[
        "encode",
        "--input",
        dir.to_str().unwrap(),
        "--out",
        container.to_str().unwrap(),
        "--split",
        "train",
        "--steps",
        "20",
    ]);
    assert_eq!(code(&out), 0);

    let run_dir = dir.join("run");
    let dataset = format!("raster:{}", container.display());
    let out = run(&[
        "train",
        "--dataset",
        &dataset,
        "--epochs",
        "1",
        "--hidden",
        "8",
        "--batch",
        "16",
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_sweep_writes_expected_rows_and_monotone_activity() {
    let dir = tmpdir("bench");
    let out = run(&[
        "bench",
        "--dataset",
        "fmnist-synth",
        "--subset",
        "48",
        "--batch",
        "24",
        "--steps",
        "30",
        "--hidden-sweep",
        "12,20",
        "--bth-sweep",
        "0.05,0.1,0.2,0.4",
        "--reps",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .collect();
    // 2 hidden sizes x 4 windows x 2 hidden layers.
    assert_eq!(rows.len(), 16, "csv:\n{csv}");

    // Activity is monotone in B_th per (hidden, layer).
    for hidden in ["12", "20"] {
        for layer in ["0", "1"] {
            let mut acts = Vec::new();
            for row in &rows {
                let cols: Vec<&str> = row.split(',').collect();
                if cols[0].starts_with(&format!("h{hidden}-")) && cols[2] == layer {
                    acts.push(cols[7].parse::<f64>().unwrap());
                }
            }
            assert_eq!(acts.len(), 4);
            for w in acts.windows(2) {
                assert!(
                    w[0] <= w[1] + 1e-12,
                    "activity must grow with B_th: {acts:?}"
                );
            }
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_values_are_applied_and_flags_override() {
    let dir = tmpdir("cfgfile");
    let cfg_path = dir.join("run.cfg");
    std::fs::write(
        &cfg_path,
        "# test config\n\
         n_hidden = 12\n\
         epochs = 1\n\
         T = 25\n\
         B = 16\n\
         B_th = 0.1\n\
         lambda_low = 50\n\
         seed = 99\n\
         subset = 60\n\
         test_subset = 30\n\
         dataset = fmnist-synth\n",
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--hidden",
        "10", // flag overrides the file
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(out_dir.join("run_manifest.txt")).unwrap();
    for needle in [
        "n_hidden = 10",
        "B_th = 0.1",
        "lambda_low = 50",
        "seed = 99",
        "T = 25",
    ] {
        assert!(
            manifest.contains(needle),
            "manifest missing '{needle}':\n{manifest}"
        );
    }
    // Bad key in the file is a usage error.
    std::fs::write(&cfg_path, "no_such_key = 1\n").unwrap();
    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn f64_precision_smoke() {
    let dir = tmpdir("f64");
    let out = run(&train_args(
        dir.to_str().unwrap(),
        "sparse",
        &["--precision", "f64"],
    ));
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(dir.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("precision = f64"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fmnist_dataset_loads_real_idx_files_via_data_root() {
    let dir = tmpdir("idxroot");
    let mut rng = Rng::seed_from(77);
    let (train_imgs, train_lbls) = synthetic_image_set(40, 10, 28, &mut rng);
    let (test_imgs, test_lbls) = synthetic_image_set(20, 10, 28, &mut rng);
    idx_write_images(&dir.join("train-images-idx3-ubyte"), &train_imgs).unwrap();
    idx_write_labels(&dir.join("train-labels-idx1-ubyte"), &train_lbls).unwrap();
    idx_write_images(&dir.join("t10k-images-idx3-ubyte"), &test_imgs).unwrap();
    idx_write_labels(&dir.join("t10k-labels-idx1-ubyte"), &test_lbls).unwrap();

    let out_dir = dir.join("run");
    let out = run(&[
        "train",
        "--dataset",
        "fmnist",
        "--data-root",
        dir.to_str().unwrap(),
        "--subset",
        "40",
        "--test-subset",
        "20",
        "--hidden",
        "10",
        "--steps",
        "25",
        "--batch",
        "20",
        "--epochs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(out_dir.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("data_source = fmnist idx root"));

    // Without a root the dataset is a usage error.
    let out = bin()
        .args(["train", "--dataset", "fmnist", "--epochs", "1"])
        .env_remove("SPIKEGRAD_DATA_DIR")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_accepts_a_trained_checkpoint() {
    let dir = tmpdir("benchck");
    let train_dir = dir.join("train");
    let out = run(&train_args(train_dir.to_str().unwrap(), "sparse", &[]));
    assert_eq!(code(&out), 0);
    let ck = train_dir.join("checkpoint.bin");

    let bench_dir = dir.join("bench");
    let out = run(&[
        "bench",
        "--dataset",
        "fmnist-synth",
        "--subset",
        "32",
        "--batch",
        "16",
        "--steps",
        "30",
        "--hidden-sweep",
        "16",
        "--reps",
        "2",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        bench_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Mismatched architecture is rejected as usage.
    let out = run(&[
        "bench",
        "--dataset",
        "fmnist-synth",
        "--subset",
        "32",
        "--steps",
        "30",
        "--hidden-sweep",
        "24",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        bench_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        2,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}

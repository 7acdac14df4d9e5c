//! `spikegrad train`: run epochs of forward + backward + Adam on the chosen
//! dataset, logging per-epoch metrics to CSV and saving a checkpoint.

use std::io::Write;

use spikegrad_core::optim::save_checkpoint;
use spikegrad_core::scalar::Scalar;
use spikegrad_core::train::{train, EpochMetrics, TrainError, TrainParams};

use crate::args::Args;
use crate::dataset::{resolve, ResolvedDataset};
use crate::runconfig::{write_manifest, Precision, RunConfig};
use crate::CliError;

pub fn run(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = args.get("config") {
        cfg.apply_file(std::path::Path::new(path))
            .map_err(CliError::Usage)?;
    }
    cfg.apply_common_flags(args)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let data_root = args.get("data-root").map(|s| s.to_string());
    args.reject_unknown()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let ds = resolve(&mut cfg, data_root.as_deref()).map_err(CliError::Usage)?;
    cfg.net
        .validate()
        .map_err(|e| CliError::Usage(format!("config: {e}")))?;

    write_manifest(&cfg, "train", &[("data_source".into(), ds.source.clone())])
        .map_err(|e| CliError::Io(e.to_string()))?;

    match cfg.precision {
        Precision::F32 => run_typed::<f32>(&cfg, &ds),
        Precision::F64 => run_typed::<f64>(&cfg, &ds),
    }
}

fn metrics_header(hidden_layers: usize) -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "loss".to_string(),
        "cross_entropy".to_string(),
        "test_accuracy".to_string(),
    ];
    for l in 0..hidden_layers {
        cols.push(format!("activity_l{l}"));
    }
    cols.extend(
        [
            "gradw_products",
            "gradw_sums",
            "spikegrad_products",
            "delta_products",
            "delta_events",
        ]
        .map(String::from),
    );
    cols.join(",")
}

fn metrics_row(m: &EpochMetrics) -> String {
    let mut cols = vec![
        m.epoch.to_string(),
        format!("{:.8}", m.loss),
        format!("{:.8}", m.cross_entropy),
        format!("{:.6}", m.test_accuracy),
    ];
    for a in &m.activity_pct {
        cols.push(format!("{a:.8}"));
    }
    for v in [
        m.gradw_products,
        m.gradw_sums,
        m.spikegrad_products,
        m.delta_products,
        m.delta_events,
    ] {
        cols.push(v.to_string());
    }
    cols.join(",")
}

fn run_typed<F: Scalar>(cfg: &RunConfig, ds: &ResolvedDataset) -> Result<(), CliError> {
    let params = TrainParams {
        epochs: cfg.epochs,
        backward: cfg.backward,
        seed: cfg.seed,
        threads: cfg.threads.max(1),
        prefetch: 2,
        adam: cfg.adam,
    };
    let hidden_layers = cfg.net.num_neuron_layers() - 1;
    let csv_path = cfg.out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(csv, "{}", metrics_header(hidden_layers)).map_err(|e| CliError::Io(e.to_string()))?;

    println!(
        "training {} on {} ({} train / {} test samples), backward={}, precision={}, seed={}",
        cfg.net
            .layer_sizes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("-"),
        cfg.dataset,
        ds.train.len(),
        ds.test.len(),
        cfg.backward.name(),
        cfg.precision.name(),
        cfg.seed
    );

    let mut rows: Vec<String> = Vec::new();
    let outcome = train::<F>(&ds.train, &ds.test, &cfg.net, &cfg.loss, &params, |m| {
        let act: Vec<String> = m.activity_pct.iter().map(|a| format!("{a:.3}%")).collect();
        println!(
            "epoch {:>3}  loss {:>9.5}  test-acc {:>6.3}  activity [{}]  gradw-prods {}",
            m.epoch,
            m.loss,
            m.test_accuracy,
            act.join(", "),
            m.gradw_products
        );
        rows.push(metrics_row(m));
    })
    .map_err(|e| match e {
        TrainError::NanLoss { .. } => CliError::Check(format!("{e}")),
        TrainError::EmptyDataset | TrainError::DatasetShape { .. } => {
            CliError::Usage(format!("{e}"))
        }
        other => CliError::Check(format!("{other}")),
    })?;

    for row in &rows {
        writeln!(csv, "{row}").map_err(|e| CliError::Io(e.to_string()))?;
    }

    let weights: Vec<_> = outcome
        .net
        .layers
        .iter()
        .map(|l| l.weights.clone())
        .collect();
    let ck_path = cfg.out_dir.join("checkpoint.bin");
    save_checkpoint(&ck_path, &weights, &outcome.adam, outcome.rng_state)
        .map_err(|e| CliError::Io(e.to_string()))?;

    let last = outcome.epochs.last().expect("at least one epoch");
    println!(
        "done: final loss {:.5}, test accuracy {:.3}; metrics -> {}, checkpoint -> {}",
        last.loss,
        last.test_accuracy,
        csv_path.display(),
        ck_path.display()
    );
    Ok(())
}

//! `spikegrad bench`: sweep hidden sizes and window widths, benchmarking
//! dense vs event-driven backward kernels on one batch per point; writes
//! CSV rows and re-derives every derived column as a self-check.

use spikegrad_core::bench::{bench_network, verify_report_csv};
use spikegrad_core::forward::Network;
use spikegrad_core::optim::load_checkpoint;
use spikegrad_core::rng::Rng;
use spikegrad_core::scalar::Scalar;
use spikegrad_core::tensor::Matrix;

use crate::args::{parse_f64_or_inf, Args};
use crate::dataset::resolve;
use crate::runconfig::{write_manifest, Precision, RunConfig};
use crate::CliError;

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("bad {what} '{p}'")))
        })
        .collect()
}

pub fn run(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig {
        subset: 512,
        test_subset: 64,
        ..RunConfig::default()
    };
    if let Some(path) = args.get("config") {
        cfg.apply_file(std::path::Path::new(path))
            .map_err(CliError::Usage)?;
    }
    cfg.apply_common_flags(args)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let hidden_sizes: Vec<usize> = match args.get("hidden-sweep") {
        Some(s) => parse_list(s, "hidden size")?,
        None => vec![cfg.n_hidden],
    };
    let bths: Vec<f64> = match args.get("bth-sweep") {
        Some(s) => s
            .split(',')
            .map(|p| parse_f64_or_inf(p.trim()).map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?,
        None => vec![cfg.net.b_th],
    };
    let reps: usize = args
        .get_parsed("reps")
        .map_err(|e| CliError::Usage(e.to_string()))?
        .unwrap_or(5);
    let checkpoint = args.get("checkpoint").map(|s| s.to_string());
    let data_root = args.get("data-root").map(|s| s.to_string());
    args.reject_unknown()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".into()));
    }
    if hidden_sizes.is_empty() || bths.is_empty() {
        return Err(CliError::Usage("empty sweep specification".into()));
    }

    let ds = resolve(&mut cfg, data_root.as_deref()).map_err(CliError::Usage)?;
    cfg.net
        .validate()
        .map_err(|e| CliError::Usage(format!("config: {e}")))?;
    write_manifest(
        &cfg,
        "bench",
        &[
            ("data_source".into(), ds.source.clone()),
            ("hidden_sweep".into(), format!("{hidden_sizes:?}")),
            ("bth_sweep".into(), format!("{bths:?}")),
        ],
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    let csv_path = cfg.out_dir.join("bench.csv");

    let batch_indices: Vec<usize> = (0..ds.train.len().min(cfg.net.batch)).collect();
    let input = ds.train.batch(&batch_indices);
    let labels = ds.train.batch_labels(&batch_indices);

    for &hidden in &hidden_sizes {
        for &b_th in &bths {
            let mut point = cfg.clone();
            point.n_hidden = hidden;
            point.net.b_th = b_th;
            point.finalize();
            let run_id = format!("h{hidden}-bth{b_th}-s{}", cfg.seed);
            match cfg.precision {
                Precision::F32 => bench_point::<f32>(
                    &point,
                    &run_id,
                    &input,
                    &labels,
                    reps,
                    checkpoint.as_deref(),
                    &csv_path,
                )?,
                Precision::F64 => bench_point::<f64>(
                    &point,
                    &run_id,
                    &input,
                    &labels,
                    reps,
                    checkpoint.as_deref(),
                    &csv_path,
                )?,
            }
        }
    }

    match verify_report_csv(&csv_path) {
        Ok(rows) => println!(
            "metric identities re-derived OK over {rows} rows -> {}",
            csv_path.display()
        ),
        Err(problems) => {
            for p in problems.iter().take(5) {
                eprintln!("metric identity violated: {p}");
            }
            return Err(CliError::Check(
                "bench CSV failed the re-derivation pass".into(),
            ));
        }
    }
    Ok(())
}

fn bench_point<F: Scalar>(
    cfg: &RunConfig,
    run_id: &str,
    input: &spikegrad_core::tensor::SpikeRaster,
    labels: &[usize],
    reps: usize,
    checkpoint: Option<&str>,
    csv_path: &std::path::Path,
) -> Result<(), CliError> {
    let net: Network<F> = match checkpoint {
        Some(path) => {
            let ck = load_checkpoint::<F>(std::path::Path::new(path))
                .map_err(|e| CliError::Io(format!("checkpoint: {e}")))?;
            let shapes: Vec<(usize, usize)> = ck
                .params
                .iter()
                .map(|m: &Matrix<F>| (m.rows(), m.cols()))
                .collect();
            let want: Vec<(usize, usize)> = (0..cfg.net.num_neuron_layers())
                .map(|l| (cfg.net.layer_sizes[l], cfg.net.layer_sizes[l + 1]))
                .collect();
            if shapes != want {
                return Err(CliError::Usage(format!(
                    "checkpoint shapes {shapes:?} do not match the sweep point {want:?}"
                )));
            }
            Network::from_weights(&cfg.net, ck.params)
        }
        None => {
            let mut rng = Rng::seed_from(cfg.seed);
            Network::init(&cfg.net, &mut rng)
        }
    };

    let report = bench_network(
        &net,
        input,
        labels,
        &cfg.net,
        &cfg.loss,
        run_id,
        &cfg.dataset,
        reps,
    )
    .map_err(|e| CliError::Check(format!("bench: {e}")))?;
    for row in &report.rows {
        println!(
            "{run_id} layer {}: activity {:.3}%  ops dense/sparse {}/{} ({:.1}x)  bwd {:.3}/{:.3} ms  mem saved {:.1}%",
            row.layer,
            row.activity_pct,
            row.dense_prods,
            row.sparse_prods,
            row.op_reduction,
            row.bwd_dense_ms,
            row.bwd_sparse_ms,
            row.mem_saved_pct
        );
    }
    report
        .append_csv(csv_path)
        .map_err(|e| CliError::Io(e.to_string()))
}

//! Training loop: epochs of forward, loss, dense or event-driven backward,
//! and Adam updates, with per-epoch metrics (loss, test accuracy, activity,
//! operation counts). Deterministic given the seed; shuffling uses a
//! per-epoch derived stream.

use thiserror::Error;

use crate::active::activity_percentage;
use crate::bench::OpCounter;
use crate::config::NetConfig;
use crate::data::LabeledRasterSet;
use crate::forward::{network_forward, ForwardError, Network};
use crate::grad_dense::{dense_backward, DeltaMode, GradError};
use crate::grad_sparse::sparse_backward;
use crate::loss::{logits, loss_and_grads, predictions, LossConfig, LossError};
use crate::optim::{adam_step_refs, AdamParams, AdamState, OptimError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::surrogate::Window;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (value {value})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset shape ({got_t}, {got_n}) does not match config ({want_t}, {want_n})")]
    DatasetShape {
        got_t: usize,
        got_n: usize,
        want_t: usize,
        want_n: usize,
    },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Which backward pass drives the weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMode {
    /// Dense reference pass with the untruncated surrogate.
    Dense,
    /// Dense reference pass with the window-truncated surrogate.
    DenseTruncated,
    /// Event-driven pass (window-truncated by construction).
    Sparse,
}

impl BackwardMode {
    pub fn parse(s: &str) -> Option<BackwardMode> {
        match s {
            "dense" => Some(BackwardMode::Dense),
            "dense-truncated" => Some(BackwardMode::DenseTruncated),
            "sparse" => Some(BackwardMode::Sparse),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackwardMode::Dense => "dense",
            BackwardMode::DenseTruncated => "dense-truncated",
            BackwardMode::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub epochs: usize,
    pub backward: BackwardMode,
    pub seed: u64,
    /// Worker threads. The forward pass splits over the batch (results are
    /// identical to the sequential run; samples never interact); with the
    /// sparse backward, > 1 also enables the batch-chunked fast mode.
    pub threads: usize,
    /// Capacity of the bounded hand-off queue between the batch-loader
    /// producer and the training consumer; 0 materialises batches inline.
    /// Batch order is preserved either way, so results are identical.
    pub prefetch: usize,
    pub adam: AdamParams,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 1,
            backward: BackwardMode::Sparse,
            seed: 1,
            threads: 1,
            prefetch: 2,
            adam: AdamParams::default(),
        }
    }
}

/// Metrics of one epoch.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean total loss over batches.
    pub loss: f64,
    pub cross_entropy: f64,
    pub test_accuracy: f64,
    /// Mean active-entry percentage per hidden layer.
    pub activity_pct: Vec<f64>,
    /// Weight-gradient products counted this epoch, all layers.
    pub gradw_products: u64,
    pub gradw_sums: u64,
    pub spikegrad_products: u64,
    pub delta_products: u64,
    pub delta_events: u64,
}

#[derive(Debug)]
pub struct TrainOutcome<F> {
    pub net: Network<F>,
    pub adam: AdamState<F>,
    pub rng_state: [u64; 4],
    pub epochs: Vec<EpochMetrics>,
}

/// Fraction of test samples whose argmax logit matches the label.
pub fn evaluate_accuracy<F: Scalar>(
    net: &Network<F>,
    set: &LabeledRasterSet,
    cfg: &NetConfig,
    threads: usize,
) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(cfg.batch.max(1)) {
        let raster = set.batch(chunk);
        let labels = set.batch_labels(chunk);
        let pass = network_forward(&raster, net, cfg, threads)?;
        let l = logits(&pass.readout().membranes);
        for (pred, want) in predictions(&l.values).into_iter().zip(labels) {
            if pred == want {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Run the whole training loop. `on_epoch` fires after each epoch with the
/// fresh metrics (for CSV logging / progress display).
pub fn train<F: Scalar>(
    train_set: &LabeledRasterSet,
    test_set: &LabeledRasterSet,
    cfg: &NetConfig,
    loss_cfg: &LossConfig,
    params: &TrainParams,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<F>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if train_set.steps != cfg.steps || train_set.neurons != cfg.input_size() {
        return Err(TrainError::DatasetShape {
            got_t: train_set.steps,
            got_n: train_set.neurons,
            want_t: cfg.steps,
            want_n: cfg.input_size(),
        });
    }

    let mut rng = Rng::seed_from(params.seed);
    let mut net: Network<F> = Network::init(cfg, &mut rng);
    let shapes: Vec<(usize, usize)> = net
        .layers
        .iter()
        .map(|l| (l.weights.rows(), l.weights.cols()))
        .collect();
    let mut adam = AdamState::new(&shapes, params.adam);

    let hidden = cfg.num_neuron_layers() - 1;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(params.epochs);

    for epoch in 0..params.epochs {
        let mut shuffle_rng = Rng::derive(params.seed, epoch as u64 + 1);
        shuffle_rng.shuffle(&mut order);

        let mut counter = OpCounter::new();
        let mut loss_sum = 0.0;
        let mut xent_sum = 0.0;
        let mut batches = 0usize;
        let mut active_frac_sum = vec![0.0_f64; hidden];

        let chunks: Vec<&[usize]> = order.chunks(cfg.batch.max(1)).collect();
        let epoch_result: Result<(), TrainError> = std::thread::scope(|scope| {
            // Bounded hand-off queue: a producer materialises upcoming batches
            // while the consumer trains on the current one. FIFO order keeps
            // the run identical to inline loading.
            let feed = if params.prefetch > 0 {
                let (tx, rx) = std::sync::mpsc::sync_channel(params.prefetch);
                let chunks = &chunks;
                scope.spawn(move || {
                    for chunk in chunks.iter() {
                        let batch = (train_set.batch(chunk), train_set.batch_labels(chunk));
                        if tx.send(batch).is_err() {
                            break; // consumer stopped early
                        }
                    }
                });
                Some(rx)
            } else {
                None
            };
            for batch_idx in 0..chunks.len() {
                let (raster, labels) = match &feed {
                    Some(rx) => rx.recv().expect("batch producer hung up"),
                    None => (
                        train_set.batch(chunks[batch_idx]),
                        train_set.batch_labels(chunks[batch_idx]),
                    ),
                };
                let chunk_len = chunks[batch_idx].len();
                let pass = network_forward(&raster, &net, cfg, params.threads)?;
                let (report, _, lg) = loss_and_grads(&pass, &labels, loss_cfg)?;
                if !report.total.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch,
                        batch: batch_idx,
                        value: report.total,
                    });
                }
                loss_sum += report.total;
                xent_sum += report.cross_entropy;
                batches += 1;

                let (grads, active_lens) = match params.backward {
                    BackwardMode::Sparse if params.threads > 1 => {
                        // Fast mode: batch-chunked workers with a deterministic
                        // ascending merge; see sparse_backward_threaded.
                        let bundles = crate::grad_sparse::sparse_backward_threaded(
                            &net,
                            &pass,
                            &lg,
                            cfg,
                            params.threads,
                            Some(&mut counter),
                        )?;
                        let v_th = cfg.v_th_as::<F>();
                        let b_th = cfg.b_th_as::<F>();
                        let lens: Vec<usize> = (0..hidden)
                            .map(|l| {
                                crate::active::build_active_set(
                                    &pass.layers[l].membranes,
                                    v_th,
                                    b_th,
                                )
                                .len()
                            })
                            .collect();
                        (
                            bundles.into_iter().map(|b| b.grad_w).collect::<Vec<_>>(),
                            lens,
                        )
                    }
                    BackwardMode::Sparse => {
                        let out = sparse_backward(&net, &pass, &lg, cfg, Some(&mut counter))?;
                        let lens: Vec<usize> = out.active.iter().map(|a| a.len()).collect();
                        (
                            out.bundles
                                .into_iter()
                                .map(|b| b.grad_w)
                                .collect::<Vec<_>>(),
                            lens,
                        )
                    }
                    BackwardMode::Dense | BackwardMode::DenseTruncated => {
                        let window = if params.backward == BackwardMode::Dense {
                            Window::Dense
                        } else {
                            Window::Truncated
                        };
                        let out = dense_backward(
                            &net,
                            &pass,
                            &lg,
                            cfg,
                            window,
                            DeltaMode::Chained,
                            Some(&mut counter),
                        )?;
                        let lens: Vec<usize> = out.active.iter().map(|a| a.len()).collect();
                        (
                            out.bundles
                                .into_iter()
                                .map(|b| b.grad_w)
                                .collect::<Vec<_>>(),
                            lens,
                        )
                    }
                };

                for (l, len) in active_lens.iter().enumerate() {
                    active_frac_sum[l] +=
                        activity_percentage(*len, chunk_len, cfg.steps, cfg.layer_sizes[l + 1])
                            .unwrap_or(0.0);
                }

                let grads: Vec<Matrix<F>> = grads;
                adam_step_refs(
                    net.layers.iter_mut().map(|l| &mut l.weights).collect(),
                    &grads,
                    &mut adam,
                )?;
            }
            Ok(())
        });
        epoch_result?;

        let test_accuracy = evaluate_accuracy(&net, test_set, cfg, params.threads)?;
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / batches as f64,
            cross_entropy: xent_sum / batches as f64,
            test_accuracy,
            activity_pct: active_frac_sum.iter().map(|s| s / batches as f64).collect(),
            gradw_products: (0..net.layers.len())
                .map(|l| counter.products(l, crate::bench::GradKind::WeightGrad))
                .sum(),
            gradw_sums: (0..net.layers.len())
                .map(|l| counter.sums(l, crate::bench::GradKind::WeightGrad))
                .sum(),
            spikegrad_products: (0..net.layers.len())
                .map(|l| counter.products(l, crate::bench::GradKind::SpikeGrad))
                .sum(),
            delta_products: (0..net.layers.len())
                .map(|l| counter.products(l, crate::bench::GradKind::Delta))
                .sum(),
            delta_events: (0..net.layers.len()).map(|l| counter.delta_events(l)).sum(),
        };
        on_epoch(&metrics);
        epochs.push(metrics);
    }

    Ok(TrainOutcome {
        net,
        adam,
        rng_state: rng.state(),
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_idx_set, synthetic_image_set, EncoderConfig};

    fn tiny_dataset(
        count: usize,
        classes: usize,
        side: usize,
        steps: usize,
        seed: u64,
    ) -> LabeledRasterSet {
        let mut rng = Rng::seed_from(seed);
        let (images, labels) = synthetic_image_set(count, classes, side, &mut rng);
        let cfg = EncoderConfig {
            steps,
            ..EncoderConfig::default()
        };
        encode_idx_set(&images, &labels, &cfg, "train", None).unwrap()
    }

    fn tiny_cfg(side: usize, steps: usize, classes: usize) -> NetConfig {
        NetConfig {
            layer_sizes: vec![side * side, 12, 12, classes],
            steps,
            batch: 8,
            ..NetConfig::default()
        }
    }

    #[test]
    fn sparse_training_reduces_loss_and_is_deterministic() {
        let side = 8;
        let steps = 24;
        let classes = 3;
        let train_set = tiny_dataset(48, classes, side, steps, 4);
        let test_set = tiny_dataset(24, classes, side, steps, 5);
        let cfg = tiny_cfg(side, steps, classes);
        let loss_cfg = LossConfig {
            num_classes: classes,
            ..LossConfig::default()
        };
        let params = TrainParams {
            epochs: 4,
            backward: BackwardMode::Sparse,
            seed: 11,
            adam: AdamParams {
                lr: 1e-3,
                ..AdamParams::default()
            },
            ..TrainParams::default()
        };
        let run = || train::<f32>(&train_set, &test_set, &cfg, &loss_cfg, &params, |_| {}).unwrap();
        let a = run();
        let b = run();
        assert!(
            a.epochs.last().unwrap().loss < a.epochs[0].loss,
            "loss should fall"
        );
        for (ea, eb) in a.epochs.iter().zip(b.epochs.iter()) {
            assert_eq!(
                ea.loss.to_bits(),
                eb.loss.to_bits(),
                "training must be bit-reproducible"
            );
            assert_eq!(ea.test_accuracy, eb.test_accuracy);
        }
        for (wa, wb) in a.net.layers.iter().zip(b.net.layers.iter()) {
            assert_eq!(wa.weights.as_slice(), wb.weights.as_slice());
        }
    }

    #[test]
    fn dense_and_sparse_agree_with_infinite_window() {
        // With B_th = infinity the truncated rule degenerates to the dense
        // one, and the two training paths produce identical trajectories.
        let side = 6;
        let steps = 16;
        let classes = 2;
        let train_set = tiny_dataset(24, classes, side, steps, 6);
        let test_set = tiny_dataset(12, classes, side, steps, 7);
        let cfg = NetConfig {
            layer_sizes: vec![side * side, 10, 10, classes],
            steps,
            batch: 8,
            b_th: f64::INFINITY,
            ..NetConfig::default()
        };
        let loss_cfg = LossConfig {
            num_classes: classes,
            ..LossConfig::default()
        };
        let mk = |backward| TrainParams {
            epochs: 2,
            backward,
            seed: 3,
            adam: AdamParams {
                lr: 1e-3,
                ..AdamParams::default()
            },
            ..TrainParams::default()
        };
        let dense = train::<f64>(
            &train_set,
            &test_set,
            &cfg,
            &loss_cfg,
            &mk(BackwardMode::Dense),
            |_| {},
        )
        .unwrap();
        let sparse = train::<f64>(
            &train_set,
            &test_set,
            &cfg,
            &loss_cfg,
            &mk(BackwardMode::Sparse),
            |_| {},
        )
        .unwrap();
        for (ed, es) in dense.epochs.iter().zip(sparse.epochs.iter()) {
            assert_eq!(
                ed.loss.to_bits(),
                es.loss.to_bits(),
                "loss curves must match bit-exactly"
            );
        }
        for (wd, ws) in dense.net.layers.iter().zip(sparse.net.layers.iter()) {
            assert_eq!(wd.weights.as_slice(), ws.weights.as_slice());
        }
    }

    #[test]
    fn prefetch_queue_is_invisible_to_results() {
        let side = 6;
        let steps = 16;
        let train_set = tiny_dataset(24, 2, side, steps, 21);
        let test_set = tiny_dataset(12, 2, side, steps, 22);
        let cfg = NetConfig {
            layer_sizes: vec![side * side, 8, 8, 2],
            steps,
            batch: 8,
            ..NetConfig::default()
        };
        let loss_cfg = LossConfig {
            num_classes: 2,
            ..LossConfig::default()
        };
        let mk = |prefetch| TrainParams {
            epochs: 2,
            backward: BackwardMode::Sparse,
            seed: 5,
            prefetch,
            ..TrainParams::default()
        };
        let inline = train::<f32>(&train_set, &test_set, &cfg, &loss_cfg, &mk(0), |_| {}).unwrap();
        let queued = train::<f32>(&train_set, &test_set, &cfg, &loss_cfg, &mk(3), |_| {}).unwrap();
        for (a, b) in inline.epochs.iter().zip(queued.epochs.iter()) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        for (wa, wb) in inline.net.layers.iter().zip(queued.net.layers.iter()) {
            assert_eq!(wa.weights.as_slice(), wb.weights.as_slice());
        }
    }

    #[test]
    fn dataset_shape_mismatch_is_rejected() {
        let train_set = tiny_dataset(8, 2, 6, 16, 1);
        let cfg = NetConfig {
            layer_sizes: vec![10, 4, 2],
            steps: 16,
            batch: 4,
            ..NetConfig::default()
        };
        let err = train::<f32>(
            &train_set,
            &train_set,
            &cfg,
            &LossConfig {
                num_classes: 2,
                ..LossConfig::default()
            },
            &TrainParams::default(),
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::DatasetShape { .. }));
    }
}

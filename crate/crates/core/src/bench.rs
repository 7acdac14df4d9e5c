//! Deterministic operation counting and efficiency metrics: per-kernel
//! sum/product tallies, backward-state memory accounting, the energy-bound
//! metric, and a wall-clock timing harness. Counting never touches kernel
//! arithmetic, so counted and uncounted runs produce identical gradients.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::config::NetConfig;
use crate::forward::{layer_forward, network_forward, ForwardPass, Network};
use crate::grad_dense::{
    delta_chained, dense_backward, dense_spike_grad, dense_weight_grad, DeltaMode, NeededTimes,
};
use crate::grad_sparse::{
    build_schedule, sparse_backward, sparse_delta, sparse_spike_grad, sparse_weight_grad,
    SparseBackward,
};
use crate::loss::{loss_and_grads, LossConfig, LossGrads};
use crate::scalar::Scalar;
use crate::surrogate::{Gate, SurrogateParams, Window};
use crate::tensor::SpikeRaster;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("activity percentage {0} outside [0, 100]")]
    ActivityOutOfRange(f64),
    #[error("timing harness needs reps >= 1")]
    NoReps,
    #[error("network has no hidden layer to benchmark")]
    NoHiddenLayer,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Forward(#[from] crate::forward::ForwardError),
    #[error(transparent)]
    Grad(#[from] crate::grad_dense::GradError),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
}

impl PartialEq for BenchError {
    fn eq(&self, other: &Self) -> bool {
        format!("{self}") == format!("{other}")
    }
}

/// Which gradient kernel an operation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    WeightGrad,
    SpikeGrad,
    Delta,
}

impl GradKind {
    const COUNT: usize = 3;

    fn index(self) -> usize {
        match self {
            GradKind::WeightGrad => 0,
            GradKind::SpikeGrad => 1,
            GradKind::Delta => 2,
        }
    }
}

/// Scalar sums/products per (layer, kernel kind), plus delta update events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    /// [layer][kind] -> (sums, products)
    tallies: Vec<[(u64, u64); GradKind::COUNT]>,
    /// [layer] -> number of delta walk update events.
    delta_events: Vec<u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        OpCounter::default()
    }

    fn ensure(&mut self, layer: usize) {
        if self.tallies.len() <= layer {
            self.tallies.resize(layer + 1, [(0, 0); GradKind::COUNT]);
            self.delta_events.resize(layer + 1, 0);
        }
    }

    pub fn record(&mut self, layer: usize, kind: GradKind, sums: u64, products: u64) {
        self.ensure(layer);
        let cell = &mut self.tallies[layer][kind.index()];
        cell.0 += sums;
        cell.1 += products;
    }

    pub fn record_delta_events(&mut self, layer: usize, events: u64) {
        self.ensure(layer);
        self.delta_events[layer] += events;
    }

    pub fn sums(&self, layer: usize, kind: GradKind) -> u64 {
        self.tallies.get(layer).map_or(0, |t| t[kind.index()].0)
    }

    pub fn products(&self, layer: usize, kind: GradKind) -> u64 {
        self.tallies.get(layer).map_or(0, |t| t[kind.index()].1)
    }

    pub fn delta_events(&self, layer: usize) -> u64 {
        self.delta_events.get(layer).copied().unwrap_or(0)
    }

    pub fn layer_sums(&self, layer: usize) -> u64 {
        (0..GradKind::COUNT)
            .map(|k| self.tallies.get(layer).map_or(0, |t| t[k].0))
            .sum()
    }

    pub fn layer_products(&self, layer: usize) -> u64 {
        (0..GradKind::COUNT)
            .map(|k| self.tallies.get(layer).map_or(0, |t| t[k].1))
            .sum()
    }

    pub fn layers(&self) -> usize {
        self.tallies.len()
    }

    pub fn total_products(&self) -> u64 {
        (0..self.layers()).map(|l| self.layer_products(l)).sum()
    }

    pub fn total_sums(&self) -> u64 {
        (0..self.layers()).map(|l| self.layer_sums(l)).sum()
    }

    /// Fold another counter into this one (deterministic merge for
    /// per-thread counters).
    pub fn merge(&mut self, other: &OpCounter) {
        self.ensure(other.tallies.len().saturating_sub(1));
        for (layer, tally) in other.tallies.iter().enumerate() {
            for k in 0..GradKind::COUNT {
                self.tallies[layer][k].0 += tally[k].0;
                self.tallies[layer][k].1 += tally[k].1;
            }
            self.delta_events[layer] += other.delta_events[layer];
        }
    }

    pub fn reset(&mut self) {
        self.tallies.clear();
        self.delta_events.clear();
    }
}

/// Bulk-increment helper usable with an optional counter reference.
#[inline]
pub fn count(
    counter: &mut Option<&mut OpCounter>,
    layer: usize,
    kind: GradKind,
    sums: u64,
    products: u64,
) {
    if let Some(c) = counter.as_deref_mut() {
        c.record(layer, kind, sums, products);
    }
}

#[inline]
pub fn count_delta_events(counter: &mut Option<&mut OpCounter>, layer: usize, events: u64) {
    if let Some(c) = counter.as_deref_mut() {
        c.record_delta_events(layer, events);
    }
}

/// Upper bound on energy saved by skipping inactive entries: 100 - activity%.
pub fn energy_bound(activity_pct: f64) -> Result<f64, BenchError> {
    if !(0.0..=100.0).contains(&activity_pct) {
        return Err(BenchError::ActivityOutOfRange(activity_pct));
    }
    Ok(100.0 - activity_pct)
}

/// Memory saved metric: 100 * (dense - sparse) / dense.
pub fn memory_saved_pct(dense_bytes: u64, sparse_bytes: u64) -> f64 {
    if dense_bytes == 0 {
        return 0.0;
    }
    100.0 * (dense_bytes as f64 - sparse_bytes as f64) / dense_bytes as f64
}


/// Median and interquartile range over timing repetitions, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub median_ms: f64,
    pub iqr_ms: f64,
}

fn timing_stats(mut samples: Vec<f64>) -> TimingStats {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| -> f64 {
        let pos = f * (samples.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        samples[lo] * (1.0 - w) + samples[hi] * w
    };
    TimingStats {
        median_ms: q(0.5),
        iqr_ms: q(0.75) - q(0.25),
    }
}

/// Wall-clock timings of one hidden layer's forward and backward kernels.
#[derive(Debug, Clone, Copy)]
pub struct LayerTimings {
    pub fwd: TimingStats,
    pub bwd_dense: TimingStats,
    pub bwd_sparse: TimingStats,
}

/// Time one hidden layer's forward pass, dense backward kernels
/// (untruncated window, the standard baseline) and event-driven backward
/// kernels, over `reps` repetitions after `warmup` excluded ones.
///
/// Inputs (epsilon, traces, active sets) come from one real pipeline run;
/// only the layer's kernels are inside the timed region. Scheduling work
/// (active sets, event lists) is charged to the sparse side.
pub fn timing_harness<F: Scalar>(
    net: &Network<F>,
    pass: &ForwardPass<F>,
    lg: &LossGrads<F>,
    cfg: &NetConfig,
    layer: usize,
    reps: usize,
    warmup: usize,
) -> Result<LayerTimings, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoReps);
    }
    let hidden = net.layers.len() - 1;
    // Layer 0 reads the raw input raster, which the harness does not carry.
    // A second hidden layer is the interesting one anyway: it computes both
    // the weight gradient and the spike gradient.
    if hidden == 0 || layer == 0 || layer >= hidden {
        return Err(BenchError::NoHiddenLayer);
    }

    // Recover this layer's dense epsilon from the reference pass.
    let dense_out = dense_backward(net, pass, lg, cfg, Window::Dense, DeltaMode::Chained, None)?;
    let sparse_out = sparse_backward(net, pass, lg, cfg, None)?;
    let eps_dense = &dense_out.eps[layer];
    let eps_sparse = &sparse_out.eps[layer];
    let record = &pass.layers[layer];
    let layer_input = &pass.layers[layer - 1].spikes;
    let params = SurrogateParams::new(F::of_f64(cfg.beta), cfg.v_th_as::<F>(), cfg.b_th_as::<F>());
    let dense_gate = Gate::new(params, Window::Dense);
    let alpha = F::of_f64(cfg.alpha_for_layer(layer));

    let mut fwd = Vec::with_capacity(reps);
    let mut bwd_dense = Vec::with_capacity(reps);
    let mut bwd_sparse = Vec::with_capacity(reps);
    for rep in 0..warmup.max(1) + reps {
        let keep = rep >= warmup.max(1);

        let t0 = Instant::now();
        let fwd_rec = layer_forward(layer_input, &net.layers[layer], cfg, layer, 1)?;
        if keep {
            fwd.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        std::hint::black_box(&fwd_rec);

        // Dense backward of this layer: weight grad + delta + spike grad.
        let t0 = Instant::now();
        let gw = dense_weight_grad(
            eps_dense,
            &record.membranes,
            &record.trace,
            &dense_gate,
            layer,
            None,
        );
        let delta = delta_chained(
            eps_dense,
            &record.membranes,
            alpha,
            &dense_gate,
            &NeededTimes::All,
            layer,
            None,
        );
        let eps_prev = dense_spike_grad(&delta, &net.layers[layer].weights, layer, None);
        if keep {
            bwd_dense.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        std::hint::black_box((&gw, &eps_prev));

        // Event-driven backward of this layer, including schedule building.
        let t0 = Instant::now();
        let sched = build_schedule(&sparse_out.active[layer - 1], &sparse_out.active[layer]);
        let gw = sparse_weight_grad(
            eps_sparse,
            &record.membranes,
            &sparse_out.active[layer],
            &record.trace,
            &params,
            layer,
            None,
        );
        let delta = sparse_delta(
            eps_sparse,
            &record.membranes,
            &sparse_out.active[layer],
            &sched,
            &params,
            alpha,
            layer,
            None,
        );
        let reg = &lg.reg_eps[layer - 1];
        let inv_b = F::one() / F::of_f64(record.membranes.batch() as f64);
        let eps_prev = sparse_spike_grad(
            &delta,
            &net.layers[layer].weights,
            &sparse_out.active[layer - 1],
            reg,
            inv_b,
            layer,
            None,
        )?;
        if keep {
            bwd_sparse.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        std::hint::black_box((&gw, &eps_prev));
    }

    Ok(LayerTimings {
        fwd: timing_stats(fwd),
        bwd_dense: timing_stats(bwd_dense),
        bwd_sparse: timing_stats(bwd_sparse),
    })
}

/// One CSV row of a benchmark report: one layer of one run.
#[derive(Debug, Clone)]
pub struct LayerBench {
    pub layer: usize,
    /// Postsynaptic width of this layer.
    pub n: usize,
    pub n_in: usize,
    pub activity_pct: f64,
    pub active_count: u64,
    pub dense_sums: u64,
    pub dense_prods: u64,
    pub sparse_sums: u64,
    pub sparse_prods: u64,
    /// dense_prods / sparse_prods.
    pub op_reduction: f64,
    pub fwd_ms: f64,
    pub bwd_dense_ms: f64,
    pub bwd_sparse_ms: f64,
    pub mem_dense_bytes: u64,
    pub mem_sparse_bytes: u64,
    pub mem_saved_pct: f64,
    pub energy_bound_pct: f64,
}

/// Per-run benchmark report, one row per hidden layer.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub run_id: String,
    pub dataset: String,
    pub batch: usize,
    pub steps: usize,
    pub b_th: f64,
    pub rows: Vec<LayerBench>,
}

/// Backward-state bytes of one hidden layer: dense epsilon/delta buffers
/// versus the sparse structures (coordinates, aligned values, delta block,
/// schedule lists). This accounts backward-pass state only.
pub fn layer_memory<F: Scalar>(
    sparse_out: &SparseBackward<F>,
    layer: usize,
    batch: usize,
    steps: usize,
    width: usize,
) -> (u64, u64) {
    let dense_eps = (batch * steps * width * F::BYTES) as u64;
    let needs_delta = layer > 0;
    let dense = dense_eps + if needs_delta { dense_eps } else { 0 };

    let mut sparse = sparse_out.active[layer].storage_bytes() as u64
        + sparse_out.eps[layer].storage_bytes() as u64;
    if let Some(d) = &sparse_out.delta[layer] {
        sparse += d.storage_bytes() as u64;
    }
    if let Some(s) = &sparse_out.schedules[layer] {
        sparse += s.storage_bytes() as u64;
    }
    (dense, sparse)
}

/// Run both backward passes with counters and timings over one batch and
/// assemble the per-layer report.
pub fn bench_network<F: Scalar>(
    net: &Network<F>,
    input: &SpikeRaster,
    labels: &[usize],
    cfg: &NetConfig,
    loss_cfg: &LossConfig,
    run_id: &str,
    dataset: &str,
    reps: usize,
) -> Result<BenchReport, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoReps);
    }
    let pass = network_forward(input, net, cfg, 1)?;
    let (_, _, lg) = loss_and_grads(&pass, labels, loss_cfg)?;

    let mut dense_counter = OpCounter::new();
    let _ = dense_backward(
        net,
        &pass,
        &lg,
        cfg,
        Window::Dense,
        DeltaMode::Chained,
        Some(&mut dense_counter),
    )?;
    let mut sparse_counter = OpCounter::new();
    let sparse_out = sparse_backward(net, &pass, &lg, cfg, Some(&mut sparse_counter))?;

    let hidden = net.layers.len() - 1;
    let batch = input.batch();
    let steps = input.steps();
    let mut rows = Vec::with_capacity(hidden);
    for l in 0..hidden {
        let width = cfg.layer_sizes[l + 1];
        let active_count = sparse_out.active[l].len() as u64;
        let activity_pct =
            crate::active::activity_percentage(active_count as usize, batch, steps, width)
                .unwrap_or(0.0);
        let timings = if l >= 1 {
            Some(timing_harness(net, &pass, &lg, cfg, l, reps, 1)?)
        } else {
            None
        };
        let (mem_dense, mem_sparse) = layer_memory(&sparse_out, l, batch, steps, width);
        let dense_prods = dense_counter.layer_products(l);
        let sparse_prods = sparse_counter.layer_products(l);
        rows.push(LayerBench {
            layer: l,
            n: width,
            n_in: cfg.layer_sizes[l],
            activity_pct,
            active_count,
            dense_sums: dense_counter.layer_sums(l),
            dense_prods,
            sparse_sums: sparse_counter.layer_sums(l),
            sparse_prods,
            op_reduction: dense_prods as f64 / sparse_prods.max(1) as f64,
            fwd_ms: timings.map_or(0.0, |t| t.fwd.median_ms),
            bwd_dense_ms: timings.map_or(0.0, |t| t.bwd_dense.median_ms),
            bwd_sparse_ms: timings.map_or(0.0, |t| t.bwd_sparse.median_ms),
            mem_dense_bytes: mem_dense,
            mem_sparse_bytes: mem_sparse,
            mem_saved_pct: memory_saved_pct(mem_dense, mem_sparse),
            energy_bound_pct: energy_bound(activity_pct.clamp(0.0, 100.0))?,
        });
    }
    Ok(BenchReport {
        run_id: run_id.to_string(),
        dataset: dataset.to_string(),
        batch,
        steps,
        b_th: cfg.b_th,
        rows,
    })
}

/// CSV schema v1. The first twenty columns are fixed; `active_count` and
/// `n_in` are appended so every derived column can be recomputed from raw
/// counts in the file itself.
pub const CSV_HEADER: &str = "run_id,dataset,layer,N,B,T,B_th,activity_pct,dense_sums,dense_prods,sparse_sums,sparse_prods,op_reduction,fwd_ms,bwd_dense_ms,bwd_sparse_ms,mem_dense_bytes,mem_sparse_bytes,mem_saved_pct,energy_bound_pct,active_count,n_in";

impl BenchReport {
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{:.12},{},{},{},{},{:.12},{:.6},{:.6},{:.6},{},{},{:.12},{:.12},{},{}",
                    self.run_id,
                    self.dataset,
                    r.layer,
                    r.n,
                    self.batch,
                    self.steps,
                    self.b_th,
                    r.activity_pct,
                    r.dense_sums,
                    r.dense_prods,
                    r.sparse_sums,
                    r.sparse_prods,
                    r.op_reduction,
                    r.fwd_ms,
                    r.bwd_dense_ms,
                    r.bwd_sparse_ms,
                    r.mem_dense_bytes,
                    r.mem_sparse_bytes,
                    r.mem_saved_pct,
                    r.energy_bound_pct,
                    r.active_count,
                    r.n_in,
                )
            })
            .collect()
    }

    /// Append rows to a CSV file, writing the header when the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<(), BenchError> {
        let new_file = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if new_file {
            writeln!(f, "{CSV_HEADER}")?;
        }
        for row in self.csv_rows() {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Independent re-derivation pass over a report CSV: every derived column
/// must recompute from the raw columns to within 1e-9.
pub fn verify_report_csv(path: &Path) -> Result<usize, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("read: {e}")])?;
    let mut problems = Vec::new();
    let mut checked = 0;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        problems.push(format!("unexpected header: {header}"));
        return Err(problems);
    }
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != CSV_HEADER.split(',').count() {
            problems.push(format!("row {k}: wrong column count"));
            continue;
        }
        let f = |i: usize| cols[i].parse::<f64>().unwrap_or(f64::NAN);
        let (n, b, t) = (f(3), f(4), f(5));
        let activity = f(7);
        let (dense_prods, sparse_prods) = (f(9), f(11));
        let op_reduction = f(12);
        let (mem_dense, mem_sparse) = (f(16), f(17));
        let (mem_saved, energy) = (f(18), f(19));
        let active_count = f(20);

        let activity_expect = 100.0 * active_count / (b * t * n);
        if (activity - activity_expect).abs() > 1e-9 {
            problems.push(format!("row {k}: activity {activity} vs {activity_expect}"));
        }
        let op_expect = dense_prods / sparse_prods.max(1.0);
        if (op_reduction - op_expect).abs() > 1e-9 * op_expect.abs().max(1.0) {
            problems.push(format!(
                "row {k}: op_reduction {op_reduction} vs {op_expect}"
            ));
        }
        let mem_expect = 100.0 * (mem_dense - mem_sparse) / mem_dense.max(1.0);
        if (mem_saved - mem_expect).abs() > 1e-9 {
            problems.push(format!("row {k}: mem_saved {mem_saved} vs {mem_expect}"));
        }
        let energy_expect = 100.0 - activity;
        if (energy - energy_expect).abs() > 1e-9 {
            problems.push(format!("row {k}: energy {energy} vs {energy_expect}"));
        }
        checked += 1;
    }
    if problems.is_empty() {
        Ok(checked)
    } else {
        Err(problems)
    }
}

//! Event-driven backward pass. Gradients are computed only at active
//! entries: the weight gradient accumulates one outer product per active
//! postsynaptic entry, the spike gradient is evaluated only at active
//! presynaptic entries, and the delta accumulator advances by a reverse
//! merged-event sweep that jumps over inactive gaps with a single table
//! power instead of stepping every t.
//!
//! With the window-truncated surrogate this is an evaluation strategy, not
//! an approximation: outputs equal the dense reference exactly.

use crate::active::{build_active_set, ActiveSet};
use crate::bench::{count, count_delta_events, GradKind, OpCounter};
use crate::config::NetConfig;
use crate::forward::{ForwardPass, InputTrace, LayerRecord, MembraneRecord, Network};
use crate::grad_dense::{GradError, GradientBundle};
use crate::loss::{readout_eps_at, readout_weight_grad, LossGrads};
use crate::scalar::Scalar;
use crate::surrogate::{g, SurrogateParams};
use crate::tensor::{decay_powers, Matrix};

/// Event times driving the delta sweep of one layer pair.
#[derive(Debug, Clone)]
pub struct EventSchedule {
    /// Ascending contribution times per (b, j) of the postsynaptic layer,
    /// indexed `b * n_post + j`: the steps where the gated surrogate is
    /// nonzero.
    t_post: Vec<Vec<u32>>,
    /// Ascending needed times per batch sample: the union of the
    /// presynaptic layer's active times, where delta must be recorded.
    t_need: Vec<Vec<u32>>,
    n_post: usize,
    batch: usize,
    steps: usize,
}

impl EventSchedule {
    pub fn contribution_times(&self, b: usize, j: usize) -> &[u32] {
        &self.t_post[b * self.n_post + j]
    }

    pub fn needed_times(&self, b: usize) -> &[u32] {
        &self.t_need[b]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Approximate bytes held by the schedule lists.
    pub fn storage_bytes(&self) -> usize {
        let post: usize = self.t_post.iter().map(|v| v.len() * 4).sum();
        let need: usize = self.t_need.iter().map(|v| v.len() * 4).sum();
        post + need
    }
}

/// Collect the sweep schedule from the two active sets of one layer pair.
/// Both sets must come from the same forward pass.
pub fn build_schedule(active_pre: &ActiveSet, active_post: &ActiveSet) -> EventSchedule {
    let (batch, steps, n_post) = active_post.dims();
    let mut t_post = Vec::with_capacity(batch * n_post);
    for b in 0..batch {
        for j in 0..n_post {
            t_post.push(active_post.times_for(b, j).iter().map(|e| e.2).collect());
        }
    }
    let mut t_need = vec![Vec::new(); batch];
    let mut seen = vec![false; steps];
    let mut entries = active_pre.entries().iter().peekable();
    for (b, need) in t_need.iter_mut().enumerate() {
        seen.iter_mut().for_each(|s| *s = false);
        while let Some(&&(eb, _, t)) = entries.peek() {
            if eb as usize != b {
                break;
            }
            seen[t as usize] = true;
            entries.next();
        }
        need.extend((0..steps as u32).filter(|&t| seen[t as usize]));
    }
    EventSchedule {
        t_post,
        t_need,
        n_post,
        batch,
        steps,
    }
}

/// Epsilon values stored only at a layer's active coordinates, aligned
/// one-to-one with that layer's `ActiveSet` entry order.
#[derive(Debug, Clone)]
pub struct SparseEpsilon<F> {
    pub values: Vec<F>,
}

impl<F: Scalar> SparseEpsilon<F> {
    pub fn storage_bytes(&self) -> usize {
        self.values.len() * F::BYTES
    }
}

/// Delta values recorded only at needed times: for each batch sample, a
/// dense (needed-time, neuron) block.
#[derive(Debug, Clone)]
pub struct SparseDelta<F> {
    /// Start of each sample's block in `values`, len batch + 1.
    offsets: Vec<usize>,
    /// Ascending needed times per sample (copied from the schedule).
    needed: Vec<Vec<u32>>,
    values: Vec<F>,
    n_post: usize,
}

impl<F: Scalar> SparseDelta<F> {
    /// Delta row over postsynaptic neurons at a needed (b, t).
    pub fn row(&self, b: usize, t: usize) -> Result<&[F], GradError> {
        let idx = self.needed[b]
            .binary_search(&(t as u32))
            .map_err(|_| GradError::MissingDelta { b, t })?;
        let start = self.offsets[b] + idx * self.n_post;
        Ok(&self.values[start..start + self.n_post])
    }

    pub fn at(&self, b: usize, t: usize, j: usize) -> Result<F, GradError> {
        Ok(self.row(b, t)?[j])
    }

    pub fn storage_bytes(&self) -> usize {
        self.values.len() * F::BYTES
    }
}

/// Reverse merged-event sweep computing delta at every needed time.
///
/// Per (b, j) the sweep walks the merged descending list of contribution
/// positions (one below each contribution time) and needed times; between
/// events the running value is attenuated by one precomputed power of
/// alpha, at contribution positions the gated epsilon term is added, and at
/// needed times the value is written out. The walk stops below the smallest
/// needed time. The number of update events per (b, j) is asserted against
/// the |t_post| + |t_need| bound.
pub fn sparse_delta<F: Scalar>(
    eps_post: &SparseEpsilon<F>,
    v_post: &MembraneRecord<F>,
    active_post: &ActiveSet,
    sched: &EventSchedule,
    params: &SurrogateParams<F>,
    alpha: F,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> SparseDelta<F> {
    let (batch, steps, n_post) = active_post.dims();
    debug_assert_eq!(
        eps_post.values.len(),
        active_post.len(),
        "eps/active alignment"
    );
    let powers = decay_powers(alpha, steps.max(1));

    let mut offsets = Vec::with_capacity(batch + 1);
    offsets.push(0usize);
    for b in 0..batch {
        offsets.push(offsets[b] + sched.needed_times(b).len() * n_post);
    }
    let mut values = vec![F::zero(); offsets[batch]];
    let mut sums: u64 = 0;
    let mut products: u64 = 0;
    let mut total_events: u64 = 0;

    for b in 0..batch {
        let needed = sched.needed_times(b);
        let Some(&min_needed) = needed.first() else {
            continue;
        };
        for j in 0..n_post {
            let run = active_post.times_for(b, j);
            let eps_base = active_post.run_start(b, j);
            let contribs = sched.contribution_times(b, j);
            debug_assert_eq!(contribs.len(), run.len());

            let mut running = F::zero();
            let mut anchor = steps - 1;
            let mut ci = contribs.len();
            let mut ni = needed.len();
            let mut events: u64 = 0;

            // Contributions at time k land on position k - 1; k = 0 has no
            // position and is skipped.
            loop {
                if ni == 0 {
                    break;
                }
                let cpos = if ci == 0 {
                    None
                } else {
                    let k = contribs[ci - 1];
                    if k == 0 {
                        // Ascending times: if the largest remaining is 0,
                        // every remaining contribution lands before t = 0.
                        ci = 0;
                        None
                    } else {
                        Some((k - 1) as usize)
                    }
                };
                let npos = if ni > 0 {
                    Some(needed[ni - 1] as usize)
                } else {
                    None
                };
                let Some(pos) = cpos.into_iter().chain(npos).max() else {
                    break;
                };
                if pos < min_needed as usize {
                    break;
                }

                let attenuated = powers[anchor - pos] * running;
                products += 1;
                let mut value = attenuated;
                if cpos == Some(pos) {
                    let k = pos + 1;
                    let eps_idx = eps_base + (ci - 1);
                    debug_assert_eq!(contribs[ci - 1] as usize, k);
                    let term = eps_post.values[eps_idx] * g(v_post.at(b, k, j), params);
                    value = term + attenuated;
                    sums += 1;
                    products += 2;
                    ci -= 1;
                }
                if npos == Some(pos) {
                    let need_idx = ni - 1;
                    values[offsets[b] + need_idx * n_post + j] = value;
                    ni -= 1;
                }
                running = value;
                anchor = pos;
                events += 1;
            }

            assert!(
                events <= (contribs.len() + needed.len()) as u64,
                "delta sweep exceeded the |t_post| + |t_need| work bound"
            );
            total_events += events;
        }
    }
    count(&mut counter, layer, GradKind::Delta, sums, products);
    count_delta_events(&mut counter, layer, total_events);

    SparseDelta {
        offsets,
        needed: sched.t_need.clone(),
        values,
        n_post,
    }
}

/// Scatter-accumulated weight gradient: one outer-product row per active
/// postsynaptic entry; inactive entries contribute exactly zero.
///
/// Accumulation per weight cell runs in ascending (b, t) order for each j,
/// matching the dense reference order.
pub fn sparse_weight_grad<F: Scalar>(
    eps_post: &SparseEpsilon<F>,
    v_post: &MembraneRecord<F>,
    active_post: &ActiveSet,
    trace_pre: &InputTrace<F>,
    params: &SurrogateParams<F>,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> Matrix<F> {
    let (_, _, n_out) = active_post.dims();
    let n_in = trace_pre.neurons();
    // Accumulate transposed so each active entry updates one contiguous row.
    let mut grad_t = Matrix::zeros(n_out, n_in);
    for (idx, &(b, j, t)) in active_post.entries().iter().enumerate() {
        let (b, j, t) = (b as usize, j as usize, t as usize);
        let coef = eps_post.values[idx] * g(v_post.at(b, t, j), params);
        let trow = trace_pre.row(b, t);
        let grow = grad_t.row_mut(j);
        for (gv, &tr) in grow.iter_mut().zip(trow.iter()) {
            *gv += tr * coef;
        }
    }
    let ops = (active_post.len() * n_in) as u64;
    count(&mut counter, layer, GradKind::WeightGrad, ops, ops);
    Matrix::from_fn(n_in, n_out, |i, j| grad_t.at(j, i))
}

/// Spike gradient at active presynaptic entries only:
/// eps_pre[b, i, t] = sum_j W[i, j] * delta[b, t, j] + reg[b, i]/B.
pub fn sparse_spike_grad<F: Scalar>(
    delta: &SparseDelta<F>,
    weights: &Matrix<F>,
    active_pre: &ActiveSet,
    reg: &Matrix<F>,
    inv_b: F,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> Result<SparseEpsilon<F>, GradError> {
    let n_out = weights.cols();
    let mut values = Vec::with_capacity(active_pre.len());
    for &(b, i, t) in active_pre.entries() {
        let (b, i, t) = (b as usize, i as usize, t as usize);
        let drow = delta.row(b, t)?;
        let wrow = weights.row(i);
        let mut acc = F::zero();
        for j in 0..n_out {
            acc += wrow[j] * drow[j];
        }
        values.push(acc + reg.row(b)[i] * inv_b);
    }
    let ops = (active_pre.len() * n_out) as u64;
    count(&mut counter, layer, GradKind::SpikeGrad, ops, ops);
    Ok(SparseEpsilon { values })
}

/// Epsilon of the last hidden layer at its active coordinates: readout
/// contribution plus the regulariser term.
fn readout_eps_sparse<F: Scalar>(
    lg: &LossGrads<F>,
    w_readout: &Matrix<F>,
    active: &ActiveSet,
    powers: &[F],
    reg: &Matrix<F>,
    inv_b: F,
) -> SparseEpsilon<F> {
    let values = active
        .entries()
        .iter()
        .map(|&(b, i, t)| {
            let (b, i, t) = (b as usize, i as usize, t as usize);
            let base = readout_eps_at(
                &lg.grad_logits,
                w_readout,
                &lg.argmax_times,
                powers,
                b,
                i,
                t,
            );
            base + reg.row(b)[i] * inv_b
        })
        .collect();
    SparseEpsilon { values }
}

/// Full sparse backward output, including the sparse structures for memory
/// accounting and inspection.
#[derive(Debug)]
pub struct SparseBackward<F> {
    pub bundles: Vec<GradientBundle<F>>,
    /// Active set per hidden layer.
    pub active: Vec<ActiveSet>,
    /// Sparse epsilon per hidden layer, aligned with `active`.
    pub eps: Vec<SparseEpsilon<F>>,
    /// Schedule and delta per hidden layer that needed one.
    pub schedules: Vec<Option<EventSchedule>>,
    pub delta: Vec<Option<SparseDelta<F>>>,
}

/// Chain the event-driven backward pass across all layers. Mirrors
/// `dense_backward` layer for layer, but every kernel touches only active
/// entries.
pub fn sparse_backward<F: Scalar>(
    net: &Network<F>,
    pass: &ForwardPass<F>,
    lg: &LossGrads<F>,
    cfg: &NetConfig,
    mut counter: Option<&mut OpCounter>,
) -> Result<SparseBackward<F>, GradError> {
    let layers = net.layers.len();
    if pass.layers.len() != layers {
        return Err(GradError::ShapeMismatch("forward pass vs network depth"));
    }
    let hidden = layers - 1;
    let params = SurrogateParams::new(F::of_f64(cfg.beta), cfg.v_th_as::<F>(), cfg.b_th_as::<F>());
    let batch = pass.layers[0].membranes.batch();
    let steps = pass.layers[0].membranes.steps();
    let inv_b = F::one() / F::of_f64(batch as f64);

    let active: Vec<ActiveSet> = (0..hidden)
        .map(|l| build_active_set(&pass.layers[l].membranes, params.v_th, params.b_th))
        .collect();

    let mut bundles: Vec<Option<GradientBundle<F>>> = (0..layers).map(|_| None).collect();
    let mut eps_records: Vec<Option<SparseEpsilon<F>>> = (0..hidden).map(|_| None).collect();
    let mut schedules: Vec<Option<EventSchedule>> = (0..hidden).map(|_| None).collect();
    let mut deltas: Vec<Option<SparseDelta<F>>> = (0..hidden).map(|_| None).collect();

    // Readout: shared weight-gradient formula, epsilon gathered at the last
    // hidden layer's active coordinates only.
    let grad_w_readout = readout_weight_grad(
        &lg.grad_logits,
        &pass.layers[hidden].trace,
        &lg.argmax_times,
    );
    let readout_powers = decay_powers(F::of_f64(cfg.alpha_for_layer(hidden)), steps);
    let mut eps_current = if hidden > 0 {
        let eps = readout_eps_sparse(
            lg,
            &net.layers[hidden].weights,
            &active[hidden - 1],
            &readout_powers,
            &lg.reg_eps[hidden - 1],
            inv_b,
        );
        bundles[hidden] = Some(GradientBundle {
            grad_w: grad_w_readout,
            grad_s: Some(eps.values.clone()),
        });
        eps
    } else {
        bundles[hidden] = Some(GradientBundle {
            grad_w: grad_w_readout,
            grad_s: None,
        });
        SparseEpsilon { values: Vec::new() }
    };

    for l in (0..hidden).rev() {
        let record = &pass.layers[l];
        let alpha = F::of_f64(cfg.alpha_for_layer(l));
        let grad_w = sparse_weight_grad(
            &eps_current,
            &record.membranes,
            &active[l],
            &record.trace,
            &params,
            l,
            counter.as_deref_mut(),
        );

        if l > 0 {
            let sched = build_schedule(&active[l - 1], &active[l]);
            let delta = sparse_delta(
                &eps_current,
                &record.membranes,
                &active[l],
                &sched,
                &params,
                alpha,
                l,
                counter.as_deref_mut(),
            );
            let eps_prev = sparse_spike_grad(
                &delta,
                &net.layers[l].weights,
                &active[l - 1],
                &lg.reg_eps[l - 1],
                inv_b,
                l,
                counter.as_deref_mut(),
            )?;
            bundles[l] = Some(GradientBundle {
                grad_w,
                grad_s: Some(eps_prev.values.clone()),
            });
            schedules[l] = Some(sched);
            deltas[l] = Some(delta);
            eps_records[l] = Some(std::mem::replace(&mut eps_current, eps_prev));
        } else {
            bundles[l] = Some(GradientBundle {
                grad_w,
                grad_s: None,
            });
            eps_records[l] = Some(std::mem::replace(
                &mut eps_current,
                SparseEpsilon { values: Vec::new() },
            ));
        }
    }

    Ok(SparseBackward {
        bundles: bundles
            .into_iter()
            .map(|b| b.expect("bundle filled"))
            .collect(),
        active,
        eps: eps_records
            .into_iter()
            .map(|e| e.expect("eps filled"))
            .collect(),
        schedules,
        delta: deltas,
    })
}


/// Batch-chunked parallel variant: the batch splits across worker threads,
/// each runs the sequential pass on its chunk, and per-layer weight
/// gradients are summed in ascending chunk order (deterministic for a given
/// thread count). Relative to the sequential order this regroups the
/// weight-gradient accumulation (about 1e-5 relative in f32) and reroutes
/// the regulariser scaling (a couple of ulps on spike-gradient values);
/// the sequential mode remains the bit-exact reference.
pub fn sparse_backward_threaded<F: Scalar>(
    net: &Network<F>,
    pass: &ForwardPass<F>,
    lg: &LossGrads<F>,
    cfg: &NetConfig,
    threads: usize,
    counter: Option<&mut OpCounter>,
) -> Result<Vec<GradientBundle<F>>, GradError> {
    let batch = pass.layers[0].membranes.batch();
    let workers = threads.max(1).min(batch);
    if workers == 1 {
        let out = sparse_backward(net, pass, lg, cfg, counter)?;
        return Ok(out.bundles);
    }

    // Per-chunk forward/loss views. The 1/B normalisation already sits in
    // grad_logits and is applied to reg_eps against the *full* batch size,
    // so chunk gradients sum to the full-batch gradient.
    let chunk = batch.div_ceil(workers);
    let classes = lg.grad_logits.cols();
    let full_inv_b = F::one() / F::of_f64(batch as f64);
    let mut jobs = Vec::new();
    for w in 0..workers {
        let lo = w * chunk;
        let hi = ((w + 1) * chunk).min(batch);
        if lo >= hi {
            break;
        }
        let layers: Vec<LayerRecord<F>> = pass
            .layers
            .iter()
            .map(|r| LayerRecord {
                spikes: r.spikes.slice_batch(lo, hi),
                membranes: r.membranes.slice_batch(lo, hi),
                trace: r.trace.slice_batch(lo, hi),
            })
            .collect();
        let grad_logits = Matrix::from_fn(hi - lo, classes, |b, c| lg.grad_logits.at(lo + b, c));
        let argmax_times = lg.argmax_times[lo * classes..hi * classes].to_vec();
        // Pre-scale the per-sample regulariser gradient so the chunk pass,
        // which divides by its own chunk size, applies the full-batch 1/B.
        let chunk_b = F::of_f64((hi - lo) as f64);
        let reg_eps: Vec<Matrix<F>> = lg
            .reg_eps
            .iter()
            .map(|m| {
                Matrix::from_fn(hi - lo, m.cols(), |b, i| {
                    m.at(lo + b, i) * full_inv_b * chunk_b
                })
            })
            .collect();
        jobs.push((
            ForwardPass { layers },
            LossGrads {
                grad_logits,
                argmax_times,
                reg_eps,
            },
        ));
    }

    let results: Vec<Result<(SparseBackward<F>, OpCounter), GradError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(chunk_pass, chunk_lg)| {
                    scope.spawn(move || {
                        let mut local = OpCounter::new();
                        sparse_backward(net, chunk_pass, chunk_lg, cfg, Some(&mut local))
                            .map(|out| (out, local))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("backward worker panicked"))
                .collect()
        });

    let mut merged: Option<Vec<GradientBundle<F>>> = None;
    let mut merged_counter = OpCounter::new();
    for result in results {
        let (out, local) = result?;
        merged_counter.merge(&local);
        match &mut merged {
            None => merged = Some(out.bundles),
            Some(acc) => {
                for (dst, src) in acc.iter_mut().zip(out.bundles) {
                    let d = dst.grad_w.as_mut_slice();
                    for (k, v) in src.grad_w.as_slice().iter().enumerate() {
                        d[k] += *v;
                    }
                    match (&mut dst.grad_s, src.grad_s) {
                        (Some(dv), Some(sv)) => dv.extend(sv),
                        (None, None) => {}
                        _ => return Err(GradError::ShapeMismatch("chunked grad_s presence")),
                    }
                }
            }
        }
    }
    if let Some(c) = counter {
        c.merge(&merged_counter);
    }
    Ok(merged.expect("at least one chunk"))
}

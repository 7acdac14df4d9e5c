//! Reference backward pass over dense tensors. Every kernel here evaluates
//! the gradient equations with plain unfused loops in a fixed reduction
//! order (ascending batch, then time), so the event-driven path can be
//! checked against it for exact equality. Performance is explicitly not a
//! goal of this module.

use thiserror::Error;

use crate::active::{build_active_set, ActiveSet};
use crate::bench::{count, GradKind, OpCounter};
use crate::config::NetConfig;
use crate::forward::{ForwardPass, InputTrace, MembraneRecord, Network};
use crate::loss::{readout_backward, LossGrads};
use crate::scalar::Scalar;
use crate::surrogate::{Gate, SurrogateParams, Window};
use crate::tensor::{decay_powers, Grid3, Matrix};

/// Loss gradient w.r.t. a layer's output spikes, dense over (B, T, N).
pub type EpsilonRecord<F> = Grid3<F>;
/// Future-discounted gradient accumulator per (B, T, N) (the inner sum of
/// the spike-gradient equation).
pub type DeltaRecord<F> = Grid3<F>;

#[derive(Debug, Error, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("delta value missing at needed coordinate (b={b}, t={t})")]
    MissingDelta { b: usize, t: usize },
    #[error("loss-side error: {0}")]
    Loss(#[from] crate::loss::LossError),
}

/// How the dense path evaluates the delta accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    /// Literal O(T^2) evaluation of the defining sum; oracle only.
    Naive,
    /// Reverse event-anchored recurrence, arithmetic-identical to the
    /// event-driven path; the default everywhere outside oracle checks.
    Chained,
}

/// Per weight-matrix gradient output. `grad_s` holds the gradient of the
/// loss w.r.t. this layer's *input* spikes, aligned one-to-one with the
/// presynaptic layer's active set; the first layer has none.
#[derive(Debug, Clone)]
pub struct GradientBundle<F> {
    pub grad_w: Matrix<F>,
    pub grad_s: Option<Vec<F>>,
}

/// Full dense backward output: bundles plus the dense intermediates, which
/// the oracle suites inspect directly.
#[derive(Debug)]
pub struct DenseBackward<F> {
    pub bundles: Vec<GradientBundle<F>>,
    /// Dense spike-gradient record per hidden layer (index = hidden layer).
    pub eps: Vec<EpsilonRecord<F>>,
    /// Delta record per hidden layer that needed one (layers > 0 when more
    /// than one hidden layer exists); `None` elsewhere.
    pub delta: Vec<Option<DeltaRecord<F>>>,
    /// Active set per hidden layer under the configured window.
    pub active: Vec<ActiveSet>,
}

/// delta[b, t, j] = sum_{k > t} eps[b, k, j] * gate(V[b, k, j]) * alpha^(k-t-1),
/// evaluated by the literal double loop over (t, k).
pub fn delta_naive<F: Scalar>(
    eps: &EpsilonRecord<F>,
    v: &MembraneRecord<F>,
    alpha: F,
    gate: &Gate<F>,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> DeltaRecord<F> {
    let (batch, steps, neurons) = eps.dims();
    assert_eq!(eps.dims(), v.dims(), "delta_naive shapes");
    let mut delta = Grid3::zeros(batch, steps, neurons);
    let mut sums: u64 = 0;
    let mut products: u64 = 0;
    for b in 0..batch {
        for j in 0..neurons {
            for t in 0..steps {
                let mut acc = F::zero();
                let mut pow = F::one();
                for k in t + 1..steps {
                    let term = eps.at(b, k, j) * gate.eval(v.at(b, k, j));
                    acc += term * pow;
                    pow *= alpha;
                    sums += 1;
                    products += 3;
                }
                *delta.at_mut(b, t, j) = acc;
            }
        }
    }
    count(&mut counter, layer, GradKind::Delta, sums, products);
    delta
}

/// Times at which a delta record must be exact, per batch sample.
#[derive(Debug, Clone)]
pub enum NeededTimes {
    /// Every step (dense window: the previous layer needs eps everywhere).
    All,
    /// Ascending, duplicate-free time lists per batch sample.
    PerBatch(Vec<Vec<u32>>),
}

impl NeededTimes {
    /// Union of active times over all neurons of the presynaptic layer.
    pub fn from_active_pre(active_pre: &ActiveSet) -> Self {
        let (batch, steps, _) = active_pre.dims();
        let mut seen = vec![false; steps];
        let mut lists = Vec::with_capacity(batch);
        let mut per_b: Vec<Vec<u32>> = vec![Vec::new(); batch];
        for &(b, _, t) in active_pre.entries() {
            per_b[b as usize].push(t);
        }
        for b in 0..batch {
            seen.iter_mut().for_each(|s| *s = false);
            for &t in &per_b[b] {
                seen[t as usize] = true;
            }
            lists.push((0..steps as u32).filter(|&t| seen[t as usize]).collect());
        }
        NeededTimes::PerBatch(lists)
    }

    fn for_sample(&self, b: usize) -> NeededIter<'_> {
        match self {
            NeededTimes::All => NeededIter::All,
            NeededTimes::PerBatch(lists) => NeededIter::List(&lists[b]),
        }
    }
}

enum NeededIter<'a> {
    All,
    List(&'a [u32]),
}

impl NeededIter<'_> {
    fn contains(&self, t: usize) -> bool {
        match self {
            NeededIter::All => true,
            NeededIter::List(list) => list.binary_search(&(t as u32)).is_ok(),
        }
    }
}

/// Reverse sweep evaluating delta with the event-anchored recurrence:
/// between anchors the running value is attenuated by one table power, at a
/// contribution step the gated epsilon term is added. Anchors are the
/// contribution positions plus every needed time, exactly the schedule the
/// event-driven path walks, so values at needed times agree bitwise with it.
/// Off-anchor entries are filled from the running value for completeness.
pub fn delta_chained<F: Scalar>(
    eps: &EpsilonRecord<F>,
    v: &MembraneRecord<F>,
    alpha: F,
    gate: &Gate<F>,
    needed: &NeededTimes,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> DeltaRecord<F> {
    let (batch, steps, neurons) = eps.dims();
    assert_eq!(eps.dims(), v.dims(), "delta_chained shapes");
    let powers = decay_powers(alpha, steps.max(1));
    let mut delta = Grid3::zeros(batch, steps, neurons);
    let mut sums: u64 = 0;
    let mut products: u64 = 0;

    for b in 0..batch {
        let need = needed.for_sample(b);
        for j in 0..neurons {
            // delta[T-1] is an empty sum.
            let mut running = F::zero();
            let mut anchor_pos = steps - 1;
            for t in (0..steps.saturating_sub(1)).rev() {
                let contributes = gate.passes(v.at(b, t + 1, j));
                let is_anchor = contributes || need.contains(t);
                let attenuated = powers[anchor_pos - t] * running;
                products += 1;
                let value = if contributes {
                    let term = eps.at(b, t + 1, j) * gate.eval(v.at(b, t + 1, j));
                    sums += 1;
                    products += 2;
                    term + attenuated
                } else {
                    attenuated
                };
                *delta.at_mut(b, t, j) = value;
                if is_anchor {
                    running = value;
                    anchor_pos = t;
                }
            }
        }
    }
    count(&mut counter, layer, GradKind::Delta, sums, products);
    delta
}

/// grad_w[i, j] = sum_b sum_t eps[b,t,j] * gate(V[b,t,j]) * trace[b,t,i].
///
/// The full dense work is always performed (and counted), including entries
/// where the gate is zero; that is the baseline being measured against.
pub fn dense_weight_grad<F: Scalar>(
    eps: &EpsilonRecord<F>,
    v_post: &MembraneRecord<F>,
    trace_pre: &InputTrace<F>,
    gate: &Gate<F>,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> Matrix<F> {
    let (batch, steps, n_out) = eps.dims();
    assert_eq!(v_post.dims(), eps.dims(), "dense_weight_grad eps/V");
    let (tb, ts, n_in) = trace_pre.dims();
    assert_eq!((tb, ts), (batch, steps), "dense_weight_grad trace shape");

    let mut grad = Matrix::zeros(n_in, n_out);
    let mut coef = vec![F::zero(); n_out];
    for b in 0..batch {
        for t in 0..steps {
            let erow = eps.row(b, t);
            let vrow = v_post.row(b, t);
            for j in 0..n_out {
                coef[j] = erow[j] * gate.eval(vrow[j]);
            }
            let trow = trace_pre.row(b, t);
            for i in 0..n_in {
                let tr = trow[i];
                let grow = grad.row_mut(i);
                for (g, &c) in grow.iter_mut().zip(coef.iter()) {
                    *g += tr * c;
                }
            }
        }
    }
    let ops = (batch * steps * n_in * n_out) as u64;
    count(&mut counter, layer, GradKind::WeightGrad, ops, ops);
    grad
}

/// eps_pre[b, t, i] = sum_j W[i, j] * delta[b, t, j] at every coordinate.
pub fn dense_spike_grad<F: Scalar>(
    delta: &DeltaRecord<F>,
    weights: &Matrix<F>,
    layer: usize,
    mut counter: Option<&mut OpCounter>,
) -> EpsilonRecord<F> {
    let (batch, steps, n_out) = delta.dims();
    assert_eq!(weights.cols(), n_out, "dense_spike_grad weight cols");
    let n_in = weights.rows();
    let mut eps = Grid3::zeros(batch, steps, n_in);
    for b in 0..batch {
        for t in 0..steps {
            let drow = delta.row(b, t);
            let erow = eps.row_mut(b, t);
            for i in 0..n_in {
                let wrow = weights.row(i);
                let mut acc = F::zero();
                for j in 0..n_out {
                    acc += wrow[j] * drow[j];
                }
                erow[i] = acc;
            }
        }
    }
    let ops = (batch * steps * n_in * n_out) as u64;
    count(&mut counter, layer, GradKind::SpikeGrad, ops, ops);
    eps
}

/// Add the per-(b, i) regulariser gradient, scaled by 1/B, to every time
/// step of a dense epsilon record.
fn add_reg_broadcast<F: Scalar>(eps: &mut EpsilonRecord<F>, reg: &Matrix<F>, inv_b: F) {
    let (batch, steps, neurons) = eps.dims();
    assert_eq!((reg.rows(), reg.cols()), (batch, neurons), "reg shape");
    for b in 0..batch {
        let rrow = reg.row(b);
        for t in 0..steps {
            let erow = eps.row_mut(b, t);
            for i in 0..neurons {
                erow[i] += rrow[i] * inv_b;
            }
        }
    }
}

/// Restrict a dense epsilon record to the coordinates of an active set, in
/// set order.
pub fn restrict_to_active<F: Scalar>(eps: &EpsilonRecord<F>, active: &ActiveSet) -> Vec<F> {
    active
        .entries()
        .iter()
        .map(|&(b, n, t)| eps.at(b as usize, t as usize, n as usize))
        .collect()
}

/// Chain the whole dense backward pass: readout gradient, then per hidden
/// layer the weight gradient and (except for the first layer) the spike
/// gradient for its inputs. The first layer only computes its weight
/// gradient.
pub fn dense_backward<F: Scalar>(
    net: &Network<F>,
    pass: &ForwardPass<F>,
    lg: &LossGrads<F>,
    cfg: &NetConfig,
    window: Window,
    delta_mode: DeltaMode,
    mut counter: Option<&mut OpCounter>,
) -> Result<DenseBackward<F>, GradError> {
    let layers = net.layers.len();
    if pass.layers.len() != layers {
        return Err(GradError::ShapeMismatch("forward pass vs network depth"));
    }
    let hidden = layers - 1;
    let params = SurrogateParams::new(F::of_f64(cfg.beta), cfg.v_th_as::<F>(), cfg.b_th_as::<F>());
    let gate = Gate::new(params, window);
    let batch = pass.layers[0].membranes.batch();
    let inv_b = F::one() / F::of_f64(batch as f64);

    // Active sets of the hidden layers under the configured window size.
    let active: Vec<ActiveSet> = (0..hidden)
        .map(|l| build_active_set(&pass.layers[l].membranes, params.v_th, params.b_th))
        .collect();

    let mut bundles: Vec<Option<GradientBundle<F>>> = (0..layers).map(|_| None).collect();
    let mut eps_records: Vec<Option<EpsilonRecord<F>>> = (0..hidden).map(|_| None).collect();
    let mut delta_records: Vec<Option<DeltaRecord<F>>> = (0..hidden).map(|_| None).collect();

    // Readout layer: loss gradient through the max-over-time membranes.
    let readout = readout_backward(
        &lg.grad_logits,
        &net.layers[hidden].weights,
        &pass.layers[hidden].trace,
        &lg.argmax_times,
        F::of_f64(cfg.alpha_for_layer(hidden)),
    )?;
    let mut eps_current = readout.eps;
    if hidden > 0 {
        add_reg_broadcast(&mut eps_current, &lg.reg_eps[hidden - 1], inv_b);
        bundles[hidden] = Some(GradientBundle {
            grad_w: readout.grad_w,
            grad_s: Some(restrict_to_active(&eps_current, &active[hidden - 1])),
        });
    } else {
        bundles[hidden] = Some(GradientBundle {
            grad_w: readout.grad_w,
            grad_s: None,
        });
    }

    // Hidden layers, deepest first. `eps_current` always holds the loss
    // gradient w.r.t. layer l's output spikes.
    for l in (0..hidden).rev() {
        let record = &pass.layers[l];
        let alpha = F::of_f64(cfg.alpha_for_layer(l));
        let grad_w = dense_weight_grad(
            &eps_current,
            &record.membranes,
            &record.trace,
            &gate,
            l,
            counter.as_deref_mut(),
        );

        if l > 0 {
            let needed = match window {
                Window::Dense => NeededTimes::All,
                Window::Truncated => NeededTimes::from_active_pre(&active[l - 1]),
            };
            let delta = match delta_mode {
                DeltaMode::Naive => delta_naive(
                    &eps_current,
                    &record.membranes,
                    alpha,
                    &gate,
                    l,
                    counter.as_deref_mut(),
                ),
                DeltaMode::Chained => delta_chained(
                    &eps_current,
                    &record.membranes,
                    alpha,
                    &gate,
                    &needed,
                    l,
                    counter.as_deref_mut(),
                ),
            };
            let mut eps_prev =
                dense_spike_grad(&delta, &net.layers[l].weights, l, counter.as_deref_mut());
            add_reg_broadcast(&mut eps_prev, &lg.reg_eps[l - 1], inv_b);
            bundles[l] = Some(GradientBundle {
                grad_w,
                grad_s: Some(restrict_to_active(&eps_prev, &active[l - 1])),
            });
            delta_records[l] = Some(delta);
            eps_records[l] = Some(std::mem::replace(&mut eps_current, eps_prev));
        } else {
            bundles[l] = Some(GradientBundle {
                grad_w,
                grad_s: None,
            });
            eps_records[l] = Some(std::mem::replace(&mut eps_current, Grid3::zeros(0, 0, 0)));
        }
    }

    Ok(DenseBackward {
        bundles: bundles
            .into_iter()
            .map(|b| b.expect("bundle filled"))
            .collect(),
        eps: eps_records
            .into_iter()
            .map(|e| e.expect("eps filled"))
            .collect(),
        delta: delta_records,
        active,
    })
}

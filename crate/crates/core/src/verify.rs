//! Gradient verification suites: randomized exact-equivalence checks between
//! the event-driven and dense backward passes, delta-recurrence checks
//! against the literal evaluator, membrane reconstruction from the unrolled
//! closed form, and finite-difference checks of the readout gradient.
//! The `gradcheck` command and the acceptance tests both run these.

use crate::config::NetConfig;
use crate::forward::{network_forward, ForwardPass, Network};
use crate::grad_dense::{dense_backward, DeltaMode, DenseBackward};
use crate::grad_sparse::{sparse_backward, SparseBackward};
use crate::loss::{
    logits, loss_and_grads, one_hot, readout_weight_grad, softmax_xent, LossConfig, LossGrads,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::surrogate::Window;
use crate::tensor::{Grid3, Matrix, SpikeRaster};

/// One randomly drawn desk-scale instance: a config, a network, an input
/// raster and labels.
pub struct Instance<F> {
    pub cfg: NetConfig,
    pub loss_cfg: LossConfig,
    pub net: Network<F>,
    pub input: SpikeRaster,
    pub labels: Vec<usize>,
}

/// Bounds for random instance generation.
#[derive(Debug, Clone)]
pub struct InstanceBounds {
    pub max_batch: usize,
    pub max_steps: usize,
    pub max_width: usize,
    pub min_hidden_layers: usize,
    pub max_hidden_layers: usize,
    /// Candidate backprop window widths, drawn uniformly.
    pub b_th_choices: Vec<f64>,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        InstanceBounds {
            max_batch: 4,
            max_steps: 32,
            max_width: 16,
            min_hidden_layers: 1,
            max_hidden_layers: 2,
            b_th_choices: vec![0.05, 0.2, f64::INFINITY],
        }
    }
}

/// Draw a random instance. Weights are scaled up from the fan-in bound so
/// membranes regularly visit the threshold neighbourhood and active sets
/// are non-trivial.
pub fn random_instance<F: Scalar>(bounds: &InstanceBounds, rng: &mut Rng) -> Instance<F> {
    let batch = 1 + rng.below(bounds.max_batch);
    let steps = 4 + rng.below(bounds.max_steps.saturating_sub(3));
    let span = bounds.max_hidden_layers + 1 - bounds.min_hidden_layers;
    let hidden_layers = bounds.min_hidden_layers + rng.below(span);
    let classes = 2 + rng.below(3);
    let mut layer_sizes = vec![2 + rng.below(bounds.max_width - 1)];
    for _ in 0..hidden_layers {
        layer_sizes.push(2 + rng.below(bounds.max_width - 1));
    }
    layer_sizes.push(classes);

    let cfg = NetConfig {
        layer_sizes,
        steps,
        batch,
        b_th: bounds.b_th_choices[rng.below(bounds.b_th_choices.len())],
        ..NetConfig::default()
    };
    cfg.validate().expect("generated config valid");

    // Scaled-up uniform weights: enough drive to cross the threshold.
    let mut weights = Vec::new();
    for l in 0..cfg.num_neuron_layers() {
        let n_in = cfg.layer_sizes[l];
        let n_out = cfg.layer_sizes[l + 1];
        let bound = 2.5 / (n_in as f64).sqrt();
        weights.push(Matrix::from_fn(n_in, n_out, |_, _| {
            F::of_f64(rng.uniform(-bound, bound))
        }));
    }
    let net = Network::from_weights(&cfg, weights);

    let rate = 0.1 + 0.3 * rng.next_f64();
    let mut input = SpikeRaster::zeros(batch, steps, cfg.input_size());
    for b in 0..batch {
        for t in 0..steps {
            for n in 0..cfg.input_size() {
                input.set(b, t, n, rng.next_f64() < rate);
            }
        }
    }
    let labels = (0..batch).map(|_| rng.below(classes)).collect();
    let loss_cfg = LossConfig {
        num_classes: classes,
        ..LossConfig::default()
    };
    Instance {
        cfg,
        loss_cfg,
        net,
        input,
        labels,
    }
}

/// Forward plus loss gradients for an instance.
pub fn forward_and_loss<F: Scalar>(
    inst: &Instance<F>,
) -> Result<(ForwardPass<F>, LossGrads<F>), String> {
    let pass = network_forward(&inst.input, &inst.net, &inst.cfg, 1).map_err(|e| e.to_string())?;
    let (_, _, lg) =
        loss_and_grads(&pass, &inst.labels, &inst.loss_cfg).map_err(|e| e.to_string())?;
    Ok((pass, lg))
}

fn compare_slices<F: Scalar>(a: &[F], b: &[F], what: &str) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{what}: length {} vs {}", a.len(), b.len()));
    }
    for (k, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        if x != y {
            return Err(format!("{what}: index {k} differs, {x:?} vs {y:?}"));
        }
    }
    Ok(())
}

/// Exact comparison of the two backward outputs: every weight gradient and
/// every aligned spike-gradient vector must be equal as floating-point
/// values (no tolerance).
pub fn compare_backwards_exact<F: Scalar>(
    dense: &DenseBackward<F>,
    sparse: &SparseBackward<F>,
) -> Result<(), String> {
    if dense.bundles.len() != sparse.bundles.len() {
        return Err("bundle count differs".into());
    }
    for (l, (d, s)) in dense.bundles.iter().zip(sparse.bundles.iter()).enumerate() {
        compare_slices(
            d.grad_w.as_slice(),
            s.grad_w.as_slice(),
            &format!("grad_w layer {l}"),
        )?;
        match (&d.grad_s, &s.grad_s) {
            (None, None) => {}
            (Some(dv), Some(sv)) => {
                compare_slices(dv, sv, &format!("grad_s layer {l}"))?;
            }
            _ => return Err(format!("grad_s presence differs at layer {l}")),
        }
    }
    Ok(())
}

/// Tolerance-based comparison of weight gradients (used against the naive
/// delta oracle, whose accumulation order legitimately differs).
pub fn compare_grad_w_within<F: Scalar>(
    dense: &DenseBackward<F>,
    sparse: &SparseBackward<F>,
    tol: f64,
) -> Result<(), String> {
    for (l, (d, s)) in dense.bundles.iter().zip(sparse.bundles.iter()).enumerate() {
        for (k, (x, y)) in d
            .grad_w
            .as_slice()
            .iter()
            .zip(s.grad_w.as_slice())
            .enumerate()
        {
            let (x, y) = (x.as_f64(), y.as_f64());
            let scale = x.abs().max(y.abs()).max(1.0);
            if (x - y).abs() > tol * scale {
                return Err(format!("grad_w layer {l} index {k}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

/// One equivalence trial: event-driven backward against the dense truncated
/// backward, exact; and against the naive-delta dense backward, 1e-10.
pub fn equivalence_trial<F: Scalar>(inst: &Instance<F>) -> Result<(), String> {
    let (pass, lg) = forward_and_loss(inst)?;
    let sparse =
        sparse_backward(&inst.net, &pass, &lg, &inst.cfg, None).map_err(|e| e.to_string())?;
    let dense = dense_backward(
        &inst.net,
        &pass,
        &lg,
        &inst.cfg,
        Window::Truncated,
        DeltaMode::Chained,
        None,
    )
    .map_err(|e| e.to_string())?;
    compare_backwards_exact(&dense, &sparse)?;

    let dense_naive = dense_backward(
        &inst.net,
        &pass,
        &lg,
        &inst.cfg,
        Window::Truncated,
        DeltaMode::Naive,
        None,
    )
    .map_err(|e| e.to_string())?;
    compare_grad_w_within(&dense_naive, &sparse, 1e-9)?;
    Ok(())
}

/// One delta-recurrence trial: recorded sweep values against the literal
/// O(T^2) evaluation at every needed coordinate, 1e-10 absolute.
pub fn delta_trial<F: Scalar>(inst: &Instance<F>, fault: FaultInjection) -> Result<(), String> {
    use crate::active::build_active_set;
    use crate::grad_dense::delta_naive;
    use crate::grad_sparse::{build_schedule, sparse_delta};
    use crate::surrogate::{Gate, SurrogateParams};

    let (pass, lg) = forward_and_loss(inst)?;
    let hidden = inst.net.layers.len() - 1;
    if hidden < 2 {
        return Ok(()); // no delta needed for a single hidden layer
    }
    let dense = dense_backward(
        &inst.net,
        &pass,
        &lg,
        &inst.cfg,
        Window::Truncated,
        DeltaMode::Chained,
        None,
    )
    .map_err(|e| e.to_string())?;
    let sparse =
        sparse_backward(&inst.net, &pass, &lg, &inst.cfg, None).map_err(|e| e.to_string())?;

    let params = SurrogateParams::<F>::new(
        F::of_f64(inst.cfg.beta),
        inst.cfg.v_th_as::<F>(),
        inst.cfg.b_th_as::<F>(),
    );
    let gate = Gate::new(params, Window::Truncated);
    for l in 1..hidden {
        let alpha = F::of_f64(inst.cfg.alpha_for_layer(l));
        let naive = delta_naive(
            &dense.eps[l],
            &pass.layers[l].membranes,
            alpha,
            &gate,
            l,
            None,
        );
        let active_pre = build_active_set(&pass.layers[l - 1].membranes, params.v_th, params.b_th);
        let active_post = build_active_set(&pass.layers[l].membranes, params.v_th, params.b_th);
        let sched = build_schedule(&active_pre, &active_post);

        let mutated = match fault {
            FaultInjection::None => None,
            FaultInjection::DeltaAlphaExponent => Some(sparse_delta_mutated(
                &sparse.eps[l],
                &pass.layers[l].membranes,
                &active_post,
                &sched,
                &params,
                alpha,
            )),
        };
        let recorded = sparse.delta[l].as_ref().expect("delta present");
        let _ = sparse_delta::<F>; // the unmutated walk is what produced `recorded`

        let n_post = inst.cfg.layer_sizes[l + 1];
        for b in 0..inst.cfg.batch {
            for &t in sched.needed_times(b) {
                for j in 0..n_post {
                    let got = match &mutated {
                        None => recorded
                            .at(b, t as usize, j)
                            .map_err(|e| e.to_string())?
                            .as_f64(),
                        Some(m) => m.at(b, t as usize, j).as_f64(),
                    };
                    let want = naive.at(b, t as usize, j).as_f64();
                    if (got - want).abs() > 1e-10 {
                        return Err(format!(
                            "delta mismatch layer {l} (b={b}, t={t}, j={j}): sweep {got} vs naive {want}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Deliberate faults for mutation-testing the check suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Off-by-one in the attenuation exponent of the delta sweep.
    DeltaAlphaExponent,
}

/// Copy of the event sweep with a deliberately wrong attenuation exponent
/// (gap + 1 instead of gap), recorded densely at needed coordinates.
/// Exists only to prove the delta suite catches this fault class.
fn sparse_delta_mutated<F: Scalar>(
    eps_post: &crate::grad_sparse::SparseEpsilon<F>,
    v_post: &Grid3<F>,
    active_post: &crate::active::ActiveSet,
    sched: &crate::grad_sparse::EventSchedule,
    params: &crate::surrogate::SurrogateParams<F>,
    alpha: F,
) -> Grid3<F> {
    use crate::surrogate::g;
    use crate::tensor::decay_powers;
    let (batch, steps, n_post) = v_post.dims();
    let powers = decay_powers(alpha, steps + 2);
    let mut out = Grid3::zeros(batch, steps, n_post);
    for b in 0..batch {
        let needed = sched.needed_times(b);
        let Some(&min_needed) = needed.first() else {
            continue;
        };
        for j in 0..n_post {
            let contribs = sched.contribution_times(b, j);
            let eps_base = active_post.run_start(b, j);
            let mut running = F::zero();
            let mut anchor = steps - 1;
            let mut ci = contribs.len();
            let mut ni = needed.len();
            loop {
                if ni == 0 {
                    break;
                }
                let cpos =
                    (ci > 0 && contribs[ci - 1] > 0).then(|| (contribs[ci - 1] - 1) as usize);
                if ci > 0 && contribs[ci - 1] == 0 {
                    ci = 0;
                }
                let npos = (ni > 0).then(|| needed[ni - 1] as usize);
                let Some(pos) = cpos.into_iter().chain(npos).max() else {
                    break;
                };
                if pos < min_needed as usize {
                    break;
                }
                // FAULT: exponent off by one.
                let attenuated = powers[anchor - pos + 1] * running;
                let mut value = attenuated;
                if cpos == Some(pos) {
                    let k = pos + 1;
                    let term = eps_post.values[eps_base + (ci - 1)] * g(v_post.at(b, k, j), params);
                    value = term + attenuated;
                    ci -= 1;
                }
                if npos == Some(pos) {
                    *out.at_mut(b, pos, j) = value;
                    ni -= 1;
                }
                running = value;
                anchor = pos;
            }
        }
    }
    out
}

/// Membrane reconstruction check: the recurrent simulation must match the
/// unrolled closed form trace.W - reset-trace within `tol` relative.
pub fn membrane_reconstruction_trial<F: Scalar>(
    inst: &Instance<F>,
    tol: f64,
) -> Result<(), String> {
    let pass = network_forward(&inst.input, &inst.net, &inst.cfg, 1).map_err(|e| e.to_string())?;
    for (l, layer) in inst.net.layers.iter().enumerate() {
        let rec = &pass.layers[l];
        let (batch, steps, n_out) = rec.membranes.dims();
        let alpha = layer.alpha;
        let reset = F::of_f64(inst.cfg.v_th - inst.cfg.v_r);
        for b in 0..batch {
            // Reset trace over own output spikes, same recurrence as the
            // input trace.
            let mut reset_trace = vec![F::zero(); n_out];
            for t in 0..steps {
                // Closed form: V[t] = sum_i trace[t, i] W[i, j] - reset term.
                for j in 0..n_out {
                    let mut weighted = F::zero();
                    for i in 0..layer.inputs() {
                        weighted += rec.trace.at(b, t, i) * layer.weights.at(i, j);
                    }
                    let expect = if layer.is_readout {
                        weighted
                    } else {
                        weighted - reset * reset_trace[j]
                    };
                    let got = rec.membranes.at(b, t, j);
                    let scale = expect.as_f64().abs().max(got.as_f64().abs()).max(1.0);
                    if (expect.as_f64() - got.as_f64()).abs() > tol * scale {
                        return Err(format!(
                            "membrane reconstruction layer {l} (b={b}, t={t}, j={j}): {} vs {}",
                            got.as_f64(),
                            expect.as_f64()
                        ));
                    }
                }
                if !layer.is_readout && t + 1 < steps {
                    for j in 0..n_out {
                        let s = F::of_f64(rec.spikes.get(b, t, j) as u8 as f64);
                        reset_trace[j] = alpha * reset_trace[j] + s;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Finite-difference check of the readout weight gradient on the full loss
/// at argmax-stable points. Returns Ok(true) when the trial ran, Ok(false)
/// when it had to be skipped (argmax unstable at the probed entry).
pub fn readout_fd_trial<F: Scalar>(
    inst: &Instance<F>,
    rng: &mut Rng,
    rel_tol: f64,
) -> Result<bool, String> {
    let pass = network_forward(&inst.input, &inst.net, &inst.cfg, 1).map_err(|e| e.to_string())?;
    let (_, _, lg) =
        loss_and_grads(&pass, &inst.labels, &inst.loss_cfg).map_err(|e| e.to_string())?;
    let hidden = inst.net.layers.len() - 1;
    let grad_w = readout_weight_grad(
        &lg.grad_logits,
        &pass.layers[hidden].trace,
        &lg.argmax_times,
    );

    // Perturbing the readout weights only moves the readout membranes;
    // hidden spikes and the regulariser terms are unchanged, so the loss
    // difference is the cross-entropy difference.
    let trace = &pass.layers[hidden].trace;
    let (batch, steps, n_hidden) = trace.dims();
    let classes = inst.loss_cfg.num_classes;
    let y = one_hot::<F>(&inst.labels, classes).map_err(|e| e.to_string())?;
    let base_argmax = lg.argmax_times.clone();

    let eval = |w: &Matrix<F>| -> (F, Vec<u32>) {
        let mut v = Grid3::zeros(batch, steps, classes);
        for b in 0..batch {
            for t in 0..steps {
                let trow = trace.row(b, t);
                let vrow = v.row_mut(b, t);
                for c in 0..classes {
                    let mut acc = F::zero();
                    for i in 0..n_hidden {
                        acc += trow[i] * w.at(i, c);
                    }
                    vrow[c] = acc;
                }
            }
        }
        let l = logits(&v);
        let (xent, _) = softmax_xent(&l.values, &y).expect("targets validated");
        (xent, l.argmax_times)
    };

    let i = rng.below(n_hidden);
    let c = rng.below(classes);
    let w0 = inst.net.layers[hidden].weights.clone();
    let h = F::of_f64(1e-5 * w0.at(i, c).as_f64().abs().max(1.0));
    let mut up = w0.clone();
    *up.at_mut(i, c) = w0.at(i, c) + h;
    let mut down = w0.clone();
    *down.at_mut(i, c) = w0.at(i, c) - h;
    let (lu, am_up) = eval(&up);
    let (ld, am_down) = eval(&down);
    if am_up != base_argmax || am_down != base_argmax {
        return Ok(false); // argmax not locally stable; skip this probe
    }
    let fd = (lu.as_f64() - ld.as_f64()) / (2.0 * h.as_f64());
    let an = grad_w.at(i, c).as_f64();
    let scale = fd.abs().max(an.abs());
    if scale < 1e-9 {
        return Ok(true);
    }
    if (fd - an).abs() > rel_tol * scale {
        return Err(format!(
            "readout grad (i={i}, c={c}): fd {fd} vs analytic {an}"
        ));
    }
    Ok(true)
}

/// Run `trials` randomized equivalence trials; returns the failure messages.
pub fn run_equivalence_suite(trials: usize, seed: u64) -> Vec<String> {
    let bounds = InstanceBounds::default();
    let mut failures = Vec::new();
    for k in 0..trials {
        let mut rng = Rng::derive(seed, k as u64);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        if let Err(e) = equivalence_trial(&inst) {
            failures.push(format!("trial {k}: {e}"));
        }
    }
    failures
}

/// Run `trials` randomized delta-recurrence trials.
pub fn run_delta_suite(trials: usize, seed: u64, fault: FaultInjection) -> Vec<String> {
    let bounds = InstanceBounds {
        min_hidden_layers: 2,
        ..InstanceBounds::default()
    };
    let mut failures = Vec::new();
    for k in 0..trials {
        let mut rng = Rng::derive(seed ^ 0x5eed, k as u64);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        if let Err(e) = delta_trial(&inst, fault) {
            failures.push(format!("trial {k}: {e}"));
        }
    }
    failures
}

/// Run readout finite-difference trials until `wanted` stable probes ran.
pub fn run_readout_fd_suite(wanted: usize, seed: u64) -> Result<usize, Vec<String>> {
    let bounds = InstanceBounds::default();
    let mut failures = Vec::new();
    let mut ran = 0;
    let mut k = 0u64;
    while ran < wanted && k < (wanted as u64) * 10 {
        let mut rng = Rng::derive(seed ^ 0xfd, k);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        match readout_fd_trial(&inst, &mut rng, 1e-4) {
            Ok(true) => ran += 1,
            Ok(false) => {}
            Err(e) => failures.push(format!("trial {k}: {e}")),
        }
        k += 1;
    }
    if failures.is_empty() {
        Ok(ran)
    } else {
        Err(failures)
    }
}

//! Loss head: softmax cross-entropy over max-over-time readout membranes,
//! plus lower/upper activity regularisers on hidden spike counts, and the
//! gradient of the loss through the readout layer.

use thiserror::Error;

use crate::forward::{InputTrace, MembraneRecord};
use crate::scalar::Scalar;
use crate::tensor::{decay_powers, Grid3, Matrix, SpikeRaster};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("argmax time {t} out of range (T = {steps})")]
    ArgmaxOutOfRange { t: usize, steps: usize },
}

/// Regulariser weights/targets and the class count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_low: f64,
    pub nu_low: f64,
    pub lambda_up: f64,
    pub nu_up: f64,
    pub num_classes: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_low: 100.0,
            nu_low: 0.001,
            lambda_up: 0.06,
            nu_up: 1.0,
            num_classes: 10,
        }
    }
}

/// Scalar summary of one loss evaluation. `total` equals
/// `cross_entropy + reg_low + reg_up` where the regulariser fields are
/// already batch means summed over hidden layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cross_entropy: f64,
    pub reg_low: f64,
    pub reg_up: f64,
}

/// Logits and the time index of each per-class membrane maximum.
#[derive(Debug, Clone)]
pub struct Logits<F> {
    /// (batch, classes) max-over-time readout membranes.
    pub values: Matrix<F>,
    /// First time index attaining the maximum, per (batch, class);
    /// ties break to the smallest t. Indexed `b * classes + c`.
    pub argmax_times: Vec<u32>,
}

/// a[b,c] = max_t V[b,t,c], with the earliest argmax recorded.
pub fn logits<F: Scalar>(v_readout: &MembraneRecord<F>) -> Logits<F> {
    let (batch, steps, classes) = v_readout.dims();
    let mut values = Matrix::zeros(batch, classes);
    let mut argmax_times = vec![0u32; batch * classes];
    for b in 0..batch {
        for c in 0..classes {
            let mut best = v_readout.at(b, 0, c);
            let mut best_t = 0u32;
            for t in 1..steps {
                let v = v_readout.at(b, t, c);
                if v > best {
                    best = v;
                    best_t = t as u32;
                }
            }
            *values.at_mut(b, c) = best;
            argmax_times[b * classes + c] = best_t;
        }
    }
    Logits {
        values,
        argmax_times,
    }
}

/// One-hot encode class labels.
pub fn one_hot<F: Scalar>(labels: &[usize], classes: usize) -> Result<Matrix<F>, LossError> {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(LossError::LabelOutOfRange { label, classes });
        }
        *y.at_mut(b, label) = F::one();
    }
    Ok(y)
}

/// Softmax cross-entropy: loss = -(1/B) sum_b sum_c y log p, with
/// p = softmax(a); the returned gradient w.r.t. the logits is (p - y)/B.
pub fn softmax_xent<F: Scalar>(a: &Matrix<F>, y: &Matrix<F>) -> Result<(F, Matrix<F>), LossError> {
    if (a.rows(), a.cols()) != (y.rows(), y.cols()) {
        return Err(LossError::ShapeMismatch("logits vs targets"));
    }
    let batch = a.rows();
    let classes = a.cols();
    for b in 0..batch {
        let row = y.row(b);
        let ones = row.iter().filter(|&&v| v == F::one()).count();
        let zeros = row.iter().filter(|&&v| v == F::zero()).count();
        if ones != 1 || ones + zeros != classes {
            return Err(LossError::NotOneHot(b));
        }
    }

    let inv_b = F::one() / F::of_f64(batch as f64);
    let mut grad = Matrix::zeros(batch, classes);
    let mut loss = F::zero();
    for b in 0..batch {
        let row = a.row(b);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        for c in 0..classes {
            let logp = (a.at(b, c) - max) - log_denom;
            let p = logp.exp();
            *grad.at_mut(b, c) = (p - y.at(b, c)) * inv_b;
            if y.at(b, c) == F::one() {
                loss -= logp;
            }
        }
    }
    Ok((loss * inv_b, grad))
}

/// Activity regulariser terms from per-(batch, neuron) spike counts.
#[derive(Debug, Clone)]
pub struct ActReg<F> {
    /// Batch mean of the per-sample lower-activity penalty.
    pub reg_low: F,
    /// Batch mean of the per-sample upper-activity penalty.
    pub reg_up: F,
    /// Per-sample gradient d(L_low_b + L_up_b)/d zeta_{b,i}, *not* divided
    /// by the batch size.
    pub grad_zeta: Matrix<F>,
}

/// Penalties over spike counts zeta_{b,i} = sum_t S[b,t,i]:
/// lower: (lambda_low/N) * sum_i max(0, nu_low - zeta)^2 (promotes activity),
/// upper: lambda_up * max(0, mean_i zeta - nu_up) (caps mean activity).
/// Both enter the loss as non-negative penalties.
pub fn act_reg<F: Scalar>(spikes: &SpikeRaster, cfg: &LossConfig) -> ActReg<F> {
    let (batch, _, neurons) = spikes.dims();
    let counts = spikes.spike_counts();
    let zeta = Matrix::from_fn(batch, neurons, |b, i| {
        F::of_f64(counts[b * neurons + i] as f64)
    });
    act_reg_from_counts(&zeta, cfg)
}

/// Same as `act_reg` but starting from an explicit count matrix; the split
/// exists so finite-difference tests can perturb the counts.
pub fn act_reg_from_counts<F: Scalar>(zeta: &Matrix<F>, cfg: &LossConfig) -> ActReg<F> {
    let batch = zeta.rows();
    let neurons = zeta.cols();
    let n = F::of_f64(neurons as f64);
    let lambda_low = F::of_f64(cfg.lambda_low);
    let nu_low = F::of_f64(cfg.nu_low);
    let lambda_up = F::of_f64(cfg.lambda_up);
    let nu_up = F::of_f64(cfg.nu_up);
    let zero = F::zero();
    let two = F::of_f64(2.0);

    let mut grad_zeta = Matrix::zeros(batch, neurons);
    let mut low_sum = F::zero();
    let mut up_sum = F::zero();
    for b in 0..batch {
        let mut low_b = F::zero();
        let mut mean = F::zero();
        for i in 0..neurons {
            let deficit = (nu_low - zeta.at(b, i)).max(zero);
            low_b += deficit * deficit;
            mean += zeta.at(b, i);
            // d/d zeta of (lambda/N) * deficit^2; zero at and past the kink.
            *grad_zeta.at_mut(b, i) = -(two * lambda_low / n) * deficit;
        }
        low_b = low_b * lambda_low / n;
        mean /= n;
        let excess = (mean - nu_up).max(zero);
        let up_b = lambda_up * excess;
        if excess > zero {
            for i in 0..neurons {
                *grad_zeta.at_mut(b, i) = grad_zeta.at(b, i) + lambda_up / n;
            }
        }
        low_sum += low_b;
        up_sum += up_b;
    }
    let inv_b = F::one() / F::of_f64(batch as f64);
    ActReg {
        reg_low: low_sum * inv_b,
        reg_up: up_sum * inv_b,
        grad_zeta,
    }
}

/// Gradient of the readout path.
#[derive(Debug, Clone)]
pub struct ReadoutGrads<F> {
    /// d loss / d W_readout, shape (N_hidden, classes).
    pub grad_w: Matrix<F>,
    /// d loss / d S over the last hidden layer's spikes, dense (B, T, N).
    pub eps: Grid3<F>,
}

/// Readout weight gradient alone: grad_w[i, c] = sum_b gl[b,c] * trace[b, t*, i].
/// Shared by both backward paths (the readout carries no sparsity).
pub fn readout_weight_grad<F: Scalar>(
    grad_logits: &Matrix<F>,
    trace_readout: &InputTrace<F>,
    argmax_times: &[u32],
) -> Matrix<F> {
    let (batch, _, n_hidden) = trace_readout.dims();
    let classes = grad_logits.cols();
    let mut grad_w = Matrix::zeros(n_hidden, classes);
    for b in 0..batch {
        for c in 0..classes {
            let gl = grad_logits.at(b, c);
            let t_star = argmax_times[b * classes + c] as usize;
            let tr = trace_readout.row(b, t_star);
            for i in 0..n_hidden {
                *grad_w.at_mut(i, c) = grad_w.at(i, c) + gl * tr[i];
            }
        }
    }
    grad_w
}

/// Backpropagate grad_logits through the reset-free readout.
///
/// Because the readout membrane is exactly `trace . W` (no reset, no spike),
/// the weight gradient reads the trace at each argmax time and the spike
/// gradient distributes `grad_logits * W * alpha^(t*-1-k)` over earlier
/// steps k < t*.
pub fn readout_backward<F: Scalar>(
    grad_logits: &Matrix<F>,
    w_readout: &Matrix<F>,
    trace_readout: &InputTrace<F>,
    argmax_times: &[u32],
    alpha_readout: F,
) -> Result<ReadoutGrads<F>, LossError> {
    let (batch, steps, n_hidden) = trace_readout.dims();
    let classes = grad_logits.cols();
    if grad_logits.rows() != batch {
        return Err(LossError::ShapeMismatch("grad_logits batch"));
    }
    if w_readout.rows() != n_hidden || w_readout.cols() != classes {
        return Err(LossError::ShapeMismatch("readout weights"));
    }
    if argmax_times.len() != batch * classes {
        return Err(LossError::ShapeMismatch("argmax_times length"));
    }
    for &t in argmax_times {
        if t as usize >= steps {
            return Err(LossError::ArgmaxOutOfRange {
                t: t as usize,
                steps,
            });
        }
    }

    let powers = decay_powers(alpha_readout, steps);
    let mut eps = Grid3::zeros(batch, steps, n_hidden);

    for b in 0..batch {
        for c in 0..classes {
            let gl = grad_logits.at(b, c);
            let t_star = argmax_times[b * classes + c] as usize;
            // Spike gradient into the last hidden layer, zero for k >= t*.
            for k in 0..t_star {
                let p = powers[t_star - 1 - k];
                let row = eps.row_mut(b, k);
                for i in 0..n_hidden {
                    row[i] += (gl * w_readout.at(i, c)) * p;
                }
            }
        }
    }
    let grad_w = readout_weight_grad(grad_logits, trace_readout, argmax_times);
    Ok(ReadoutGrads { grad_w, eps })
}

/// Everything the backward passes need from the loss side.
#[derive(Debug, Clone)]
pub struct LossGrads<F> {
    /// d loss / d logits, (B, C).
    pub grad_logits: Matrix<F>,
    /// Argmax time per (b, c), indexed b*C + c.
    pub argmax_times: Vec<u32>,
    /// Per hidden layer: per-sample regulariser gradient w.r.t. spike
    /// counts, (B, N). Not yet divided by the batch size; the backward
    /// passes apply the 1/B factor when injecting it.
    pub reg_eps: Vec<Matrix<F>>,
}

/// Evaluate the full training loss on one forward pass and assemble the
/// gradients the backward passes start from.
///
/// `total = cross_entropy + reg_low + reg_up`, the regulariser fields being
/// batch means summed over all hidden layers.
pub fn loss_and_grads<F: Scalar>(
    pass: &crate::forward::ForwardPass<F>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossReport, Logits<F>, LossGrads<F>), LossError> {
    let readout = pass.readout();
    let l = logits(&readout.membranes);
    let y = one_hot::<F>(labels, cfg.num_classes)?;
    let (xent, grad_logits) = softmax_xent(&l.values, &y)?;

    let hidden_layers = pass.layers.len() - 1;
    let mut reg_eps = Vec::with_capacity(hidden_layers);
    let mut reg_low = F::zero();
    let mut reg_up = F::zero();
    for h in 0..hidden_layers {
        let r = act_reg::<F>(&pass.layers[h].spikes, cfg);
        reg_low += r.reg_low;
        reg_up += r.reg_up;
        reg_eps.push(r.grad_zeta);
    }

    let total = xent + reg_low + reg_up;
    let report = LossReport {
        total: total.as_f64(),
        cross_entropy: xent.as_f64(),
        reg_low: reg_low.as_f64(),
        reg_up: reg_up.as_f64(),
    };
    let argmax_times = l.argmax_times.clone();
    Ok((
        report,
        l,
        LossGrads {
            grad_logits,
            argmax_times,
            reg_eps,
        },
    ))
}

/// Predicted class per sample: argmax over the logit row.
pub fn predictions<F: Scalar>(logit_values: &Matrix<F>) -> Vec<usize> {
    (0..logit_values.rows())
        .map(|b| {
            let row = logit_values.row(b);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Spike-gradient contribution of the readout path at one coordinate
/// (b, i, t) of the last hidden layer. Must stay arithmetically identical
/// to the dense fill in `readout_backward`.
#[inline]
pub fn readout_eps_at<F: Scalar>(
    grad_logits: &Matrix<F>,
    w_readout: &Matrix<F>,
    argmax_times: &[u32],
    powers: &[F],
    b: usize,
    i: usize,
    t: usize,
) -> F {
    let classes = grad_logits.cols();
    let mut acc = F::zero();
    for c in 0..classes {
        let t_star = argmax_times[b * classes + c] as usize;
        if t < t_star {
            acc += (grad_logits.at(b, c) * w_readout.at(i, c)) * powers[t_star - 1 - t];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logits_pick_max_and_first_argmax() {
        let mut v: Grid3<f64> = Grid3::zeros(1, 5, 2);
        // Class 0 rises monotonically; class 1 peaks at t=2 with a tie at 3.
        for t in 0..5 {
            *v.at_mut(0, t, 0) = t as f64;
        }
        *v.at_mut(0, 2, 1) = 3.5;
        *v.at_mut(0, 3, 1) = 3.5;
        let l = logits(&v);
        assert_eq!(l.values.at(0, 0), 4.0);
        assert_eq!(l.argmax_times[0], 4);
        assert_eq!(l.values.at(0, 1), 3.5);
        assert_eq!(l.argmax_times[1], 2, "ties break to the earliest step");
    }

    #[test]
    fn logits_all_zero_membranes() {
        let v: Grid3<f64> = Grid3::zeros(2, 4, 3);
        let l = logits(&v);
        assert!(l.values.as_slice().iter().all(|&x| x == 0.0));
        assert!(l.argmax_times.iter().all(|&t| t == 0));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let a: Matrix<f64> = Matrix::zeros(3, 2);
        let y = one_hot(&[0, 1, 0], 2).unwrap();
        let (loss, grad) = softmax_xent(&a, &y).unwrap();
        assert!((loss - (2.0_f64).ln()).abs() < 1e-12);
        // Rows of grad sum to zero.
        for b in 0..3 {
            let s: f64 = grad.row(b).iter().sum();
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut a: Matrix<f64> = Matrix::zeros(1, 3);
        *a.at_mut(0, 1) = 50.0;
        let y = one_hot(&[1], 3).unwrap();
        let (loss, _) = softmax_xent(&a, &y).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = Matrix::from_vec(2, 3, vec![0.3_f64, -1.2, 0.9, 2.0, 0.1, -0.4]);
        let shifted = Matrix::from_vec(
            2,
            3,
            a.as_slice()
                .iter()
                .enumerate()
                .map(|(k, &v)| v + if k < 3 { 7.5 } else { -3.25 })
                .collect(),
        );
        let y = one_hot(&[2, 0], 3).unwrap();
        let (l0, g0) = softmax_xent(&a, &y).unwrap();
        let (l1, g1) = softmax_xent(&shifted, &y).unwrap();
        assert!((l0 - l1).abs() < 1e-6);
        for (u, w) in g0.as_slice().iter().zip(g1.as_slice()) {
            assert!((u - w).abs() < 1e-9);
        }
    }

    #[test]
    fn non_one_hot_target_is_rejected() {
        let a: Matrix<f64> = Matrix::zeros(1, 3);
        let y = Matrix::from_vec(1, 3, vec![0.5_f64, 0.5, 0.0]);
        assert_eq!(softmax_xent(&a, &y).unwrap_err(), LossError::NotOneHot(0));
        let y = Matrix::from_vec(1, 3, vec![1.0_f64, 1.0, 0.0]);
        assert_eq!(softmax_xent(&a, &y).unwrap_err(), LossError::NotOneHot(0));
    }

    #[test]
    fn xent_gradient_matches_central_differences() {
        let a = Matrix::from_vec(2, 3, vec![0.7_f64, -0.3, 0.1, -1.1, 0.8, 0.2]);
        let y = one_hot(&[1, 2], 3).unwrap();
        let (_, grad) = softmax_xent(&a, &y).unwrap();
        let h = 1e-6;
        for b in 0..2 {
            for c in 0..3 {
                let mut hi = a.clone();
                *hi.at_mut(b, c) += h;
                let mut lo = a.clone();
                *lo.at_mut(b, c) -= h;
                let (lh, _) = softmax_xent(&hi, &y).unwrap();
                let (ll, _) = softmax_xent(&lo, &y).unwrap();
                let fd = (lh - ll) / (2.0 * h);
                let an = grad.at(b, c);
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3),
                    "b={b} c={c}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn quiet_regularisers_inside_hinges() {
        // Every neuron fires at least nu_low times and the mean stays under
        // nu_up: both penalties vanish with zero gradient.
        let cfg = LossConfig {
            nu_low: 1.0,
            nu_up: 3.0,
            ..LossConfig::default()
        };
        let mut spikes = SpikeRaster::zeros(2, 6, 3);
        for b in 0..2 {
            for n in 0..3 {
                spikes.set(b, n, n, true);
                spikes.set(b, n + 3, n, true);
            }
        }
        let r: ActReg<f64> = act_reg(&spikes, &cfg);
        assert_eq!(r.reg_low, 0.0);
        assert_eq!(r.reg_up, 0.0);
        assert!(r.grad_zeta.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silent_layer_hits_lower_penalty() {
        let cfg = LossConfig {
            nu_low: 1.0,
            lambda_low: 100.0,
            ..LossConfig::default()
        };
        let spikes = SpikeRaster::zeros(1, 5, 4);
        let r: ActReg<f64> = act_reg(&spikes, &cfg);
        // (lambda/N) * N * (1 - 0)^2 = lambda.
        assert!((r.reg_low - 100.0).abs() < 1e-12);
        for &gz in r.grad_zeta.as_slice() {
            assert!((gz - (-2.0 * 100.0 / 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reg_gradients_match_central_differences() {
        let cfg = LossConfig {
            nu_low: 2.0,
            nu_up: 1.5,
            lambda_low: 10.0,
            lambda_up: 0.5,
            ..Default::default()
        };
        // Counts away from both kinks.
        let zeta = Matrix::from_vec(2, 3, vec![0.4_f64, 3.0, 1.2, 2.6, 2.9, 3.4]);
        let r = act_reg_from_counts(&zeta, &cfg);
        let h = 1e-6;
        let eval = |z: &Matrix<f64>| {
            let rr = act_reg_from_counts(z, &cfg);
            // Batch-mean total, matching the report combination.
            rr.reg_low + rr.reg_up
        };
        for b in 0..2 {
            for i in 0..3 {
                let mut hi = zeta.clone();
                *hi.at_mut(b, i) += h;
                let mut lo = zeta.clone();
                *lo.at_mut(b, i) -= h;
                let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
                // grad_zeta is per-sample; the batch mean divides by B = 2.
                let an = r.grad_zeta.at(b, i) / 2.0;
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3),
                    "b={b} i={i}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn regs_are_nonnegative_and_monotone() {
        let cfg = LossConfig {
            nu_low: 3.0,
            nu_up: 1.0,
            lambda_low: 5.0,
            lambda_up: 0.2,
            ..Default::default()
        };
        let mut prev_low = f64::INFINITY;
        let mut prev_up = -1.0;
        for count in 0..6 {
            let zeta = Matrix::from_vec(1, 2, vec![count as f64, count as f64]);
            let r = act_reg_from_counts(&zeta, &cfg);
            assert!(r.reg_low >= 0.0 && r.reg_up >= 0.0);
            assert!(
                r.reg_low <= prev_low,
                "lower penalty must fall as counts rise"
            );
            assert!(r.reg_up >= prev_up, "upper penalty must rise with counts");
            prev_low = r.reg_low;
            prev_up = r.reg_up;
        }
    }

    #[test]
    fn readout_backward_zero_grad_logits() {
        let grad_logits: Matrix<f64> = Matrix::zeros(1, 2);
        let w = Matrix::from_vec(3, 2, vec![0.1; 6]);
        let trace = Grid3::zeros(1, 4, 3);
        let out = readout_backward(&grad_logits, &w, &trace, &[2, 3], 0.9).unwrap();
        assert!(out.grad_w.as_slice().iter().all(|&v| v == 0.0));
        assert!(out.eps.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn readout_backward_single_spike_geometry() {
        // One class, one hidden neuron, argmax at t*=3: eps[k] =
        // gl * w * alpha^(3-1-k) for k < 3 and zero afterwards.
        let gl = Matrix::from_vec(1, 1, vec![0.5_f64]);
        let w = Matrix::from_vec(1, 1, vec![2.0_f64]);
        let mut trace: Grid3<f64> = Grid3::zeros(1, 6, 1);
        *trace.at_mut(0, 3, 0) = 0.8;
        let alpha = 0.9_f64;
        let out = readout_backward(&gl, &w, &trace, &[3], alpha).unwrap();
        assert!((out.grad_w.at(0, 0) - 0.5 * 0.8).abs() < 1e-15);
        for k in 0..6 {
            let expect = if k < 3 {
                0.5 * 2.0 * alpha.powi(3 - 1 - k as i32)
            } else {
                0.0
            };
            assert!(
                (out.eps.at(0, k, 0) - expect).abs() < 1e-12,
                "eps at k={k}: {} vs {expect}",
                out.eps.at(0, k, 0)
            );
        }
    }

    #[test]
    fn readout_eps_is_causal() {
        // eps must vanish at and after the argmax time of every class.
        let gl = Matrix::from_vec(1, 2, vec![0.3_f64, -0.7]);
        let w = Matrix::from_vec(2, 2, vec![0.5_f64, -0.2, 0.1, 0.9]);
        let mut trace: Grid3<f64> = Grid3::zeros(1, 8, 2);
        for t in 0..8 {
            *trace.at_mut(0, t, 0) = 0.1 * t as f64;
        }
        let t_star = [4u32, 2u32];
        let out = readout_backward(&gl, &w, &trace, &t_star, 0.9).unwrap();
        let max_t = 4;
        for k in max_t..8 {
            for i in 0..2 {
                assert_eq!(out.eps.at(0, k, i), 0.0, "eps must be zero at k={k}");
            }
        }
    }

    #[test]
    fn readout_eps_at_matches_dense_fill() {
        let gl = Matrix::from_vec(2, 3, vec![0.3_f64, -0.7, 0.2, 0.05, 0.4, -0.9]);
        let w = Matrix::from_vec(2, 3, vec![0.5_f64, -0.2, 0.33, 0.1, 0.9, -0.61]);
        let mut trace: Grid3<f64> = Grid3::zeros(2, 7, 2);
        for b in 0..2 {
            for t in 0..7 {
                for i in 0..2 {
                    *trace.at_mut(b, t, i) = 0.05 * (b + t + i) as f64;
                }
            }
        }
        let t_star = [5u32, 2, 6, 3, 0, 4];
        let alpha = 0.875_f64;
        let out = readout_backward(&gl, &w, &trace, &t_star, alpha).unwrap();
        let powers = decay_powers(alpha, 7);
        for b in 0..2 {
            for t in 0..7 {
                for i in 0..2 {
                    let sparse = readout_eps_at(&gl, &w, &t_star, &powers, b, i, t);
                    assert_eq!(sparse, out.eps.at(b, t, i), "mismatch at b={b} i={i} t={t}");
                }
            }
        }
    }

    #[test]
    fn argmax_out_of_range_is_an_error() {
        let gl: Matrix<f64> = Matrix::zeros(1, 1);
        let w = Matrix::from_vec(1, 1, vec![1.0_f64]);
        let trace = Grid3::zeros(1, 4, 1);
        assert_eq!(
            readout_backward(&gl, &w, &trace, &[4], 0.9).unwrap_err(),
            LossError::ArgmaxOutOfRange { t: 4, steps: 4 }
        );
    }
}

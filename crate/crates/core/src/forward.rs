//! Forward simulation of the discretised leaky integrate-and-fire layers and
//! the non-spiking readout. The pass records membranes, output spikes and the
//! exponentially filtered input trace of every layer; the backward passes
//! reuse those records instead of recomputing anything.

use thiserror::Error;

use crate::config::NetConfig;
use crate::optim::init_weights_scaled;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Grid3, Matrix, SpikeRaster};

/// Membrane potentials over (batch, time, neuron).
pub type MembraneRecord<F> = Grid3<F>;
/// Filtered input spikes over (batch, time, presynaptic neuron):
/// trace[b, t, i] = sum_{k<t} alpha^(t-1-k) * S[b, k, i].
pub type InputTrace<F> = Grid3<F>;

#[derive(Debug, Error, PartialEq)]
pub enum ForwardError {
    #[error("spike vector contains a non-binary value {0}")]
    NonBinarySpike(f64),
    #[error("shape mismatch: {context} expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("membrane potential diverged (non-finite) at layer {layer}, step {step}")]
    Diverged { layer: usize, step: usize },
}

/// One fully connected layer: weights from its inputs, leak factor, and
/// whether it is the readout (infinite threshold, no reset, no spikes).
#[derive(Debug, Clone)]
pub struct LayerState<F> {
    pub weights: Matrix<F>,
    pub alpha: F,
    pub is_readout: bool,
}

impl<F: Scalar> LayerState<F> {
    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// A whole feed-forward network; `layers[last]` is the readout.
#[derive(Debug, Clone)]
pub struct Network<F> {
    pub layers: Vec<LayerState<F>>,
}

impl<F: Scalar> Network<F> {
    /// Build a network from the configuration with uniformly initialised
    /// weights, deterministic in the rng state.
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let num = cfg.num_neuron_layers();
        let mut layers = Vec::with_capacity(num);
        for l in 0..num {
            let n_in = cfg.layer_sizes[l];
            let n_out = cfg.layer_sizes[l + 1];
            layers.push(LayerState {
                weights: init_weights_scaled(n_in, n_out, cfg.init_gain, rng),
                alpha: F::of_f64(cfg.alpha_for_layer(l)),
                is_readout: l + 1 == num,
            });
        }
        Network { layers }
    }

    pub fn from_weights(cfg: &NetConfig, weights: Vec<Matrix<F>>) -> Self {
        assert_eq!(weights.len(), cfg.num_neuron_layers());
        let num = weights.len();
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| LayerState {
                weights: w,
                alpha: F::of_f64(cfg.alpha_for_layer(l)),
                is_readout: l + 1 == num,
            })
            .collect();
        Network { layers }
    }
}

/// Per-layer forward record kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerRecord<F> {
    /// Output spikes of this layer (all zero for the readout).
    pub spikes: SpikeRaster,
    /// Membrane potentials of this layer.
    pub membranes: MembraneRecord<F>,
    /// Filtered trace of this layer's *input* spikes, using this layer's
    /// leak factor.
    pub trace: InputTrace<F>,
}

/// Records of every layer for one forward pass, ordered input-side first.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    pub layers: Vec<LayerRecord<F>>,
}

impl<F: Scalar> ForwardPass<F> {
    pub fn readout(&self) -> &LayerRecord<F> {
        self.layers.last().expect("at least one layer")
    }
}

/// Unit step centred at the threshold: 1 iff v > v_th (strict).
#[inline]
pub fn spike_fn<F: Scalar>(v: F, v_th: F) -> bool {
    v > v_th
}

/// One membrane update for a whole layer:
/// v' = alpha*(v - v_rest) + v_rest + s_in.W - (v_th - v_r)*s_out.
///
/// Spike vectors are validated to be exactly 0 or 1. This is the reference
/// form of the step; `layer_forward` runs the same arithmetic spike-driven.
pub fn lif_step<F: Scalar>(
    v_t: &[F],
    s_in_t: &[F],
    s_out_t: &[F],
    weights: &Matrix<F>,
    cfg: &NetConfig,
    is_readout: bool,
) -> Result<Vec<F>, ForwardError> {
    if s_in_t.len() != weights.rows() {
        return Err(ForwardError::ShapeMismatch {
            context: "lif_step inputs",
            expected: weights.rows(),
            got: s_in_t.len(),
        });
    }
    if v_t.len() != weights.cols() || s_out_t.len() != weights.cols() {
        return Err(ForwardError::ShapeMismatch {
            context: "lif_step layer width",
            expected: weights.cols(),
            got: v_t.len(),
        });
    }
    for &s in s_in_t.iter().chain(s_out_t.iter()) {
        if !(s == F::zero() || s == F::one()) {
            return Err(ForwardError::NonBinarySpike(s.as_f64()));
        }
    }

    let alpha = F::of_f64(if is_readout {
        cfg.alpha_readout()
    } else {
        cfg.alpha_hidden()
    });
    let v_rest = F::of_f64(cfg.v_rest);
    let reset = F::of_f64(cfg.v_th - cfg.v_r);

    let mut out = Vec::with_capacity(v_t.len());
    for j in 0..v_t.len() {
        let mut weighted = F::zero();
        for i in 0..s_in_t.len() {
            weighted += s_in_t[i] * weights.at(i, j);
        }
        let mut acc = alpha * (v_t[j] - v_rest) + v_rest + weighted;
        if !is_readout {
            acc -= reset * s_out_t[j];
        }
        out.push(acc);
    }
    Ok(out)
}

/// Simulate one sample through one layer. The slices are the (T, N) flat
/// views of this sample's membranes, input trace, and output spikes.
fn forward_sample<F: Scalar>(
    input: &SpikeRaster,
    b: usize,
    layer: &LayerState<F>,
    steps: usize,
    v_th: F,
    v_rest: F,
    reset: F,
    v: &mut [F],
    trace: &mut [F],
    spikes: &mut [u8],
) -> Result<(), usize> {
    let n_in = layer.inputs();
    let n_out = layer.outputs();
    let alpha = layer.alpha;
    let mut weighted = vec![F::zero(); n_out];

    // t = 0: membranes and trace start at zero; spikes follow the step fn.
    if !layer.is_readout {
        let s0 = spike_fn(F::zero(), v_th) as u8;
        spikes[..n_out].iter_mut().for_each(|s| *s = s0);
    }

    for t in 0..steps.saturating_sub(1) {
        let in_row = input.row(b, t);

        // Weighted input, spike-driven: only presynaptic spikes contribute.
        weighted.iter_mut().for_each(|w| *w = F::zero());
        for (i, &s) in in_row.iter().enumerate() {
            if s == 1 {
                let w_row = layer.weights.row(i);
                for (acc, &w) in weighted.iter_mut().zip(w_row) {
                    *acc += w;
                }
            }
        }

        let (v_prev, v_next) = {
            let window = &mut v[t * n_out..(t + 2) * n_out];
            let (a, b) = window.split_at_mut(n_out);
            (a, b)
        };
        let (sp_prev, sp_next) = {
            let window = &mut spikes[t * n_out..(t + 2) * n_out];
            let (a, b) = window.split_at_mut(n_out);
            (a, b)
        };
        for j in 0..n_out {
            let mut acc = alpha * (v_prev[j] - v_rest) + v_rest + weighted[j];
            if !layer.is_readout && sp_prev[j] == 1 {
                acc -= reset;
            }
            if !acc.is_finite() {
                return Err(t + 1);
            }
            v_next[j] = acc;
            if !layer.is_readout {
                sp_next[j] = spike_fn(acc, v_th) as u8;
            }
        }

        // Trace recurrence over the layer's inputs.
        let (tr_prev, tr_next) = {
            let window = &mut trace[t * n_in..(t + 2) * n_in];
            let (a, b) = window.split_at_mut(n_in);
            (a, b)
        };
        for i in 0..n_in {
            tr_next[i] = alpha * tr_prev[i] + F::of_f64(in_row[i] as f64);
        }
    }
    Ok(())
}

/// Run one layer over a batched input raster.
///
/// `threads > 1` splits the batch across worker threads; per-sample results
/// are bit-identical to the sequential run because samples never interact.
pub fn layer_forward<F: Scalar>(
    input: &SpikeRaster,
    layer: &LayerState<F>,
    cfg: &NetConfig,
    layer_index: usize,
    threads: usize,
) -> Result<LayerRecord<F>, ForwardError> {
    let (batch, steps, n_in) = input.dims();
    if n_in != layer.inputs() {
        return Err(ForwardError::ShapeMismatch {
            context: "layer input width",
            expected: layer.inputs(),
            got: n_in,
        });
    }
    let n_out = layer.outputs();
    let mut membranes = Grid3::zeros(batch, steps, n_out);
    let mut trace = Grid3::zeros(batch, steps, n_in);
    let mut spikes = SpikeRaster::zeros(batch, steps, n_out);

    let v_th = F::of_f64(cfg.v_th);
    let v_rest = F::of_f64(cfg.v_rest);
    let reset = F::of_f64(cfg.v_th - cfg.v_r);

    let workers = threads.max(1).min(batch);
    let result: Result<(), usize> = if workers == 1 {
        let v_all = membranes.as_mut_slice();
        let tr_all = trace.as_mut_slice();
        let sp_all = spikes.data_mut();
        (0..batch).try_for_each(|b| {
            forward_sample(
                input,
                b,
                layer,
                steps,
                v_th,
                v_rest,
                reset,
                &mut v_all[b * steps * n_out..(b + 1) * steps * n_out],
                &mut tr_all[b * steps * n_in..(b + 1) * steps * n_in],
                &mut sp_all[b * steps * n_out..(b + 1) * steps * n_out],
            )
        })
    } else {
        let chunk = batch.div_ceil(workers);
        let v_chunks = membranes.as_mut_slice().chunks_mut(chunk * steps * n_out);
        let tr_chunks = trace.as_mut_slice().chunks_mut(chunk * steps * n_in);
        let sp_chunks = spikes.data_mut().chunks_mut(chunk * steps * n_out);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, ((v_c, tr_c), sp_c)) in v_chunks.zip(tr_chunks).zip(sp_chunks).enumerate() {
                let b0 = w * chunk;
                handles.push(scope.spawn(move || {
                    let local_batch = v_c.len() / (steps * n_out);
                    for local in 0..local_batch {
                        forward_sample(
                            input,
                            b0 + local,
                            layer,
                            steps,
                            v_th,
                            v_rest,
                            reset,
                            &mut v_c[local * steps * n_out..(local + 1) * steps * n_out],
                            &mut tr_c[local * steps * n_in..(local + 1) * steps * n_in],
                            &mut sp_c[local * steps * n_out..(local + 1) * steps * n_out],
                        )?;
                    }
                    Ok(())
                }));
            }
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("forward worker panicked"))
        })
    };
    result.map_err(|step| ForwardError::Diverged {
        layer: layer_index,
        step,
    })?;

    Ok(LayerRecord {
        spikes,
        membranes,
        trace,
    })
}

/// Run the whole network, recording every layer.
pub fn network_forward<F: Scalar>(
    input: &SpikeRaster,
    net: &Network<F>,
    cfg: &NetConfig,
    threads: usize,
) -> Result<ForwardPass<F>, ForwardError> {
    let mut records: Vec<LayerRecord<F>> = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let layer_input = if l == 0 {
            input
        } else {
            &records[l - 1].spikes
        };
        let record = layer_forward(layer_input, layer, cfg, l, threads)?;
        records.push(record);
    }
    Ok(ForwardPass { layers: records })
}

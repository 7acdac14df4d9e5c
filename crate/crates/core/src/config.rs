//! Network configuration: layer sizes, simulation timing, membrane constants
//! and the backprop window. All values are kept in f64 here and converted to
//! the working scalar type at kernel boundaries.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("need at least an input size and one layer, got {0} sizes")]
    TooFewLayers(usize),
    #[error("layer {index} has size 0")]
    EmptyLayer { index: usize },
    #[error("time steps must be >= 1")]
    NoTimeSteps,
    #[error("batch size must be >= 1")]
    EmptyBatch,
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("backprop window B_th must be >= 0, got {0}")]
    NegativeWindow(f64),
    #[error("threshold V_th ({v_th}) must exceed reset V_r ({v_r})")]
    ThresholdBelowReset { v_th: f64, v_r: f64 },
    #[error("leak factor alpha = {0} is outside (0, 1); check dt and tau")]
    BadAlpha(f64),
}

/// Full network/simulation configuration.
///
/// `layer_sizes[0]` is the input width; each later entry is a neuron layer,
/// the last one being the non-spiking readout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub layer_sizes: Vec<usize>,
    /// Simulation steps T.
    pub steps: usize,
    /// Batch size B.
    pub batch: usize,
    /// Simulation step in ms.
    pub dt_ms: f64,
    /// Membrane time constant of hidden layers, ms.
    pub tau_hidden_ms: f64,
    /// Membrane time constant of the readout layer, ms.
    pub tau_readout_ms: f64,
    pub v_th: f64,
    pub v_r: f64,
    pub v_rest: f64,
    /// Backprop window half-width; `f64::INFINITY` disables the window.
    pub b_th: f64,
    /// Surrogate sharpness.
    pub beta: f64,
    /// Weight-init bound is init_gain / sqrt(fan_in). Gain 1 is the plain
    /// fan-in rule, which leaves desk-scale nets silent (no membrane ever
    /// reaches the threshold region, so windowed gradients are all zero);
    /// the default lands initial membranes around the threshold.
    pub init_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            layer_sizes: vec![784, 200, 200, 10],
            steps: 100,
            batch: 256,
            dt_ms: 1.0,
            tau_hidden_ms: 10.0,
            tau_readout_ms: 10.0,
            v_th: 1.0,
            v_r: 0.0,
            v_rest: 0.0,
            b_th: 0.2,
            beta: 100.0,
            init_gain: 5.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.layer_sizes.len() < 2 {
            return Err(ConfigError::TooFewLayers(self.layer_sizes.len()));
        }
        for (index, &n) in self.layer_sizes.iter().enumerate() {
            if n == 0 {
                return Err(ConfigError::EmptyLayer { index });
            }
        }
        if self.steps == 0 {
            return Err(ConfigError::NoTimeSteps);
        }
        if self.batch == 0 {
            return Err(ConfigError::EmptyBatch);
        }
        for (name, value) in [
            ("dt", self.dt_ms),
            ("tau_hidden", self.tau_hidden_ms),
            ("tau_readout", self.tau_readout_ms),
            ("beta", self.beta),
            ("init_gain", self.init_gain),
        ] {
            if !(value > 0.0) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if !(self.b_th >= 0.0) {
            return Err(ConfigError::NegativeWindow(self.b_th));
        }
        if !(self.v_th > self.v_r) {
            return Err(ConfigError::ThresholdBelowReset {
                v_th: self.v_th,
                v_r: self.v_r,
            });
        }
        for alpha in [self.alpha_hidden(), self.alpha_readout()] {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ConfigError::BadAlpha(alpha));
            }
        }
        Ok(())
    }

    /// Leak factor exp(-dt/tau) for hidden layers.
    pub fn alpha_hidden(&self) -> f64 {
        (-self.dt_ms / self.tau_hidden_ms).exp()
    }

    /// Leak factor exp(-dt/tau) for the readout layer.
    pub fn alpha_readout(&self) -> f64 {
        (-self.dt_ms / self.tau_readout_ms).exp()
    }

    /// Leak factor for neuron layer `layer` (0-based over neuron layers; the
    /// last one is the readout).
    pub fn alpha_for_layer(&self, layer: usize) -> f64 {
        if layer + 1 == self.num_neuron_layers() {
            self.alpha_readout()
        } else {
            self.alpha_hidden()
        }
    }

    /// Number of weight matrices / neuron layers (excludes the input).
    pub fn num_neuron_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn readout_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn v_th_as<F: Scalar>(&self) -> F {
        F::of_f64(self.v_th)
    }

    pub fn b_th_as<F: Scalar>(&self) -> F {
        F::of_f64(self.b_th)
    }
}

//! Resolved run configuration: a flat key = value config file whose keys
//! mirror the training-parameter names (tau_hidden, B_th, beta, lambda_low,
//! ...), overridden by command-line flags, plus the run manifest that is
//! written before any results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use spikegrad_core::config::NetConfig;
use spikegrad_core::data::EncoderConfig;
use spikegrad_core::loss::LossConfig;
use spikegrad_core::optim::AdamParams;
use spikegrad_core::train::BackwardMode;

use crate::args::{parse_f64_or_inf, Args, UsageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_classes: usize,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub adam: AdamParams,
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub backward: BackwardMode,
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    pub dataset: String,
    pub subset: usize,
    pub test_subset: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        RunConfig {
            n_input: 784,
            n_hidden: 200,
            n_classes: 10,
            loss: LossConfig::default(),
            adam: AdamParams::default(),
            encoder: EncoderConfig {
                steps: net.steps,
                dt_ms: net.dt_ms,
                ..EncoderConfig::default()
            },
            net,
            epochs: 20,
            backward: BackwardMode::Sparse,
            seed: 1,
            threads: 1,
            precision: Precision::F32,
            dataset: "fmnist-synth".to_string(),
            subset: 6000,
            test_subset: 1000,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    /// Rebuild the dependent fields after n_input/n_hidden/n_classes or
    /// timing values changed.
    pub fn finalize(&mut self) {
        self.net.layer_sizes = vec![self.n_input, self.n_hidden, self.n_hidden, self.n_classes];
        self.loss.num_classes = self.n_classes;
        self.encoder.steps = self.net.steps;
        self.encoder.dt_ms = self.net.dt_ms;
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("config line {}: expected key = value", lineno + 1));
            };
            self.set_key(key.trim(), value.trim())
                .map_err(|e| format!("config line {}: {e}", lineno + 1))?;
        }
        self.finalize();
        Ok(())
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        let parse_usize = || {
            value
                .parse::<usize>()
                .map_err(|_| format!("{key}: bad integer '{value}'"))
        };
        let parse_f64 = || {
            if value == "inf" || value == "infinity" {
                Ok(f64::INFINITY)
            } else {
                value
                    .parse::<f64>()
                    .map_err(|_| format!("{key}: bad number '{value}'"))
            }
        };
        match key {
            "n_input" => self.n_input = parse_usize()?,
            "n_hidden" => self.n_hidden = parse_usize()?,
            "n_classes" => self.n_classes = parse_usize()?,
            "epochs" => self.epochs = parse_usize()?,
            "B" => self.net.batch = parse_usize()?,
            "T" => self.net.steps = parse_usize()?,
            "dt" => self.net.dt_ms = parse_f64()?,
            "tau_hidden" => self.net.tau_hidden_ms = parse_f64()?,
            "tau_readout" => self.net.tau_readout_ms = parse_f64()?,
            "tau_eff" => self.encoder.tau_eff_ms = parse_f64()?,
            "theta" => self.encoder.theta = parse_f64()?,
            "V_r" => self.net.v_r = parse_f64()?,
            "V_rest" => self.net.v_rest = parse_f64()?,
            "V_th" => self.net.v_th = parse_f64()?,
            "B_th" => self.net.b_th = parse_f64()?,
            "beta" => self.net.beta = parse_f64()?,
            "init_gain" => self.net.init_gain = parse_f64()?,
            "lr" => self.adam.lr = parse_f64()?,
            "beta1" => self.adam.beta1 = parse_f64()?,
            "beta2" => self.adam.beta2 = parse_f64()?,
            "eps_hat" => self.adam.eps_hat = parse_f64()?,
            "lambda_low" => self.loss.lambda_low = parse_f64()?,
            "nu_low" => self.loss.nu_low = parse_f64()?,
            "lambda_up" => self.loss.lambda_up = parse_f64()?,
            "nu_up" => self.loss.nu_up = parse_f64()?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| format!("seed: bad integer '{value}'"))?
            }
            "threads" => self.threads = parse_usize()?,
            "dataset" => self.dataset = value.to_string(),
            "subset" => self.subset = parse_usize()?,
            "test_subset" => self.test_subset = parse_usize()?,
            "backward" => {
                self.backward = BackwardMode::parse(value)
                    .ok_or_else(|| format!("backward: unknown mode '{value}'"))?
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("precision: expected f32 or f64, got '{value}'")),
                }
            }
            _ => return Err(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    /// Flags shared by train/bench; every flag overrides the file value.
    pub fn apply_common_flags(&mut self, args: &Args) -> Result<(), UsageError> {
        if let Some(v) = args.get("dataset") {
            self.dataset = v.to_string();
        }
        if let Some(v) = args.get_parsed::<usize>("hidden")? {
            self.n_hidden = v;
        }
        if let Some(v) = args.get_parsed::<usize>("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = args.get_parsed::<usize>("batch")? {
            self.net.batch = v;
        }
        if let Some(v) = args.get_parsed::<usize>("steps")? {
            self.net.steps = v;
        }
        if let Some(v) = args.get_parsed::<u64>("seed")? {
            self.seed = v;
        }
        if let Some(v) = args.get_parsed::<usize>("threads")? {
            self.threads = v;
        }
        if let Some(v) = args.get_parsed::<usize>("subset")? {
            self.subset = v;
        }
        if let Some(v) = args.get_parsed::<usize>("test-subset")? {
            self.test_subset = v;
        }
        if let Some(v) = args.get_parsed::<f64>("lr")? {
            self.adam.lr = v;
        }
        if let Some(v) = args.get("bth") {
            self.net.b_th = parse_f64_or_inf(v)?;
        }
        if let Some(v) = args.get("backward") {
            self.backward = BackwardMode::parse(v)
                .ok_or_else(|| UsageError(format!("--backward: unknown mode '{v}'")))?;
        }
        if let Some(v) = args.get("precision") {
            self.precision = match v {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                _ => {
                    return Err(UsageError(format!(
                        "--precision: expected f32 or f64, got '{v}'"
                    )))
                }
            };
        }
        if let Some(v) = args.get("out") {
            self.out_dir = PathBuf::from(v);
        }
        self.finalize();
        Ok(())
    }

    /// Resolved configuration as sorted key = value lines.
    pub fn render(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("n_input", self.n_input.to_string());
        kv.insert("n_hidden", self.n_hidden.to_string());
        kv.insert("n_classes", self.n_classes.to_string());
        kv.insert("epochs", self.epochs.to_string());
        kv.insert("B", self.net.batch.to_string());
        kv.insert("T", self.net.steps.to_string());
        kv.insert("dt", self.net.dt_ms.to_string());
        kv.insert("tau_hidden", self.net.tau_hidden_ms.to_string());
        kv.insert("tau_readout", self.net.tau_readout_ms.to_string());
        kv.insert("tau_eff", self.encoder.tau_eff_ms.to_string());
        kv.insert("theta", self.encoder.theta.to_string());
        kv.insert("V_r", self.net.v_r.to_string());
        kv.insert("V_rest", self.net.v_rest.to_string());
        kv.insert("V_th", self.net.v_th.to_string());
        kv.insert("B_th", self.net.b_th.to_string());
        kv.insert("beta", self.net.beta.to_string());
        kv.insert("init_gain", self.net.init_gain.to_string());
        kv.insert("lr", self.adam.lr.to_string());
        kv.insert("beta1", self.adam.beta1.to_string());
        kv.insert("beta2", self.adam.beta2.to_string());
        kv.insert("eps_hat", self.adam.eps_hat.to_string());
        kv.insert("lambda_low", self.loss.lambda_low.to_string());
        kv.insert("nu_low", self.loss.nu_low.to_string());
        kv.insert("lambda_up", self.loss.lambda_up.to_string());
        kv.insert("nu_up", self.loss.nu_up.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("threads", self.threads.to_string());
        kv.insert("dataset", self.dataset.clone());
        kv.insert("subset", self.subset.to_string());
        kv.insert("test_subset", self.test_subset.to_string());
        kv.insert("backward", self.backward.name().to_string());
        kv.insert("precision", self.precision.name().to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// FNV-1a over the manifest body; cheap content fingerprint for
/// reproducibility bookkeeping.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Write the run manifest before any results; re-running the same manifest
/// in sequential mode reproduces results bit-exactly.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    extra: &[(String, String)],
) -> Result<PathBuf, std::io::Error> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut body = format!("command = {command}\n{}", cfg.render());
    for (k, v) in extra {
        body.push_str(&format!("{k} = {v}\n"));
    }
    let hash = content_hash(body.as_bytes());
    let path = cfg.out_dir.join("run_manifest.txt");
    std::fs::write(&path, format!("{body}content_hash = {hash:016x}\n"))?;
    Ok(path)
}

//! Dataset resolution for the train/bench commands.
//!
//! Names:
//!   fmnist        - real IDX files under --data-root or $SPIKEGRAD_DATA_DIR
//!   fmnist-synth  - procedural image classes, latency encoded
//!   event-visual  - synthetic event streams, N=1156, T=300, dt=1ms
//!   event-audio   - synthetic event streams, N=700,  T=500, dt=2ms
//!   raster:PATH   - a labeled raster container pair PATH.train / PATH.test
//!                   (or a single file used for both splits)

use std::path::{Path, PathBuf};

use spikegrad_core::data::{
    encode_idx_set, idx_read_images, idx_read_labels, synthetic_event_set, synthetic_image_set,
    LabeledRasterSet,
};
use spikegrad_core::rng::Rng;

use crate::runconfig::RunConfig;

pub struct ResolvedDataset {
    pub train: LabeledRasterSet,
    pub test: LabeledRasterSet,
    /// Description of where the data came from, for the manifest.
    pub source: String,
}

fn find_idx(root: &Path, stem: &str) -> Option<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = root.join(&name);
        if p.exists() {
            return Some(p);
        }
    }
    None
}

fn load_fmnist(cfg: &RunConfig, root: &Path) -> Result<ResolvedDataset, String> {
    let pairs = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ];
    let mut sets = Vec::new();
    for (k, (img_stem, lbl_stem)) in pairs.iter().enumerate() {
        let img = find_idx(root, img_stem).ok_or_else(|| {
            format!(
                "dataset file {img_stem}[.gz] not found under {}",
                root.display()
            )
        })?;
        let lbl = find_idx(root, lbl_stem).ok_or_else(|| {
            format!(
                "dataset file {lbl_stem}[.gz] not found under {}",
                root.display()
            )
        })?;
        let images = idx_read_images(&img).map_err(|e| e.to_string())?;
        let labels = idx_read_labels(&lbl).map_err(|e| e.to_string())?;
        let limit = if k == 0 { cfg.subset } else { cfg.test_subset };
        let split = if k == 0 { "train" } else { "test" };
        sets.push(
            encode_idx_set(&images, &labels, &cfg.encoder, split, Some(limit))
                .map_err(|e| e.to_string())?,
        );
    }
    let test = sets.pop().unwrap();
    let train = sets.pop().unwrap();
    Ok(ResolvedDataset {
        train,
        test,
        source: format!("fmnist idx root {}", root.display()),
    })
}

fn synth_images(cfg: &RunConfig) -> Result<ResolvedDataset, String> {
    let side = (cfg.n_input as f64).sqrt() as usize;
    if side * side != cfg.n_input {
        return Err(format!(
            "fmnist-synth needs a square n_input, got {}",
            cfg.n_input
        ));
    }
    let make = |count: usize, split: &str, seed: u64| -> Result<LabeledRasterSet, String> {
        let mut rng = Rng::derive(cfg.seed, seed);
        let (images, labels) = synthetic_image_set(count, cfg.n_classes, side, &mut rng);
        encode_idx_set(&images, &labels, &cfg.encoder, split, None).map_err(|e| e.to_string())
    };
    Ok(ResolvedDataset {
        train: make(cfg.subset, "train", 0xA)?,
        test: make(cfg.test_subset, "test", 0xB)?,
        source: format!(
            "procedural images ({}x{side} px, {} classes)",
            side, cfg.n_classes
        ),
    })
}

fn synth_events(
    cfg: &RunConfig,
    neurons: usize,
    steps: usize,
    dt_ms: f64,
) -> Result<ResolvedDataset, String> {
    // Rates chosen to land in the input-sparsity regime of event datasets
    // (about 1-2.5% of (neuron, step) bins carrying a spike).
    let rate_hz = 11.0;
    let make = |count: usize, split: &str, seed: u64| -> Result<LabeledRasterSet, String> {
        let mut rng = Rng::derive(cfg.seed, seed);
        synthetic_event_set(
            count,
            cfg.n_classes,
            neurons,
            steps,
            rate_hz,
            dt_ms,
            split,
            &mut rng,
        )
        .map_err(|e| e.to_string())
    };
    Ok(ResolvedDataset {
        train: make(cfg.subset, "train", 0xC)?,
        test: make(cfg.test_subset, "test", 0xD)?,
        source: format!(
            "synthetic event streams (N={neurons}, T={steps}, dt={dt_ms}ms, {rate_hz}Hz)"
        ),
    })
}

/// Resolve the dataset named in the config. May adjust n_input/T/dt on the
/// config to match fixed event profiles.
pub fn resolve(cfg: &mut RunConfig, data_root: Option<&str>) -> Result<ResolvedDataset, String> {
    let name = cfg.dataset.clone();
    let ds = match name.as_str() {
        "fmnist" => {
            let root = data_root
                .map(PathBuf::from)
                .or_else(|| std::env::var("SPIKEGRAD_DATA_DIR").ok().map(PathBuf::from))
                .ok_or_else(|| {
                    "dataset fmnist needs --data-root or $SPIKEGRAD_DATA_DIR".to_string()
                })?;
            load_fmnist(cfg, &root)?
        }
        "fmnist-synth" => synth_images(cfg)?,
        "event-visual" => {
            cfg.n_input = 1156;
            cfg.net.steps = 300;
            cfg.net.dt_ms = 1.0;
            cfg.finalize();
            synth_events(cfg, 1156, 300, 1.0)?
        }
        "event-audio" => {
            cfg.n_input = 700;
            cfg.net.steps = 500;
            cfg.net.dt_ms = 2.0;
            cfg.finalize();
            synth_events(cfg, 700, 500, 2.0)?
        }
        other => {
            if let Some(path) = other.strip_prefix("raster:") {
                let train_path = PathBuf::from(format!("{path}.train"));
                let test_path = PathBuf::from(format!("{path}.test"));
                let (train, test) = if train_path.exists() {
                    (
                        LabeledRasterSet::read(&train_path).map_err(|e| e.to_string())?,
                        LabeledRasterSet::read(&test_path).map_err(|e| e.to_string())?,
                    )
                } else {
                    let one = LabeledRasterSet::read(Path::new(path)).map_err(|e| e.to_string())?;
                    (one.clone(), one)
                };
                ResolvedDataset {
                    train,
                    test,
                    source: format!("raster container {path}"),
                }
            } else {
                return Err(format!("unknown dataset '{other}'"));
            }
        }
    };

    // The raster geometry is authoritative for the network input.
    cfg.n_input = ds.train.neurons;
    cfg.net.steps = ds.train.steps;
    cfg.finalize();
    let max_label = ds
        .train
        .labels
        .iter()
        .chain(ds.test.labels.iter())
        .max()
        .copied()
        .unwrap_or(0);
    if (max_label as usize) >= cfg.n_classes {
        return Err(format!(
            "dataset labels reach {max_label} but n_classes is {}",
            cfg.n_classes
        ));
    }
    Ok(ds)
}

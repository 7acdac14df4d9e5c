//! `spikegrad encode`: latency-encode an IDX image/label pair into the
//! bit-packed labeled raster container.

use std::path::{Path, PathBuf};

use spikegrad_core::data::{encode_idx_set, idx_read_images, idx_read_labels, EncoderConfig};

use crate::args::{parse_f64_or_inf, Args};
use crate::CliError;

pub fn run(args: &Args) -> Result<(), CliError> {
    let input = args
        .get("input")
        .ok_or_else(|| CliError::Usage("encode needs --input DIR".into()))?
        .to_string();
    let out = args
        .get("out")
        .ok_or_else(|| CliError::Usage("encode needs --out FILE".into()))?
        .to_string();
    let split = args.get("split").unwrap_or("train").to_string();
    if split != "train" && split != "test" {
        return Err(CliError::Usage(format!(
            "--split must be train or test, got '{split}'"
        )));
    }
    let mut cfg = EncoderConfig::default();
    if let Some(v) = args.get("theta") {
        cfg.theta = parse_f64_or_inf(v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = args
        .get_parsed::<f64>("tau-eff")
        .map_err(|e| CliError::Usage(e.to_string()))?
    {
        cfg.tau_eff_ms = v;
    }
    if let Some(v) = args
        .get_parsed::<usize>("steps")
        .map_err(|e| CliError::Usage(e.to_string()))?
    {
        cfg.steps = v;
    }
    if let Some(v) = args
        .get_parsed::<f64>("dt")
        .map_err(|e| CliError::Usage(e.to_string()))?
    {
        cfg.dt_ms = v;
    }
    let limit = args
        .get_parsed::<usize>("limit")
        .map_err(|e| CliError::Usage(e.to_string()))?;
    args.reject_unknown()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate()
        .map_err(|e| CliError::Usage(format!("encoder config: {e}")))?;

    let root = PathBuf::from(&input);
    let (img_stem, lbl_stem) = if split == "train" {
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    } else {
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    };
    let find = |stem: &str| -> Result<PathBuf, CliError> {
        for name in [stem.to_string(), format!("{stem}.gz")] {
            let p = root.join(&name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(CliError::Io(format!(
            "{stem}[.gz] not found under {}",
            root.display()
        )))
    };

    let images = idx_read_images(&find(img_stem)?).map_err(|e| CliError::Io(e.to_string()))?;
    let labels = idx_read_labels(&find(lbl_stem)?).map_err(|e| CliError::Io(e.to_string()))?;
    let set = encode_idx_set(&images, &labels, &cfg, &split, limit)
        .map_err(|e| CliError::Io(e.to_string()))?;
    set.write(Path::new(&out))
        .map_err(|e| CliError::Io(e.to_string()))?;

    let total_spikes: usize = (0..set.len()).map(|k| set.spike_count(k)).sum();
    println!(
        "encoded {} {} samples ({} neurons, {} steps) -> {} ({} bytes, {:.2} spikes/sample)",
        set.len(),
        split,
        set.neurons,
        set.steps,
        out,
        set.storage_bytes(),
        total_spikes as f64 / set.len().max(1) as f64
    );
    Ok(())
}

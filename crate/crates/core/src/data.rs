//! Input pipelines: latency encoding of grayscale images into single spike
//! times, IDX-format ingestion (plain or gzipped), synthetic spike rasters
//! with controlled rate, a procedural image dataset for hermetic runs, and
//! the bit-packed raster container used on disk.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::SpikeRaster;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("encoder config: {0}")]
    BadEncoderConfig(String),
    #[error("spike rate {rate} spikes/s at dt {dt_ms} ms gives per-bin probability > 1")]
    RateTooHigh { rate: f64, dt_ms: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("IDX payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX dimensions overflow a usize product")]
    DimOverflow,
    #[error("raster container: {0}")]
    Container(String),
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

/// Latency encoder configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Effective membrane constant of the encoding formula, ms.
    pub tau_eff_ms: f64,
    /// Intensity threshold in [0, 1]; pixels at or below it never spike
    /// (theta = 1 encodes every image to an empty raster).
    pub theta: f64,
    pub steps: usize,
    pub dt_ms: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            tau_eff_ms: 20.0,
            theta: 0.2,
            steps: 100,
            dt_ms: 1.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.tau_eff_ms > 0.0) {
            return Err(DataError::BadEncoderConfig(format!(
                "tau_eff {} must be > 0",
                self.tau_eff_ms
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(DataError::BadEncoderConfig(format!(
                "theta {} must be in [0, 1]",
                self.theta
            )));
        }
        if self.steps == 0 || !(self.dt_ms > 0.0) {
            return Err(DataError::BadEncoderConfig(
                "steps/dt must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spike time in ms for a normalised intensity, none at or below theta:
    /// T(x) = tau_eff * ln(x / (x - theta)).
    pub fn spike_time_ms(&self, x: f64) -> Result<Option<f64>, DataError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(DataError::IntensityOutOfRange(x));
        }
        if x <= self.theta {
            return Ok(None);
        }
        Ok(Some(self.tau_eff_ms * (x / (x - self.theta)).ln()))
    }

    /// Time bin of the spike, dropped when it lands past the horizon.
    pub fn spike_bin(&self, x: f64) -> Result<Option<usize>, DataError> {
        Ok(self.spike_time_ms(x)?.and_then(|t_ms| {
            let bin = (t_ms / self.dt_ms).floor();
            (bin < self.steps as f64).then_some(bin as usize)
        }))
    }
}

/// Latency-encode one image (normalised intensities) into a (T, N) raster
/// slice of an existing raster at batch position `b`. At most one spike per
/// input neuron.
pub fn latency_encode_into(
    raster: &mut SpikeRaster,
    b: usize,
    pixels: &[f64],
    cfg: &EncoderConfig,
) -> Result<(), DataError> {
    for (n, &x) in pixels.iter().enumerate() {
        if let Some(bin) = cfg.spike_bin(x)? {
            raster.set(b, bin, n, true);
        }
    }
    Ok(())
}

/// Encode a batch of images into one raster.
pub fn latency_encode(images: &[Vec<f64>], cfg: &EncoderConfig) -> Result<SpikeRaster, DataError> {
    cfg.validate()?;
    let neurons = images.first().map_or(0, |im| im.len());
    let mut raster = SpikeRaster::zeros(images.len(), cfg.steps, neurons);
    for (b, image) in images.iter().enumerate() {
        latency_encode_into(&mut raster, b, image, cfg)?;
    }
    Ok(raster)
}

/// i.i.d. Bernoulli raster with the given rate in spikes per neuron per
/// second; deterministic in the rng.
pub fn synthetic_raster(
    batch: usize,
    steps: usize,
    neurons: usize,
    rate_hz: f64,
    dt_ms: f64,
    rng: &mut Rng,
) -> Result<SpikeRaster, DataError> {
    let p = rate_hz * dt_ms / 1000.0;
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::RateTooHigh {
            rate: rate_hz,
            dt_ms,
        });
    }
    let mut raster = SpikeRaster::zeros(batch, steps, neurons);
    for b in 0..batch {
        for t in 0..steps {
            for n in 0..neurons {
                if rng.next_f64() < p {
                    raster.set(b, t, n, true);
                }
            }
        }
    }
    Ok(raster)
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

/// Decoded IDX image file: `count` images of rows x cols raw u8 pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, k: usize) -> &[u8] {
        let stride = self.rows * self.cols;
        &self.pixels[k * stride..(k + 1) * stride]
    }

    /// Pixels of one image normalised to [0, 1] by /255.
    pub fn normalized(&self, k: usize) -> Vec<f64> {
        self.image(k).iter().map(|&p| p as f64 / 255.0).collect()
    }
}

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or(DataError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parse an IDX image file (magic 0x00000803), gzip accepted.
pub fn idx_read_images(path: &Path) -> Result<IdxImages, DataError> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(DataError::BadMagic(magic));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(DataError::DimOverflow)?;
    let expected = payload + 16;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

/// Parse an IDX label file (magic 0x00000801), gzip accepted.
pub fn idx_read_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IDX_MAGIC_LABELS {
        return Err(DataError::BadMagic(magic));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let expected = count + 8;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Write images in IDX format (used by tests and the synthetic generator).
pub fn idx_write_images(path: &Path, images: &IdxImages) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn idx_write_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Labeled raster sets (bit-packed)
// ---------------------------------------------------------------------------

/// A labeled set of single-sample rasters, bit-packed (one bit per
/// (time, neuron) entry, little-endian within each u64 word, each sample
/// padded to a whole number of words).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRasterSet {
    pub steps: usize,
    pub neurons: usize,
    pub labels: Vec<u8>,
    pub split: String,
    words: Vec<u64>,
    words_per_sample: usize,
}

impl LabeledRasterSet {
    pub fn new(steps: usize, neurons: usize, split: &str) -> Self {
        let words_per_sample = (steps * neurons).div_ceil(64);
        LabeledRasterSet {
            steps,
            neurons,
            labels: Vec::new(),
            split: split.to_string(),
            words: Vec::new(),
            words_per_sample,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Append one sample from a (1-batch or larger) raster position.
    pub fn push_sample(&mut self, raster: &SpikeRaster, b: usize, label: u8) {
        debug_assert_eq!(
            (raster.steps(), raster.neurons()),
            (self.steps, self.neurons)
        );
        let base = self.words.len();
        self.words.resize(base + self.words_per_sample, 0);
        for t in 0..self.steps {
            let row = raster.row(b, t);
            for (n, &s) in row.iter().enumerate() {
                if s == 1 {
                    let bit = t * self.neurons + n;
                    self.words[base + bit / 64] |= 1u64 << (bit % 64);
                }
            }
        }
        self.labels.push(label);
    }

    pub fn spike_count(&self, sample: usize) -> usize {
        let base = sample * self.words_per_sample;
        self.words[base..base + self.words_per_sample]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Materialise a batch raster from sample indices.
    pub fn batch(&self, indices: &[usize]) -> SpikeRaster {
        let mut raster = SpikeRaster::zeros(indices.len(), self.steps, self.neurons);
        for (b, &sample) in indices.iter().enumerate() {
            let base = sample * self.words_per_sample;
            for t in 0..self.steps {
                for n in 0..self.neurons {
                    let bit = t * self.neurons + n;
                    if self.words[base + bit / 64] >> (bit % 64) & 1 == 1 {
                        raster.set(b, t, n, true);
                    }
                }
            }
        }
        raster
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&k| self.labels[k] as usize).collect()
    }

    pub fn storage_bytes(&self) -> usize {
        self.words.len() * 8 + self.labels.len()
    }

    // Container layout (little-endian): magic "SPKR" | version u32 = 1
    // | steps u32 | neurons u32 | samples u32 | split len u8 | split bytes
    // | labels u8[samples] | packed words u64[samples * words_per_sample].

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SPKR");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.steps as u32).to_le_bytes());
        out.extend_from_slice(&(self.neurons as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        let split_bytes = self.split.as_bytes();
        out.push(split_bytes.len().min(255) as u8);
        out.extend_from_slice(&split_bytes[..split_bytes.len().min(255)]);
        out.extend_from_slice(&self.labels);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path)?;
        let need = |n: usize| -> Result<(), DataError> {
            if bytes.len() < n {
                Err(DataError::Container(format!("truncated at {n} bytes")))
            } else {
                Ok(())
            }
        };
        need(17)?;
        if &bytes[0..4] != b"SPKR" {
            return Err(DataError::Container("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(DataError::Container(format!(
                "unsupported version {version}"
            )));
        }
        let steps = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let neurons = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let samples = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let split_len = bytes[20] as usize;
        need(21 + split_len)?;
        let split = String::from_utf8_lossy(&bytes[21..21 + split_len]).into_owned();
        let labels_at = 21 + split_len;
        need(labels_at + samples)?;
        let labels = bytes[labels_at..labels_at + samples].to_vec();
        let words_per_sample = (steps * neurons).div_ceil(64);
        let words_at = labels_at + samples;
        let word_count = samples * words_per_sample;
        need(words_at + word_count * 8)?;
        let mut words = Vec::with_capacity(word_count);
        for k in 0..word_count {
            let at = words_at + k * 8;
            words.push(u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
        }
        Ok(LabeledRasterSet {
            steps,
            neurons,
            labels,
            split,
            words,
            words_per_sample,
        })
    }
}

/// Latency-encode an IDX image/label pair into a labeled raster set.
pub fn encode_idx_set(
    images: &IdxImages,
    labels: &[u8],
    cfg: &EncoderConfig,
    split: &str,
    limit: Option<usize>,
) -> Result<LabeledRasterSet, DataError> {
    cfg.validate()?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let take = limit.unwrap_or(images.count).min(images.count);
    let neurons = images.rows * images.cols;
    let mut set = LabeledRasterSet::new(cfg.steps, neurons, split);
    for k in 0..take {
        let mut scratch = SpikeRaster::zeros(1, cfg.steps, neurons);
        latency_encode_into(&mut scratch, 0, &images.normalized(k), cfg)?;
        set.push_sample(&scratch, 0, labels[k]);
    }
    Ok(set)
}

/// Labeled synthetic event streams: a Bernoulli raster whose per-neuron rate
/// is boosted for a class-dependent subset of neurons, giving the sparsity
/// regime of event datasets plus a learnable class signal.
pub fn synthetic_event_set(
    count: usize,
    classes: usize,
    neurons: usize,
    steps: usize,
    base_rate_hz: f64,
    dt_ms: f64,
    split: &str,
    rng: &mut Rng,
) -> Result<LabeledRasterSet, DataError> {
    let p_base = base_rate_hz * dt_ms / 1000.0;
    let p_hot = (3.0 * p_base).min(1.0);
    if !(0.0..=1.0).contains(&p_base) {
        return Err(DataError::RateTooHigh {
            rate: base_rate_hz,
            dt_ms,
        });
    }
    let mut set = LabeledRasterSet::new(steps, neurons, split);
    let group = neurons / classes.max(1);
    for _ in 0..count {
        let class = rng.below(classes);
        let hot_lo = class * group;
        let hot_hi = hot_lo + group;
        let mut raster = SpikeRaster::zeros(1, steps, neurons);
        for t in 0..steps {
            for n in 0..neurons {
                let p = if n >= hot_lo && n < hot_hi {
                    p_hot
                } else {
                    p_base
                };
                if rng.next_f64() < p {
                    raster.set(0, t, n, true);
                }
            }
        }
        set.push_sample(&raster, 0, class as u8);
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Procedural image dataset
// ---------------------------------------------------------------------------

/// Procedurally generated grayscale image classes: each class is a pair of
/// soft blobs at class-specific positions plus an oriented bar, with
/// per-sample jitter and noise. Serves as a hermetic stand-in when no real
/// IDX dataset is on disk; classes are well separated but not trivially so.
pub fn synthetic_image_set(
    count: usize,
    classes: usize,
    side: usize,
    rng: &mut Rng,
) -> (IdxImages, Vec<u8>) {
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.below(classes);
        labels.push(class as u8);
        let phase = class as f64 / classes as f64;
        // Two blob centres on a class-dependent ring, jittered per sample.
        let jx = rng.uniform(-1.5, 1.5);
        let jy = rng.uniform(-1.5, 1.5);
        let cx1 = side as f64 * (0.5 + 0.3 * (std::f64::consts::TAU * phase).cos()) + jx;
        let cy1 = side as f64 * (0.5 + 0.3 * (std::f64::consts::TAU * phase).sin()) + jy;
        let cx2 = side as f64 * (0.5 + 0.25 * (std::f64::consts::TAU * (phase + 0.37)).cos()) - jx;
        let cy2 = side as f64 * (0.5 + 0.25 * (std::f64::consts::TAU * (phase + 0.37)).sin()) - jy;
        let angle = std::f64::consts::PI * phase;
        let (sin_a, cos_a) = angle.sin_cos();
        let sigma2 = (side as f64 * 0.09).powi(2);
        for y in 0..side {
            for x in 0..side {
                let (xf, yf) = (x as f64, y as f64);
                let d1 = (xf - cx1).powi(2) + (yf - cy1).powi(2);
                let d2 = (xf - cx2).powi(2) + (yf - cy2).powi(2);
                let mut v =
                    0.95 * (-d1 / (2.0 * sigma2)).exp() + 0.7 * (-d2 / (2.0 * sigma2)).exp();
                // Oriented bar through the centre.
                let dist =
                    ((xf - side as f64 / 2.0) * sin_a - (yf - side as f64 / 2.0) * cos_a).abs();
                if dist < 1.2 {
                    v += 0.45;
                }
                v += rng.uniform(-0.04, 0.04);
                pixels.push((v.clamp(0.0, 1.0) * 255.0) as u8);
            }
        }
    }
    (
        IdxImages {
            count,
            rows: side,
            cols: side,
            pixels,
        },
        labels,
    )
}

//! Adam optimizer, uniform fan-in weight initialisation, and the binary
//! checkpoint container (parameters + optimizer moments + rng state).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient for parameter group {group} contains a non-finite value")]
    NonFiniteGradient { group: usize },
    #[error("parameter/gradient shape mismatch in group {group}")]
    ShapeMismatch { group: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Uniform init on (-1/sqrt(n_in), +1/sqrt(n_in)), deterministic in the rng.
pub fn init_weights<F: Scalar>(n_in: usize, n_out: usize, rng: &mut Rng) -> Matrix<F> {
    init_weights_scaled(n_in, n_out, 1.0, rng)
}

/// Uniform init on (-gain/sqrt(n_in), +gain/sqrt(n_in)).
pub fn init_weights_scaled<F: Scalar>(
    n_in: usize,
    n_out: usize,
    gain: f64,
    rng: &mut Rng,
) -> Matrix<F> {
    assert!(n_in >= 1 && n_out >= 1 && gain > 0.0);
    let bound = gain / (n_in as f64).sqrt();
    Matrix::from_fn(n_in, n_out, |_, _| F::of_f64(rng.uniform(-bound, bound)))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// First/second moment accumulators for a list of parameter matrices.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub params: AdamParams,
    pub step: u64,
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(shapes: &[(usize, usize)], params: AdamParams) -> Self {
        let m = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        let v = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        AdamState {
            params,
            step: 0,
            m,
            v,
        }
    }

    pub fn for_matrices(mats: &[Matrix<F>], params: AdamParams) -> Self {
        let shapes: Vec<(usize, usize)> = mats.iter().map(|m| (m.rows(), m.cols())).collect();
        Self::new(&shapes, params)
    }

    pub fn moments(&self) -> (&[Matrix<F>], &[Matrix<F>]) {
        (&self.m, &self.v)
    }
}

/// One bias-corrected Adam update over all parameter groups.
///
/// Rejects the whole step if any gradient value is non-finite; parameters are
/// untouched in that case.
pub fn adam_step<F: Scalar>(
    params: &mut [Matrix<F>],
    grads: &[Matrix<F>],
    state: &mut AdamState<F>,
) -> Result<(), OptimError> {
    adam_step_refs(params.iter_mut().collect(), grads, state)
}

/// `adam_step` over parameters that live inside other structures.
pub fn adam_step_refs<F: Scalar>(
    mut params: Vec<&mut Matrix<F>>,
    grads: &[Matrix<F>],
    state: &mut AdamState<F>,
) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimError::ShapeMismatch { group: usize::MAX });
    }
    for (group, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if (p.rows(), p.cols()) != (g.rows(), g.cols()) {
            return Err(OptimError::ShapeMismatch { group });
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { group });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamParams {
        lr,
        beta1,
        beta2,
        eps_hat,
    } = state.params;
    let lr = F::of_f64(lr);
    let b1 = F::of_f64(beta1);
    let b2 = F::of_f64(beta2);
    let eps = F::of_f64(eps_hat);
    let one = F::one();
    let bias1 = one - b1.powi(t);
    let bias2 = one - b2.powi(t);

    for (group, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let m = state.m[group].as_mut_slice();
        let v = state.v[group].as_mut_slice();
        let pv = p.as_mut_slice();
        let gv = g.as_slice();
        for k in 0..pv.len() {
            m[k] = b1 * m[k] + (one - b1) * gv[k];
            v[k] = b2 * v[k] + (one - b2) * gv[k] * gv[k];
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            pv[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   magic "SPKC" (4 bytes) | version u32 = 1 | dtype tag u8 (4=f32, 8=f64)
//   | step u64 | lr f64 | beta1 f64 | beta2 f64 | eps_hat f64
//   | rng state 4 x u64 | group count u32
//   then per group: rows u32 | cols u32 | params | m | v  (raw LE scalars)

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPKC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint<F> {
    pub params: Vec<Matrix<F>>,
    pub adam: AdamState<F>,
    pub rng_state: [u64; 4],
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    params: &[Matrix<F>],
    adam: &AdamState<F>,
    rng_state: [u64; 4],
) -> Result<(), OptimError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(F::DTYPE_TAG);
    out.extend_from_slice(&adam.step.to_le_bytes());
    out.extend_from_slice(&adam.params.lr.to_le_bytes());
    out.extend_from_slice(&adam.params.beta1.to_le_bytes());
    out.extend_from_slice(&adam.params.beta2.to_le_bytes());
    out.extend_from_slice(&adam.params.eps_hat.to_le_bytes());
    for w in rng_state {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (group, p) in params.iter().enumerate() {
        out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols() as u32).to_le_bytes());
        for &x in p.as_slice() {
            x.write_le(&mut out);
        }
        for &x in adam.m[group].as_slice() {
            x.write_le(&mut out);
        }
        for &x in adam.v[group].as_slice() {
            x.write_le(&mut out);
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>, OptimError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if cur.take(4)? != &CHECKPOINT_MAGIC[..] {
        return Err(OptimError::Format("bad checkpoint magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(OptimError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let tag = cur.u8()?;
    if tag != F::DTYPE_TAG {
        return Err(OptimError::Format(format!(
            "dtype mismatch: file tag {tag}, requested {}",
            F::DTYPE_TAG
        )));
    }
    let step = cur.u64()?;
    let lr = cur.f64()?;
    let beta1 = cur.f64()?;
    let beta2 = cur.f64()?;
    let eps_hat = cur.f64()?;
    let rng_state = [cur.u64()?, cur.u64()?, cur.u64()?, cur.u64()?];
    let groups = cur.u32()? as usize;

    let mut params = Vec::with_capacity(groups);
    let mut m = Vec::with_capacity(groups);
    let mut v = Vec::with_capacity(groups);
    for _ in 0..groups {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let read_matrix = |cur: &mut Cursor| -> Result<Matrix<F>, OptimError> {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(F::read_le(cur.take(F::BYTES)?));
            }
            Ok(Matrix::from_vec(rows, cols, data))
        };
        params.push(read_matrix(&mut cur)?);
        m.push(read_matrix(&mut cur)?);
        v.push(read_matrix(&mut cur)?);
    }

    let adam = AdamState {
        params: AdamParams {
            lr,
            beta1,
            beta2,
            eps_hat,
        },
        step,
        m,
        v,
    };
    Ok(Checkpoint {
        params,
        adam,
        rng_state,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OptimError> {
        if self.pos + n > self.bytes.len() {
            return Err(OptimError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, OptimError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, OptimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, OptimError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, OptimError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

//! Minimal tensor shapes used by the engine: a (batch, time, neuron) grid,
//! a row-major matrix, and a binary spike raster. Nothing here is a general
//! tensor library; these are exactly the layouts the kernels need.

use crate::scalar::Scalar;

/// Dense real-valued tensor over (batch, time, neuron), row-major with the
/// neuron axis contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<F> {
    batch: usize,
    steps: usize,
    neurons: usize,
    data: Vec<F>,
}

impl<F: Scalar> Grid3<F> {
    pub fn zeros(batch: usize, steps: usize, neurons: usize) -> Self {
        Grid3 {
            batch,
            steps,
            neurons,
            data: vec![F::zero(); batch * steps * neurons],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.steps, self.neurons)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    #[inline]
    fn offset(&self, b: usize, t: usize, n: usize) -> usize {
        debug_assert!(b < self.batch && t < self.steps && n < self.neurons);
        (b * self.steps + t) * self.neurons + n
    }

    #[inline]
    pub fn at(&self, b: usize, t: usize, n: usize) -> F {
        self.data[self.offset(b, t, n)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, t: usize, n: usize) -> &mut F {
        let i = self.offset(b, t, n);
        &mut self.data[i]
    }

    /// Contiguous neuron slice at a fixed (batch, time).
    #[inline]
    pub fn row(&self, b: usize, t: usize) -> &[F] {
        let start = (b * self.steps + t) * self.neurons;
        &self.data[start..start + self.neurons]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, t: usize) -> &mut [F] {
        let start = (b * self.steps + t) * self.neurons;
        &mut self.data[start..start + self.neurons]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bytes occupied by the value storage.
    pub fn storage_bytes(&self) -> usize {
        self.data.len() * F::BYTES
    }
}

/// Row-major matrix; for weights the convention is (inputs, outputs) so that
/// `row(i)` is the fan-out of presynaptic neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut F {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn storage_bytes(&self) -> usize {
        self.data.len() * F::BYTES
    }
}

/// Binary spike tensor over (batch, time, neuron). Values are stored as one
/// byte each so kernels can read rows directly; the type guarantees every
/// element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    batch: usize,
    steps: usize,
    neurons: usize,
    data: Vec<u8>,
}

impl SpikeRaster {
    pub fn zeros(batch: usize, steps: usize, neurons: usize) -> Self {
        SpikeRaster {
            batch,
            steps,
            neurons,
            data: vec![0; batch * steps * neurons],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.steps, self.neurons)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    #[inline]
    fn offset(&self, b: usize, t: usize, n: usize) -> usize {
        debug_assert!(b < self.batch && t < self.steps && n < self.neurons);
        (b * self.steps + t) * self.neurons + n
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, n: usize) -> bool {
        self.data[self.offset(b, t, n)] == 1
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, n: usize, spike: bool) {
        let i = self.offset(b, t, n);
        self.data[i] = spike as u8;
    }

    /// Contiguous 0/1 neuron row at a fixed (batch, time).
    #[inline]
    pub fn row(&self, b: usize, t: usize) -> &[u8] {
        let start = (b * self.steps + t) * self.neurons;
        &self.data[start..start + self.neurons]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Raw mutable bytes; callers must only write 0 or 1.
    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Total number of spikes in the raster.
    pub fn count_spikes(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Spike count per (batch, neuron), summed over time.
    pub fn spike_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.batch * self.neurons];
        for b in 0..self.batch {
            for t in 0..self.steps {
                let row = self.row(b, t);
                let base = b * self.neurons;
                for (n, &s) in row.iter().enumerate() {
                    counts[base + n] += s as u32;
                }
            }
        }
        counts
    }

    pub fn storage_bytes(&self) -> usize {
        self.data.len()
    }
}

/// Powers of a decay factor: `powers[k] == alpha^k`, built by repeated
/// multiplication so every consumer sees identical rounding.
pub fn decay_powers<F: Scalar>(alpha: F, len: usize) -> Vec<F> {
    let mut powers = Vec::with_capacity(len);
    let mut p = F::one();
    for _ in 0..len {
        powers.push(p);
        p *= alpha;
    }
    powers
}

impl<F: Scalar> Grid3<F> {
    /// Copy of a contiguous batch range (for batch-chunked workers).
    pub fn slice_batch(&self, lo: usize, hi: usize) -> Grid3<F> {
        debug_assert!(lo <= hi && hi <= self.batch);
        let stride = self.steps * self.neurons;
        Grid3 {
            batch: hi - lo,
            steps: self.steps,
            neurons: self.neurons,
            data: self.data[lo * stride..hi * stride].to_vec(),
        }
    }
}

impl SpikeRaster {
    /// Copy of a contiguous batch range.
    pub fn slice_batch(&self, lo: usize, hi: usize) -> SpikeRaster {
        debug_assert!(lo <= hi && hi <= self.batch);
        let stride = self.steps * self.neurons;
        SpikeRaster {
            batch: hi - lo,
            steps: self.steps,
            neurons: self.neurons,
            data: self.data[lo * stride..hi * stride].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid3_indexing_roundtrip() {
        let mut g: Grid3<f64> = Grid3::zeros(2, 3, 4);
        *g.at_mut(1, 2, 3) = 7.5;
        *g.at_mut(0, 0, 0) = -1.0;
        assert_eq!(g.at(1, 2, 3), 7.5);
        assert_eq!(g.at(0, 0, 0), -1.0);
        assert_eq!(g.row(1, 2)[3], 7.5);
        assert_eq!(g.dims(), (2, 3, 4));
    }

    #[test]
    fn raster_is_binary_by_construction() {
        let mut r = SpikeRaster::zeros(1, 2, 2);
        r.set(0, 1, 1, true);
        r.set(0, 0, 0, true);
        r.set(0, 0, 0, false);
        assert!(r.as_slice().iter().all(|&v| v == 0 || v == 1));
        assert_eq!(r.count_spikes(), 1);
        assert_eq!(r.spike_counts(), vec![0, 1]);
    }

    #[test]
    fn decay_powers_match_repeated_multiplication() {
        let alpha = 0.9048374180359595_f64;
        let p = decay_powers(alpha, 6);
        assert_eq!(p[0], 1.0);
        let mut acc = 1.0;
        for k in 1..6 {
            acc *= alpha;
            assert_eq!(p[k], acc);
        }
    }
}

//! Active-entry bookkeeping: a neuron is active at a time step when its
//! membrane potential lies strictly within the backprop window around the
//! threshold. Gradients are only computed and propagated at active entries.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Grid3;

#[derive(Debug, Error, PartialEq)]
pub enum ActivityError {
    #[error("activity percentage undefined for an empty tensor (B*T*N = 0)")]
    EmptyVolume,
}

/// The activity predicate: |v - v_th| < b_th, strict on the boundary.
///
/// Every place that gates on activity (active-set construction, the
/// truncated surrogate, schedule building) calls this one function so the
/// gate agrees bitwise across modules.
#[inline]
pub fn is_active<F: Scalar>(v: F, v_th: F, b_th: F) -> bool {
    (v - v_th).abs() < b_th
}

/// Sorted coordinate list of active (batch, neuron, time) entries.
///
/// Entries are ordered by (b, n, t), so the times of one (b, n) pair form a
/// contiguous ascending run; both the reverse-time backward sweep and the
/// scatter accumulation rely on this ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    entries: Vec<(u32, u32, u32)>,
    batch: usize,
    steps: usize,
    neurons: usize,
    /// entries index range per (b, n) pair, len batch*neurons + 1.
    run_offsets: Vec<u32>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.steps, self.neurons)
    }

    /// All entries as (b, n, t), globally sorted.
    pub fn entries(&self) -> &[(u32, u32, u32)] {
        &self.entries
    }

    /// Ascending active times of one (batch, neuron) pair.
    pub fn times_for(&self, b: usize, n: usize) -> &[(u32, u32, u32)] {
        let idx = b * self.neurons + n;
        let lo = self.run_offsets[idx] as usize;
        let hi = self.run_offsets[idx + 1] as usize;
        &self.entries[lo..hi]
    }

    /// Index into the aligned-values vector of the first entry of (b, n).
    pub fn run_start(&self, b: usize, n: usize) -> usize {
        self.run_offsets[b * self.neurons + n] as usize
    }

    /// Fraction of active entries, in [0, 1].
    pub fn fraction(&self) -> f64 {
        let volume = self.batch * self.steps * self.neurons;
        if volume == 0 {
            0.0
        } else {
            self.len() as f64 / volume as f64
        }
    }

    /// Approximate bytes held by the coordinate storage.
    pub fn storage_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<(u32, u32, u32)>()
    }
}

/// Scan a membrane record and collect every entry satisfying the activity
/// predicate, sorted by (b, n, t).
pub fn build_active_set<F: Scalar>(v: &Grid3<F>, v_th: F, b_th: F) -> ActiveSet {
    let (batch, steps, neurons) = v.dims();
    let mut entries = Vec::new();
    let mut run_offsets = Vec::with_capacity(batch * neurons + 1);
    run_offsets.push(0u32);
    for b in 0..batch {
        for n in 0..neurons {
            for t in 0..steps {
                if is_active(v.at(b, t, n), v_th, b_th) {
                    entries.push((b as u32, n as u32, t as u32));
                }
            }
            run_offsets.push(entries.len() as u32);
        }
    }
    ActiveSet {
        entries,
        batch,
        steps,
        neurons,
        run_offsets,
    }
}

/// 100 * |active| / (B*T*N).
pub fn activity_percentage(
    active_count: usize,
    batch: usize,
    steps: usize,
    neurons: usize,
) -> Result<f64, ActivityError> {
    let volume = batch * steps * neurons;
    if volume == 0 {
        return Err(ActivityError::EmptyVolume);
    }
    Ok(100.0 * active_count as f64 / volume as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(values: &[(usize, usize, usize, f64)], dims: (usize, usize, usize)) -> Grid3<f64> {
        let mut g = Grid3::zeros(dims.0, dims.1, dims.2);
        for &(b, t, n, v) in values {
            *g.at_mut(b, t, n) = v;
        }
        g
    }

    #[test]
    fn inside_window_is_active() {
        let v = record(&[(0, 3, 1, 0.85)], (1, 5, 3));
        let set = build_active_set(&v, 1.0, 0.2);
        assert!(set.entries().contains(&(0, 1, 3)));
    }

    #[test]
    fn boundary_is_strictly_inactive() {
        // Dyadic values so |v - v_th| lands exactly on the window edge.
        let v = record(&[(0, 3, 1, 0.75), (0, 4, 2, 1.25)], (1, 5, 3));
        let set = build_active_set(&v, 1.0, 0.25);
        assert!(!set.entries().contains(&(0, 1, 3)));
        assert!(!set.entries().contains(&(0, 2, 4)));
        assert!(!is_active(0.75, 1.0, 0.25));
        assert!(is_active(0.75 + f64::EPSILON, 1.0, 0.25));
    }

    #[test]
    fn all_zero_membranes_give_empty_set() {
        let v: Grid3<f64> = Grid3::zeros(2, 6, 4);
        let set = build_active_set(&v, 1.0, 0.2);
        assert!(set.is_empty());
        assert_eq!(set.fraction(), 0.0);
    }

    #[test]
    fn entries_match_predicate_exhaustively() {
        // Exhaustive cross-check of the set against the definition.
        let mut v = Grid3::zeros(2, 7, 5);
        let mut x = 0.31_f64;
        for b in 0..2 {
            for t in 0..7 {
                for n in 0..5 {
                    x = (x * 997.0 + 0.123).fract() * 2.0;
                    *v.at_mut(b, t, n) = x;
                }
            }
        }
        let set = build_active_set(&v, 1.0, 0.2);
        for b in 0..2 {
            for t in 0..7 {
                for n in 0..5 {
                    let expected = (v.at(b, t, n) - 1.0).abs() < 0.2;
                    let present = set.entries().contains(&(b as u32, n as u32, t as u32));
                    assert_eq!(expected, present, "mismatch at ({b},{n},{t})");
                }
            }
        }
        // Sorted, duplicate-free.
        let mut sorted = set.entries().to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, set.entries());
    }

    #[test]
    fn runs_are_ascending_in_time() {
        let v = record(&[(0, 4, 2, 1.0), (0, 1, 2, 1.1), (0, 6, 2, 0.9)], (1, 8, 3));
        let set = build_active_set(&v, 1.0, 0.2);
        let run: Vec<u32> = set.times_for(0, 2).iter().map(|e| e.2).collect();
        assert_eq!(run, vec![1, 4, 6]);
        assert!(set.times_for(0, 0).is_empty());
    }

    #[test]
    fn activity_percentage_arithmetic() {
        assert_eq!(activity_percentage(3, 1, 30, 10).unwrap(), 1.0);
        assert_eq!(activity_percentage(0, 2, 5, 7).unwrap(), 0.0);
        assert_eq!(
            activity_percentage(1, 0, 30, 10),
            Err(ActivityError::EmptyVolume)
        );
    }

    #[test]
    fn infinite_window_marks_everything_active() {
        let v = record(&[(0, 0, 0, -3.0), (0, 1, 1, 250.0)], (1, 2, 2));
        let set = build_active_set(&v, 1.0, f64::INFINITY);
        assert_eq!(set.len(), 4);
    }
}

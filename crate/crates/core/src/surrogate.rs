//! Surrogate derivative of the spike function and its window-truncated form.
//! The backward pass never differentiates the step function itself; it
//! substitutes `g` (dense mode) or `g_truncated` (sparse/windowed mode).

use crate::active::is_active;
use crate::scalar::Scalar;

/// Parameters of the surrogate derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateParams<F> {
    /// Sharpness; larger values concentrate the derivative at the threshold.
    pub beta: F,
    pub v_th: F,
    /// Window half-width; `infinity` disables truncation.
    pub b_th: F,
}

impl<F: Scalar> SurrogateParams<F> {
    pub fn new(beta: F, v_th: F, b_th: F) -> Self {
        debug_assert!(beta > F::zero());
        debug_assert!(b_th >= F::zero());
        SurrogateParams { beta, v_th, b_th }
    }
}

/// g(v) = 1 / (beta * |v - v_th| + 1)^2
#[inline]
pub fn g<F: Scalar>(v: F, p: &SurrogateParams<F>) -> F {
    let q = p.beta * (v - p.v_th).abs() + F::one();
    F::one() / (q * q)
}

/// g(v) inside the window, exactly zero outside.
#[inline]
pub fn g_truncated<F: Scalar>(v: F, p: &SurrogateParams<F>) -> F {
    if is_active(v, p.v_th, p.b_th) {
        g(v, p)
    } else {
        F::zero()
    }
}

/// Which surrogate the backward pass applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Untruncated surrogate at every entry (the classical dense rule).
    Dense,
    /// Window-truncated surrogate; zero at inactive entries.
    Truncated,
}

/// Surrogate evaluation bundled with the window choice.
#[derive(Debug, Clone, Copy)]
pub struct Gate<F> {
    pub params: SurrogateParams<F>,
    pub window: Window,
}

impl<F: Scalar> Gate<F> {
    pub fn new(params: SurrogateParams<F>, window: Window) -> Self {
        Gate { params, window }
    }

    #[inline]
    pub fn eval(&self, v: F) -> F {
        match self.window {
            Window::Dense => g(v, &self.params),
            Window::Truncated => g_truncated(v, &self.params),
        }
    }

    /// True when the gate is nonzero at `v`.
    #[inline]
    pub fn passes(&self, v: F) -> bool {
        match self.window {
            Window::Dense => true,
            Window::Truncated => is_active(v, self.params.v_th, self.params.b_th),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::build_active_set;
    use crate::tensor::Grid3;

    fn params(beta: f64, b_th: f64) -> SurrogateParams<f64> {
        SurrogateParams::new(beta, 1.0, b_th)
    }

    #[test]
    fn peak_value_at_threshold() {
        assert_eq!(g(1.0, &params(100.0, 0.2)), 1.0);
    }

    #[test]
    fn known_values_at_offsets() {
        let p = params(100.0, 0.2);
        // (100*0.2 + 1)^2 = 441
        assert!((g(1.2, &p) - 1.0 / 441.0).abs() < 1e-15);
        assert!((g(0.8, &p) - 1.0 / 441.0).abs() < 1e-15);
        // (100*0.01 + 1)^2 = 4
        assert!((g(1.01, &p) - 0.25).abs() < 1e-15);
        assert!((g(0.99, &p) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn truncation_window() {
        let p = params(100.0, 0.2);
        assert_eq!(g_truncated(1.1, &p), g(1.1, &p));
        assert_eq!(g_truncated(-5.0, &p), 0.0);
        // Strict boundary, checked with a dyadic window edge.
        let p = params(100.0, 0.25);
        assert_eq!(g_truncated(1.25, &p), 0.0);
        assert_eq!(g_truncated(0.75, &p), 0.0);
        assert_ne!(g_truncated(0.75 + 1e-9, &p), 0.0);
    }

    #[test]
    fn infinite_window_degenerates_to_dense() {
        let p = params(100.0, f64::INFINITY);
        for v in [-10.0, 0.0, 0.999, 1.0, 1.5, 42.0] {
            assert_eq!(g_truncated(v, &p), g(v, &p));
        }
    }

    #[test]
    fn even_about_threshold_and_decreasing() {
        let p = params(100.0, 0.2);
        let mut prev = g(1.0, &p);
        for k in 1..50 {
            // Dyadic offsets keep v_th +/- d exactly symmetric in binary.
            let d = k as f64 / 64.0;
            let hi = g(1.0 + d, &p);
            let lo = g(1.0 - d, &p);
            assert_eq!(hi, lo, "g must be even about v_th");
            assert!(hi > 0.0 && hi <= 1.0);
            assert!(hi < prev, "g must decrease away from v_th");
            prev = hi;
        }
    }

    #[test]
    fn window_edge_carries_under_a_quarter_percent_of_peak() {
        // For beta=100, B_th=0.2 the value at the window edge is 1/441.
        let p = params(100.0, 0.2);
        let edge = g(1.0 + 0.2, &p);
        assert!(edge / g(1.0, &p) < 0.0023);
    }

    #[test]
    fn gate_agrees_with_active_set() {
        let p = params(100.0, 0.2);
        let mut v = Grid3::zeros(1, 40, 1);
        let mut x = 0.71_f64;
        for t in 0..40 {
            x = (x * 997.0 + 0.177).fract() * 2.0;
            *v.at_mut(0, t, 0) = x;
        }
        let set = build_active_set(&v, p.v_th, p.b_th);
        for t in 0..40 {
            let gated = g_truncated(v.at(0, t, 0), &p) != 0.0;
            let active = set.entries().contains(&(0, 0, t as u32));
            assert_eq!(gated, active, "gate/active mismatch at t={t}");
        }
    }
}

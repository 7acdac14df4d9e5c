//! Spiking-network training engine with two interchangeable backward
//! passes: a dense reference that evaluates the surrogate-gradient
//! equations with unfused fixed-order loops, and an event-driven pass that
//! computes gradients only at entries whose membrane potential lies within
//! a window of the threshold. With the window-truncated surrogate the two
//! agree exactly; the event-driven pass simply skips the work that would
//! have produced zeros. Kernels are generic over the scalar type, so the
//! same code runs in f32 for training and f64 for oracle checks.

// Numeric kernels use explicit index loops and fixed-order accumulation so
// reduction order is visible at the call site; NaN-rejecting validation
// negates comparisons on purpose.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod active;
pub mod bench;
pub mod config;
pub mod data;
pub mod forward;
pub mod grad_dense;
pub mod grad_sparse;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod surrogate;
pub mod tensor;
pub mod train;
pub mod verify;

pub use scalar::Scalar;

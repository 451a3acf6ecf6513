//! Test-input prioritization for neural-network classifiers.
//!
//! The crate ranks an unlabeled test suite so that inputs most likely to be
//! mispredicted come first. The centerpiece scores inputs after pruning
//! class-wise noisy features at a hidden layer: per-class feature
//! contributions are measured by single-feature ablation over
//! high-confidence reference sets, the least-contributing features are
//! masked during re-inference, and an uncertainty metric is applied to the
//! re-derived probability vector. Alongside it ship the plain uncertainty
//! metrics (Gini, MaxP, Margin), nearest-neighbor smoothing, MC-Dropout,
//! neuron coverage (NAC/NBC), surprise adequacy (LSA/DSA), a random
//! baseline, and the APFD/TRC evaluation harness that compares them.

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod hashing;
pub mod model;
pub mod prioritize;
pub mod rng;
pub mod selection;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Rounds half away from zero, the rounding used everywhere a fraction is
/// turned into a count (pruned features, budgets, label flips) so that the
/// resulting shapes are portable.
pub fn round_half_away(x: f64) -> usize {
    debug_assert!(x >= 0.0);
    (x + 0.5).floor() as usize
}

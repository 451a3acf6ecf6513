//! Shared fixtures for the pipeline benchmarks.

use fastprio_core::data::{make_synthetic, Dataset};
use fastprio_core::model::Model;
use fastprio_core::selection::{build_reference_sets, ReferenceSetConfig, ReferenceSets};
use fastprio_core::train::{train_dense, TrainConfig};

/// A trained desk model with its data: `dims`-dimensional 3-class blobs and
/// a `dims -> hidden -> hidden -> 3` stack.
pub fn desk_fixture(hidden: usize, per_class: usize) -> (Model, Dataset) {
    let data = make_synthetic(3, per_class, 2, 0.8, 0.08, 42).expect("synthetic data");
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 32,
        seed: 42,
        l2_decay: 1e-3,
    };
    let (model, _) = train_dense(&[2, hidden, hidden, 3], &data, &cfg).expect("training");
    (model, data)
}

/// Reference sets for the fixture at a permissive threshold.
pub fn fixture_refs(model: &Model, data: &Dataset, cap: usize) -> ReferenceSets {
    let cfg = ReferenceSetConfig {
        confidence_threshold: 0.5,
        max_per_class: cap,
    };
    build_reference_sets(model, data, &cfg, 42).expect("reference sets")
}

//! Class-wise feature contribution measurement, mask construction, and the
//! alternative selection strategies.
//!
//! Contribution of a feature to a class is the drop in the model's mean
//! class confidence over a high-confidence reference set when that single
//! feature is ablated at the feature layer. Features are ablated one at a
//! time against the original model, never in subsets, so the assessment
//! costs one partial forward per (example, feature) pair.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{FeatureView, Model};
use crate::rng::RngStream;
use crate::round_half_away;
use crate::tensor::Tensor;

/// Filter for reference-set membership: only correctly predicted examples
/// with class confidence at or above `confidence_threshold` qualify, and
/// each class keeps at most `max_per_class` of them (seeded subsample).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReferenceSetConfig {
    pub confidence_threshold: f32,
    pub max_per_class: usize,
}

impl Default for ReferenceSetConfig {
    fn default() -> Self {
        ReferenceSetConfig {
            confidence_threshold: 0.9,
            max_per_class: 200,
        }
    }
}

/// Cached per-class reference data: feature-layer activations and the
/// original class confidences, in matching order.
#[derive(Clone, Debug)]
pub struct ClassReferences {
    pub features: Vec<Tensor>,
    pub base_confidence: Vec<f32>,
    /// Row indices into the training set, ascending.
    pub indices: Vec<usize>,
}

impl ClassReferences {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Reference sets for every class at one feature layer.
#[derive(Clone, Debug)]
pub struct ReferenceSets {
    pub layer: usize,
    pub per_class: Vec<ClassReferences>,
}

impl ReferenceSets {
    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_class.iter().map(|r| r.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(|r| r.len()).sum()
    }
}

/// Scans the training set and keeps, per class `c`, the examples whose
/// prediction matches their label `c` with confidence at or above the
/// threshold. Classes above the cap are subsampled by the seeded stream.
pub fn build_reference_sets(
    model: &Model,
    train: &Dataset,
    cfg: &ReferenceSetConfig,
    seed: u64,
) -> Result<ReferenceSets> {
    if !(cfg.confidence_threshold > 0.0 && cfg.confidence_threshold <= 1.0) {
        return Err(Error::Parameter(format!(
            "confidence threshold {} outside (0, 1]",
            cfg.confidence_threshold
        )));
    }
    if cfg.max_per_class == 0 {
        return Err(Error::Parameter("max_per_class must be at least 1".into()));
    }
    if train.class_count() != model.class_count() {
        return Err(Error::Consistency(format!(
            "training data has {} classes, model has {}",
            train.class_count(),
            model.class_count()
        )));
    }

    let classes = model.class_count();
    let mut candidates: Vec<Vec<(usize, f32)>> = vec![Vec::new(); classes];
    for i in 0..train.len() {
        let x = train.input(i);
        let p = model.forward(&x)?;
        let predicted = p.argmax()?;
        let label = train.label(i);
        if predicted == label && p.data()[label] >= cfg.confidence_threshold {
            candidates[label].push((i, p.data()[label]));
        }
    }

    let rng = RngStream::new(seed, 0);
    let layer = model.feature_layer();
    let mut per_class = Vec::with_capacity(classes);
    for (class, mut members) in candidates.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyReferenceSet { class });
        }
        if members.len() > cfg.max_per_class {
            let mut class_rng = rng.child(class as u64);
            class_rng.shuffle(&mut members);
            members.truncate(cfg.max_per_class);
            members.sort_unstable_by_key(|&(i, _)| i);
        }
        let mut features = Vec::with_capacity(members.len());
        let mut base_confidence = Vec::with_capacity(members.len());
        let mut indices = Vec::with_capacity(members.len());
        for (i, conf) in members {
            features.push(model.forward_to_layer(&train.input(i), layer)?);
            base_confidence.push(conf);
            indices.push(i);
        }
        per_class.push(ClassReferences {
            features,
            base_confidence,
            indices,
        });
    }
    Ok(ReferenceSets { layer, per_class })
}

/// Per-class, per-feature contribution values: a `classes x features`
/// row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix {
    values: Vec<f32>,
    classes: usize,
    features: usize,
    layer: usize,
    ref_sizes: Vec<usize>,
}

impl ContributionMatrix {
    pub fn new(
        values: Vec<f32>,
        classes: usize,
        features: usize,
        layer: usize,
        ref_sizes: Vec<usize>,
    ) -> Result<Self> {
        if values.len() != classes * features {
            return Err(Error::Dimension(format!(
                "{} values for a {classes}x{features} matrix",
                values.len()
            )));
        }
        Ok(ContributionMatrix {
            values,
            classes,
            features,
            layer,
            ref_sizes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn ref_sizes(&self) -> &[usize] {
        &self.ref_sizes
    }

    pub fn get(&self, class: usize, feature: usize) -> f32 {
        self.values[class * self.features + feature]
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.values[class * self.features..(class + 1) * self.features]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Mean class-`c` confidence over the reference set minus the same mean with
/// feature `feature` zeroed at the feature layer. Exactly zero when the
/// feature has no influence on the class output path.
pub fn measure_contribution(
    model: &Model,
    refs: &ClassReferences,
    class: usize,
    feature: usize,
    view: &FeatureView,
) -> Result<f32> {
    if refs.is_empty() {
        return Err(Error::EmptyReferenceSet { class });
    }
    let layer = view.layer_index;
    let mut base_sum = 0.0f32;
    let mut masked_sum = 0.0f32;
    for (features, &base) in refs.features.iter().zip(&refs.base_confidence) {
        let ablated = view.zero_feature(features, feature)?;
        let p = model.forward_from_layer(&ablated, layer)?;
        base_sum += base;
        masked_sum += p.data()[class];
    }
    let n = refs.len() as f32;
    Ok(base_sum / n - masked_sum / n)
}

/// Counters reported by [`assess_all`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssessStats {
    /// Partial forward passes (resumed at the feature layer) executed.
    pub partial_forwards: u64,
}

/// Fills the full contribution matrix: one single-feature ablation per
/// (class, feature) pair, each averaged over that class's reference set.
/// Work is split over `jobs` workers (0 = default parallelism); entries are
/// written to independent slots so the result is identical for every job
/// count.
pub fn assess_all(
    model: &Model,
    refs: &ReferenceSets,
    jobs: usize,
) -> Result<(ContributionMatrix, AssessStats)> {
    let view = model.feature_view(Some(refs.layer))?;
    if refs.per_class.is_empty() || refs.per_class.len() != model.class_count() {
        return Err(Error::Consistency(format!(
            "reference sets cover {} classes, model has {}",
            refs.per_class.len(),
            model.class_count()
        )));
    }
    for (class, r) in refs.per_class.iter().enumerate() {
        if r.is_empty() {
            return Err(Error::EmptyReferenceSet { class });
        }
    }

    let classes = refs.per_class.len();
    let features = view.feature_count;
    let counter = AtomicU64::new(0);
    let cells: Vec<(usize, usize)> = (0..classes)
        .flat_map(|c| (0..features).map(move |i| (c, i)))
        .collect();

    let compute = |cell: &(usize, usize)| -> Result<f32> {
        let (class, feature) = *cell;
        let r = &refs.per_class[class];
        counter.fetch_add(r.len() as u64, Ordering::Relaxed);
        measure_contribution(model, r, class, feature, &view)
    };

    let values: Vec<f32> = run_in_pool(jobs, || {
        cells.par_iter().map(compute).collect::<Result<Vec<f32>>>()
    })?;

    let matrix = ContributionMatrix::new(values, classes, features, refs.layer, refs.sizes())?;
    Ok((
        matrix,
        AssessStats {
            partial_forwards: counter.into_inner(),
        },
    ))
}

/// Runs `f` inside a rayon pool of `jobs` threads (0 = global pool).
pub fn run_in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool construction");
    pool.install(f)
}

/// Per-class binary keep/drop rows over the features of one layer. Every row
/// has exactly `pruned_per_class` zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMask {
    rows: Vec<f32>,
    classes: usize,
    features: usize,
    rate: f32,
    pruned_per_class: usize,
    layer: usize,
}

impl FeatureMask {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }

    pub fn pruned_per_class(&self) -> usize {
        self.pruned_per_class
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.rows[class * self.features..(class + 1) * self.features]
    }

    /// An all-ones mask (`rate = 0`): masked re-inference reproduces the
    /// original probabilities.
    pub fn all_ones(classes: usize, features: usize, layer: usize) -> Self {
        FeatureMask {
            rows: vec![1.0; classes * features],
            classes,
            features,
            rate: 0.0,
            pruned_per_class: 0,
            layer,
        }
    }
}

/// Builds the per-class masks: for each class, the `round(rate * features)`
/// features with the smallest contribution are dropped; value ties drop the
/// lower feature index first.
pub fn build_masks(matrix: &ContributionMatrix, rate: f32) -> Result<FeatureMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "pruning rate {rate} outside [0, 1)"
        )));
    }
    let features = matrix.features();
    let classes = matrix.classes();
    let k = round_half_away(rate as f64 * features as f64);
    let mut rows = vec![1.0f32; classes * features];
    for class in 0..classes {
        let row = matrix.row(class);
        let mut order: Vec<usize> = (0..features).collect();
        order.sort_by(|&a, &b| {
            row[a]
                .partial_cmp(&row[b])
                .expect("finite contributions")
                .then(a.cmp(&b))
        });
        for &feature in order.iter().take(k) {
            rows[class * features + feature] = 0.0;
        }
    }
    Ok(FeatureMask {
        rows,
        classes,
        features,
        rate,
        pruned_per_class: k,
        layer: matrix.layer(),
    })
}

/// The alternative per-feature scoring strategies. Lower scores are pruned
/// first, so each plugs into [`build_masks`] unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Mean feature activation over the reference set.
    Output,
    /// Fraction of reference examples activating the feature (> 0).
    Frequency,
    /// Per-feature activation variance over the reference set.
    Variance,
    /// Mean |d p_c / d feature| by central finite differences.
    Gradient,
    /// Seeded uniform scores.
    Random,
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" => Ok(SelectionStrategy::Output),
            "frequency" | "activation-frequency" => Ok(SelectionStrategy::Frequency),
            "variance" => Ok(SelectionStrategy::Variance),
            "gradient" => Ok(SelectionStrategy::Gradient),
            "random" => Ok(SelectionStrategy::Random),
            other => Err(Error::Parameter(format!(
                "unknown selection strategy '{other}' (expected output, frequency, variance, gradient, or random)"
            ))),
        }
    }
}

/// Step used by the finite-difference gradient strategy.
pub const GRADIENT_FD_STEP: f32 = 1e-3;

/// Scores every (class, feature) pair under one of the alternative
/// strategies, producing a matrix shaped exactly like [`assess_all`]'s.
pub fn strategy_scores(
    model: &Model,
    refs: &ReferenceSets,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<ContributionMatrix> {
    let view = model.feature_view(Some(refs.layer))?;
    let classes = refs.per_class.len();
    let features = view.feature_count;
    let mut values = vec![0.0f32; classes * features];

    match strategy {
        SelectionStrategy::Random => {
            let mut rng = RngStream::new(seed, 0);
            for v in &mut values {
                *v = rng.next_f32();
            }
        }
        SelectionStrategy::Output | SelectionStrategy::Frequency | SelectionStrategy::Variance => {
            for (class, r) in refs.per_class.iter().enumerate() {
                if r.is_empty() {
                    return Err(Error::EmptyReferenceSet { class });
                }
                let n = r.len() as f32;
                for feature in 0..features {
                    let vals: Vec<f32> = r
                        .features
                        .iter()
                        .map(|f| view.feature_value(f, feature))
                        .collect();
                    let score = match strategy {
                        SelectionStrategy::Output => vals.iter().sum::<f32>() / n,
                        SelectionStrategy::Frequency => {
                            vals.iter().filter(|&&v| v > 0.0).count() as f32 / n
                        }
                        SelectionStrategy::Variance => {
                            let mean = vals.iter().sum::<f32>() / n;
                            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n
                        }
                        _ => unreachable!(),
                    };
                    values[class * features + feature] = score;
                }
            }
        }
        SelectionStrategy::Gradient => {
            let h = GRADIENT_FD_STEP;
            for (class, r) in refs.per_class.iter().enumerate() {
                if r.is_empty() {
                    return Err(Error::EmptyReferenceSet { class });
                }
                for feature in 0..features {
                    let mut acc = 0.0f32;
                    for f in &r.features {
                        let plus = model
                            .forward_from_layer(&view.nudge_feature(f, feature, h)?, refs.layer)?;
                        let minus = model
                            .forward_from_layer(&view.nudge_feature(f, feature, -h)?, refs.layer)?;
                        acc += ((plus.data()[class] - minus.data()[class]) / (2.0 * h)).abs();
                    }
                    values[class * features + feature] = acc / r.len() as f32;
                }
            }
        }
    }

    ContributionMatrix::new(values, classes, features, refs.layer, refs.sizes())
}

// --- serialization ----------------------------------------------------------

/// JSON sidecar stored next to matrix/mask tensor files.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    layer: usize,
    classes: usize,
    features: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_sizes: Option<Vec<usize>>,
}

fn sidecar_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    (prefix.with_extension("tns"), prefix.with_extension("json"))
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let json =
        serde_json::to_string_pretty(sidecar).map_err(|e| Error::json(path, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e.to_string()))
}

impl ContributionMatrix {
    /// Writes `<prefix>.tns` and `<prefix>.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let (tns, json) = sidecar_paths(prefix.as_ref());
        Tensor::new(vec![self.classes, self.features], self.values.clone())?.save(&tns)?;
        write_sidecar(
            &json,
            &Sidecar {
                layer: self.layer,
                classes: self.classes,
                features: self.features,
                rate: None,
                ref_sizes: Some(self.ref_sizes.clone()),
            },
        )
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let (tns, json) = sidecar_paths(prefix.as_ref());
        let sidecar = read_sidecar(&json)?;
        let tensor = Tensor::load(&tns)?;
        if tensor.shape() != [sidecar.classes, sidecar.features] {
            return Err(Error::Consistency(format!(
                "tensor {:?} does not match sidecar {}x{}",
                tensor.shape(),
                sidecar.classes,
                sidecar.features
            )));
        }
        ContributionMatrix::new(
            tensor.into_data(),
            sidecar.classes,
            sidecar.features,
            sidecar.layer,
            sidecar.ref_sizes.unwrap_or_default(),
        )
    }
}

impl FeatureMask {
    /// Writes `<prefix>.tns` and `<prefix>.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let (tns, json) = sidecar_paths(prefix.as_ref());
        Tensor::new(vec![self.classes, self.features], self.rows.clone())?.save(&tns)?;
        write_sidecar(
            &json,
            &Sidecar {
                layer: self.layer,
                classes: self.classes,
                features: self.features,
                rate: Some(self.rate),
                ref_sizes: None,
            },
        )
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let (tns, json) = sidecar_paths(prefix.as_ref());
        let sidecar = read_sidecar(&json)?;
        let tensor = Tensor::load(&tns)?;
        if tensor.shape() != [sidecar.classes, sidecar.features] {
            return Err(Error::Consistency(format!(
                "tensor {:?} does not match sidecar {}x{}",
                tensor.shape(),
                sidecar.classes,
                sidecar.features
            )));
        }
        let rate = sidecar.rate.ok_or_else(|| {
            Error::Format(format!(
                "{} is not a mask sidecar (no rate)",
                json.display()
            ))
        })?;
        let rows = tensor.into_data();
        if rows.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format(format!(
                "{} contains non-binary mask values",
                tns.display()
            )));
        }
        let k = round_half_away(rate as f64 * sidecar.features as f64);
        Ok(FeatureMask {
            rows,
            classes: sidecar.classes,
            features: sidecar.features,
            rate,
            pruned_per_class: k,
            layer: sidecar.layer,
        })
    }
}

//! Uncertainty metrics, masked re-inference scoring, and suite ranking.
//!
//! Every metric maps a probability vector to a scalar where larger means
//! more uncertain; MaxP and Margin are negated internally so one descending
//! sort serves all of them. The masked scoring path picks the mask row by
//! the original (unmasked) predicted label, applies it at the feature layer,
//! and scores the re-derived probability vector.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::selection::{run_in_pool, FeatureMask};
use crate::tensor::Tensor;

/// The uncertainty metrics applied to probability vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMetric {
    Gini,
    MaxP,
    Margin,
}

impl UncertaintyMetric {
    pub fn name(&self) -> &'static str {
        match self {
            UncertaintyMetric::Gini => "gini",
            UncertaintyMetric::MaxP => "maxp",
            UncertaintyMetric::Margin => "margin",
        }
    }

    /// Applies the metric in uncertainty form (larger = more uncertain).
    pub fn score(&self, p: &[f32]) -> Result<f32> {
        match self {
            UncertaintyMetric::Gini => gini(p),
            UncertaintyMetric::MaxP => maxp(p),
            UncertaintyMetric::Margin => margin(p),
        }
    }
}

impl FromStr for UncertaintyMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gini" | "deepgini" => Ok(UncertaintyMetric::Gini),
            "maxp" => Ok(UncertaintyMetric::MaxP),
            "margin" => Ok(UncertaintyMetric::Margin),
            other => Err(Error::Parameter(format!(
                "unknown uncertainty metric '{other}' (expected gini, maxp, or margin)"
            ))),
        }
    }
}

fn validate_probs(p: &[f32]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput("probability vector"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(format!(
            "probability vector {p:?} has negative or non-finite entries"
        )));
    }
    let sum: f32 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::Domain(format!(
            "probability vector sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Gini impurity `1 - sum(p_i^2)`; 0 for a one-hot vector, `1 - 1/C` for a
/// uniform one.
pub fn gini(p: &[f32]) -> Result<f32> {
    validate_probs(p)?;
    Ok(1.0 - p.iter().map(|v| v * v).sum::<f32>())
}

/// `1 - max(p)`, so larger means more uncertain.
pub fn maxp(p: &[f32]) -> Result<f32> {
    validate_probs(p)?;
    Ok(1.0 - p.iter().cloned().fold(f32::NEG_INFINITY, f32::max))
}

/// `1 - (p_(1) - p_(2))`, the negated top-two margin.
pub fn margin(p: &[f32]) -> Result<f32> {
    validate_probs(p)?;
    if p.len() < 2 {
        return Err(Error::Domain("margin needs at least two classes".into()));
    }
    let (mut first, mut second) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(1.0 - (first - second))
}

/// A prioritized test suite: a permutation of the suite indices (most
/// uncertain first), one score per original index, the original predicted
/// labels, and a method tag for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSuite {
    pub ordering: Vec<usize>,
    pub scores: Vec<f32>,
    pub predictions: Vec<usize>,
    pub method_tag: String,
}

impl RankedSuite {
    /// Sorts scores descending; equal scores keep ascending original index.
    /// Scores may be infinite (surprise sentinels) but never NaN.
    pub fn from_scores(
        scores: Vec<f32>,
        predictions: Vec<usize>,
        method_tag: impl Into<String>,
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyInput("score list"));
        }
        if scores.len() != predictions.len() {
            return Err(Error::Consistency(format!(
                "{} scores but {} predictions",
                scores.len(),
                predictions.len()
            )));
        }
        if scores.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN score in ranking".into()));
        }
        let mut ordering: Vec<usize> = (0..scores.len()).collect();
        ordering.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("no NaN scores")
                .then(a.cmp(&b))
        });
        Ok(RankedSuite {
            ordering,
            scores,
            predictions,
            method_tag: method_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// CSV rows in rank order: `index,score,method,prediction`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("index,score,method,prediction\n");
        for &i in &self.ordering {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i, self.scores[i], self.method_tag, self.predictions[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("index,score,method,prediction") => {}
            other => {
                return Err(Error::Format(format!(
                    "{}: unexpected header {other:?}",
                    path.display()
                )))
            }
        }
        let mut rows: Vec<(usize, f32, String, usize)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |field: Option<&str>, what: &str| -> Result<String> {
                field.map(str::to_string).ok_or_else(|| {
                    Error::Format(format!(
                        "{} line {}: missing {what}",
                        path.display(),
                        lineno + 2
                    ))
                })
            };
            let index: usize = parse(parts.next(), "index")?
                .parse()
                .map_err(|e| Error::Format(format!("{}: bad index: {e}", path.display())))?;
            let score: f32 = parse(parts.next(), "score")?
                .parse()
                .map_err(|e| Error::Format(format!("{}: bad score: {e}", path.display())))?;
            let method = parse(parts.next(), "method")?;
            let prediction: usize = parse(parts.next(), "prediction")?
                .parse()
                .map_err(|e| Error::Format(format!("{}: bad prediction: {e}", path.display())))?;
            rows.push((index, score, method, prediction));
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("ranking csv"));
        }
        let n = rows.len();
        let method_tag = rows[0].2.clone();
        let mut ordering = Vec::with_capacity(n);
        let mut scores = vec![0.0f32; n];
        let mut predictions = vec![0usize; n];
        for (index, score, _, prediction) in rows {
            if index >= n {
                return Err(Error::Format(format!(
                    "{}: index {index} outside suite of {n}",
                    path.display()
                )));
            }
            ordering.push(index);
            scores[index] = score;
            predictions[index] = prediction;
        }
        let mut check: Vec<usize> = ordering.clone();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::Format(format!(
                "{}: rows do not form a permutation",
                path.display()
            )));
        }
        Ok(RankedSuite {
            ordering,
            scores,
            predictions,
            method_tag,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Outcome of scoring one input through the masked path.
#[derive(Clone, Debug)]
pub struct FastScore {
    pub score: f32,
    /// Predicted label of the original (unmasked) forward; selects the mask
    /// row and is never re-derived from the masked pass.
    pub original_label: usize,
    pub masked_probabilities: Vec<f32>,
}

fn check_mask(model: &Model, masks: &FeatureMask) -> Result<()> {
    let view = model.feature_view(None)?;
    if masks.layer() != model.feature_layer() || masks.features() != view.feature_count {
        return Err(Error::Config(format!(
            "mask built for layer {} with {} features, model expects layer {} with {}",
            masks.layer(),
            masks.features(),
            model.feature_layer(),
            view.feature_count
        )));
    }
    if masks.classes() != model.class_count() {
        return Err(Error::Config(format!(
            "mask has {} class rows, model has {} classes",
            masks.classes(),
            model.class_count()
        )));
    }
    Ok(())
}

/// Scores one input through masked re-inference: one pass to the feature
/// layer, one unmasked head pass for the original prediction, and one masked
/// head pass for the metric.
pub fn fast_score(
    model: &Model,
    masks: &FeatureMask,
    x: &Tensor,
    metric: UncertaintyMetric,
) -> Result<FastScore> {
    check_mask(model, masks)?;
    let layer = model.feature_layer();
    let view = model.feature_view(None)?;
    let features = model.forward_to_layer(x, layer)?;
    let original = model.forward_from_layer(&features, layer)?;
    let label = original.argmax()?;
    let masked = view.apply_mask(&features, masks.row(label))?;
    let adjusted = model.forward_from_layer(&masked, layer)?;
    let score = metric.score(adjusted.data())?;
    Ok(FastScore {
        score,
        original_label: label,
        masked_probabilities: adjusted.into_data(),
    })
}

/// Ranks a suite. With `masks` the scores come from masked re-inference
/// (tagged `fast-<metric>`); without, from the plain uncertainty metric over
/// the original probabilities (tagged `<metric>`). Scoring runs in `jobs`
/// workers; results are identical for every job count.
pub fn prioritize(
    model: &Model,
    masks: Option<&FeatureMask>,
    suite: &Dataset,
    metric: UncertaintyMetric,
    jobs: usize,
) -> Result<RankedSuite> {
    if suite.is_empty() {
        return Err(Error::EmptyInput("test suite"));
    }
    if let Some(m) = masks {
        check_mask(model, m)?;
    }
    let score_one = |i: usize| -> Result<(f32, usize)> {
        let x = suite.input(i);
        match masks {
            Some(m) => {
                let s = fast_score(model, m, &x, metric)?;
                Ok((s.score, s.original_label))
            }
            None => {
                let p = model.forward(&x)?;
                Ok((metric.score(p.data())?, p.argmax()?))
            }
        }
    };
    let results: Vec<(f32, usize)> = run_in_pool(jobs, || {
        (0..suite.len())
            .into_par_iter()
            .map(score_one)
            .collect::<Result<Vec<_>>>()
    })?;
    let (scores, predictions): (Vec<f32>, Vec<usize>) = results.into_iter().unzip();
    let tag = match masks {
        Some(_) => format!("fast-{}", metric.name()),
        None => metric.name().to_string(),
    };
    RankedSuite::from_scores(scores, predictions, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::model::LayerSpec;
    use crate::selection::{assess_all, build_masks, build_reference_sets, ReferenceSetConfig};
    use crate::train::{train_dense, TrainConfig};

    #[test]
    fn gini_known_values() {
        assert_eq!(gini(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((gini(&[0.25; 4]).unwrap() - 0.75).abs() < 1e-6);
        assert!((gini(&[0.6, 0.3, 0.1]).unwrap() - 0.54).abs() < 1e-6);
    }

    #[test]
    fn maxp_known_values() {
        assert_eq!(maxp(&[0.0, 1.0]).unwrap(), 0.0);
        assert!((maxp(&[0.25; 4]).unwrap() - 0.75).abs() < 1e-6);
        assert!((maxp(&[0.6, 0.3, 0.1]).unwrap() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn margin_known_values() {
        assert!((margin(&[0.7, 0.2, 0.1]).unwrap() - 0.5).abs() < 1e-6);
        assert!((margin(&[0.25; 4]).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(margin(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_invalid_vectors() {
        for metric in [
            UncertaintyMetric::Gini,
            UncertaintyMetric::MaxP,
            UncertaintyMetric::Margin,
        ] {
            assert!(matches!(metric.score(&[0.9, 0.2]), Err(Error::Domain(_))));
            assert!(matches!(metric.score(&[1.2, -0.2]), Err(Error::Domain(_))));
        }
        assert!(matches!(margin(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn metric_ranges_and_extreme_agreement() {
        let c = 5usize;
        let uniform = vec![1.0 / c as f32; c];
        let mut one_hot = vec![0.0; c];
        one_hot[2] = 1.0;
        for metric in [
            UncertaintyMetric::Gini,
            UncertaintyMetric::MaxP,
            UncertaintyMetric::Margin,
        ] {
            let lo = metric.score(&one_hot).unwrap();
            let hi = metric.score(&uniform).unwrap();
            assert!(hi > lo, "{metric:?}");
            assert!(lo >= 0.0);
            let bound = match metric {
                UncertaintyMetric::Margin => 1.0,
                _ => 1.0 - 1.0 / c as f32,
            };
            assert!(hi <= bound + 1e-6);
        }
    }

    /// 2-class model over 3 identity features with a hand-wired noisy
    /// feature: feature 0 backs class 0, feature 1 backs class 1, and
    /// feature 2 inflates the class-0 logit only.
    fn noisy_feature_model() -> Model {
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        Model::new(
            vec![
                LayerSpec::Dense {
                    weight: Tensor::new(vec![3, 3], eye).unwrap(),
                    bias: Tensor::zeros(vec![3]),
                },
                LayerSpec::Dense {
                    weight: Tensor::new(vec![3, 2], vec![2.0, -2.0, 0.0, 2.0, 3.0, 0.0]).unwrap(),
                    bias: Tensor::zeros(vec![2]),
                },
                LayerSpec::Softmax,
            ],
            2,
            vec![3],
            0,
        )
        .unwrap()
    }

    fn masks_for(model: &Model, rate: f32) -> FeatureMask {
        // class-0 reference points keep the noisy feature slightly negative
        // so its measured contribution sits strictly below the others
        let points = [
            (vec![2.0f32, 0.0, -0.01], 0usize),
            (vec![2.5, 0.0, -0.01], 0),
            (vec![0.1, 2.0, 0.0], 1),
            (vec![0.0, 2.4, 0.0], 1),
        ];
        let mut per_class = vec![
            crate::selection::ClassReferences {
                features: vec![],
                base_confidence: vec![],
                indices: vec![],
            };
            2
        ];
        for (i, (x, c)) in points.iter().enumerate() {
            let x = Tensor::from_vec(x.clone()).unwrap();
            let p = model.forward(&x).unwrap();
            per_class[*c]
                .features
                .push(model.forward_to_layer(&x, 0).unwrap());
            per_class[*c].base_confidence.push(p.data()[*c]);
            per_class[*c].indices.push(i);
        }
        let refs = crate::selection::ReferenceSets {
            layer: 0,
            per_class,
        };
        let (matrix, _) = assess_all(model, &refs, 1).unwrap();
        build_masks(&matrix, rate).unwrap()
    }

    #[test]
    fn masking_raises_uncertainty_of_a_confident_wrong_input() {
        let model = noisy_feature_model();
        // class-1 geometry plus a loud noisy feature: predicted 0 confidently
        let x = Tensor::from_vec(vec![0.0, 0.25, 1.5]).unwrap();
        let p = model.forward(&x).unwrap();
        assert_eq!(p.argmax().unwrap(), 0);
        let unmasked = gini(p.data()).unwrap();

        let masks = masks_for(&model, 0.34); // prunes 1 of 3 features per class
        assert_eq!(masks.row(0), &[1.0, 1.0, 0.0]);
        let scored = fast_score(&model, &masks, &x, UncertaintyMetric::Gini).unwrap();
        assert_eq!(scored.original_label, 0);
        assert!(
            scored.score > unmasked,
            "masked {} vs unmasked {unmasked}",
            scored.score
        );
    }

    #[test]
    fn rate_zero_masks_reproduce_plain_scores_exactly() {
        let model = noisy_feature_model();
        let masks = masks_for(&model, 0.0);
        let mut rng = crate::rng::RngStream::new(2, 0);
        for _ in 0..20 {
            let x = Tensor::from_vec((0..3).map(|_| rng.next_range(-1.0, 2.0)).collect()).unwrap();
            let p = model.forward(&x).unwrap();
            for metric in [
                UncertaintyMetric::Gini,
                UncertaintyMetric::MaxP,
                UncertaintyMetric::Margin,
            ] {
                let plain = metric.score(p.data()).unwrap();
                let masked = fast_score(&model, &masks, &x, metric).unwrap();
                assert_eq!(plain.to_bits(), masked.score.to_bits());
            }
        }
    }

    #[test]
    fn all_zero_mask_row_yields_uniform_probabilities() {
        let model = noisy_feature_model();
        let matrix = crate::selection::ContributionMatrix::new(
            vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3],
            2,
            3,
            0,
            vec![1, 1],
        )
        .unwrap();
        // rate just under 1 prunes every feature (round(0.99 * 3) = 3)
        let masks = build_masks(&matrix, 0.99).unwrap();
        assert_eq!(masks.pruned_per_class(), 3);
        let x = Tensor::from_vec(vec![2.0, 0.0, 0.0]).unwrap();
        let scored = fast_score(&model, &masks, &x, UncertaintyMetric::Gini).unwrap();
        for &p in &scored.masked_probabilities {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn prioritize_without_masks_is_the_plain_uncertainty_ordering() {
        let data = make_synthetic(3, 60, 2, 0.8, 0.05, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 3,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 12, 3], &data, &cfg).unwrap();
        let ranked = prioritize(&model, None, &data, UncertaintyMetric::Gini, 1).unwrap();
        assert_eq!(ranked.method_tag, "gini");
        // independent re-scoring
        let mut expected: Vec<(usize, f32)> = (0..data.len())
            .map(|i| {
                let p = model.forward(&data.input(i)).unwrap();
                (i, gini(p.data()).unwrap())
            })
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected_order: Vec<usize> = expected.into_iter().map(|(i, _)| i).collect();
        assert_eq!(ranked.ordering, expected_order);
    }

    #[test]
    fn equal_scores_rank_by_ascending_index() {
        let ranked = RankedSuite::from_scores(vec![0.5, 0.7, 0.5], vec![0, 0, 0], "test").unwrap();
        assert_eq!(ranked.ordering, vec![1, 0, 2]);
    }

    #[test]
    fn empty_suite_is_rejected() {
        assert!(matches!(
            RankedSuite::from_scores(vec![], vec![], "x"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn ordering_is_always_a_permutation() {
        let mut rng = crate::rng::RngStream::new(31, 0);
        let scores: Vec<f32> = (0..200)
            .map(|_| (rng.next_f32() * 10.0).floor() / 10.0)
            .collect();
        let ranked = RankedSuite::from_scores(scores, vec![0; 200], "x").unwrap();
        let mut sorted = ranked.ordering.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip_preserves_the_ranking() {
        let dir = tempfile::tempdir().unwrap();
        let ranked = RankedSuite::from_scores(
            vec![0.25, 0.5, 0.125, f32::INFINITY],
            vec![2, 1, 0, 1],
            "dsa",
        )
        .unwrap();
        let path = dir.path().join("rank.csv");
        ranked.write_csv(&path).unwrap();
        let back = RankedSuite::read_csv(&path).unwrap();
        assert_eq!(back.ordering, ranked.ordering);
        assert_eq!(back.predictions, ranked.predictions);
        assert_eq!(back.method_tag, ranked.method_tag);
        for (a, b) in back.scores.iter().zip(&ranked.scores) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_layer_mismatch_is_a_config_error() {
        let data = make_synthetic(2, 30, 2, 0.4, 0.0, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 4,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 8, 4, 2], &data, &cfg).unwrap();
        let refs = build_reference_sets(
            &model,
            &data,
            &ReferenceSetConfig {
                confidence_threshold: 0.6,
                max_per_class: 50,
            },
            0,
        )
        .unwrap();
        let (matrix, _) = assess_all(&model, &refs, 1).unwrap();
        let masks = build_masks(&matrix, 0.25).unwrap();
        // point the model at a different feature layer than the mask's
        let moved = model.with_feature_layer(1).unwrap();
        assert!(matches!(
            prioritize(&moved, Some(&masks), &data, UncertaintyMetric::Gini, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scoring_is_parallelism_invariant() {
        let data = make_synthetic(3, 50, 2, 0.7, 0.1, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 25,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 5,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 10, 3], &data, &cfg).unwrap();
        let a = prioritize(&model, None, &data, UncertaintyMetric::Margin, 1).unwrap();
        let b = prioritize(&model, None, &data, UncertaintyMetric::Margin, 8).unwrap();
        assert_eq!(a, b);
    }
}

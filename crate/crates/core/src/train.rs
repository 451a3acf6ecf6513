//! Minimal SGD trainer for dense ReLU classifiers, plus the
//! selection-guided retraining workflow.
//!
//! The backward pass covers dense stacks only (`dense -> relu` repeated,
//! then a dense head under softmax); convolutional models are inference-only
//! and arrive through the interchange format. Cross-entropy is folded with
//! softmax analytically and computed through log-sum-exp. Everything is
//! sequential and seeded, so one config always yields one set of weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};
use crate::prioritize::RankedSuite;
use crate::rng::RngStream;
use crate::round_half_away;
use crate::tensor::Tensor;

/// Hyperparameters for [`train_dense`] and [`retrain_with_selection`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
            l2_decay: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epoch count must be at least 1".into()));
        }
        if self.l2_decay < 0.0 {
            return Err(Error::Parameter(format!(
                "l2 decay {} must be non-negative",
                self.l2_decay
            )));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f32,
    pub train_accuracy: f32,
    pub val_accuracy: Option<f32>,
}

/// Per-epoch loss and accuracy curve.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// CSV with columns `epoch,loss,train_acc,val_acc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("epoch,loss,train_acc,val_acc\n");
        for row in &self.epochs {
            let val = row.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.epoch, row.loss, row.train_accuracy, val
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Raw parameters of a dense stack: one (weight `[in, out]`, bias `[out]`)
/// pair per dense layer.
struct DenseParams {
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
    sizes: Vec<usize>,
}

impl DenseParams {
    fn init(arch: &[usize], rng: &mut RngStream) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in arch.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let limit = (6.0 / fan_in as f32).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.next_range(-limit, limit))
                    .collect(),
            );
            biases.push(vec![0.0f32; fan_out]);
        }
        DenseParams {
            weights,
            biases,
            sizes: arch.to_vec(),
        }
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass keeping post-activation values of every layer; returns
    /// (activations per layer incl. input, logits).
    fn forward_trace(&self, x: &[f32]) -> (Vec<Vec<f32>>, Vec<f32>) {
        let mut acts = vec![x.to_vec()];
        let mut value = x.to_vec();
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut next = vec![0.0f32; n_out];
            for (j, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (i, &v) in value.iter().enumerate() {
                    acc += v * self.weights[l][i * n_out + j];
                }
                *slot = acc + self.biases[l][j];
            }
            debug_assert_eq!(n_in, value.len());
            if l + 1 < self.layer_count() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            acts.push(next.clone());
            value = next;
        }
        let logits = acts.pop().unwrap();
        (acts, logits)
    }

    /// Cross-entropy loss and parameter gradients for one example.
    fn backward(&self, x: &[f32], label: usize) -> (f32, Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let (acts, logits) = self.forward_trace(x);
        let (loss, probs) = softmax_cross_entropy(&logits, label);

        let mut w_grads: Vec<Vec<f32>> =
            self.weights.iter().map(|w| vec![0.0f32; w.len()]).collect();
        let mut b_grads: Vec<Vec<f32>> =
            self.biases.iter().map(|b| vec![0.0f32; b.len()]).collect();

        // dL/dlogit = p - onehot(label)
        let mut delta: Vec<f32> = probs;
        delta[label] -= 1.0;

        for l in (0..self.layer_count()).rev() {
            let n_out = self.sizes[l + 1];
            let input = &acts[l];
            for (i, &a) in input.iter().enumerate() {
                for j in 0..n_out {
                    w_grads[l][i * n_out + j] = a * delta[j];
                }
            }
            b_grads[l].copy_from_slice(&delta);
            if l > 0 {
                let mut prev = vec![0.0f32; input.len()];
                for (i, slot) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for (j, &d) in delta.iter().enumerate() {
                        acc += self.weights[l][i * n_out + j] * d;
                    }
                    // relu gate: the stored activation is post-relu
                    *slot = if input[i] > 0.0 { acc } else { 0.0 };
                }
                delta = prev;
            }
        }
        (loss, w_grads, b_grads)
    }

    /// One SGD step over a batch, accumulating gradients in row order.
    fn sgd_step(&mut self, data: &Dataset, batch: &[usize], cfg: &TrainConfig) -> f32 {
        let mut w_acc: Vec<Vec<f32>> = self.weights.iter().map(|w| vec![0.0f32; w.len()]).collect();
        let mut b_acc: Vec<Vec<f32>> = self.biases.iter().map(|b| vec![0.0f32; b.len()]).collect();
        let mut loss_sum = 0.0f32;
        for &row in batch {
            let x = data.input(row);
            let (loss, w_g, b_g) = self.backward(x.data(), data.label(row));
            loss_sum += loss;
            for (acc, g) in w_acc.iter_mut().zip(&w_g) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            for (acc, g) in b_acc.iter_mut().zip(&b_g) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let scale = cfg.learning_rate / batch.len() as f32;
        for l in 0..self.layer_count() {
            for (w, g) in self.weights[l].iter_mut().zip(&w_acc[l]) {
                *w -= scale * g + cfg.learning_rate * cfg.l2_decay * *w;
            }
            for (b, g) in self.biases[l].iter_mut().zip(&b_acc[l]) {
                *b -= scale * g;
            }
        }
        loss_sum / batch.len() as f32
    }

    fn predict(&self, x: &[f32]) -> usize {
        let (_, logits) = self.forward_trace(x);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    fn accuracy(&self, data: &Dataset) -> f32 {
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.input(i).data()) == data.label(i))
            .count();
        correct as f32 / data.len() as f32
    }

    fn into_model(self) -> Result<Model> {
        let depth = self.layer_count();
        let mut layers = Vec::new();
        for l in 0..depth {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            layers.push(LayerSpec::Dense {
                weight: Tensor::new(vec![n_in, n_out], self.weights[l].clone())?,
                bias: Tensor::new(vec![n_out], self.biases[l].clone())?,
            });
            if l + 1 < depth {
                layers.push(LayerSpec::Relu);
            }
        }
        layers.push(LayerSpec::Softmax);
        // feature layer defaults to the last hidden activation
        let feature_layer = if depth > 1 { 2 * depth - 3 } else { 0 };
        let classes = *self.sizes.last().unwrap();
        Model::new(layers, classes, vec![self.sizes[0]], feature_layer)
    }

    fn from_model(model: &Model) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut sizes = Vec::new();
        let mut expect_dense = true;
        for (index, layer) in model.layers().iter().enumerate() {
            match layer {
                LayerSpec::Dense { weight, bias } => {
                    if !expect_dense {
                        return Err(Error::Config(format!(
                            "layer {index}: consecutive dense layers without relu are not trainable here"
                        )));
                    }
                    if sizes.is_empty() {
                        sizes.push(weight.shape()[0]);
                    }
                    sizes.push(weight.shape()[1]);
                    weights.push(weight.data().to_vec());
                    biases.push(bias.data().to_vec());
                    expect_dense = false;
                }
                LayerSpec::Relu => expect_dense = true,
                LayerSpec::Softmax if index == model.num_layers() - 1 => {}
                other => {
                    return Err(Error::Config(format!(
                        "layer {index} ({}) is not part of a trainable dense stack",
                        other.kind_name()
                    )))
                }
            }
        }
        if weights.is_empty() {
            return Err(Error::Config("model has no dense layers".into()));
        }
        Ok(DenseParams {
            weights,
            biases,
            sizes,
        })
    }
}

/// Stable softmax + cross-entropy; returns (loss, probabilities).
fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let log_sum_exp = max + sum.ln();
    let loss = log_sum_exp - logits[label];
    (loss, exps.iter().map(|&e| e / sum).collect())
}

fn fit(
    params: &mut DenseParams,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f32;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            loss_sum += params.sgd_step(data, batch, cfg);
            batches += 1;
        }
        log.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f32,
            train_accuracy: params.accuracy(data),
            val_accuracy: val.map(|v| params.accuracy(v)),
        });
    }
    Ok(log)
}

fn check_arch(arch: &[usize], data: &Dataset) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::Config(format!(
            "architecture {arch:?} needs at least input and output sizes"
        )));
    }
    let input_dims: usize = data.item_shape().iter().product();
    if arch[0] != input_dims {
        return Err(Error::Config(format!(
            "architecture input {} does not match data dims {input_dims}",
            arch[0]
        )));
    }
    if *arch.last().unwrap() != data.class_count() {
        return Err(Error::Config(format!(
            "architecture output {} does not match {} classes",
            arch.last().unwrap(),
            data.class_count()
        )));
    }
    if arch.contains(&0) {
        return Err(Error::Config(format!(
            "architecture {arch:?} contains a zero width"
        )));
    }
    Ok(())
}

/// Trains a dense ReLU stack (`arch[0] -> ... -> arch.last()` with softmax on
/// top) from seeded He-style uniform init. The returned model's feature layer
/// is the last hidden activation.
pub fn train_dense(arch: &[usize], data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    train_dense_with_validation(arch, data, None, cfg)
}

/// [`train_dense`] with per-epoch accuracy on a validation set in the log.
pub fn train_dense_with_validation(
    arch: &[usize],
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    check_arch(arch, data)?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let mut params = DenseParams::init(arch, &mut rng);
    let log = fit(&mut params, data, val, cfg, &mut rng)?;
    Ok((params.into_model()?, log))
}

/// Continues SGD from a model's current weights; the input model is left
/// untouched.
pub fn fine_tune(
    model: &Model,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    let mut params = DenseParams::from_model(model)?;
    let input_dims: usize = data.item_shape().iter().product();
    if params.sizes[0] != input_dims || *params.sizes.last().unwrap() != data.class_count() {
        return Err(Error::Config(format!(
            "model {:?} does not fit data with {} dims and {} classes",
            params.sizes,
            input_dims,
            data.class_count()
        )));
    }
    let mut rng = RngStream::new(cfg.seed, 1);
    let log = fit(&mut params, data, val, cfg, &mut rng)?;
    let trained = params
        .into_model()?
        .with_feature_layer(model.feature_layer())?;
    Ok((trained, log))
}

/// Fraction of `data` the model classifies correctly.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f32> {
    let mut correct = 0usize;
    for i in 0..data.len() {
        let p = model.forward(&data.input(i))?;
        if p.argmax()? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f32 / data.len() as f32)
}

/// Step used by the numeric side of [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-3;
const GRADIENT_CHECK_PROBES: usize = 100;

/// Compares analytic loss gradients against central finite differences on up
/// to 100 randomly probed weights; returns the maximum relative error
/// `|a - n| / max(|a| + |n|, 1e-6)`. The numeric side evaluates the loss in
/// f64 so its truncation error stays far below the reported figure.
pub fn gradient_check(model: &Model, x: &Tensor, label: usize) -> Result<f32> {
    let params = DenseParams::from_model(model)?;
    if label >= *params.sizes.last().unwrap() {
        return Err(Error::Parameter(format!(
            "label {label} outside [0, {})",
            params.sizes.last().unwrap()
        )));
    }
    let (_, analytic_w, _) = params.backward(x.data(), label);

    // f64 shadow copy for the numeric side
    let weights64: Vec<Vec<f64>> = params
        .weights
        .iter()
        .map(|w| w.iter().map(|&v| v as f64).collect())
        .collect();
    let biases64: Vec<Vec<f64>> = params
        .biases
        .iter()
        .map(|b| b.iter().map(|&v| v as f64).collect())
        .collect();
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();

    let loss_at = |weights: &[Vec<f64>]| -> f64 {
        let mut value = x64.clone();
        for l in 0..weights.len() {
            let n_out = params.sizes[l + 1];
            let mut next = vec![0.0f64; n_out];
            for (j, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (i, &v) in value.iter().enumerate() {
                    acc += v * weights[l][i * n_out + j];
                }
                *slot = acc + biases64[l][j];
            }
            if l + 1 < weights.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            value = next;
        }
        let max = value.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = value.iter().map(|&z| (z - max).exp()).sum();
        max + sum.ln() - value[label]
    };

    let coords: Vec<(usize, usize)> = params
        .weights
        .iter()
        .enumerate()
        .flat_map(|(l, w)| (0..w.len()).map(move |i| (l, i)))
        .collect();
    let mut rng = RngStream::new(0xC0FFEE, coords.len() as u64);
    let mut picks: Vec<usize> = (0..coords.len()).collect();
    rng.shuffle(&mut picks);
    picks.truncate(GRADIENT_CHECK_PROBES.min(coords.len()));

    let mut worst = 0.0f64;
    let mut shadow = weights64.clone();
    for pick in picks {
        let (l, i) = coords[pick];
        let orig = shadow[l][i];
        shadow[l][i] = orig + GRADIENT_CHECK_STEP;
        let plus = loss_at(&shadow);
        shadow[l][i] = orig - GRADIENT_CHECK_STEP;
        let minus = loss_at(&shadow);
        shadow[l][i] = orig;
        let numeric = (plus - minus) / (2.0 * GRADIENT_CHECK_STEP);
        let analytic = analytic_w[l][i] as f64;
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst as f32)
}

/// Result of [`retrain_with_selection`].
#[derive(Debug)]
pub struct RetrainOutcome {
    pub model: Model,
    /// Holdout accuracy of the input model.
    pub baseline_accuracy: f32,
    /// Holdout accuracy after retraining.
    pub retrained_accuracy: f32,
    /// Suite rows that were appended to the training data, in rank order.
    pub selected: Vec<usize>,
}

/// Appends the top `round(budget_fraction * n)` ranked suite inputs (with
/// their labels) to the training data and fine-tunes the model from its
/// current weights.
pub fn retrain_with_selection(
    model: &Model,
    train: &Dataset,
    suite: &Dataset,
    ordering: &RankedSuite,
    budget_fraction: f64,
    cfg: &TrainConfig,
    holdout: &Dataset,
) -> Result<RetrainOutcome> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "budget fraction {budget_fraction} outside (0, 1]"
        )));
    }
    if ordering.len() != suite.len() {
        return Err(Error::Consistency(format!(
            "ranking covers {} inputs, suite has {}",
            ordering.len(),
            suite.len()
        )));
    }
    let budget = round_half_away(budget_fraction * suite.len() as f64);
    let selected: Vec<usize> = ordering.ordering[..budget.min(suite.len())].to_vec();
    let combined = if selected.is_empty() {
        train.clone()
    } else {
        train.concat(&suite.select(&selected)?)?
    };
    let baseline_accuracy = accuracy(model, holdout)?;
    let (retrained, _) = fine_tune(model, &combined, None, cfg)?;
    let retrained_accuracy = accuracy(&retrained, holdout)?;
    Ok(RetrainOutcome {
        model: retrained,
        baseline_accuracy,
        retrained_accuracy,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::prioritize::{prioritize, UncertaintyMetric};

    fn blob_task() -> Dataset {
        make_synthetic(2, 60, 2, 0.35, 0.0, 42).unwrap()
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 42,
            l2_decay: 0.0,
        };
        let (model, log) = train_dense(&[2, 8, 2], &data, &cfg).unwrap();
        let acc = accuracy(&model, &data).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
        assert_eq!(log.epochs.len(), 50);
    }

    #[test]
    fn zero_learning_rate_is_rejected_up_front() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            batch_size: 8,
            seed: 0,
            l2_decay: 0.0,
        };
        assert!(matches!(
            train_dense(&[2, 4, 2], &data, &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn same_config_trains_identical_weights() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 7,
            l2_decay: 0.001,
        };
        let (a, _) = train_dense(&[2, 6, 2], &data, &cfg).unwrap();
        let (b, _) = train_dense(&[2, 6, 2], &data, &cfg).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            if let (
                LayerSpec::Dense {
                    weight: wa,
                    bias: ba,
                },
                LayerSpec::Dense {
                    weight: wb,
                    bias: bb,
                },
            ) = (la, lb)
            {
                for (x, y) in wa.data().iter().zip(wb.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in ba.data().iter().zip(bb.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn architecture_mismatches_are_config_errors() {
        let data = blob_task();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_dense(&[3, 4, 2], &data, &cfg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_dense(&[2, 4, 5], &data, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 3,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 12, 6, 2], &data, &cfg).unwrap();
        let err = gradient_check(&model, &data.input(0), data.label(0)).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn mirrored_net_has_mirrored_gradients() {
        // zero input, zero bias, hidden units mirrored: gradient magnitudes
        // must be symmetric across the mirror
        let w1 = Tensor::new(vec![2, 2], vec![0.7, 0.7, -0.3, -0.3]).unwrap();
        let w2 = Tensor::new(vec![2, 2], vec![0.5, -0.5, 0.5, -0.5]).unwrap();
        let model = Model::new(
            vec![
                LayerSpec::Dense {
                    weight: w1,
                    bias: Tensor::zeros(vec![2]),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    weight: w2,
                    bias: Tensor::zeros(vec![2]),
                },
                LayerSpec::Softmax,
            ],
            2,
            vec![2],
            1,
        )
        .unwrap();
        let params = DenseParams::from_model(&model).unwrap();
        let x = vec![0.0f32, 0.0];
        let (_, w_grads, b_grads) = params.backward(&x, 0);
        // zero input and relu(0) hidden: all weight gradients vanish
        assert!(w_grads.iter().flatten().all(|&g| g == 0.0));
        // the logit-bias gradients mirror each other
        assert!((b_grads[1][0] + b_grads[1][1]).abs() < 1e-7);
        assert!((b_grads[1][0].abs() - b_grads[1][1].abs()).abs() < 1e-7);
    }

    #[test]
    fn converged_model_still_reports_a_gradient_norm() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 80,
            learning_rate: 0.15,
            batch_size: 16,
            seed: 1,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 8, 2], &data, &cfg).unwrap();
        let params = DenseParams::from_model(&model).unwrap();
        let (_, w_grads, _) = params.backward(data.input(0).data(), data.label(0));
        let norm: f32 = w_grads.iter().flatten().map(|g| g * g).sum::<f32>().sqrt();
        assert!(norm.is_finite());
    }

    #[test]
    fn loss_curve_mostly_decreases_on_blobs() {
        let data = blob_task();
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 42,
            l2_decay: 0.0,
        };
        let (_, log) = train_dense(&[2, 8, 2], &data, &cfg).unwrap();
        let drops = log
            .epochs
            .windows(2)
            .filter(|w| w[1].loss <= w[0].loss)
            .count();
        let frac = drops as f32 / (log.epochs.len() - 1) as f32;
        assert!(frac >= 0.9, "only {frac} of transitions non-increasing");
    }

    #[test]
    fn full_budget_retraining_equals_manual_concat() {
        let data = make_synthetic(2, 40, 2, 0.4, 0.05, 11).unwrap();
        let (train, rest) = crate::data::split_train_test(&data, 0.5, 1).unwrap();
        let (suite, holdout) = crate::data::split_train_test(&rest, 0.5, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 4,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 6, 2], &train, &cfg).unwrap();
        let ranking = prioritize(&model, None, &suite, UncertaintyMetric::Gini, 1).unwrap();

        let outcome =
            retrain_with_selection(&model, &train, &suite, &ranking, 1.0, &cfg, &holdout).unwrap();
        let manual_data = train
            .concat(&suite.select(&ranking.ordering).unwrap())
            .unwrap();
        let (manual, _) = fine_tune(&model, &manual_data, None, &cfg).unwrap();

        for i in 0..holdout.len() {
            let a = outcome.model.forward(&holdout.input(i)).unwrap();
            let b = manual.forward(&holdout.input(i)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        let data = blob_task();
        let (train, rest) = crate::data::split_train_test(&data, 0.5, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 4,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 4, 2], &train, &cfg).unwrap();
        let ranking = prioritize(&model, None, &rest, UncertaintyMetric::Gini, 1).unwrap();
        assert!(matches!(
            retrain_with_selection(&model, &train, &rest, &ranking, 0.0, &cfg, &train),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn retraining_leaves_the_input_model_untouched() {
        let data = blob_task();
        let (train, rest) = crate::data::split_train_test(&data, 0.4, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 4,
            l2_decay: 0.0,
        };
        let (model, _) = train_dense(&[2, 4, 2], &train, &cfg).unwrap();
        let before: Vec<f32> = model
            .layers()
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { weight, .. } => Some(weight.data().to_vec()),
                _ => None,
            })
            .flatten()
            .collect();
        let ranking = prioritize(&model, None, &rest, UncertaintyMetric::Gini, 1).unwrap();
        let _ = retrain_with_selection(&model, &train, &rest, &ranking, 0.5, &cfg, &train).unwrap();
        let after: Vec<f32> = model
            .layers()
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { weight, .. } => Some(weight.data().to_vec()),
                _ => None,
            })
            .flatten()
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_log_csv_has_the_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let data = blob_task();
        let (train, val) = crate::data::split_train_test(&data, 0.25, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 2,
            l2_decay: 0.0,
        };
        let (_, log) = train_dense_with_validation(&[2, 4, 2], &train, Some(&val), &cfg).unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,loss,train_acc,val_acc"));
        assert_eq!(lines.count(), 3);
        assert!(log.epochs.iter().all(|e| e.val_accuracy.is_some()));
    }
}

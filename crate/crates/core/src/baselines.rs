//! Prioritization baselines: nearest-neighbor smoothing, MC-Dropout, neuron
//! coverage (NAC/NBC), surprise adequacy (LSA/DSA), and random ordering.
//! Each emits a [`RankedSuite`] so the evaluator treats all methods alike.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};
use crate::prioritize::{RankedSuite, UncertaintyMetric};
use crate::rng::RngStream;
use crate::selection::run_in_pool;
use crate::tensor::Tensor;

// --- nearest-neighbor smoothing --------------------------------------------

/// Configuration for probability smoothing over suite neighbors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NnsConfig {
    /// Weight of the input's own probability vector; 1 disables smoothing.
    pub alpha: f32,
    pub neighbor_count: usize,
    /// Layer whose activations define the neighbor space; `None` uses the
    /// model's feature layer.
    pub embedding_layer: Option<usize>,
}

impl Default for NnsConfig {
    fn default() -> Self {
        NnsConfig {
            alpha: 0.5,
            neighbor_count: 10,
            embedding_layer: None,
        }
    }
}

/// Smooths every suite input's probability vector toward its `k` nearest
/// neighbors (Euclidean distance in embedding space, self excluded):
/// `alpha * p(x) + (1 - alpha) / k * sum p(x')`.
pub fn nns_smooth(model: &Model, suite: &Dataset, cfg: &NnsConfig) -> Result<Vec<Vec<f32>>> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Parameter(format!(
            "alpha {} outside [0, 1]",
            cfg.alpha
        )));
    }
    if cfg.neighbor_count == 0 {
        return Err(Error::Parameter("neighbor count must be at least 1".into()));
    }
    if suite.len() <= cfg.neighbor_count {
        return Err(Error::Parameter(format!(
            "suite of {} inputs cannot supply {} neighbors",
            suite.len(),
            cfg.neighbor_count
        )));
    }
    let layer = cfg.embedding_layer.unwrap_or(model.feature_layer());
    let n = suite.len();
    let mut embeddings = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for i in 0..n {
        let x = suite.input(i);
        embeddings.push(model.forward_to_layer(&x, layer)?.into_data());
        probs.push(model.forward(&x)?.into_data());
    }

    let k = cfg.neighbor_count;
    let smoothed: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            // neighbors by (distance, index): deterministic under ties
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(&embeddings[i], &embeddings[j]), j))
                .collect();
            dist.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then(a.1.cmp(&b.1))
            });
            let mut out: Vec<f32> = probs[i].iter().map(|&p| cfg.alpha * p).collect();
            let w = (1.0 - cfg.alpha) / k as f32;
            for &(_, j) in dist.iter().take(k) {
                for (o, &p) in out.iter_mut().zip(&probs[j]) {
                    *o += w * p;
                }
            }
            out
        })
        .collect();
    Ok(smoothed)
}

/// Ranks a suite by an uncertainty metric over smoothed probability vectors;
/// tagged `nns-<metric>`.
pub fn nns_rank(
    model: &Model,
    suite: &Dataset,
    cfg: &NnsConfig,
    metric: UncertaintyMetric,
) -> Result<RankedSuite> {
    let smoothed = nns_smooth(model, suite, cfg)?;
    let mut scores = Vec::with_capacity(suite.len());
    let mut predictions = Vec::with_capacity(suite.len());
    for (i, p) in smoothed.iter().enumerate() {
        scores.push(metric.score(p)?);
        predictions.push(model.forward(&suite.input(i))?.argmax()?);
    }
    RankedSuite::from_scores(scores, predictions, format!("nns-{}", metric.name()))
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

// --- Monte-Carlo dropout -----------------------------------------------------

/// Configuration for MC-Dropout scoring.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McDropoutConfig {
    /// Number of stochastic forward passes averaged per input.
    pub runs: usize,
    /// Dropout rate used only when the model has no dropout layers.
    pub rate: f32,
}

impl Default for McDropoutConfig {
    fn default() -> Self {
        McDropoutConfig {
            runs: 50,
            rate: 0.1,
        }
    }
}

/// Mean probability vector over `runs` stochastic forwards, then the metric.
pub fn mc_dropout_score(
    model: &Model,
    x: &Tensor,
    cfg: &McDropoutConfig,
    metric: UncertaintyMetric,
    seed: u64,
) -> Result<f32> {
    let p = mc_dropout_probs(model, x, cfg, &mut RngStream::new(seed, 0))?;
    metric.score(&p)
}

fn mc_dropout_probs(
    model: &Model,
    x: &Tensor,
    cfg: &McDropoutConfig,
    rng: &mut RngStream,
) -> Result<Vec<f32>> {
    if cfg.runs == 0 {
        return Err(Error::Parameter("mc-dropout needs at least one run".into()));
    }
    let c = model.class_count();
    let mut mean = vec![0.0f32; c];
    for _ in 0..cfg.runs {
        let p = model.forward_mc(x, rng, cfg.rate)?;
        for (m, &v) in mean.iter_mut().zip(p.data()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= cfg.runs as f32;
    }
    Ok(mean)
}

/// Ranks a suite by MC-Dropout scores; each input draws from its own child
/// stream so the result is independent of scoring order. Tagged
/// `mcdropout-<metric>`.
pub fn mc_dropout_rank(
    model: &Model,
    suite: &Dataset,
    cfg: &McDropoutConfig,
    metric: UncertaintyMetric,
    seed: u64,
    jobs: usize,
) -> Result<RankedSuite> {
    if suite.is_empty() {
        return Err(Error::EmptyInput("test suite"));
    }
    let results: Vec<(f32, usize)> = run_in_pool(jobs, || {
        (0..suite.len())
            .into_par_iter()
            .map(|i| {
                let x = suite.input(i);
                let mut rng = RngStream::new(seed, i as u64);
                let p = mc_dropout_probs(model, &x, cfg, &mut rng)?;
                Ok((metric.score(&p)?, model.forward(&x)?.argmax()?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (scores, predictions) = results.into_iter().unzip();
    RankedSuite::from_scores(scores, predictions, format!("mcdropout-{}", metric.name()))
}

// --- neuron coverage ---------------------------------------------------------

/// Per-neuron activation bounds observed on the training set, plus the
/// default activation threshold used for NAC scoring. Profiled neurons are
/// the post-activation outputs of every dense/conv layer except the
/// classifier head (the last dense/conv in the stack).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageProfile {
    pub lows: Vec<f32>,
    pub highs: Vec<f32>,
    #[serde(default)]
    pub nac_threshold: f32,
}

impl CoverageProfile {
    pub fn neuron_count(&self) -> usize {
        self.lows.len()
    }
}

/// Indices of the layers whose outputs count as hidden-neuron activations:
/// each dense/conv except the last, taken after an immediately following
/// relu when present.
fn profiled_layers(model: &Model) -> Result<Vec<usize>> {
    let param_layers: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }))
        .map(|(i, _)| i)
        .collect();
    if param_layers.len() < 2 {
        return Err(Error::Config(
            "model has no hidden dense/conv layers to profile".into(),
        ));
    }
    Ok(param_layers[..param_layers.len() - 1]
        .iter()
        .map(|&i| {
            if matches!(model.layers().get(i + 1), Some(LayerSpec::Relu)) {
                i + 1
            } else {
                i
            }
        })
        .collect())
}

/// Concatenated hidden-neuron activations for one input.
pub fn hidden_activations(model: &Model, x: &Tensor) -> Result<Vec<f32>> {
    let layers = profiled_layers(model)?;
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(model.forward_to_layer(x, l)?.data());
    }
    Ok(out)
}

/// Records per-neuron [low, high] bounds over the training set.
pub fn build_coverage_profile(model: &Model, train: &Dataset) -> Result<CoverageProfile> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training set for coverage profile"));
    }
    let first = hidden_activations(model, &train.input(0))?;
    let mut lows = first.clone();
    let mut highs = first;
    for i in 1..train.len() {
        let acts = hidden_activations(model, &train.input(i))?;
        for ((lo, hi), v) in lows.iter_mut().zip(highs.iter_mut()).zip(acts) {
            if v < *lo {
                *lo = v;
            }
            if v > *hi {
                *hi = v;
            }
        }
    }
    Ok(CoverageProfile {
        lows,
        highs,
        nac_threshold: 0.0,
    })
}

/// Fraction of hidden neurons with activation strictly above `threshold`.
pub fn nac_score(model: &Model, x: &Tensor, threshold: f32) -> Result<f32> {
    let acts = hidden_activations(model, x)?;
    let active = acts.iter().filter(|&&v| v > threshold).count();
    Ok(active as f32 / acts.len() as f32)
}

/// Fraction of hidden neurons outside their training-time [low, high] bounds.
pub fn nbc_score(model: &Model, x: &Tensor, profile: &CoverageProfile) -> Result<f32> {
    let acts = hidden_activations(model, x)?;
    if acts.len() != profile.neuron_count() {
        return Err(Error::Config(format!(
            "profile covers {} neurons, model produces {}",
            profile.neuron_count(),
            acts.len()
        )));
    }
    let outside = acts
        .iter()
        .zip(profile.lows.iter().zip(&profile.highs))
        .filter(|(v, (lo, hi))| *v < lo || *v > hi)
        .count();
    Ok(outside as f32 / acts.len() as f32)
}

/// Ranks by per-input activation coverage; tagged `nac`.
pub fn nac_rank(model: &Model, suite: &Dataset, threshold: f32) -> Result<RankedSuite> {
    rank_by(model, suite, "nac", |x| nac_score(model, x, threshold))
}

/// Ranks by per-input boundary coverage; tagged `nbc`.
pub fn nbc_rank(model: &Model, suite: &Dataset, profile: &CoverageProfile) -> Result<RankedSuite> {
    rank_by(model, suite, "nbc", |x| nbc_score(model, x, profile))
}

fn rank_by(
    model: &Model,
    suite: &Dataset,
    tag: &str,
    score: impl Fn(&Tensor) -> Result<f32>,
) -> Result<RankedSuite> {
    if suite.is_empty() {
        return Err(Error::EmptyInput("test suite"));
    }
    let mut scores = Vec::with_capacity(suite.len());
    let mut predictions = Vec::with_capacity(suite.len());
    for i in 0..suite.len() {
        let x = suite.input(i);
        scores.push(score(&x)?);
        predictions.push(model.forward(&x)?.argmax()?);
    }
    RankedSuite::from_scores(scores, predictions, tag)
}

// --- surprise adequacy -------------------------------------------------------

/// Activation traces at one layer, grouped by ground-truth class.
#[derive(Clone, Debug)]
pub struct SurpriseProfile {
    pub layer: usize,
    pub class_traces: Vec<Vec<Vec<f32>>>,
}

impl SurpriseProfile {
    pub fn class_count(&self) -> usize {
        self.class_traces.len()
    }
}

/// Variance floor below which a trace dimension is dropped before KDE.
pub const LSA_VARIANCE_FLOOR: f64 = 1e-5;

/// Records the training set's activation traces at `layer` (default: the
/// model's feature layer), grouped by ground-truth label.
pub fn build_surprise_profile(
    model: &Model,
    train: &Dataset,
    layer: Option<usize>,
) -> Result<SurpriseProfile> {
    let layer = layer.unwrap_or(model.feature_layer());
    let mut class_traces = vec![Vec::new(); train.class_count()];
    for i in 0..train.len() {
        let trace = model.forward_to_layer(&train.input(i), layer)?.into_data();
        class_traces[train.label(i)].push(trace);
    }
    if class_traces.iter().any(|t| t.is_empty()) {
        return Err(Error::Profile(
            "every class needs at least one training trace".into(),
        ));
    }
    Ok(SurpriseProfile {
        layer,
        class_traces,
    })
}

/// Distance-based surprise: `dist_a / dist_b` where `dist_a` is the distance
/// to the nearest same-class trace `a`, and `dist_b` the distance from `a`
/// to the nearest other-class trace. A degenerate `dist_b = 0` returns the
/// +infinity sentinel, which sorts first.
pub fn dsa_score(profile: &SurpriseProfile, trace: &[f32], class: usize) -> Result<f32> {
    if class >= profile.class_count() {
        return Err(Error::Index(format!(
            "class {class} outside [0, {})",
            profile.class_count()
        )));
    }
    if profile.class_count() < 2 {
        return Err(Error::Profile(
            "dsa needs traces from at least two classes".into(),
        ));
    }
    let own = &profile.class_traces[class];
    let (mut dist_a, mut nearest) = (f64::INFINITY, 0usize);
    for (i, t) in own.iter().enumerate() {
        let d = euclidean(trace, t);
        if d < dist_a {
            dist_a = d;
            nearest = i;
        }
    }
    let anchor = &own[nearest];
    let mut dist_b = f64::INFINITY;
    for (c, traces) in profile.class_traces.iter().enumerate() {
        if c == class {
            continue;
        }
        for t in traces {
            let d = euclidean(anchor, t);
            if d < dist_b {
                dist_b = d;
            }
        }
    }
    if dist_b == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((dist_a / dist_b) as f32)
}

/// Likelihood-based surprise: negative log density of the trace under a
/// Gaussian KDE fitted to the class's traces. Dimensions whose variance
/// across the class traces falls below [`LSA_VARIANCE_FLOOR`] are dropped;
/// the bandwidth per remaining dimension is Scott's rule
/// `sigma * n^(-1/(d+4))`.
pub fn lsa_score(profile: &SurpriseProfile, trace: &[f32], class: usize) -> Result<f32> {
    if class >= profile.class_count() {
        return Err(Error::Index(format!(
            "class {class} outside [0, {})",
            profile.class_count()
        )));
    }
    let traces = &profile.class_traces[class];
    let dims = trace.len();
    let n = traces.len();

    // variance filter
    let mut kept = Vec::new();
    let mut sigmas = Vec::new();
    for j in 0..dims {
        let mean: f64 = traces.iter().map(|t| t[j] as f64).sum::<f64>() / n as f64;
        let var: f64 = traces
            .iter()
            .map(|t| (t[j] as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        if var >= LSA_VARIANCE_FLOOR {
            kept.push(j);
            sigmas.push(var.sqrt());
        }
    }
    if n < 2 || kept.is_empty() {
        return Err(Error::Profile(format!(
            "class {class} has too few usable traces for kde ({n} traces, {} live dimensions)",
            kept.len()
        )));
    }

    let d = kept.len();
    let scott = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let bandwidths: Vec<f64> = sigmas.iter().map(|s| s * scott).collect();
    let log_norm: f64 = bandwidths
        .iter()
        .map(|h| (h * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum();

    // log density via log-sum-exp over kernels
    let mut log_kernels = Vec::with_capacity(n);
    for t in traces {
        let mut quad = 0.0f64;
        for (idx, &j) in kept.iter().enumerate() {
            let z = (trace[j] as f64 - t[j] as f64) / bandwidths[idx];
            quad += z * z;
        }
        log_kernels.push(-0.5 * quad - log_norm);
    }
    let max = log_kernels
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let log_density = if max.is_finite() {
        max + log_kernels
            .iter()
            .map(|&lk| (lk - max).exp())
            .sum::<f64>()
            .ln()
            - (n as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    Ok((-log_density) as f32)
}

/// Ranks by DSA at the profile's layer; tagged `dsa`.
pub fn dsa_rank(model: &Model, suite: &Dataset, profile: &SurpriseProfile) -> Result<RankedSuite> {
    surprise_rank(model, suite, profile, "dsa", dsa_score)
}

/// Ranks by LSA at the profile's layer; tagged `lsa`.
pub fn lsa_rank(model: &Model, suite: &Dataset, profile: &SurpriseProfile) -> Result<RankedSuite> {
    surprise_rank(model, suite, profile, "lsa", lsa_score)
}

fn surprise_rank(
    model: &Model,
    suite: &Dataset,
    profile: &SurpriseProfile,
    tag: &str,
    score: impl Fn(&SurpriseProfile, &[f32], usize) -> Result<f32>,
) -> Result<RankedSuite> {
    if suite.is_empty() {
        return Err(Error::EmptyInput("test suite"));
    }
    let mut scores = Vec::with_capacity(suite.len());
    let mut predictions = Vec::with_capacity(suite.len());
    for i in 0..suite.len() {
        let x = suite.input(i);
        let trace = model.forward_to_layer(&x, profile.layer)?.into_data();
        let predicted = model.forward(&x)?.argmax()?;
        scores.push(score(profile, &trace, predicted)?);
        predictions.push(predicted);
    }
    RankedSuite::from_scores(scores, predictions, tag)
}

// --- random ------------------------------------------------------------------

/// Seeded uniform ordering; the baseline floor for every comparison. Tagged
/// `random`. Predictions still come from the model so fault bookkeeping
/// works downstream.
pub fn random_rank(model: &Model, suite: &Dataset, seed: u64) -> Result<RankedSuite> {
    if suite.is_empty() {
        return Err(Error::EmptyInput("test suite"));
    }
    let mut rng = RngStream::new(seed, 0);
    let scores: Vec<f32> = (0..suite.len()).map(|_| rng.next_f32()).collect();
    let mut predictions = Vec::with_capacity(suite.len());
    for i in 0..suite.len() {
        predictions.push(model.forward(&suite.input(i))?.argmax()?);
    }
    RankedSuite::from_scores(scores, predictions, "random")
}

// --- profile serialization -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CoverageSidecar {
    neurons: usize,
    nac_threshold: f32,
}

impl CoverageProfile {
    /// Writes `<prefix>.tns` (lows and highs stacked as a 2 x H tensor) and
    /// `<prefix>.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref();
        let h = self.neuron_count();
        let mut data = self.lows.clone();
        data.extend_from_slice(&self.highs);
        Tensor::new(vec![2, h], data)?.save(prefix.with_extension("tns"))?;
        let sidecar = CoverageSidecar {
            neurons: h,
            nac_threshold: self.nac_threshold,
        };
        let json_path = prefix.with_extension("json");
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::json(&json_path, e.to_string()))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref();
        let json_path = prefix.with_extension("json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: CoverageSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e.to_string()))?;
        let tensor = Tensor::load(prefix.with_extension("tns"))?;
        if tensor.shape() != [2, sidecar.neurons] {
            return Err(Error::Consistency(format!(
                "bounds tensor {:?} does not match sidecar neuron count {}",
                tensor.shape(),
                sidecar.neurons
            )));
        }
        let data = tensor.into_data();
        let (lows, highs) = data.split_at(sidecar.neurons);
        for (lo, hi) in lows.iter().zip(highs) {
            if lo > hi {
                return Err(Error::Consistency(format!(
                    "profile bound low {lo} exceeds high {hi}"
                )));
            }
        }
        Ok(CoverageProfile {
            lows: lows.to_vec(),
            highs: highs.to_vec(),
            nac_threshold: sidecar.nac_threshold,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SurpriseSidecar {
    layer: usize,
    classes: usize,
    trace_counts: Vec<usize>,
    dims: usize,
    /// Bandwidth rule applied at scoring time.
    bandwidth: String,
}

impl SurpriseProfile {
    /// Writes `<prefix>.tns` (all traces stacked) and `<prefix>.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref();
        let dims = self.class_traces[0][0].len();
        let total: usize = self.class_traces.iter().map(|t| t.len()).sum();
        let mut data = Vec::with_capacity(total * dims);
        for traces in &self.class_traces {
            for t in traces {
                data.extend_from_slice(t);
            }
        }
        Tensor::new(vec![total, dims], data)?.save(prefix.with_extension("tns"))?;
        let sidecar = SurpriseSidecar {
            layer: self.layer,
            classes: self.class_count(),
            trace_counts: self.class_traces.iter().map(|t| t.len()).collect(),
            dims,
            bandwidth: "scott".to_string(),
        };
        let json_path = prefix.with_extension("json");
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::json(&json_path, e.to_string()))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref();
        let json_path = prefix.with_extension("json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: SurpriseSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e.to_string()))?;
        let tensor = Tensor::load(prefix.with_extension("tns"))?;
        let total: usize = sidecar.trace_counts.iter().sum();
        if tensor.shape() != [total, sidecar.dims] {
            return Err(Error::Consistency(format!(
                "trace tensor {:?} does not match sidecar counts",
                tensor.shape()
            )));
        }
        let data = tensor.into_data();
        let mut class_traces = Vec::with_capacity(sidecar.classes);
        let mut offset = 0usize;
        for &count in &sidecar.trace_counts {
            let mut traces = Vec::with_capacity(count);
            for _ in 0..count {
                traces.push(data[offset..offset + sidecar.dims].to_vec());
                offset += sidecar.dims;
            }
            class_traces.push(traces);
        }
        Ok(SurpriseProfile {
            layer: sidecar.layer,
            class_traces,
        })
    }
}

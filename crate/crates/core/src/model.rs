//! Layer definitions, forward passes (full, split, and Monte-Carlo), feature
//! views, masking, and the model interchange format.
//!
//! A model is a sequential layer stack evaluated one input at a time. The
//! split pass (`forward_to_layer` / `forward_from_layer`) is the primitive
//! behind masked re-inference: running the second half on an unmodified
//! feature tensor reproduces the full forward bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// One layer of a sequential model.
#[derive(Clone, Debug)]
pub enum LayerSpec {
    /// Fully connected: `weight` is `[in, out]`, `bias` is `[out]`.
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    /// 2-D convolution: `kernel` is `[out_ch, in_ch, kh, kw]`.
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
    /// Identity at inference; sampled only in Monte-Carlo mode.
    Dropout {
        rate: f32,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Output shape for a given input shape, or a dimension error naming the
    /// problem.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { weight, bias } => {
                if weight.rank() != 2 || bias.rank() != 1 || bias.len() != weight.shape()[1] {
                    return Err(Error::Dimension(format!(
                        "dense parameters disagree: weight {:?}, bias {:?}",
                        weight.shape(),
                        bias.shape()
                    )));
                }
                if input.len() != 1 || input[0] != weight.shape()[0] {
                    return Err(Error::Dimension(format!(
                        "dense layer expects [{}], got {input:?}",
                        weight.shape()[0]
                    )));
                }
                Ok(vec![weight.shape()[1]])
            }
            LayerSpec::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => {
                if kernel.rank() != 4 || bias.rank() != 1 || bias.len() != kernel.shape()[0] {
                    return Err(Error::Dimension(format!(
                        "conv2d parameters disagree: kernel {:?}, bias {:?}",
                        kernel.shape(),
                        bias.shape()
                    )));
                }
                if *stride == 0 {
                    return Err(Error::Parameter("conv2d stride must be positive".into()));
                }
                let (oc, ic, kh, kw) = (
                    kernel.shape()[0],
                    kernel.shape()[1],
                    kernel.shape()[2],
                    kernel.shape()[3],
                );
                if input.len() != 3 || input[0] != ic {
                    return Err(Error::Dimension(format!(
                        "conv2d expects [{ic}, h, w], got {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                let padded_h = h + 2 * padding;
                let padded_w = w + 2 * padding;
                if padded_h < kh || padded_w < kw {
                    return Err(Error::Dimension(format!(
                        "conv2d kernel {kh}x{kw} larger than padded input {padded_h}x{padded_w}"
                    )));
                }
                let oh = (padded_h - kh) / stride + 1;
                let ow = (padded_w - kw) / stride + 1;
                Ok(vec![oc, oh, ow])
            }
            LayerSpec::Relu | LayerSpec::Softmax | LayerSpec::Dropout { .. } => {
                if matches!(self, LayerSpec::Softmax) && input.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "softmax expects a rank-1 input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(Error::Parameter(
                        "maxpool window and stride must be positive".into(),
                    ));
                }
                if input.len() != 3 {
                    return Err(Error::Dimension(format!(
                        "maxpool2d expects [c, h, w], got {input:?}"
                    )));
                }
                let (c, h, w) = (input[0], input[1], input[2]);
                if h < *window || w < *window {
                    return Err(Error::Dimension(format!(
                        "maxpool window {window} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![
                    c,
                    (h - window) / stride + 1,
                    (w - window) / stride + 1,
                ])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// How features are counted at a layer: one per neuron for flat outputs,
/// one per output channel for convolutional maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGranularity {
    PerNeuron,
    PerChannel,
}

/// The feature structure of one layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureView {
    pub layer_index: usize,
    pub feature_count: usize,
    pub granularity: FeatureGranularity,
}

impl FeatureView {
    /// Applies a binary mask row (one value per feature). Per-channel masks
    /// zero every spatial element of a dropped channel.
    pub fn apply_mask(&self, features: &Tensor, mask_row: &[f32]) -> Result<Tensor> {
        if mask_row.len() != self.feature_count {
            return Err(Error::Dimension(format!(
                "mask row has {} entries for {} features",
                mask_row.len(),
                self.feature_count
            )));
        }
        let mask = Tensor::new(vec![mask_row.len()], mask_row.to_vec())?;
        features.elementwise_mul(&mask)
    }

    /// Clears a single feature, leaving the rest untouched (equivalent to
    /// `apply_mask` with a one-hot-zero row).
    pub fn zero_feature(&self, features: &Tensor, feature: usize) -> Result<Tensor> {
        if feature >= self.feature_count {
            return Err(Error::Index(format!(
                "feature {feature} outside [0, {})",
                self.feature_count
            )));
        }
        let mut data = features.data().to_vec();
        match self.granularity {
            FeatureGranularity::PerNeuron => data[feature] = 0.0,
            FeatureGranularity::PerChannel => {
                let slice = data.len() / self.feature_count;
                data[feature * slice..(feature + 1) * slice].fill(0.0);
            }
        }
        Tensor::new(features.shape().to_vec(), data)
    }

    /// A scalar summary of one feature: the neuron value for flat outputs,
    /// the spatial mean for channels.
    pub fn feature_value(&self, features: &Tensor, feature: usize) -> f32 {
        match self.granularity {
            FeatureGranularity::PerNeuron => features.data()[feature],
            FeatureGranularity::PerChannel => {
                let slice = features.len() / self.feature_count;
                let chan = &features.data()[feature * slice..(feature + 1) * slice];
                chan.iter().sum::<f32>() / slice as f32
            }
        }
    }

    /// Adds `delta` to one feature (every spatial element for channels).
    pub fn nudge_feature(&self, features: &Tensor, feature: usize, delta: f32) -> Result<Tensor> {
        let mut data = features.data().to_vec();
        match self.granularity {
            FeatureGranularity::PerNeuron => data[feature] += delta,
            FeatureGranularity::PerChannel => {
                let slice = data.len() / self.feature_count;
                for v in &mut data[feature * slice..(feature + 1) * slice] {
                    *v += delta;
                }
            }
        }
        Tensor::new(features.shape().to_vec(), data)
    }
}

/// A sequential classifier: ordered layers, a class count, and a designated
/// feature layer whose output feeds masked re-inference.
#[derive(Clone, Debug)]
pub struct Model {
    layers: Vec<LayerSpec>,
    class_count: usize,
    input_shape: Vec<usize>,
    feature_layer: usize,
    /// Output shape of each layer, precomputed at construction.
    layer_shapes: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(
        layers: Vec<LayerSpec>,
        class_count: usize,
        input_shape: Vec<usize>,
        feature_layer: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        if class_count < 2 {
            return Err(Error::Config("model needs at least 2 classes".into()));
        }
        let mut layer_shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for (index, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| match e {
                Error::Dimension(msg) => {
                    Error::Dimension(format!("layer {index} ({}): {msg}", layer.kind_name()))
                }
                other => other,
            })?;
            layer_shapes.push(shape.clone());
        }
        if !matches!(layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Config("final layer must be softmax".into()));
        }
        let out = layer_shapes.last().unwrap();
        if out.len() != 1 || out[0] != class_count {
            return Err(Error::Dimension(format!(
                "softmax output shape {out:?} does not match {class_count} classes"
            )));
        }
        if feature_layer >= layers.len() {
            return Err(Error::Index(format!(
                "feature layer {feature_layer} outside [0, {})",
                layers.len()
            )));
        }
        let feat_rank = layer_shapes[feature_layer].len();
        if feat_rank != 1 && feat_rank != 3 {
            return Err(Error::Config(format!(
                "layer {feature_layer} output shape {:?} is not usable as a feature vector",
                layer_shapes[feature_layer]
            )));
        }
        if let Some(LayerSpec::Dropout { rate }) = layers
            .iter()
            .find(|l| matches!(l, LayerSpec::Dropout { .. }))
        {
            if !(0.0..1.0).contains(rate) {
                return Err(Error::Parameter(format!(
                    "dropout rate {rate} outside [0, 1)"
                )));
            }
        }
        Ok(Model {
            layers,
            class_count,
            input_shape,
            feature_layer,
            layer_shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    /// Returns a copy with a different designated feature layer.
    pub fn with_feature_layer(&self, layer: usize) -> Result<Model> {
        Model::new(
            self.layers.clone(),
            self.class_count,
            self.input_shape.clone(),
            layer,
        )
    }

    pub fn output_shape_at(&self, layer: usize) -> Result<&[usize]> {
        self.layer_shapes
            .get(layer)
            .map(|s| s.as_slice())
            .ok_or_else(|| {
                Error::Index(format!("layer {layer} outside [0, {})", self.layers.len()))
            })
    }

    /// The feature structure at `layer` (defaults to the designated feature
    /// layer).
    pub fn feature_view(&self, layer: Option<usize>) -> Result<FeatureView> {
        let layer = layer.unwrap_or(self.feature_layer);
        let shape = self.output_shape_at(layer)?;
        match shape.len() {
            1 => Ok(FeatureView {
                layer_index: layer,
                feature_count: shape[0],
                granularity: FeatureGranularity::PerNeuron,
            }),
            3 => Ok(FeatureView {
                layer_index: layer,
                feature_count: shape[0],
                granularity: FeatureGranularity::PerChannel,
            }),
            _ => Err(Error::Config(format!(
                "layer {layer} output shape {shape:?} is not usable as a feature vector"
            ))),
        }
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    fn eval_range(&self, mut value: Tensor, range: std::ops::Range<usize>) -> Result<Tensor> {
        for index in range {
            value = eval_layer(&self.layers[index], value, index)?;
        }
        Ok(value)
    }

    /// Full forward pass; returns the probability vector.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.eval_range(x.clone(), 0..self.layers.len())
    }

    /// The activation after layer `layer`, identical bit for bit to the
    /// intermediate value of a full forward pass.
    pub fn forward_to_layer(&self, x: &Tensor, layer: usize) -> Result<Tensor> {
        if layer >= self.layers.len() {
            return Err(Error::Index(format!(
                "layer {layer} outside [0, {})",
                self.layers.len()
            )));
        }
        self.check_input(x)?;
        self.eval_range(x.clone(), 0..layer + 1)
    }

    /// Resumes the forward pass from layer `layer`'s output through the rest
    /// of the network.
    pub fn forward_from_layer(&self, features: &Tensor, layer: usize) -> Result<Tensor> {
        let expected = self.output_shape_at(layer)?;
        if features.shape() != expected {
            return Err(Error::Dimension(format!(
                "features shape {:?} does not match layer {layer} output {expected:?}",
                features.shape()
            )));
        }
        self.eval_range(features.clone(), layer + 1..self.layers.len())
    }

    /// Stochastic forward with dropout active. Stored dropout layers sample
    /// at their own rate; a model without any gets a virtual dropout of
    /// `virtual_rate` at the feature layer.
    pub fn forward_mc(&self, x: &Tensor, rng: &mut RngStream, virtual_rate: f32) -> Result<Tensor> {
        self.check_input(x)?;
        if !(0.0..1.0).contains(&virtual_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {virtual_rate} outside [0, 1)"
            )));
        }
        let virtual_at = if self.has_dropout() {
            None
        } else {
            Some(self.feature_layer)
        };
        let mut value = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            value = match layer {
                LayerSpec::Dropout { rate } => sample_dropout(&value, *rate, rng)?,
                _ => eval_layer(layer, value, index)?,
            };
            if virtual_at == Some(index) && virtual_rate > 0.0 {
                value = sample_dropout(&value, virtual_rate, rng)?;
            }
        }
        Ok(value)
    }
}

/// Inverted-dropout sample: each unit survives with probability `1 - rate`
/// and is scaled by `1 / (1 - rate)`.
fn sample_dropout(value: &Tensor, rate: f32, rng: &mut RngStream) -> Result<Tensor> {
    if rate == 0.0 {
        return Ok(value.clone());
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let data = value
        .data()
        .iter()
        .map(|&v| {
            if rng.next_f32() < rate {
                0.0
            } else {
                v * keep_scale
            }
        })
        .collect();
    Tensor::new(value.shape().to_vec(), data)
}

fn eval_layer(layer: &LayerSpec, input: Tensor, index: usize) -> Result<Tensor> {
    let out = match layer {
        LayerSpec::Dense { weight, bias } => dense_forward(&input, weight, bias),
        LayerSpec::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        } => conv2d_forward(&input, kernel, bias, *stride, *padding),
        LayerSpec::Relu => Tensor::new(
            input.shape().to_vec(),
            input.data().iter().map(|&v| v.max(0.0)).collect(),
        ),
        LayerSpec::MaxPool2d { window, stride } => maxpool_forward(&input, *window, *stride),
        LayerSpec::Flatten => input.reshape(vec![input.len()]),
        LayerSpec::Softmax => softmax(&input),
        LayerSpec::Dropout { .. } => Ok(input),
    };
    out.map_err(|e| match e {
        Error::Dimension(msg) => {
            Error::Dimension(format!("layer {index} ({}): {msg}", layer.kind_name()))
        }
        other => other,
    })
}

fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = (weight.shape()[0], weight.shape()[1]);
    if x.rank() != 1 || x.len() != n_in {
        return Err(Error::Dimension(format!(
            "expected input [{n_in}], got {:?}",
            x.shape()
        )));
    }
    let w = weight.data();
    let mut out = vec![0.0f32; n_out];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for (i, &xv) in x.data().iter().enumerate() {
            acc += xv * w[i * n_out + j];
        }
        *slot = acc + bias.data()[j];
    }
    Tensor::new(vec![n_out], out)
}

fn conv2d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (oc, ic, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if x.rank() != 3 || x.shape()[0] != ic {
        return Err(Error::Dimension(format!(
            "expected input [{ic}, h, w], got {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for c in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - padding as i64;
                            let ix = (ox * stride + kx) as i64 - padding as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += xd[c * h * w + iy as usize * w + ix as usize]
                                * kd[((o * ic + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc + bias.data()[o];
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], out)
}

fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!(
            "expected input [c, h, w], got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h < window || w < window {
        return Err(Error::Dimension(format!(
            "pool window {window} larger than input {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let xd = x.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        let v = xd[ch * h * w + (oy * stride + dy) * w + (ox * stride + dx)];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Numerically stable softmax of a rank-1 tensor.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.rank() != 1 || z.is_empty() {
        return Err(Error::Dimension(format!(
            "softmax expects a non-empty rank-1 input, got {:?}",
            z.shape()
        )));
    }
    let max = z.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = z.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    Tensor::new(vec![z.len()], exps.iter().map(|&e| e / sum).collect())
}

// --- interchange format ---------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    classes: usize,
    input_shape: Vec<usize>,
    feature_layer: usize,
    layers: Vec<LayerManifest>,
}

#[derive(Default, Serialize, Deserialize)]
struct LayerParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f32>,
}

impl LayerParams {
    fn is_empty(&self) -> bool {
        self.stride.is_none()
            && self.padding.is_none()
            && self.window.is_none()
            && self.rate.is_none()
    }
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    kind: String,
    #[serde(default, skip_serializing_if = "LayerParams::is_empty")]
    params: LayerParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<String>,
}

/// Resolves `path` to the manifest file: either the JSON itself or a
/// directory containing `model.json`.
fn manifest_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.json")
    } else {
        path.to_path_buf()
    }
}

/// Writes `dir/model.json` plus one tensor blob per parameter under
/// `dir/blobs/`. Loading the result reproduces forward outputs bit-exactly.
pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let blob_dir = dir.join("blobs");
    std::fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;

    let mut layers = Vec::with_capacity(model.layers.len());
    for (index, layer) in model.layers.iter().enumerate() {
        let mut manifest = LayerManifest {
            kind: layer.kind_name().to_string(),
            params: LayerParams::default(),
            weights: None,
            bias: None,
        };
        match layer {
            LayerSpec::Dense { weight, bias } => {
                let w_name = format!("blobs/layer{index:03}.weight.tns");
                let b_name = format!("blobs/layer{index:03}.bias.tns");
                weight.save(dir.join(&w_name))?;
                bias.save(dir.join(&b_name))?;
                manifest.weights = Some(w_name);
                manifest.bias = Some(b_name);
            }
            LayerSpec::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => {
                let w_name = format!("blobs/layer{index:03}.weight.tns");
                let b_name = format!("blobs/layer{index:03}.bias.tns");
                kernel.save(dir.join(&w_name))?;
                bias.save(dir.join(&b_name))?;
                manifest.weights = Some(w_name);
                manifest.bias = Some(b_name);
                manifest.params.stride = Some(*stride);
                manifest.params.padding = Some(*padding);
            }
            LayerSpec::MaxPool2d { window, stride } => {
                manifest.params.window = Some(*window);
                manifest.params.stride = Some(*stride);
            }
            LayerSpec::Dropout { rate } => {
                manifest.params.rate = Some(*rate);
            }
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::Softmax => {}
        }
        layers.push(manifest);
    }

    let manifest = ModelManifest {
        classes: model.class_count,
        input_shape: model.input_shape.clone(),
        feature_layer: model.feature_layer,
        layers,
    };
    let path = dir.join("model.json");
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a model from its manifest, validating the schema, the blob files,
/// and the layer shape chain.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let manifest_path = manifest_file(path.as_ref());
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let load_blob = |name: &Option<String>, index: usize, what: &str| -> Result<Tensor> {
        let name = name.as_ref().ok_or_else(|| {
            Error::Format(format!(
                "layer {index} in {} is missing its {what} path",
                manifest_path.display()
            ))
        })?;
        Tensor::load(base.join(name))
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (index, lm) in manifest.layers.iter().enumerate() {
        let layer = match lm.kind.as_str() {
            "dense" => LayerSpec::Dense {
                weight: load_blob(&lm.weights, index, "weights")?,
                bias: load_blob(&lm.bias, index, "bias")?,
            },
            "conv2d" => LayerSpec::Conv2d {
                kernel: load_blob(&lm.weights, index, "weights")?,
                bias: load_blob(&lm.bias, index, "bias")?,
                stride: lm.params.stride.unwrap_or(1),
                padding: lm.params.padding.unwrap_or(0),
            },
            "relu" => LayerSpec::Relu,
            "maxpool2d" => LayerSpec::MaxPool2d {
                window: lm.params.window.ok_or_else(|| {
                    Error::Format(format!("layer {index}: maxpool2d needs a window"))
                })?,
                stride: lm.params.stride.unwrap_or(1),
            },
            "flatten" => LayerSpec::Flatten,
            "softmax" => LayerSpec::Softmax,
            "dropout" => LayerSpec::Dropout {
                rate: lm.params.rate.unwrap_or(0.0),
            },
            other => {
                return Err(Error::Format(format!(
                    "layer {index} in {} has unknown kind '{other}'",
                    manifest_path.display()
                )))
            }
        };
        layers.push(layer);
    }
    Model::new(
        layers,
        manifest.classes,
        manifest.input_shape,
        manifest.feature_layer,
    )
}

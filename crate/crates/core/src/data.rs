//! Dataset ingestion, synthetic data generation, corruption operators, and
//! train/test splitting.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::round_half_away;
use crate::tensor::Tensor;

/// A labeled collection of inputs. `inputs` is `[n, ...item dims]`; labels
/// are class indices below `class_count`.
#[derive(Clone, Debug)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rank() < 2 {
            return Err(Error::Dimension(format!(
                "dataset inputs need at least [n, dims], got shape {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if class_count < 1 {
            return Err(Error::Parameter("class count must be at least 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!(
                "label {bad} is outside [0, {class_count})"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    /// Shape of a single input item.
    pub fn item_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// The `i`-th input as an owned tensor of `item_shape`.
    pub fn input(&self, i: usize) -> Tensor {
        let item_len: usize = self.item_shape().iter().product();
        let data = self.inputs.data()[i * item_len..(i + 1) * item_len].to_vec();
        Tensor::new(self.item_shape().to_vec(), data).expect("item slice is valid")
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// A dataset containing the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("dataset selection"));
        }
        let item_len: usize = self.item_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * item_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!(
                    "row {i} outside dataset of {} rows",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.inputs.data()[i * item_len..(i + 1) * item_len]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.item_shape());
        Dataset::new(Tensor::new(shape, data)?, labels, self.class_count)
    }

    /// Row-wise concatenation; item shapes and class counts must agree.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.item_shape() != other.item_shape() {
            return Err(Error::Dimension(format!(
                "cannot concatenate items of shape {:?} with {:?}",
                self.item_shape(),
                other.item_shape()
            )));
        }
        if self.class_count != other.class_count {
            return Err(Error::Consistency(format!(
                "class counts differ: {} vs {}",
                self.class_count, other.class_count
            )));
        }
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut shape = vec![self.len() + other.len()];
        shape.extend_from_slice(self.item_shape());
        Dataset::new(Tensor::new(shape, data)?, labels, self.class_count)
    }
}

/// The corruption operators available for building noisy test suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    BoxBlur,
    Brightness,
    Contrast,
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-noise" => Ok(CorruptionKind::GaussianNoise),
            "shot-noise" => Ok(CorruptionKind::ShotNoise),
            "box-blur" => Ok(CorruptionKind::BoxBlur),
            "brightness" => Ok(CorruptionKind::Brightness),
            "contrast" => Ok(CorruptionKind::Contrast),
            other => Err(Error::Parameter(format!(
                "unknown corruption kind '{other}' (expected gaussian-noise, shot-noise, box-blur, brightness, or contrast)"
            ))),
        }
    }
}

/// One corruption action: a kind, a severity in [0, 1], and a seed.
/// Severity 0 is the identity for every kind.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: f32,
    pub seed: u64,
}

/// Std of the additive Gaussian corruption at severity 1, in normalized
/// pixel units.
pub const GAUSSIAN_NOISE_MAX_STD: f32 = 0.3;
/// Per-pixel flip probability of the shot-noise corruption at severity 1.
pub const SHOT_NOISE_MAX_RATE: f32 = 0.1;
const BRIGHTNESS_MAX_SHIFT: f32 = 0.3;
const CONTRAST_MAX_COMPRESSION: f32 = 0.8;

/// Reads a dataset from an IDX image/label file pair (big-endian counts,
/// u8 payloads). Pixels are scaled to [0, 1].
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let (n, rows, cols, pixels) = parse_idx_images(&images, images_path)?;
    let label_values = parse_idx_labels(&labels, labels_path)?;
    if n != label_values.len() {
        return Err(Error::Consistency(format!(
            "{} images in {} but {} labels in {}",
            n,
            images_path.display(),
            label_values.len(),
            labels_path.display()
        )));
    }
    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let class_count = label_values.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(
        Tensor::new(vec![n, rows, cols], data)?,
        label_values,
        class_count.max(2),
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{} truncated", path.display())))
}

fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!(
            "{} has magic {magic:#010x}, expected 0x00000803 for IDX images",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let payload = bytes
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Format(format!("{} truncated pixel payload", path.display())))?;
    Ok((n, rows, cols, payload))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!(
            "{} has magic {magic:#010x}, expected 0x00000801 for IDX labels",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Format(format!("{} truncated label payload", path.display())))?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Generates Gaussian class clusters with means on a deterministic circular
/// arrangement (evenly spaced directions in the first two dimensions; evenly
/// spaced points on a line when `dims == 1`). Exactly
/// `round(label_noise * classes * per_class)` labels are reassigned uniformly
/// to a different class, with both the victim rows and the replacement labels
/// drawn from the seeded stream.
pub fn make_synthetic(
    classes: usize,
    per_class: usize,
    dims: usize,
    cluster_spread: f32,
    label_noise: f32,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Parameter(
            "synthetic data needs at least 2 classes".into(),
        ));
    }
    if per_class < 1 || dims < 1 {
        return Err(Error::Parameter(
            "synthetic data needs per_class >= 1 and dims >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(Error::Parameter(format!(
            "label noise {label_noise} outside [0, 1]"
        )));
    }
    if cluster_spread < 0.0 || !cluster_spread.is_finite() {
        return Err(Error::Parameter(format!(
            "cluster spread {cluster_spread} must be a finite non-negative value"
        )));
    }

    const RADIUS: f32 = 2.0;
    let n = classes * per_class;
    let mut rng = RngStream::new(seed, 0);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let mut mean = vec![0.0f32; dims];
        if dims == 1 {
            mean[0] = (c as f32 - (classes as f32 - 1.0) / 2.0) * RADIUS;
        } else {
            let theta = 2.0 * std::f32::consts::PI * c as f32 / classes as f32;
            mean[0] = RADIUS * theta.cos();
            mean[1] = RADIUS * theta.sin();
        }
        for _ in 0..per_class {
            for &m in &mean {
                data.push(m + cluster_spread * rng.next_gaussian());
            }
            labels.push(c);
        }
    }

    let flips = round_half_away(label_noise as f64 * n as f64);
    let mut victims: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut victims);
    for &row in victims.iter().take(flips) {
        let offset = 1 + rng.next_index(classes - 1);
        labels[row] = (labels[row] + offset) % classes;
    }

    Dataset::new(Tensor::new(vec![n, dims], data)?, labels, classes)
}

/// Applies one corruption action. Labels and dataset size are untouched;
/// outputs are clipped to [0, 1].
pub fn corrupt(ds: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.severity) {
        return Err(Error::Parameter(format!(
            "corruption severity {} outside [0, 1]",
            spec.severity
        )));
    }
    if spec.severity == 0.0 {
        return Ok(ds.clone());
    }
    let needs_image = matches!(
        spec.kind,
        CorruptionKind::BoxBlur | CorruptionKind::Brightness | CorruptionKind::Contrast
    );
    if needs_image && ds.inputs().rank() < 3 {
        return Err(Error::Dimension(format!(
            "{:?} corruption needs image-shaped inputs ([n, h, w] or [n, c, h, w]), got {:?}",
            spec.kind,
            ds.inputs().shape()
        )));
    }

    let mut rng = RngStream::new(spec.seed, 0);
    let s = spec.severity;
    let data = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = s * GAUSSIAN_NOISE_MAX_STD;
            ds.inputs()
                .data()
                .iter()
                .map(|&v| clip01(v + sigma * rng.next_gaussian()))
                .collect()
        }
        CorruptionKind::ShotNoise => {
            let rate = s * SHOT_NOISE_MAX_RATE;
            ds.inputs()
                .data()
                .iter()
                .map(|&v| {
                    if rng.next_f32() < rate {
                        if rng.next_f32() < 0.5 {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        v
                    }
                })
                .collect()
        }
        CorruptionKind::BoxBlur => box_blur(ds, s)?,
        CorruptionKind::Brightness => {
            let shift = s * BRIGHTNESS_MAX_SHIFT;
            ds.inputs()
                .data()
                .iter()
                .map(|&v| clip01(v + shift))
                .collect()
        }
        CorruptionKind::Contrast => {
            let scale = 1.0 - s * CONTRAST_MAX_COMPRESSION;
            ds.inputs()
                .data()
                .iter()
                .map(|&v| clip01(0.5 + (v - 0.5) * scale))
                .collect()
        }
    };
    Dataset::new(
        Tensor::new(ds.inputs().shape().to_vec(), data)?,
        ds.labels().to_vec(),
        ds.class_count(),
    )
}

fn clip01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// 3x3 box mean with replicated borders, blended toward the original by
/// severity so that severity scales smoothly and a constant image is a
/// fixed point.
fn box_blur(ds: &Dataset, severity: f32) -> Result<Vec<f32>> {
    let shape = ds.inputs().shape();
    let (planes, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 => (shape[0] * shape[1], shape[2], shape[3]),
        _ => {
            return Err(Error::Dimension(format!(
                "box blur needs [n, h, w] or [n, c, h, w], got {shape:?}"
            )))
        }
    };
    let src = ds.inputs().data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        acc += plane[yy * w + xx];
                    }
                }
                let blurred = acc / 9.0;
                let v = plane[y * w + x];
                out.push(clip01(v + severity * (blurred - v)));
            }
        }
    }
    Ok(out)
}

/// Splits rows into disjoint train/test sets by a seeded shuffle. The test
/// set receives `round(test_fraction * n)` rows; every row lands in exactly
/// one side.
pub fn split_train_test(ds: &Dataset, test_fraction: f32, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::Parameter(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let test_n = round_half_away(test_fraction as f64 * n as f64).clamp(1, n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed, 1).shuffle(&mut order);
    let mut test_idx = order[..test_n].to_vec();
    let mut train_idx = order[test_n..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.select(&train_idx)?, ds.select(&test_idx)?))
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    labels: String,
    inputs: String,
    classes: usize,
}

/// Writes `<path>` (a JSON header) plus two tensor files next to it.
pub fn save_dataset(ds: &Dataset, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parameter(format!("bad dataset path {}", header_path.display())))?;
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let inputs_name = format!("{stem}.inputs.tns");
    let labels_name = format!("{stem}.labels.tns");

    ds.inputs().save(dir.join(&inputs_name))?;
    let label_data: Vec<f32> = ds.labels().iter().map(|&l| l as f32).collect();
    Tensor::new(vec![ds.len()], label_data)?.save(dir.join(&labels_name))?;

    let header = DatasetHeader {
        labels: labels_name,
        inputs: inputs_name,
        classes: ds.class_count(),
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::json(header_path, e.to_string()))?;
    std::fs::write(header_path, json).map_err(|e| Error::io(header_path, e))
}

/// Loads a dataset from its JSON header; tensor paths resolve relative to
/// the header's directory.
pub fn load_dataset(header_path: impl AsRef<Path>) -> Result<Dataset> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(header_path, e.to_string()))?;
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let inputs = Tensor::load(dir.join(&header.inputs))?;
    let labels_tensor = Tensor::load(dir.join(&header.labels))?;
    if labels_tensor.rank() != 1 {
        return Err(Error::Format(format!(
            "label tensor {} must be rank 1",
            header.labels
        )));
    }
    let mut labels = Vec::with_capacity(labels_tensor.len());
    for &v in labels_tensor.data() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Consistency(format!(
                "label value {v} in {} is not a class index",
                header.labels
            )));
        }
        labels.push(v as usize);
    }
    Dataset::new(inputs, labels, header.classes)
}

//! Feed-forward networks, detector heads, the on-disk interchange format
//! and concrete inference.
//!
//! A bundle directory holds `model.json` plus optional `<layer_idx>.bin`
//! blobs. A blob is the layer's weights followed by its bias, as
//! little-endian `f32` in row-major order. Dense weights are `[out, in]`;
//! conv kernels are `[out_ch, in_ch, kh, kw]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{h_map, Anchor, CornerBox, Decoder, DecoderKind};
use crate::interval::{sigmoid, Matrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense {
        weights: Matrix,
        bias: Vec<f64>,
    },
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    AvgPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::AvgPool2d { .. } => "avgpool2d",
            Layer::Flatten => "flatten",
            Layer::Relu => "relu",
            Layer::LeakyRelu { .. } => "leakyrelu",
        }
    }

    /// Output shape for `input`, or a validation error.
    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        let err = |msg: String| Error::Validation(format!("layer {index} ({}): {msg}", self.name()));
        match self {
            Layer::Dense { weights, bias } => {
                if weights.cols() != numel {
                    return Err(err(format!(
                        "expects {} inputs, previous layer produces {numel}",
                        weights.cols()
                    )));
                }
                if bias.len() != weights.rows() {
                    return Err(err(format!(
                        "bias length {} != output size {}",
                        bias.len(),
                        weights.rows()
                    )));
                }
                Ok(vec![weights.rows()])
            }
            Layer::Conv2d {
                out_channels,
                in_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => {
                let [c, h, w] = chw(input).ok_or_else(|| err(format!("needs a [C,H,W] input, got {input:?}")))?;
                if c != *in_channels {
                    return Err(err(format!("expects {in_channels} channels, got {c}")));
                }
                if *out_channels == 0 || kernel[0] == 0 || kernel[1] == 0 || *stride == 0 {
                    return Err(err("channels, kernel and stride must be positive".into()));
                }
                let expected = out_channels * in_channels * kernel[0] * kernel[1];
                if weights.len() != expected {
                    return Err(err(format!("kernel has {} values, expected {expected}", weights.len())));
                }
                if bias.len() != *out_channels {
                    return Err(err(format!("bias length {} != {out_channels}", bias.len())));
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel[0] || pw < kernel[1] {
                    return Err(err(format!("kernel {kernel:?} larger than padded input {ph}x{pw}")));
                }
                Ok(vec![
                    *out_channels,
                    (ph - kernel[0]) / stride + 1,
                    (pw - kernel[1]) / stride + 1,
                ])
            }
            Layer::AvgPool2d { window, stride } => {
                let [c, h, w] = chw(input).ok_or_else(|| err(format!("needs a [C,H,W] input, got {input:?}")))?;
                if *window == 0 || *stride == 0 {
                    return Err(err("window and stride must be positive".into()));
                }
                if h < *window || w < *window {
                    return Err(err(format!("window {window} larger than input {h}x{w}")));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            Layer::Flatten => Ok(vec![numel]),
            Layer::Relu => Ok(input.to_vec()),
            Layer::LeakyRelu { alpha } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(err(format!("alpha {alpha} outside [0, 1]")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

fn chw(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

/// A layer in the form bound propagation consumes: affine maps on the
/// flattened activation vector, and elementwise LeakyReLU.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Affine { weights: Matrix, bias: Vec<f64> },
    LeakyRelu { alpha: f64 },
    /// Shape change only; the flat vector is untouched.
    Reshape,
}

/// A validated layer stack with per-layer shapes and its lowered form,
/// one op per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    ops: Vec<Op>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Validation(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut ops = Vec::new();
        let mut cur = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(i, &cur)?;
            match layer {
                Layer::Dense { weights, bias } => ops.push(Op::Affine {
                    weights: weights.clone(),
                    bias: bias.clone(),
                }),
                Layer::Conv2d { .. } | Layer::AvgPool2d { .. } => {
                    let (weights, bias) = lower_spatial(layer, &cur, &next);
                    ops.push(Op::Affine { weights, bias });
                }
                Layer::Flatten => ops.push(Op::Reshape),
                Layer::Relu => ops.push(Op::LeakyRelu { alpha: 0.0 }),
                Layer::LeakyRelu { alpha } => ops.push(Op::LeakyRelu { alpha: *alpha }),
            }
            shapes.push(next.clone());
            cur = next;
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            ops,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap_or(&self.input_shape).iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// Reference forward pass on a flat row-major input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::shape(
                format!("{} inputs ({:?})", self.input_len(), self.input_shape),
                input.len(),
            ));
        }
        let mut x = input.to_vec();
        let mut shape = self.input_shape.clone();
        for (layer, out_shape) in self.layers.iter().zip(&self.shapes) {
            x = match layer {
                Layer::Dense { weights, bias } => (0..weights.rows())
                    .map(|r| {
                        weights.row(r).iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + bias[r]
                    })
                    .collect(),
                Layer::Conv2d {
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                    ..
                } => conv2d(&x, &shape, out_shape, *kernel, *stride, *padding, weights, bias),
                Layer::AvgPool2d { window, stride } => avgpool2d(&x, &shape, out_shape, *window, *stride),
                Layer::Flatten => x,
                Layer::Relu => x.into_iter().map(|v| leaky_relu(v, 0.0)).collect(),
                Layer::LeakyRelu { alpha } => x.into_iter().map(|v| leaky_relu(v, *alpha)).collect(),
            };
            shape = out_shape.clone();
        }
        Ok(x)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    x: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    kernel: [usize; 2],
    stride: usize,
    padding: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (ci, h, w) = (in_shape[0], in_shape[1] as isize, in_shape[2] as isize);
    let (co, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let [kh, kw] = kernel;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = bias[o];
                for c in 0..ci {
                    for dy in 0..kh {
                        let iy = (y * stride + dy) as isize - padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (xo * stride + dx) as isize - padding as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let wt = weights[((o * ci + c) * kh + dy) * kw + dx];
                            acc += wt * x[(c * h as usize + iy as usize) * w as usize + ix as usize];
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = acc;
            }
        }
    }
    out
}

fn avgpool2d(x: &[f64], in_shape: &[usize], out_shape: &[usize], window: usize, stride: usize) -> Vec<f64> {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (c, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let norm = (window * window) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0;
                for dy in 0..window {
                    for dx in 0..window {
                        acc += x[(ch * h + y * stride + dy) * w + xo * stride + dx];
                    }
                }
                out[(ch * ho + y) * wo + xo] = acc / norm;
            }
        }
    }
    out
}

/// Dense matrix form of a conv or pooling layer.
fn lower_spatial(layer: &Layer, in_shape: &[usize], out_shape: &[usize]) -> (Matrix, Vec<f64>) {
    let n_in: usize = in_shape.iter().product();
    let n_out: usize = out_shape.iter().product();
    let mut m = Matrix::zeros(n_out, n_in);
    let (h, w) = (in_shape[1] as isize, in_shape[2] as isize);
    let (co, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut bias = vec![0.0; n_out];
    match layer {
        Layer::Conv2d {
            in_channels,
            kernel: [kh, kw],
            stride,
            padding,
            weights,
            bias: b,
            ..
        } => {
            for o in 0..co {
                for y in 0..ho {
                    for xo in 0..wo {
                        let row = (o * ho + y) * wo + xo;
                        bias[row] = b[o];
                        for c in 0..*in_channels {
                            for dy in 0..*kh {
                                let iy = (y * stride + dy) as isize - *padding as isize;
                                if iy < 0 || iy >= h {
                                    continue;
                                }
                                for dx in 0..*kw {
                                    let ix = (xo * stride + dx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w {
                                        continue;
                                    }
                                    let col = (c * h as usize + iy as usize) * w as usize + ix as usize;
                                    let wt = weights[((o * in_channels + c) * kh + dy) * kw + dx];
                                    m.set(row, col, m.get(row, col) + wt);
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::AvgPool2d { window, stride } => {
            let norm = 1.0 / (window * window) as f64;
            for c in 0..co {
                for y in 0..ho {
                    for xo in 0..wo {
                        let row = (c * ho + y) * wo + xo;
                        for dy in 0..*window {
                            for dx in 0..*window {
                                let col = (c * h as usize + y * stride + dy) * w as usize + xo * stride + dx;
                                m.set(row, col, m.get(row, col) + norm);
                            }
                        }
                    }
                }
            }
        }
        _ => unreachable!("only spatial layers are lowered here"),
    }
    (m, bias)
}

/// Role of one network output within the detector head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Offset(usize),
    Objectness,
    Class(usize),
}

impl std::str::FromStr for Field {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("unknown layout field {s:?}"));
        match s {
            "o0" | "o1" | "o2" | "o3" => Ok(Field::Offset(s[1..].parse().map_err(|_| bad())?)),
            "obj" => Ok(Field::Objectness),
            _ => s
                .strip_prefix("cls")
                .and_then(|c| c.parse().ok())
                .map(Field::Class)
                .ok_or_else(bad),
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Offset(k) => write!(f, "o{k}"),
            Field::Objectness => f.write_str("obj"),
            Field::Class(c) => write!(f, "cls{c}"),
        }
    }
}

/// Mapping from flat output indices to (box, field).
#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// Per box: `o0 o1 o2 o3 obj cls0 .. cls{n-1}`.
    BoxMajor,
    /// Entry `k` names the box and field of output `k`.
    Explicit(Vec<(usize, Field)>),
}

/// Output indices belonging to one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxSlots {
    pub offsets: [usize; 4],
    pub objectness: usize,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorHead {
    decoder: Decoder,
    n_classes: usize,
    anchors: Vec<Anchor>,
    layout: Layout,
    slots: Vec<BoxSlots>,
}

impl DetectorHead {
    pub fn new(decoder: Decoder, n_classes: usize, anchors: Vec<Anchor>, layout: Layout) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Validation("n_classes must be positive".into()));
        }
        if anchors.is_empty() {
            return Err(Error::Validation("head needs at least one anchor".into()));
        }
        let per_box = 5 + n_classes;
        let n_out = anchors.len() * per_box;
        let slots = match &layout {
            Layout::BoxMajor => (0..anchors.len())
                .map(|b| {
                    let base = b * per_box;
                    BoxSlots {
                        offsets: [base, base + 1, base + 2, base + 3],
                        objectness: base + 4,
                        classes: (0..n_classes).map(|c| base + 5 + c).collect(),
                    }
                })
                .collect(),
            Layout::Explicit(entries) => {
                if entries.len() != n_out {
                    return Err(Error::Validation(format!(
                        "layout has {} entries, head needs {n_out}",
                        entries.len()
                    )));
                }
                let mut seen = BTreeMap::new();
                for (k, &(b, field)) in entries.iter().enumerate() {
                    let in_range = b < anchors.len()
                        && match field {
                            Field::Offset(i) => i < 4,
                            Field::Objectness => true,
                            Field::Class(c) => c < n_classes,
                        };
                    if !in_range {
                        return Err(Error::Validation(format!("layout entry {k} ({b}, {field}) out of range")));
                    }
                    if seen.insert((b, field), k).is_some() {
                        return Err(Error::Validation(format!("layout entry ({b}, {field}) appears twice")));
                    }
                }
                (0..anchors.len())
                    .map(|b| BoxSlots {
                        offsets: [0, 1, 2, 3].map(|i| seen[&(b, Field::Offset(i))]),
                        objectness: seen[&(b, Field::Objectness)],
                        classes: (0..n_classes).map(|c| seen[&(b, Field::Class(c))]).collect(),
                    })
                    .collect()
            }
        };
        Ok(Self {
            decoder,
            n_classes,
            anchors,
            layout,
            slots,
        })
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_boxes(&self) -> usize {
        self.anchors.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.anchors.len() * (5 + self.n_classes)
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn slots(&self) -> &[BoxSlots] {
        &self.slots
    }
}

/// How a weighted layer's parameters are stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Storage {
    Inline,
    Blob(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    network: Network,
    head: DetectorHead,
    storage: Vec<Storage>,
}

impl ModelBundle {
    /// Bundle with every weighted layer stored inline.
    pub fn new(network: Network, head: DetectorHead) -> Result<Self> {
        let storage = vec![Storage::Inline; network.layers().len()];
        Self::with_storage(network, head, storage)
    }

    pub fn with_storage(network: Network, head: DetectorHead, storage: Vec<Storage>) -> Result<Self> {
        if network.shapes().len() != storage.len() {
            return Err(Error::shape(network.layers().len(), storage.len()));
        }
        if network.input_shape().len() != 3 {
            return Err(Error::Validation(format!(
                "input_shape must be [C,H,W], got {:?}",
                network.input_shape()
            )));
        }
        if network.output_len() != head.n_outputs() {
            return Err(Error::Validation(format!(
                "network produces {} outputs, head layout needs {}",
                network.output_len(),
                head.n_outputs()
            )));
        }
        Ok(Self {
            network,
            head,
            storage,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn head(&self) -> &DetectorHead {
        &self.head
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.network.input_shape();
        [s[0], s[1], s[2]]
    }

    pub fn storage(&self) -> &[Storage] {
        &self.storage
    }
}

/// A `C x H x W` image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 {
            return Err(Error::Validation(format!("image shape {shape:?} has a zero dimension")));
        }
        if data.len() != n {
            return Err(Error::shape(format!("{n} pixels for {shape:?}"), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub fn forward(model: &ModelBundle, image: &Image) -> Result<Vec<f64>> {
    if image.shape() != model.input_shape() {
        return Err(Error::shape(format!("{:?}", model.input_shape()), format!("{:?}", image.shape())));
    }
    model.network.forward(image.data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: CornerBox,
    pub box_index: usize,
    pub class_id: usize,
    pub confidence: f64,
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    values.enumerate().fold(None, |best, (i, v)| match best {
        Some((_, bv)) if v <= bv => best,
        _ => Some((i, v)),
    })
}

/// Highest-confidence box from raw head outputs, if it clears `tau_class`.
pub fn detect(head: &DetectorHead, logits: &[f64], tau_class: f64) -> Option<Detection> {
    let (box_index, confidence) = argmax(head.slots().iter().map(|s| sigmoid(logits[s.objectness])))?;
    if confidence < tau_class {
        return None;
    }
    let slots = &head.slots()[box_index];
    let (class_id, _) = argmax(slots.classes.iter().map(|&k| sigmoid(logits[k])))?;
    let o = slots.offsets.map(|k| logits[k]);
    let bbox = h_map(&head.decoder().decode(o, &head.anchors()[box_index]));
    Some(Detection {
        bbox,
        box_index,
        class_id,
        confidence,
    })
}

pub fn predict(model: &ModelBundle, image: &Image, tau_class: f64) -> Result<Option<Detection>> {
    let logits = forward(model, image)?;
    Ok(detect(model.head(), &logits, tau_class))
}

// ---------------------------------------------------------------------------
// Interchange format

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerFile>,
    head: HeadFile,
}

#[derive(Serialize, Deserialize, Default)]
struct Params {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    inline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerFile {
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(flatten)]
        params: Params,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(flatten)]
        params: Params,
    },
    AvgPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    decoder: DecoderKind,
    n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var2: Option<f64>,
    anchors: Vec<Anchor>,
    layout: LayoutFile,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayoutFile {
    BoxMajor,
    Explicit { entries: Vec<(usize, String)> },
}

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(parse_err(path, format!("blob length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_blob(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Resolves weights and bias for a weighted layer from inline arrays or a blob.
fn load_params(dir: &Path, file: &Path, index: usize, params: Params, n_w: usize, n_b: usize) -> Result<(Vec<f64>, Vec<f64>, Storage)> {
    match (params.inline, params.blob) {
        (true, None) => {
            let w = params
                .weights
                .ok_or_else(|| parse_err(file, format!("layer {index}: inline layer lacks weights")))?;
            let b = params
                .bias
                .ok_or_else(|| parse_err(file, format!("layer {index}: inline layer lacks bias")))?;
            if w.len() != n_w || b.len() != n_b {
                return Err(Error::Validation(format!(
                    "layer {index}: expected {n_w} weights and {n_b} biases, got {} and {}",
                    w.len(),
                    b.len()
                )));
            }
            Ok((w, b, Storage::Inline))
        }
        (false, Some(name)) => {
            if params.weights.is_some() || params.bias.is_some() {
                return Err(parse_err(file, format!("layer {index}: blob layer also has inline values")));
            }
            let blob_path = dir.join(&name);
            let mut values = read_blob(&blob_path)?;
            if values.len() != n_w + n_b {
                return Err(Error::Validation(format!(
                    "layer {index}: blob {name} holds {} values, expected {}",
                    values.len(),
                    n_w + n_b
                )));
            }
            let b = values.split_off(n_w);
            Ok((values, b, Storage::Blob(name)))
        }
        _ => Err(parse_err(
            file,
            format!("layer {index}: exactly one of `inline: true` or `blob` is required"),
        )),
    }
}

/// Reads and validates a `model.json` bundle.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    if file.format_version != FORMAT_VERSION {
        return Err(parse_err(
            path,
            format!("unsupported format_version {}", file.format_version),
        ));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(file.layers.len());
    let mut storage = Vec::with_capacity(file.layers.len());
    for (i, lf) in file.layers.into_iter().enumerate() {
        let (layer, st) = match lf {
            LayerFile::Dense {
                in_features,
                out_features,
                params,
            } => {
                let (w, b, st) = load_params(dir, path, i, params, in_features * out_features, out_features)?;
                let weights = Matrix::new(out_features, in_features, w)?;
                (Layer::Dense { weights, bias: b }, st)
            }
            LayerFile::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                params,
            } => {
                let n_w = out_channels * in_channels * kernel[0] * kernel[1];
                let (weights, bias, st) = load_params(dir, path, i, params, n_w, out_channels)?;
                (
                    Layer::Conv2d {
                        out_channels,
                        in_channels,
                        kernel,
                        stride,
                        padding,
                        weights,
                        bias,
                    },
                    st,
                )
            }
            LayerFile::AvgPool2d { window, stride } => (Layer::AvgPool2d { window, stride }, Storage::Inline),
            LayerFile::Flatten => (Layer::Flatten, Storage::Inline),
            LayerFile::Relu => (Layer::Relu, Storage::Inline),
            LayerFile::LeakyRelu { alpha } => (Layer::LeakyRelu { alpha }, Storage::Inline),
        };
        layers.push(layer);
        storage.push(st);
    }
    let network = Network::new(file.input_shape, layers)?;

    let h = file.head;
    let decoder = match h.decoder {
        DecoderKind::Ssd => {
            let (Some(v1), Some(v2)) = (h.var1, h.var2) else {
                return Err(Error::Validation("ssd head requires var1 and var2".into()));
            };
            Decoder::ssd(v1, v2)?
        }
        DecoderKind::Yolov2 => Decoder::Yolov2,
        DecoderKind::Yolov3 => Decoder::Yolov3,
    };
    let anchors = h
        .anchors
        .into_iter()
        .map(|a| Anchor::new(a.p, a.scale))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Validation(e.to_string()))?;
    let layout = match h.layout {
        LayoutFile::BoxMajor => Layout::BoxMajor,
        LayoutFile::Explicit { entries } => Layout::Explicit(
            entries
                .into_iter()
                .map(|(b, f)| Ok((b, f.parse()?)))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let head = DetectorHead::new(decoder, h.n_classes, anchors, layout)?;
    ModelBundle::with_storage(network, head, storage)
}

/// Writes `model.json` at `path` and any blobs next to it.
pub fn save_model(model: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::new();
    for (layer, st) in model.network.layers().iter().zip(&model.storage) {
        let params = |w: &[f64], b: &[f64]| -> Result<Params> {
            match st {
                Storage::Inline => Ok(Params {
                    inline: true,
                    blob: None,
                    weights: Some(w.to_vec()),
                    bias: Some(b.to_vec()),
                }),
                Storage::Blob(name) => {
                    write_blob(&dir.join(name), w.iter().chain(b).copied())?;
                    Ok(Params {
                        blob: Some(name.clone()),
                        ..Params::default()
                    })
                }
            }
        };
        layers.push(match layer {
            Layer::Dense { weights, bias } => LayerFile::Dense {
                in_features: weights.cols(),
                out_features: weights.rows(),
                params: params(weights.data(), bias)?,
            },
            Layer::Conv2d {
                out_channels,
                in_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => LayerFile::Conv2d {
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                params: params(weights, bias)?,
            },
            Layer::AvgPool2d { window, stride } => LayerFile::AvgPool2d {
                window: *window,
                stride: *stride,
            },
            Layer::Flatten => LayerFile::Flatten,
            Layer::Relu => LayerFile::Relu,
            Layer::LeakyRelu { alpha } => LayerFile::LeakyRelu { alpha: *alpha },
        });
    }
    let head = model.head();
    let (var1, var2) = match *head.decoder() {
        Decoder::Ssd { var1, var2 } => (Some(var1), Some(var2)),
        _ => (None, None),
    };
    let layout = match head.layout() {
        Layout::BoxMajor => LayoutFile::BoxMajor,
        Layout::Explicit(entries) => LayoutFile::Explicit {
            entries: entries.iter().map(|(b, f)| (*b, f.to_string())).collect(),
        },
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        input_shape: model.network.input_shape().to_vec(),
        layers,
        head: HeadFile {
            decoder: head.decoder().kind(),
            n_classes: head.n_classes(),
            var1,
            var2,
            anchors: head.anchors().to_vec(),
            layout,
        },
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ShapeFile {
    shape: [usize; 3],
}

/// Sidecar holding the shape of a raw `.f32` image: `img.f32` → `img.shape.json`.
pub fn shape_sidecar(path: &Path) -> PathBuf {
    path.with_extension("shape.json")
}

/// Loads a JSON image `{shape, data}` or a raw `.f32` blob with its sidecar.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "f32") {
        let side = shape_sidecar(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let ShapeFile { shape } = serde_json::from_str(&text).map_err(|e| parse_err(&side, e))?;
        return Image::new(shape, read_blob(path)?);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let img: Image = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    Image::new(img.shape, img.data)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(image).map_err(|e| parse_err(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

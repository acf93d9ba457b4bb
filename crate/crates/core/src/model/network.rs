//! A small sequential CNN with hand-written forward and adjoint passes.
//!
//! Layer outputs are `(channels, height, width)` tensors; dense layers emit
//! `(outputs, 1, 1)`. Gradients are only propagated to the input image,
//! never to the weights.

use crate::error::{ImiError, Result};
use crate::model::spec::{LayerKind, LayerSpec, ModelSpec};
use crate::model::tensor::Tensor;
use crate::rng::SplitMix64;

/// Parameters of a single layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Stride-1 square convolution with zero padding.
    /// `weights` is laid out `[out][in][ky][kx]`.
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Inference-mode normalization with fixed running statistics.
    Norm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Relu,
    /// Non-overlapping max pooling with window and stride `size`.
    MaxPool { size: usize },
    /// Adds the output of layer `from` to the previous layer's output.
    SkipAdd { from: usize },
    /// Fully connected layer over the flattened input; `weights` is `[out][in]`.
    Dense {
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> LayerKind {
        match self {
            Op::Conv { .. } => LayerKind::Convolution,
            Op::Norm { .. } => LayerKind::Normalization,
            Op::Relu => LayerKind::Relu,
            Op::MaxPool { .. } => LayerKind::Pooling,
            Op::SkipAdd { .. } => LayerKind::SkipBlockOutput,
            Op::Dense { .. } => LayerKind::Dense,
        }
    }
}

/// An immutable network: structural spec plus per-layer parameters.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    ops: Vec<Op>,
}

impl Network {
    /// Assembles a network, inferring and validating layer shapes.
    pub fn new(model_id: &str, input_shape: [usize; 3], layers: Vec<(String, Op)>) -> Result<Self> {
        let mut specs: Vec<LayerSpec> = Vec::with_capacity(layers.len());
        let mut ops = Vec::with_capacity(layers.len());
        let mut shape = input_shape;
        for (idx, (id, op)) in layers.into_iter().enumerate() {
            let [c, h, w] = shape;
            let out = match &op {
                Op::Conv {
                    out_channels,
                    kernel,
                    padding,
                    weights,
                    bias,
                } => {
                    if weights.len() != out_channels * c * kernel * kernel
                        || bias.len() != *out_channels
                    {
                        return Err(ImiError::Config(format!(
                            "layer {id}: convolution parameter count mismatch"
                        )));
                    }
                    let oh = (h + 2 * padding + 1)
                        .checked_sub(*kernel)
                        .filter(|&v| v > 0)
                        .ok_or_else(|| ImiError::Config(format!("layer {id}: kernel too large")))?;
                    let ow = w + 2 * padding + 1 - kernel;
                    [*out_channels, oh, ow]
                }
                Op::Norm {
                    gamma,
                    beta,
                    mean,
                    var,
                    ..
                } => {
                    if [gamma.len(), beta.len(), mean.len(), var.len()]
                        .iter()
                        .any(|&n| n != c)
                    {
                        return Err(ImiError::Config(format!(
                            "layer {id}: normalization expects {c} channels"
                        )));
                    }
                    shape
                }
                Op::Relu => shape,
                Op::MaxPool { size } => {
                    if *size == 0 || h % size != 0 || w % size != 0 {
                        return Err(ImiError::Config(format!(
                            "layer {id}: pooling size {size} does not tile {h}x{w}"
                        )));
                    }
                    [c, h / size, w / size]
                }
                Op::SkipAdd { from } => {
                    if *from >= idx {
                        return Err(ImiError::Config(format!(
                            "layer {id}: skip source must precede it"
                        )));
                    }
                    if specs[*from].output_shape != shape {
                        return Err(ImiError::Config(format!(
                            "layer {id}: skip source shape {:?} differs from {:?}",
                            specs[*from].output_shape, shape
                        )));
                    }
                    shape
                }
                Op::Dense {
                    outputs,
                    weights,
                    bias,
                } => {
                    if weights.len() != outputs * c * h * w || bias.len() != *outputs {
                        return Err(ImiError::Config(format!(
                            "layer {id}: dense parameter count mismatch"
                        )));
                    }
                    [*outputs, 1, 1]
                }
            };
            specs.push(LayerSpec {
                id,
                kind: op.kind(),
                input_shape: shape,
                output_shape: out,
            });
            ops.push(op);
            shape = out;
        }
        let spec = ModelSpec {
            model_id: model_id.to_string(),
            input_shape,
            layers: specs,
        };
        spec.validate()?;
        Ok(Self { spec, ops })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.spec.input_shape {
            return Err(ImiError::Shape {
                expected: self.spec.input_shape.to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Outputs of layers `0..=last`.
    pub fn forward_to(&self, image: &Tensor, last: usize) -> Result<Vec<Tensor>> {
        self.check_input(image)?;
        if last >= self.ops.len() {
            return Err(ImiError::Addressing(format!("layer index {last} out of range")));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(last + 1);
        for idx in 0..=last {
            let input = if idx == 0 { image } else { &outputs[idx - 1] };
            let out = self.apply(idx, input, &outputs);
            if !out.is_finite() {
                return Err(ImiError::Numeric(format!(
                    "layer {} produced a non-finite value",
                    self.spec.layers[idx].id
                )));
            }
            outputs.push(out);
        }
        Ok(outputs)
    }

    fn apply(&self, idx: usize, input: &Tensor, outputs: &[Tensor]) -> Tensor {
        let [c, h, w] = self.spec.layers[idx].input_shape;
        let out_shape = self.spec.layers[idx].output_shape.to_vec();
        let x = input.data();
        match &self.ops[idx] {
            Op::Conv {
                out_channels,
                kernel,
                padding,
                weights,
                bias,
            } => {
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = vec![0.0; out_channels * oh * ow];
                for o in 0..*out_channels {
                    let plane = &mut y[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bias[o]);
                    for i in 0..c {
                        let src = &x[i * h * w..(i + 1) * h * w];
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let wt = weights[((o * c + i) * kernel + ky) * kernel + kx];
                                // Output rows/cols whose source lands inside the input.
                                let (y0, y1) = valid_range(ky, *padding, h, oh);
                                let (x0, x1) = valid_range(kx, *padding, w, ow);
                                let sx0 = x0 + kx - padding;
                                for oy in y0..y1 {
                                    let sy = oy + ky - padding;
                                    let row = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                    let dst = &mut plane[oy * ow + x0..oy * ow + x1];
                                    for (d, v) in dst.iter_mut().zip(row) {
                                        *d += wt * v;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_raw(out_shape, y)
            }
            Op::Norm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let mut y = x.to_vec();
                for ch in 0..c {
                    let (a, b) = norm_affine(gamma[ch], beta[ch], mean[ch], var[ch], *eps);
                    y[ch * h * w..(ch + 1) * h * w]
                        .iter_mut()
                        .for_each(|v| *v = a * *v + b);
                }
                Tensor::from_raw(out_shape, y)
            }
            Op::Relu => Tensor::from_raw(out_shape, x.iter().map(|v| v.max(0.0)).collect()),
            Op::MaxPool { size } => {
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = vec![f64::NEG_INFINITY; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..*size {
                                for dx in 0..*size {
                                    m = m.max(x[(ch * h + oy * size + dy) * w + ox * size + dx]);
                                }
                            }
                            y[(ch * oh + oy) * ow + ox] = m;
                        }
                    }
                }
                Tensor::from_raw(out_shape, y)
            }
            Op::SkipAdd { from } => {
                let skip = outputs[*from].data();
                Tensor::from_raw(out_shape, x.iter().zip(skip).map(|(a, b)| a + b).collect())
            }
            Op::Dense {
                outputs: n_out,
                weights,
                bias,
            } => {
                let n_in = x.len();
                let y = (0..*n_out)
                    .map(|o| {
                        bias[o]
                            + weights[o * n_in..(o + 1) * n_in]
                                .iter()
                                .zip(x)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect();
                Tensor::from_raw(out_shape, y)
            }
        }
    }

    /// Vector-Jacobian product: gradient with respect to the image of
    /// `<seed, output of layer `layer`>`.
    pub fn vjp(&self, image: &Tensor, layer: usize, seed: &Tensor) -> Result<Tensor> {
        let outputs = self.forward_to(image, layer)?;
        self.vjp_with(image, &outputs, layer, seed)
    }

    /// Like [`Network::vjp`] but reuses outputs from [`Network::forward_to`].
    pub fn vjp_with(
        &self,
        image: &Tensor,
        outputs: &[Tensor],
        layer: usize,
        seed: &Tensor,
    ) -> Result<Tensor> {
        if seed.shape() != self.spec.layers[layer].output_shape {
            return Err(ImiError::Shape {
                expected: self.spec.layers[layer].output_shape.to_vec(),
                actual: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; layer + 1];
        grads[layer] = Some(seed.clone());
        let mut input_grad = Tensor::zeros(image.shape().to_vec());
        for idx in (0..=layer).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let input = if idx == 0 { image } else { &outputs[idx - 1] };
            let gin = self.adjoint(idx, input, &outputs[idx], &g);
            if let Op::SkipAdd { from } = self.ops[idx] {
                accumulate(&mut grads[from], &g);
            }
            if idx == 0 {
                input_grad = gin;
            } else {
                accumulate(&mut grads[idx - 1], &gin);
            }
        }
        if !input_grad.is_finite() {
            return Err(ImiError::Numeric("non-finite input gradient".into()));
        }
        Ok(input_grad)
    }

    fn adjoint(&self, idx: usize, input: &Tensor, output: &Tensor, g: &Tensor) -> Tensor {
        let [c, h, w] = self.spec.layers[idx].input_shape;
        let in_shape = input.shape().to_vec();
        let gd = g.data();
        match &self.ops[idx] {
            Op::Conv {
                out_channels,
                kernel,
                padding,
                weights,
                ..
            } => {
                let [_, oh, ow] = self.spec.layers[idx].output_shape;
                let mut gx = vec![0.0; c * h * w];
                for o in 0..*out_channels {
                    let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
                    for i in 0..c {
                        let dst = &mut gx[i * h * w..(i + 1) * h * w];
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let wt = weights[((o * c + i) * kernel + ky) * kernel + kx];
                                let (y0, y1) = valid_range(ky, *padding, h, oh);
                                let (x0, x1) = valid_range(kx, *padding, w, ow);
                                let sx0 = x0 + kx - padding;
                                for oy in y0..y1 {
                                    let sy = oy + ky - padding;
                                    let row = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                    let gsrc = &gplane[oy * ow + x0..oy * ow + x1];
                                    for (d, v) in row.iter_mut().zip(gsrc) {
                                        *d += wt * v;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_raw(in_shape, gx)
            }
            Op::Norm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let mut gx = gd.to_vec();
                for ch in 0..c {
                    let (a, _) = norm_affine(gamma[ch], beta[ch], mean[ch], var[ch], *eps);
                    gx[ch * h * w..(ch + 1) * h * w]
                        .iter_mut()
                        .for_each(|v| *v *= a);
                }
                Tensor::from_raw(in_shape, gx)
            }
            Op::Relu => Tensor::from_raw(
                in_shape,
                input
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::MaxPool { size } => {
                let x = input.data();
                let y = output.data();
                let [_, oh, ow] = self.spec.layers[idx].output_shape;
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = (ch * oh + oy) * ow + ox;
                            // Route to the first maximal entry in scan order.
                            'window: for dy in 0..*size {
                                for dx in 0..*size {
                                    let src = (ch * h + oy * size + dy) * w + ox * size + dx;
                                    if x[src] == y[o] {
                                        gx[src] += gd[o];
                                        break 'window;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_raw(in_shape, gx)
            }
            Op::SkipAdd { .. } => g.clone_with_shape(in_shape),
            Op::Dense {
                outputs: n_out,
                weights,
                ..
            } => {
                let n_in = c * h * w;
                let mut gx = vec![0.0; n_in];
                for o in 0..*n_out {
                    let go = gd[o];
                    if go == 0.0 {
                        continue;
                    }
                    for (acc, wt) in gx.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *acc += go * wt;
                    }
                }
                Tensor::from_raw(in_shape, gx)
            }
        }
    }
}

impl Tensor {
    fn clone_with_shape(&self, shape: Vec<usize>) -> Tensor {
        Tensor::from_raw(shape, self.data().to_vec())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

/// Per-channel `(scale, shift)` of an inference-mode normalization.
pub(crate) fn norm_affine(gamma: f64, beta: f64, mean: f64, var: f64, eps: f64) -> (f64, f64) {
    let a = gamma / (var + eps).sqrt();
    (a, beta - a * mean)
}

/// Range of output positions `o` with `0 <= o + k - pad < len`.
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

/// Identifier of the built-in reference network.
pub const REFERENCE_MODEL_ID: &str = "refcnn";

/// Builds the deterministic reference CNN used for desk-scale runs.
///
/// Architecture on a `3x32x32` input:
///
/// | layer   | kind               | output    |
/// |---------|--------------------|-----------|
/// | conv1   | 3x3 conv, pad 1    | 6x32x32   |
/// | norm1   | normalization      | 6x32x32   |
/// | relu1   | relu               | 6x32x32   |
/// | pool1   | 2x2 max pool       | 6x16x16   |
/// | conv2   | 3x3 conv, pad 1    | 8x16x16   |
/// | norm2   | normalization      | 8x16x16   |
/// | relu2   | relu               | 8x16x16   |
/// | pool2   | 2x2 max pool       | 8x8x8     |
/// | conv3   | 3x3 conv, pad 1    | 8x8x8     |
/// | norm3   | normalization      | 8x8x8     |
/// | block3  | norm3 + pool2      | 8x8x8     |
/// | relu3   | relu               | 8x8x8     |
/// | pool3   | 2x2 max pool       | 8x4x4     |
/// | fc      | dense              | 10x1x1    |
///
/// Parameters are drawn from one [`SplitMix64`] stream seeded with `seed`,
/// layer by layer in table order. Within a layer: convolution weights
/// (`[out][in][ky][kx]`, uniform in `±sqrt(6 / fan_in)`) then biases
/// (uniform `±0.1`); normalization `gamma` (uniform `[0.5, 1.5)`), `beta`
/// (`±0.2`), running mean (`±0.2`), running variance (`[0.5, 1.5)`), with
/// `eps = 1e-5`, each drawn as a full per-channel vector before the next;
/// dense weights (`[out][in]`, `±sqrt(6 / fan_in)`) then biases (`±0.1`).
/// A uniform draw on `[lo, hi)` is `lo + (hi - lo) * (x >> 11) / 2^53`.
pub fn reference_cnn(seed: u64) -> Network {
    let mut rng = SplitMix64::new(seed);
    let mut layers = Vec::new();
    let conv = |rng: &mut SplitMix64, in_ch: usize, out_ch: usize| {
        let bound = (6.0 / (in_ch * 9) as f64).sqrt();
        let weights = (0..out_ch * in_ch * 9)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let bias = (0..out_ch).map(|_| rng.uniform(-0.1, 0.1)).collect();
        Op::Conv {
            out_channels: out_ch,
            kernel: 3,
            padding: 1,
            weights,
            bias,
        }
    };
    let norm = |rng: &mut SplitMix64, ch: usize| Op::Norm {
        gamma: (0..ch).map(|_| rng.uniform(0.5, 1.5)).collect(),
        beta: (0..ch).map(|_| rng.uniform(-0.2, 0.2)).collect(),
        mean: (0..ch).map(|_| rng.uniform(-0.2, 0.2)).collect(),
        var: (0..ch).map(|_| rng.uniform(0.5, 1.5)).collect(),
        eps: 1e-5,
    };
    layers.push(("conv1".to_string(), conv(&mut rng, 3, 6)));
    layers.push(("norm1".to_string(), norm(&mut rng, 6)));
    layers.push(("relu1".to_string(), Op::Relu));
    layers.push(("pool1".to_string(), Op::MaxPool { size: 2 }));
    layers.push(("conv2".to_string(), conv(&mut rng, 6, 8)));
    layers.push(("norm2".to_string(), norm(&mut rng, 8)));
    layers.push(("relu2".to_string(), Op::Relu));
    layers.push(("pool2".to_string(), Op::MaxPool { size: 2 }));
    layers.push(("conv3".to_string(), conv(&mut rng, 8, 8)));
    layers.push(("norm3".to_string(), norm(&mut rng, 8)));
    layers.push(("block3".to_string(), Op::SkipAdd { from: 7 }));
    layers.push(("relu3".to_string(), Op::Relu));
    layers.push(("pool3".to_string(), Op::MaxPool { size: 2 }));
    let fan_in = 8 * 4 * 4;
    let bound = (6.0 / fan_in as f64).sqrt();
    let weights = (0..10 * fan_in).map(|_| rng.uniform(-bound, bound)).collect();
    let bias = (0..10).map(|_| rng.uniform(-0.1, 0.1)).collect();
    layers.push((
        "fc".to_string(),
        Op::Dense {
            outputs: 10,
            weights,
            bias,
        },
    ));
    Network::new(REFERENCE_MODEL_ID, [3, 32, 32], layers).expect("reference architecture is valid")
}

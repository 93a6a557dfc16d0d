//! The classifier network with a style memory, and its mirrored decoder.
//!
//! ```text
//! x ─ conv1 ─ relu ─ conv2 ─ relu ─ fc1 ─ relu ─ fc2 ─ relu ─┬─ class head ─ softmax ─ y
//!                                                             └─ style head ─ sigmoid ─ m
//!
//! [y ‖ m] ─ dfc1 ─ relu ─ dfc2 ─ relu ─ dfc3 ─ relu ─ deconv1 ─ relu ─ deconv2 ─ sigmoid ─ x̂
//! ```
//!
//! Decoder weights are separate tensors from the encoder weights. The
//! decoder reads the softmax probabilities `y` rather than the logits, so a
//! one-hot vector can be substituted at inference time.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::noise_rng;
use crate::error::{Error, Result};
use crate::nn::{
    self, conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, dense_backward, dense_forward,
    relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, ConvSpec,
};
use crate::optim::AdamState;
use crate::tensor::{Real, Tensor};

/// Layer sizes of one network instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arch {
    pub input_side: usize,
    pub num_classes: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub style: usize,
}

impl Arch {
    /// Full-size network for 28x28 inputs.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            input_side: 28,
            num_classes,
            conv1: 32,
            conv2: 64,
            fc1: 256,
            fc2: 128,
            style: 16,
        }
    }

    /// Reduced network on 8x8 inputs, small enough for exhaustive finite
    /// differences.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input_side: 8,
            num_classes,
            conv1: 2,
            conv2: 3,
            fc1: 6,
            fc2: 5,
            style: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.num_classes, self.conv1, self.conv2, self.fc1, self.fc2, self.style];
        if self.input_side == 0 || self.input_side % 4 != 0 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid architecture {self:?}: input side must be a positive multiple of 4 and all sizes positive"
            )));
        }
        Ok(())
    }

    /// Spatial side after both convolutions.
    pub fn bottleneck_side(&self) -> usize {
        self.input_side / 4
    }

    /// Width of the flattened convolutional features (3136 for 28x28).
    pub fn flat(&self) -> usize {
        self.conv2 * self.bottleneck_side() * self.bottleneck_side()
    }

    pub fn code_len(&self) -> usize {
        self.num_classes + self.style
    }

    pub fn image_len(&self) -> usize {
        self.input_side * self.input_side
    }

    fn conv1(&self) -> ConvSpec {
        ConvSpec::new(1, self.conv1)
    }

    fn conv2(&self) -> ConvSpec {
        ConvSpec::new(self.conv1, self.conv2)
    }

    fn deconv1(&self) -> ConvSpec {
        ConvSpec::new(self.conv2, self.conv1)
    }

    fn deconv2(&self) -> ConvSpec {
        ConvSpec::new(self.conv1, 1)
    }

    pub fn shape_of(&self, slot: Slot) -> Vec<usize> {
        use Slot::*;
        match slot {
            Conv1W => self.conv1().conv_weight_shape().to_vec(),
            Conv1B => vec![self.conv1],
            Conv2W => self.conv2().conv_weight_shape().to_vec(),
            Conv2B => vec![self.conv2],
            Fc1W => vec![self.flat(), self.fc1],
            Fc1B => vec![self.fc1],
            Fc2W => vec![self.fc1, self.fc2],
            Fc2B => vec![self.fc2],
            ClassW => vec![self.fc2, self.num_classes],
            ClassB => vec![self.num_classes],
            StyleW => vec![self.fc2, self.style],
            StyleB => vec![self.style],
            Dfc1W => vec![self.code_len(), self.fc2],
            Dfc1B => vec![self.fc2],
            Dfc2W => vec![self.fc2, self.fc1],
            Dfc2B => vec![self.fc1],
            Dfc3W => vec![self.fc1, self.flat()],
            Dfc3B => vec![self.flat()],
            Deconv1W => self.deconv1().deconv_weight_shape().to_vec(),
            Deconv1B => vec![self.conv1],
            Deconv2W => self.deconv2().deconv_weight_shape().to_vec(),
            Deconv2B => vec![1],
        }
    }

    /// Fan-in used to scale the initial weights of a slot.
    fn fan_in(&self, slot: Slot) -> usize {
        use Slot::*;
        let k = nn::conv::KERNEL * nn::conv::KERNEL;
        match slot {
            Conv1W => k,
            Conv2W => self.conv1 * k,
            // Each output pixel of a stride-2 transposed convolution sees
            // about a quarter of the kernel taps.
            Deconv1W => (self.conv2 * k).div_ceil(4),
            Deconv2W => (self.conv1 * k).div_ceil(4),
            _ => self.shape_of(slot)[0],
        }
    }
}

/// Named parameter tensors, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Conv1W,
    Conv1B,
    Conv2W,
    Conv2B,
    Fc1W,
    Fc1B,
    Fc2W,
    Fc2B,
    ClassW,
    ClassB,
    StyleW,
    StyleB,
    Dfc1W,
    Dfc1B,
    Dfc2W,
    Dfc2B,
    Dfc3W,
    Dfc3B,
    Deconv1W,
    Deconv1B,
    Deconv2W,
    Deconv2B,
}

impl Slot {
    pub const ALL: [Slot; 22] = {
        use Slot::*;
        [
            Conv1W, Conv1B, Conv2W, Conv2B, Fc1W, Fc1B, Fc2W, Fc2B, ClassW, ClassB, StyleW, StyleB, Dfc1W, Dfc1B,
            Dfc2W, Dfc2B, Dfc3W, Dfc3B, Deconv1W, Deconv1B, Deconv2W, Deconv2B,
        ]
    };

    pub fn name(self) -> &'static str {
        use Slot::*;
        match self {
            Conv1W => "conv1.weight",
            Conv1B => "conv1.bias",
            Conv2W => "conv2.weight",
            Conv2B => "conv2.bias",
            Fc1W => "fc1.weight",
            Fc1B => "fc1.bias",
            Fc2W => "fc2.weight",
            Fc2B => "fc2.bias",
            ClassW => "class_head.weight",
            ClassB => "class_head.bias",
            StyleW => "style_head.weight",
            StyleB => "style_head.bias",
            Dfc1W => "dfc1.weight",
            Dfc1B => "dfc1.bias",
            Dfc2W => "dfc2.weight",
            Dfc2B => "dfc2.bias",
            Dfc3W => "dfc3.weight",
            Dfc3B => "dfc3.bias",
            Deconv1W => "deconv1.weight",
            Deconv1B => "deconv1.bias",
            Deconv2W => "deconv2.weight",
            Deconv2B => "deconv2.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_decoder(self) -> bool {
        self.index() >= Slot::Dfc1W.index()
    }

    pub fn is_class_head(self) -> bool {
        matches!(self, Slot::ClassW | Slot::ClassB)
    }

    pub fn is_bias(self) -> bool {
        self.index() % 2 == 1
    }

    /// Layers whose output goes straight into a softmax or sigmoid.
    fn feeds_squashing(self) -> bool {
        matches!(self, Slot::ClassW | Slot::StyleW | Slot::Deconv2W)
    }
}

/// All trainable tensors plus one Adam state per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    arch: Arch,
    values: Vec<Tensor<T>>,
    adam: Vec<AdamState<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled zero-mean normal weights, zero biases.
    pub fn init(arch: Arch, seed: u64, learning_rate: f64) -> Result<Self> {
        arch.validate()?;
        let mut rng = noise_rng(seed);
        let values = Slot::ALL
            .iter()
            .map(|&slot| {
                let shape = arch.shape_of(slot);
                if slot.is_bias() {
                    return Tensor::zeros(&shape);
                }
                let gain = if slot.feeds_squashing() { 1.0 } else { 2.0 };
                let std = (gain / arch.fan_in(slot) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(&shape, |_| T::lit(normal.sample(&mut rng)))
            })
            .collect();
        let adam = Slot::ALL
            .iter()
            .map(|&slot| AdamState::new(&arch.shape_of(slot), learning_rate))
            .collect();
        Ok(Self { arch, values, adam })
    }

    /// Assembles parameters from explicit tensors, validating every shape.
    pub fn from_parts(arch: Arch, values: Vec<Tensor<T>>, adam: Vec<AdamState<T>>) -> Result<Self> {
        arch.validate()?;
        if values.len() != Slot::ALL.len() || adam.len() != Slot::ALL.len() {
            return Err(Error::shape(
                "model params",
                format!("expected {} tensors, got {}", Slot::ALL.len(), values.len()),
            ));
        }
        for ((slot, v), a) in Slot::ALL.iter().zip(&values).zip(&adam) {
            let shape = arch.shape_of(*slot);
            v.expect_shape(&shape, "model params", slot.name())?;
            a.first_moment.expect_shape(&shape, "model params", slot.name())?;
            a.second_moment.expect_shape(&shape, "model params", slot.name())?;
        }
        Ok(Self { arch, values, adam })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn get(&self, slot: Slot) -> &Tensor<T> {
        &self.values[slot.index()]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Tensor<T> {
        &mut self.values[slot.index()]
    }

    pub fn adam(&self, slot: Slot) -> &AdamState<T> {
        &self.adam[slot.index()]
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        for a in &mut self.adam {
            a.learning_rate = learning_rate;
        }
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.adam[0].step_count
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            values: self.values.iter().map(Tensor::cast).collect(),
            adam: self
                .adam
                .iter()
                .map(|a| AdamState {
                    first_moment: a.first_moment.cast(),
                    second_moment: a.second_moment.cast(),
                    step_count: a.step_count,
                    learning_rate: a.learning_rate,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    epsilon: a.epsilon,
                })
                .collect(),
        }
    }

    pub(crate) fn adam_mut(&mut self) -> (&mut [Tensor<T>], &mut [AdamState<T>]) {
        (&mut self.values, &mut self.adam)
    }

    /// L2 norm of every parameter tensor, for diagnostics.
    pub fn layer_norms(&self) -> Vec<(&'static str, f64)> {
        Slot::ALL
            .iter()
            .map(|&s| (s.name(), self.get(s).norm().to_f64().unwrap_or(f64::NAN)))
            .collect()
    }
}

/// The pair (class probabilities, style memory) for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T = f32> {
    pub y: Tensor<T>,
    pub m: Tensor<T>,
}

impl<T: Real> LatentCode<T> {
    pub fn new(y: Tensor<T>, m: Tensor<T>) -> Self {
        Self { y, m }
    }

    /// Checks lengths, that `y` is a probability vector and that `m` lies in
    /// the unit box.
    pub fn validate(&self, arch: &Arch) -> Result<()> {
        self.y.expect_shape(&[arch.num_classes], "latent code", "class vector")?;
        self.m.expect_shape(&[arch.style], "latent code", "style memory")?;
        let sum = self.y.data().iter().fold(0.0, |acc, v| acc + v.to_f64().unwrap_or(f64::NAN));
        if !(sum - 1.0).abs().le(&1e-6) || self.y.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "class vector must be a probability vector (sum {sum})"
            )));
        }
        if self.m.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument("style memory entries must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `[y ‖ m]`.
    pub fn concat(&self) -> Vec<T> {
        self.y.data().iter().chain(self.m.data()).copied().collect()
    }
}

/// Activations cached by the encoder for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace<T> {
    pub input: Tensor<T>,
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
    pub h1: Tensor<T>,
    pub h2: Tensor<T>,
    pub logits: Tensor<T>,
    pub y: Tensor<T>,
    pub m: Tensor<T>,
}

impl<T: Real> EncoderTrace<T> {
    pub fn code(&self, row: usize) -> LatentCode<T> {
        LatentCode::new(Tensor::from_vec(self.y.row(row).to_vec()), Tensor::from_vec(self.m.row(row).to_vec()))
    }
}

/// Activations cached by the decoder for the backward pass.
#[derive(Clone, Debug)]
pub struct DecoderTrace<T> {
    pub z: Tensor<T>,
    pub d1: Tensor<T>,
    pub d2: Tensor<T>,
    pub d3: Tensor<T>,
    pub e1: Tensor<T>,
    pub output: Tensor<T>,
}

fn expect_batch_images<T: Real>(arch: &Arch, x: &Tensor<T>) -> Result<usize> {
    match *x.shape() {
        [b, 1, h, w] if h == arch.input_side && w == arch.input_side => Ok(b),
        ref other => Err(Error::shape(
            "encode",
            format!(
                "expected [B, 1, {s}, {s}] images, got {other:?}",
                s = arch.input_side
            ),
        )),
    }
}

/// Encoder forward pass over a `[B, 1, S, S]` batch.
pub fn encode_batch<T: Real>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<EncoderTrace<T>> {
    use Slot::*;
    let arch = params.arch;
    let b = expect_batch_images(&arch, x)?;
    let a1 = relu(&conv2d_forward(x, arch.conv1(), params.get(Conv1W), params.get(Conv1B))?);
    let a2 = relu(&conv2d_forward(&a1, arch.conv2(), params.get(Conv2W), params.get(Conv2B))?);
    let flat = a2.clone().reshape(&[b, arch.flat()])?;
    let h1 = relu(&dense_forward(&flat, params.get(Fc1W), params.get(Fc1B))?);
    let h2 = relu(&dense_forward(&h1, params.get(Fc2W), params.get(Fc2B))?);
    let logits = dense_forward(&h2, params.get(ClassW), params.get(ClassB))?;
    let y = softmax(&logits);
    let m = sigmoid(&dense_forward(&h2, params.get(StyleW), params.get(StyleB))?);
    Ok(EncoderTrace {
        input: x.clone(),
        a1,
        a2,
        h1,
        h2,
        logits,
        y,
        m,
    })
}

/// Decoder forward pass from `[B, classes]` and `[B, style]` codes.
pub fn decode_batch<T: Real>(params: &ModelParams<T>, y: &Tensor<T>, m: &Tensor<T>) -> Result<DecoderTrace<T>> {
    use Slot::*;
    let arch = params.arch;
    let b = match (y.shape(), m.shape()) {
        (&[by, c], &[bm, s]) if by == bm && c == arch.num_classes && s == arch.style => by,
        (ys, ms) => {
            return Err(Error::shape(
                "decode",
                format!(
                    "expected [B, {}] class and [B, {}] style codes, got {ys:?} and {ms:?}",
                    arch.num_classes, arch.style
                ),
            ))
        }
    };
    let mut z = Vec::with_capacity(b * arch.code_len());
    for r in 0..b {
        z.extend_from_slice(y.row(r));
        z.extend_from_slice(m.row(r));
    }
    let z = Tensor::new(&[b, arch.code_len()], z)?;
    let d1 = relu(&dense_forward(&z, params.get(Dfc1W), params.get(Dfc1B))?);
    let d2 = relu(&dense_forward(&d1, params.get(Dfc2W), params.get(Dfc2B))?);
    let side = arch.bottleneck_side();
    let d3 = relu(&dense_forward(&d2, params.get(Dfc3W), params.get(Dfc3B))?).reshape(&[b, arch.conv2, side, side])?;
    let e1 = relu(&deconv2d_forward(&d3, arch.deconv1(), params.get(Deconv1W), params.get(Deconv1B))?);
    let output = sigmoid(&deconv2d_forward(&e1, arch.deconv2(), params.get(Deconv2W), params.get(Deconv2B))?);
    Ok(DecoderTrace {
        z,
        d1,
        d2,
        d3,
        e1,
        output,
    })
}

/// Encodes one `[1, S, S]` image.
pub fn encode<T: Real>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<(LatentCode<T>, EncoderTrace<T>)> {
    let s = params.arch.input_side;
    x.expect_shape(&[1, s, s], "encode", "input image")?;
    let trace = encode_batch(params, &x.clone().reshape(&[1, 1, s, s])?)?;
    Ok((trace.code(0), trace))
}

/// Decodes one code into a `[1, S, S]` image.
pub fn decode<T: Real>(params: &ModelParams<T>, code: &LatentCode<T>) -> Result<Tensor<T>> {
    code.validate(&params.arch)?;
    let arch = params.arch;
    let y = code.y.clone().reshape(&[1, arch.num_classes])?;
    let m = code.m.clone().reshape(&[1, arch.style])?;
    let s = arch.input_side;
    decode_batch(params, &y, &m)?.output.reshape(&[1, s, s])
}

/// Which terms enter the objective and how gradients are routed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    /// Weight of the reconstruction term.
    pub alpha: f64,
    /// Whether the classification term is included.
    pub classify: bool,
    /// Stop reconstruction gradients from reaching the class head through
    /// `y`.
    pub detach_class_input: bool,
}

impl Objective {
    pub fn joint(alpha: f64) -> Self {
        Self {
            alpha,
            classify: true,
            detach_class_input: false,
        }
    }
}

/// Batch-mean losses plus per-sample detail.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub classifier: f64,
    pub reconstruction: f64,
    pub joint: f64,
    pub correct: usize,
    pub batch: usize,
    pub per_sample_reconstruction: Vec<f64>,
}

impl LossBreakdown {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.batch as f64
    }
}

/// One gradient tensor per [`Slot`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, slot: Slot) -> &Tensor<T> {
        &self.tensors[slot.index()]
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn losses<T: Real>(
    enc: &EncoderTrace<T>,
    dec: &DecoderTrace<T>,
    target: &Tensor<T>,
    labels: &[usize],
    objective: &Objective,
) -> Result<(LossBreakdown, nn::loss::CrossEntropy<T>)> {
    let b = labels.len();
    let ce = nn::cross_entropy_with_logits(&enc.logits, labels)?;
    let x_hat = &dec.output;
    if x_hat.len() != target.len() {
        return Err(Error::shape(
            "reconstruction",
            format!("target {:?} vs reconstruction {:?}", target.shape(), x_hat.shape()),
        ));
    }
    let per_sample: Vec<f64> = (0..b)
        .map(|r| {
            x_hat
                .row(r)
                .iter()
                .zip(target.row(r))
                .map(|(&a, &t)| {
                    let d = (a - t).to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum()
        })
        .collect();
    let reconstruction = per_sample.iter().sum::<f64>() / b as f64;
    let classifier = ce.mean.to_f64().unwrap_or(f64::NAN);
    let class_term = if objective.classify { classifier } else { 0.0 };
    let joint = nn::joint_loss(class_term, reconstruction, objective.alpha)?;
    let correct = (0..b).filter(|&r| argmax(enc.y.row(r)) == labels[r]).count();
    Ok((
        LossBreakdown {
            classifier,
            reconstruction,
            joint,
            correct,
            batch: b,
            per_sample_reconstruction: per_sample,
        },
        ce,
    ))
}

/// Forward pass and batch-mean losses without gradients.
pub fn evaluate_objective<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    labels: &[usize],
    objective: &Objective,
) -> Result<LossBreakdown> {
    let enc = encode_batch(params, input)?;
    let dec = decode_batch(params, &enc.y, &enc.m)?;
    Ok(losses(&enc, &dec, target, labels, objective)?.0)
}

/// Forward and backward pass of the batch-mean objective.
///
/// `input` feeds the encoder (possibly noisy); `target` is the clean image
/// the reconstruction is compared against.
pub fn forward_backward<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    labels: &[usize],
    objective: &Objective,
) -> Result<(LossBreakdown, Gradients<T>)> {
    use Slot::*;
    let arch = params.arch;
    let b = expect_batch_images(&arch, input)?;
    if labels.len() != b {
        return Err(Error::shape("forward_backward", format!("{} labels for {b} images", labels.len())));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !(objective.alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", objective.alpha)));
    }
    let enc = encode_batch(params, input)?;
    let dec = decode_batch(params, &enc.y, &enc.m)?;
    let (breakdown, ce) = losses(&enc, &dec, target, labels, objective)?;

    let mut grads: Vec<Option<Tensor<T>>> = vec![None; Slot::ALL.len()];
    let mut put = |w: Slot, bias: Slot, gw: Tensor<T>, gb: Tensor<T>| {
        grads[w.index()] = Some(gw);
        grads[bias.index()] = Some(gb);
    };

    // Reconstruction term: d/dx̂ of alpha * mean ||x̂ - x||^2.
    let scale = T::lit(2.0 * objective.alpha / b as f64);
    let mut g_out = dec.output.clone();
    for (g, &t) in g_out.data_mut().iter_mut().zip(target.data()) {
        *g = scale * (*g - t);
    }
    let g_pre = sigmoid_backward(&g_out, &dec.output)?;
    let g = deconv2d_backward(&g_pre, &dec.e1, arch.deconv2(), params.get(Deconv2W))?;
    put(Deconv2W, Deconv2B, g.weights, g.bias);
    let g_e1 = relu_backward(&g.input, &dec.e1)?;
    let g = deconv2d_backward(&g_e1, &dec.d3, arch.deconv1(), params.get(Deconv1W))?;
    put(Deconv1W, Deconv1B, g.weights, g.bias);
    let d3_flat = dec.d3.clone().reshape(&[b, arch.flat()])?;
    let g_d3 = relu_backward(&g.input.reshape(&[b, arch.flat()])?, &d3_flat)?;
    let g = dense_backward(&g_d3, &dec.d2, params.get(Dfc3W))?;
    put(Dfc3W, Dfc3B, g.weights, g.bias);
    let g_d2 = relu_backward(&g.input, &dec.d2)?;
    let g = dense_backward(&g_d2, &dec.d1, params.get(Dfc2W))?;
    put(Dfc2W, Dfc2B, g.weights, g.bias);
    let g_d1 = relu_backward(&g.input, &dec.d1)?;
    let g = dense_backward(&g_d1, &dec.z, params.get(Dfc1W))?;
    put(Dfc1W, Dfc1B, g.weights, g.bias);

    let (c, s) = (arch.num_classes, arch.style);
    let mut g_y = Tensor::zeros(&[b, c]);
    let mut g_m = Tensor::zeros(&[b, s]);
    for r in 0..b {
        let row = g.input.row(r);
        if !objective.detach_class_input {
            g_y.row_mut(r).copy_from_slice(&row[..c]);
        }
        g_m.row_mut(r).copy_from_slice(&row[c..]);
    }

    let mut g_logits = softmax_backward(&g_y, &enc.y)?;
    if objective.classify {
        g_logits.add_assign(&ce.grad_logits)?;
    }
    let g_style = sigmoid_backward(&g_m, &enc.m)?;

    let gc = dense_backward(&g_logits, &enc.h2, params.get(ClassW))?;
    let gs = dense_backward(&g_style, &enc.h2, params.get(StyleW))?;
    let mut g_h2 = gc.input;
    g_h2.add_assign(&gs.input)?;
    put(ClassW, ClassB, gc.weights, gc.bias);
    put(StyleW, StyleB, gs.weights, gs.bias);

    let g_h2 = relu_backward(&g_h2, &enc.h2)?;
    let g = dense_backward(&g_h2, &enc.h1, params.get(Fc2W))?;
    put(Fc2W, Fc2B, g.weights, g.bias);
    let g_h1 = relu_backward(&g.input, &enc.h1)?;
    let a2_flat = enc.a2.clone().reshape(&[b, arch.flat()])?;
    let g = dense_backward(&g_h1, &a2_flat, params.get(Fc1W))?;
    put(Fc1W, Fc1B, g.weights, g.bias);
    let g_a2 = relu_backward(&g.input.reshape(enc.a2.shape())?, &enc.a2)?;
    let g = conv2d_backward(&g_a2, &enc.a1, arch.conv2(), params.get(Conv2W))?;
    put(Conv2W, Conv2B, g.weights, g.bias);
    let g_a1 = relu_backward(&g.input, &enc.a1)?;
    let g = conv2d_backward(&g_a1, &enc.input, arch.conv1(), params.get(Conv1W))?;
    put(Conv1W, Conv1B, g.weights, g.bias);

    let tensors = grads.into_iter().map(|g| g.expect("every slot has a gradient")).collect();
    Ok((breakdown, Gradients { tensors }))
}

/// Draws a random image batch in `[0, 1]` for tests and benchmarks.
pub fn random_images<T: Real>(arch: &Arch, batch: usize, rng: &mut impl Rng) -> Tensor<T> {
    let s = arch.input_side;
    Tensor::from_fn(&[batch, 1, s, s], |_| T::lit(rng.gen::<f64>()))
}

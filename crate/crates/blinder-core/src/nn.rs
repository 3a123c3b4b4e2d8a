//! Minimal differentiable network core: sequential stacks of dense and 1-D
//! convolutional layers with reverse-mode gradients.
//!
//! A [`Network`] is built from [`LayerSpec`]s, owns a [`ParameterSet`], and
//! exposes `forward` (which retains an activation tape) plus `backward`
//! (which consumes the tape and yields parameter and input gradients).
//! Batch processing uses a leading batch dimension: dense layers see
//! `[n, features]`, convolutional layers `[n, channels, length]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;


#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std

use crate::params::{GradientUpdate, NamedTensor, ParamError, ParameterSet};
use crate::rng::{standard_normal, Seeder};
use crate::tensor::{Element, Tensor};

/// Slope of the negative branch of leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    He,
    /// Normal with variance `2 / (fan_in + fan_out)`.
    Xavier,
    /// Normal with std 0.01; classifier heads start near uniform.
    Small,
}

/// Declarative layer description used to build a [`Network`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        init: Init,
    },
    Conv1d {
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    },
    /// Transposed 1-D convolution; output length is `(len - 1) * stride + kernel`.
    Conv1dTranspose {
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    },
    Relu,
    LeakyRelu,
    Sigmoid,
    /// Softmax over the feature dimension of a `[n, features]` tensor.
    Softmax,
    /// `[n, channels, length]` -> `[n, channels * length]`.
    Flatten,
    /// `[n, features]` -> `[n, channels, features / channels]`.
    Unflatten { channels: usize },
}

/// Errors from network construction, forward and backward passes.
#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    /// Adjacent layer dimensions disagree, or a spec is internally invalid.
    DimensionMismatch(String),
    /// Input/output tensor shape does not match the network contract.
    ShapeError(String),
    /// A layer produced NaN or infinity.
    NonFiniteActivation { layer: usize },
    /// `backward` called without a retained forward tape.
    NoTape,
    Param(ParamError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            NnError::ShapeError(msg) => write!(f, "shape error: {msg}"),
            NnError::NonFiniteActivation { layer } => {
                write!(f, "non-finite activation in layer {layer}")
            }
            NnError::NoTape => write!(f, "backward called without a forward tape"),
            NnError::Param(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NnError {}

impl From<ParamError> for NnError {
    fn from(e: ParamError) -> Self {
        NnError::Param(e)
    }
}

/// Result of a backward pass: gradients for every parameter plus the
/// gradient with respect to the network input (for chaining networks).
#[derive(Debug, Clone)]
pub struct Backprop<T = f32> {
    pub grads: GradientUpdate<T>,
    pub input_grad: Tensor<T>,
}

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        weight: usize,
        bias: usize,
    },
    Conv1d {
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        len_in: usize,
        len_out: usize,
        weight: usize,
        bias: usize,
    },
    Conv1dTranspose {
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        len_in: usize,
        len_out: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    LeakyRelu,
    Sigmoid,
    Softmax,
    Flatten { shape_in: Vec<usize> },
    Unflatten { channels: usize, len: usize },
}

/// A sequential differentiable network.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    layers: Vec<Layer>,
    params: ParameterSet<T>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    tape: Option<Vec<Tensor<T>>>,
}

/// Builds a network with deterministic initialization from a seed.
pub fn build_network<T: Element>(specs: &[LayerSpec], seed: u64) -> Result<Network<T>, NnError> {
    Network::build(specs, seed)
}

impl<T: Element> Network<T> {
    /// Builds the layer chain, validating that adjacent shapes agree, and
    /// initializes parameters deterministically from `seed`. The per-sample
    /// input shape is inferred from the first layer.
    pub fn build(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::DimensionMismatch("empty layer list".into()));
        }
        let input_shape = infer_input_shape(&specs[0])?;
        Self::build_with_input(&input_shape, specs, seed)
    }

    /// Builds with an explicit per-sample input shape, which permits layer
    /// chains that start with reshaping layers.
    pub fn build_with_input(
        input: &[usize],
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::DimensionMismatch("empty layer list".into()));
        }
        let input_shape = input.to_vec();
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = ParameterSet::new();
        let mut rng = Seeder::new(seed).derive("init").rng();

        for (idx, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    init,
                } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(NnError::DimensionMismatch(format!(
                            "layer {idx}: dense dims must be positive"
                        )));
                    }
                    if shape != [in_dim] {
                        return Err(NnError::DimensionMismatch(format!(
                            "layer {idx}: dense expects [{in_dim}], got {shape:?}"
                        )));
                    }
                    let std = init_std(init, in_dim, out_dim);
                    let weight = params.push(
                        &format!("layer{idx}.weight"),
                        random_tensor(&[out_dim, in_dim], std, &mut rng),
                    )?;
                    let bias =
                        params.push(&format!("layer{idx}.bias"), Tensor::zeros(&[out_dim]))?;
                    shape = vec![out_dim];
                    Layer::Dense {
                        in_dim,
                        out_dim,
                        weight,
                        bias,
                    }
                }
                LayerSpec::Conv1d {
                    channels_in,
                    channels_out,
                    kernel,
                    stride,
                    init,
                } => {
                    let (len_in, len_out) = conv_dims(
                        idx,
                        &shape,
                        channels_in,
                        channels_out,
                        kernel,
                        stride,
                        false,
                    )?;
                    let fan_in = channels_in * kernel;
                    let std = init_std(init, fan_in, channels_out * kernel);
                    let weight = params.push(
                        &format!("layer{idx}.weight"),
                        random_tensor(&[channels_out, channels_in, kernel], std, &mut rng),
                    )?;
                    let bias = params
                        .push(&format!("layer{idx}.bias"), Tensor::zeros(&[channels_out]))?;
                    shape = vec![channels_out, len_out];
                    Layer::Conv1d {
                        channels_in,
                        channels_out,
                        kernel,
                        stride,
                        len_in,
                        len_out,
                        weight,
                        bias,
                    }
                }
                LayerSpec::Conv1dTranspose {
                    channels_in,
                    channels_out,
                    kernel,
                    stride,
                    init,
                } => {
                    let (len_in, len_out) = conv_dims(
                        idx,
                        &shape,
                        channels_in,
                        channels_out,
                        kernel,
                        stride,
                        true,
                    )?;
                    let fan_in = channels_in * kernel;
                    let std = init_std(init, fan_in, channels_out * kernel);
                    let weight = params.push(
                        &format!("layer{idx}.weight"),
                        random_tensor(&[channels_in, channels_out, kernel], std, &mut rng),
                    )?;
                    let bias = params
                        .push(&format!("layer{idx}.bias"), Tensor::zeros(&[channels_out]))?;
                    shape = vec![channels_out, len_out];
                    Layer::Conv1dTranspose {
                        channels_in,
                        channels_out,
                        kernel,
                        stride,
                        len_in,
                        len_out,
                        weight,
                        bias,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::LeakyRelu => Layer::LeakyRelu,
                LayerSpec::Sigmoid => Layer::Sigmoid,
                LayerSpec::Softmax => {
                    if shape.len() != 1 {
                        return Err(NnError::DimensionMismatch(format!(
                            "layer {idx}: softmax expects a flat feature vector, got {shape:?}"
                        )));
                    }
                    Layer::Softmax
                }
                LayerSpec::Flatten => {
                    if shape.len() < 2 {
                        return Err(NnError::DimensionMismatch(format!(
                            "layer {idx}: flatten expects a multi-axis input, got {shape:?}"
                        )));
                    }
                    let layer = Layer::Flatten {
                        shape_in: shape.clone(),
                    };
                    shape = vec![shape.iter().product()];
                    layer
                }
                LayerSpec::Unflatten { channels } => {
                    if shape.len() != 1 || channels == 0 || shape[0] % channels != 0 {
                        return Err(NnError::DimensionMismatch(format!(
                            "layer {idx}: cannot unflatten {shape:?} into {channels} channels"
                        )));
                    }
                    let len = shape[0] / channels;
                    shape = vec![channels, len];
                    Layer::Unflatten { channels, len }
                }
            };
            layers.push(layer);
        }

        Ok(Self {
            layers,
            params,
            input_shape,
            output_shape: shape,
            tape: None,
        })
    }

    /// Per-sample input shape (without the batch dimension).
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape (without the batch dimension).
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    /// Installs parameter values; structure must match the built network.
    pub fn set_params(&mut self, params: &ParameterSet<T>) -> Result<(), NnError> {
        self.params.assign(params)?;
        Ok(())
    }

    /// Forward pass that retains the activation tape for [`Network::backward`].
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let tape = self.run_forward(input)?;
        let output = tape.last().expect("tape has input and outputs").clone();
        self.tape = Some(tape);
        Ok(output)
    }

    /// Forward pass without recording a tape; usable on shared references.
    pub fn forward_inference(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut tape = self.run_forward(input)?;
        Ok(tape.pop().expect("tape has input and outputs"))
    }

    fn run_forward(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>, NnError> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(NnError::ShapeError(format!(
                "input {:?} does not match [batch, {:?}]",
                shape, self.input_shape
            )));
        }
        let batch = shape[0];
        if batch == 0 {
            return Err(NnError::ShapeError("empty batch".into()));
        }
        let mut tape = Vec::with_capacity(self.layers.len() + 1);
        tape.push(input.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let out = self.layer_forward(layer, tape.last().unwrap(), batch);
            out.ensure_finite()
                .map_err(|_| NnError::NonFiniteActivation { layer: idx })?;
            tape.push(out);
        }
        Ok(tape)
    }

    /// Reverse pass over the retained tape. Consumes the tape and returns
    /// gradients for every parameter plus the gradient of the input.
    pub fn backward(&mut self, output_grad: &Tensor<T>) -> Result<Backprop<T>, NnError> {
        let tape = self.tape.take().ok_or(NnError::NoTape)?;
        let expected = tape.last().unwrap().shape();
        if output_grad.shape() != expected {
            return Err(NnError::ShapeError(format!(
                "output grad {:?} does not match output {:?}",
                output_grad.shape(),
                expected
            )));
        }
        let batch = tape[0].shape()[0];
        let mut param_grads: Vec<Tensor<T>> = self
            .params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect();
        let mut grad = output_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            grad = self.layer_backward(layer, &tape[idx], &tape[idx + 1], &grad, batch, &mut param_grads);
        }
        let grads = GradientUpdate {
            grads: self
                .params
                .entries()
                .iter()
                .zip(param_grads)
                .map(|(e, tensor)| NamedTensor {
                    name: e.name.clone(),
                    tensor,
                })
                .collect(),
            client: None,
            round: 0,
        };
        Ok(Backprop {
            grads,
            input_grad: grad,
        })
    }

    fn layer_forward(&self, layer: &Layer, input: &Tensor<T>, batch: usize) -> Tensor<T> {
        match layer {
            Layer::Dense {
                in_dim,
                out_dim,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let b = self.params.tensor(*bias).data();
                let x = input.data();
                let mut out = vec![T::zero(); batch * out_dim];
                for n in 0..batch {
                    let xr = &x[n * in_dim..(n + 1) * in_dim];
                    let yr = &mut out[n * out_dim..(n + 1) * out_dim];
                    for (o, y) in yr.iter_mut().enumerate() {
                        let wr = &w[o * in_dim..(o + 1) * in_dim];
                        let mut acc = b[o];
                        for (wv, xv) in wr.iter().zip(xr.iter()) {
                            acc = acc + *wv * *xv;
                        }
                        *y = acc;
                    }
                }
                Tensor::from_vec(vec![batch, *out_dim], out).unwrap()
            }
            Layer::Conv1d {
                channels_in,
                channels_out,
                kernel,
                stride,
                len_in,
                len_out,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let b = self.params.tensor(*bias).data();
                let x = input.data();
                let mut out = vec![T::zero(); batch * channels_out * len_out];
                for n in 0..batch {
                    let x_base = n * channels_in * len_in;
                    let y_base = n * channels_out * len_out;
                    for co in 0..*channels_out {
                        let yr = &mut out[y_base + co * len_out..y_base + (co + 1) * len_out];
                        for (j, y) in yr.iter_mut().enumerate() {
                            let start = j * stride;
                            let mut acc = b[co];
                            for ci in 0..*channels_in {
                                let wr = &w[(co * channels_in + ci) * kernel
                                    ..(co * channels_in + ci + 1) * kernel];
                                let xr = &x[x_base + ci * len_in + start
                                    ..x_base + ci * len_in + start + kernel];
                                for (wv, xv) in wr.iter().zip(xr.iter()) {
                                    acc = acc + *wv * *xv;
                                }
                            }
                            *y = acc;
                        }
                    }
                }
                Tensor::from_vec(vec![batch, *channels_out, *len_out], out).unwrap()
            }
            Layer::Conv1dTranspose {
                channels_in,
                channels_out,
                kernel,
                stride,
                len_in,
                len_out,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let b = self.params.tensor(*bias).data();
                let x = input.data();
                let mut out = vec![T::zero(); batch * channels_out * len_out];
                for n in 0..batch {
                    let y_base = n * channels_out * len_out;
                    for co in 0..*channels_out {
                        for v in &mut out[y_base + co * len_out..y_base + (co + 1) * len_out] {
                            *v = b[co];
                        }
                    }
                    for ci in 0..*channels_in {
                        let xr = &x[(n * channels_in + ci) * len_in
                            ..(n * channels_in + ci + 1) * len_in];
                        for (j, &xv) in xr.iter().enumerate() {
                            let start = j * stride;
                            for co in 0..*channels_out {
                                let wr = &w[(ci * channels_out + co) * kernel
                                    ..(ci * channels_out + co + 1) * kernel];
                                let yr = &mut out[y_base + co * len_out + start
                                    ..y_base + co * len_out + start + kernel];
                                for (y, wv) in yr.iter_mut().zip(wr.iter()) {
                                    *y = *y + xv * *wv;
                                }
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![batch, *channels_out, *len_out], out).unwrap()
            }
            Layer::Relu => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                out
            }
            Layer::LeakyRelu => {
                let slope = T::from_f64(LEAKY_SLOPE);
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < T::zero() {
                        *v = *v * slope;
                    }
                }
                out
            }
            Layer::Sigmoid => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    *v = T::one() / (T::one() + (-*v).exp());
                }
                out
            }
            Layer::Softmax => {
                let dim = input.shape()[1];
                let mut out = input.clone();
                for row in out.data_mut().chunks_mut(dim) {
                    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum = sum + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / sum;
                    }
                }
                out
            }
            Layer::Flatten { shape_in } => {
                let flat: usize = shape_in.iter().product();
                input.clone().reshape(vec![batch, flat]).unwrap()
            }
            Layer::Unflatten { channels, len } => input
                .clone()
                .reshape(vec![batch, *channels, *len])
                .unwrap(),
        }
    }

    fn layer_backward(
        &self,
        layer: &Layer,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        batch: usize,
        param_grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        match layer {
            Layer::Dense {
                in_dim,
                out_dim,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let x = input.data();
                let g = grad.data();
                let mut dx = vec![T::zero(); batch * in_dim];
                {
                    let (dw_slot, db_slot) = two_slots(param_grads, *weight, *bias);
                    let dw = dw_slot.data_mut();
                    let db = db_slot.data_mut();
                    for n in 0..batch {
                        let xr = &x[n * in_dim..(n + 1) * in_dim];
                        let gr = &g[n * out_dim..(n + 1) * out_dim];
                        let dxr = &mut dx[n * in_dim..(n + 1) * in_dim];
                        for (o, &gv) in gr.iter().enumerate() {
                            db[o] = db[o] + gv;
                            let wr = &w[o * in_dim..(o + 1) * in_dim];
                            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for i in 0..*in_dim {
                                dwr[i] = dwr[i] + gv * xr[i];
                                dxr[i] = dxr[i] + gv * wr[i];
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![batch, *in_dim], dx).unwrap()
            }
            Layer::Conv1d {
                channels_in,
                channels_out,
                kernel,
                stride,
                len_in,
                len_out,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let x = input.data();
                let g = grad.data();
                let mut dx = vec![T::zero(); batch * channels_in * len_in];
                {
                    let (dw_slot, db_slot) = two_slots(param_grads, *weight, *bias);
                    let dw = dw_slot.data_mut();
                    let db = db_slot.data_mut();
                    for n in 0..batch {
                        let x_base = n * channels_in * len_in;
                        let g_base = n * channels_out * len_out;
                        for co in 0..*channels_out {
                            let gr = &g[g_base + co * len_out..g_base + (co + 1) * len_out];
                            for (j, &gv) in gr.iter().enumerate() {
                                db[co] = db[co] + gv;
                                let start = j * stride;
                                for ci in 0..*channels_in {
                                    let wr = &w[(co * channels_in + ci) * kernel
                                        ..(co * channels_in + ci + 1) * kernel];
                                    let dwr = &mut dw[(co * channels_in + ci) * kernel
                                        ..(co * channels_in + ci + 1) * kernel];
                                    let xo = x_base + ci * len_in + start;
                                    let dxo = n * channels_in * len_in + ci * len_in + start;
                                    for t in 0..*kernel {
                                        dwr[t] = dwr[t] + gv * x[xo + t];
                                        dx[dxo + t] = dx[dxo + t] + gv * wr[t];
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![batch, *channels_in, *len_in], dx).unwrap()
            }
            Layer::Conv1dTranspose {
                channels_in,
                channels_out,
                kernel,
                stride,
                len_in,
                len_out,
                weight,
                bias,
            } => {
                let w = self.params.tensor(*weight).data();
                let x = input.data();
                let g = grad.data();
                let mut dx = vec![T::zero(); batch * channels_in * len_in];
                {
                    let (dw_slot, db_slot) = two_slots(param_grads, *weight, *bias);
                    let dw = dw_slot.data_mut();
                    let db = db_slot.data_mut();
                    for n in 0..batch {
                        let g_base = n * channels_out * len_out;
                        for co in 0..*channels_out {
                            for &gv in &g[g_base + co * len_out..g_base + (co + 1) * len_out] {
                                db[co] = db[co] + gv;
                            }
                        }
                        for ci in 0..*channels_in {
                            let x_off = (n * channels_in + ci) * len_in;
                            for j in 0..*len_in {
                                let xv = x[x_off + j];
                                let start = j * stride;
                                let mut acc = T::zero();
                                for co in 0..*channels_out {
                                    let base = (ci * channels_out + co) * kernel;
                                    let go = g_base + co * len_out + start;
                                    for t in 0..*kernel {
                                        let gv = g[go + t];
                                        dw[base + t] = dw[base + t] + xv * gv;
                                        acc = acc + w[base + t] * gv;
                                    }
                                }
                                dx[x_off + j] = acc;
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![batch, *channels_in, *len_in], dx).unwrap()
            }
            Layer::Relu => {
                let mut dx = grad.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(input.data()) {
                    if xv <= T::zero() {
                        *d = T::zero();
                    }
                }
                dx
            }
            Layer::LeakyRelu => {
                let slope = T::from_f64(LEAKY_SLOPE);
                let mut dx = grad.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(input.data()) {
                    if xv <= T::zero() {
                        *d = *d * slope;
                    }
                }
                dx
            }
            Layer::Sigmoid => {
                let mut dx = grad.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(output.data()) {
                    *d = *d * yv * (T::one() - yv);
                }
                dx
            }
            Layer::Softmax => {
                let dim = output.shape()[1];
                let mut dx = grad.clone();
                for (drow, yrow) in dx
                    .data_mut()
                    .chunks_mut(dim)
                    .zip(output.data().chunks(dim))
                {
                    let mut dot = T::zero();
                    for (d, y) in drow.iter().zip(yrow.iter()) {
                        dot = dot + *d * *y;
                    }
                    for (d, y) in drow.iter_mut().zip(yrow.iter()) {
                        *d = *y * (*d - dot);
                    }
                }
                dx
            }
            Layer::Flatten { shape_in } => {
                let mut shape = vec![batch];
                shape.extend_from_slice(shape_in);
                grad.clone().reshape(shape).unwrap()
            }
            Layer::Unflatten { channels, len } => grad
                .clone()
                .reshape(vec![batch, channels * len])
                .unwrap(),
        }
    }
}

/// Borrows two distinct gradient slots mutably.
fn two_slots<T>(grads: &mut [Tensor<T>], a: usize, b: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
    debug_assert!(a < b);
    let (left, right) = grads.split_at_mut(b);
    (&mut left[a], &mut right[0])
}

fn init_std(init: Init, fan_in: usize, fan_out: usize) -> f64 {
    match init {
        Init::He => (2.0 / fan_in as f64).sqrt(),
        Init::Xavier => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Small => 0.01,
    }
}

fn random_tensor<T: Element>(
    shape: &[usize],
    std: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(standard_normal::<f64, _>(rng) * std);
    }
    t
}

fn infer_input_shape(first: &LayerSpec) -> Result<Vec<usize>, NnError> {
    match *first {
        LayerSpec::Dense { in_dim, .. } => Ok(vec![in_dim]),
        LayerSpec::Conv1d { .. } | LayerSpec::Conv1dTranspose { .. } => Err(
            NnError::DimensionMismatch(
                "convolutional first layers need an explicit input length; start the spec with \
                 Unflatten or give the network a flat Dense front"
                    .into(),
            ),
        ),
        LayerSpec::Unflatten { .. } => Err(NnError::DimensionMismatch(
            "unflatten cannot infer an input width as the first layer".into(),
        )),
        _ => Err(NnError::DimensionMismatch(
            "first layer must be parameterized (dense) or unflatten after a known width".into(),
        )),
    }
}

fn conv_dims(
    idx: usize,
    shape: &[usize],
    channels_in: usize,
    channels_out: usize,
    kernel: usize,
    stride: usize,
    transpose: bool,
) -> Result<(usize, usize), NnError> {
    if channels_in == 0 || channels_out == 0 || kernel == 0 || stride == 0 {
        return Err(NnError::DimensionMismatch(format!(
            "layer {idx}: convolution sizes must be positive"
        )));
    }
    if shape.len() != 2 || shape[0] != channels_in {
        return Err(NnError::DimensionMismatch(format!(
            "layer {idx}: convolution expects [{channels_in}, len], got {shape:?}"
        )));
    }
    let len_in = shape[1];
    let len_out = if transpose {
        (len_in - 1) * stride + kernel
    } else {
        if kernel > len_in {
            return Err(NnError::DimensionMismatch(format!(
                "layer {idx}: kernel {kernel} exceeds input length {len_in}"
            )));
        }
        (len_in - kernel) / stride + 1
    };
    Ok((len_in, len_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(in_dim: usize, out_dim: usize) -> LayerSpec {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            init: Init::He,
        }
    }

    #[test]
    fn build_is_deterministic_for_a_seed() {
        let specs = [dense(4, 8), LayerSpec::LeakyRelu, dense(8, 2)];
        let a = Network::<f32>::build(&specs, 9).unwrap();
        let b = Network::<f32>::build(&specs, 9).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Network::<f32>::build(&specs, 10).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn biases_are_zero_initialized() {
        let net = Network::<f32>::build(&[dense(4, 4)], 3).unwrap();
        let bias = net.params().by_name("layer0.bias").unwrap();
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn he_init_variance_matches_two_over_fan_in() {
        let net = Network::<f32>::build(&[dense(100, 100)], 0).unwrap();
        let w = net.params().by_name("layer0.weight").unwrap().data();
        let mean: f64 = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let var: f64 =
            w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 100.0;
        assert!(
            (var - expected).abs() < 0.2 * expected,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn mismatched_adjacent_dims_fail_to_build() {
        let err = Network::<f32>::build(&[dense(4, 8), dense(9, 2)], 0).unwrap_err();
        assert!(matches!(err, NnError::DimensionMismatch(_)));
    }

    #[test]
    fn kernel_larger_than_input_fails_to_build() {
        let specs = [
            dense(12, 12),
            LayerSpec::Unflatten { channels: 3 },
            LayerSpec::Conv1d {
                channels_in: 3,
                channels_out: 2,
                kernel: 5,
                stride: 1,
                init: Init::He,
            },
        ];
        let err = Network::<f32>::build(&specs, 0).unwrap_err();
        assert!(matches!(err, NnError::DimensionMismatch(_)));
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let mut net = Network::<f32>::build(&[dense(3, 3)], 0).unwrap();
        let n = net.params_mut();
        let w = n.tensor_mut(0);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = if i % 4 == 0 { 1.0 } else { 0.0 }; // 3x3 identity
        }
        let x = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        let y = net.forward_inference(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn relu_clamps_negative_values() {
        let specs = [dense(2, 2), LayerSpec::Relu];
        let mut net = Network::<f32>::build(&specs, 0).unwrap();
        let p = net.params_mut();
        let w = p.tensor_mut(0);
        w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let y = net.forward_inference(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn all_ones_conv_on_constant_signal_sums_kernel_width() {
        // kernel of ones, stride 1, constant input c -> every output = k * c
        let specs = [
            dense(8, 8),
            LayerSpec::Unflatten { channels: 1 },
            LayerSpec::Conv1d {
                channels_in: 1,
                channels_out: 1,
                kernel: 3,
                stride: 1,
                init: Init::He,
            },
        ];
        let mut net = Network::<f32>::build(&specs, 0).unwrap();
        {
            let p = net.params_mut();
            let w0 = p.tensor_mut(0); // dense as identity
            for (i, v) in w0.data_mut().iter_mut().enumerate() {
                *v = if i % 9 == 0 { 1.0 } else { 0.0 };
            }
            let wc = p.by_name("layer2.weight").unwrap().shape().to_vec();
            assert_eq!(wc, &[1, 1, 3]);
            let idx = p
                .entries()
                .iter()
                .position(|e| e.name == "layer2.weight")
                .unwrap();
            p.tensor_mut(idx).data_mut().fill(1.0);
        }
        let c = 0.75f32;
        let x = Tensor::from_vec(vec![1, 8], vec![c; 8]).unwrap();
        let y = net.forward_inference(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6]);
        for &v in y.data() {
            assert!((v - 3.0 * c).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let specs = [dense(4, 3), LayerSpec::Softmax];
        let mut net = Network::<f32>::build(&specs, 1).unwrap();
        let x = Tensor::from_vec(vec![5, 4], (0..20).map(|i| (i as f32) * 0.3 - 2.0).collect())
            .unwrap();
        let y = net.forward(&x).unwrap();
        for row in y.data().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn backward_without_forward_is_no_tape() {
        let mut net = Network::<f32>::build(&[dense(2, 2)], 0).unwrap();
        let g = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(net.backward(&g), Err(NnError::NoTape)));
    }

    #[test]
    fn zero_output_grad_gives_zero_update() {
        let specs = [dense(3, 5), LayerSpec::LeakyRelu, dense(5, 2)];
        let mut net = Network::<f32>::build(&specs, 4).unwrap();
        let x = Tensor::from_vec(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        net.forward(&x).unwrap();
        let g = Tensor::zeros(&[2, 2]);
        let bp = net.backward(&g).unwrap();
        for grad in &bp.grads.grads {
            assert!(grad.tensor.data().iter().all(|&v| v == 0.0));
        }
        assert!(bp.input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_output_grad() {
        let specs = [dense(3, 4), LayerSpec::Sigmoid, dense(4, 2)];
        let x = Tensor::from_vec(vec![1, 3], vec![0.2, -0.7, 1.1]).unwrap();
        let g1 = Tensor::from_vec(vec![1, 2], vec![0.3, -0.5]).unwrap();
        let g2 = Tensor::from_vec(vec![1, 2], vec![-1.0, 0.25]).unwrap();
        let (a, b) = (2.0f64, -0.75f64);

        let run = |g: &Tensor<f64>| {
            let mut net = Network::<f64>::build(&specs, 7).unwrap();
            net.forward(&x.cast()).unwrap();
            net.backward(g).unwrap()
        };
        let mut combined = g1.cast::<f64>();
        combined.scale(a);
        combined.add_scaled(&g2.cast(), b).unwrap();
        let lhs = run(&combined);
        let r1 = run(&g1.cast());
        let r2 = run(&g2.cast());
        for ((l, p), q) in lhs
            .grads
            .grads
            .iter()
            .zip(r1.grads.grads.iter())
            .zip(r2.grads.grads.iter())
        {
            for ((&lv, &pv), &qv) in l
                .tensor
                .data()
                .iter()
                .zip(p.tensor.data())
                .zip(q.tensor.data())
            {
                assert!((lv - (a * pv + b * qv)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let mut net = Network::<f32>::build(&[dense(3, 2)], 0).unwrap();
        let bad = Tensor::from_vec(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(net.forward(&bad), Err(NnError::ShapeError(_))));
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let mut net = Network::<f32>::build(&[dense(2, 2)], 0).unwrap();
        let x = Tensor::from_vec(vec![1, 2], vec![f32::MAX, f32::MAX]).unwrap();
        net.params_mut().tensor_mut(0).data_mut().fill(f32::MAX);
        assert!(matches!(
            net.forward(&x),
            Err(NnError::NonFiniteActivation { layer: 0 })
        ));
    }

    #[test]
    fn transpose_conv_output_length() {
        let specs = [
            dense(6, 6),
            LayerSpec::Unflatten { channels: 2 },
            LayerSpec::Conv1dTranspose {
                channels_in: 2,
                channels_out: 1,
                kernel: 4,
                stride: 2,
                init: Init::He,
            },
        ];
        let net = Network::<f32>::build(&specs, 0).unwrap();
        // len_in = 3 -> (3 - 1) * 2 + 4 = 8
        assert_eq!(net.output_shape(), &[1, 8]);
    }
}

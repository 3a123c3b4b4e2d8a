//! The anonymization model: a conditional variational autoencoder whose
//! latent representation is adversarially scrubbed of private attributes.
//!
//! The probabilistic encoder maps a flat sensor segment to the mean and
//! log-variance of a Gaussian latent distribution. A latent sample,
//! concatenated with one-hot private and public labels, drives the decoder,
//! which reconstructs a segment of the original shape. One softmax
//! discriminator per private attribute plays the adversary trying to infer
//! that attribute from the latent code alone; its loss enters the total
//! objective with a negative weight so the encoder learns codes the
//! adversary cannot use. At anonymization time the private labels fed to
//! the decoder are drawn uniformly at random, so even a consumer that maps
//! outputs back to inputs learns nothing about the real attribute.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::Rng;

use crate::data::{DataError, DatasetSchema, LabelPredictor, LabeledSegment};
use crate::nn::{Backprop, Init, LayerSpec, Network, NnError};
use crate::optim::{optimizer_step, Optimizer};
use crate::params::{GradientUpdate, ParamError, ParameterSet};
use crate::rng::normal_tensor;
use crate::tensor::{Element, Tensor};

/// Floor applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Errors from model construction and the anonymization operations.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A label is outside the class count declared in the schema.
    InvalidLabel {
        kind: &'static str,
        label: usize,
        classes: usize,
    },
    /// Discriminator index out of range.
    AttributeIndex { index: usize, count: usize },
    EmptyBatch,
    /// Shadow samples need at least two classes to flip between.
    SingleClassSchema,
    Net(NnError),
    Param(ParamError),
    Data(DataError),
    Config(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidLabel {
                kind,
                label,
                classes,
            } => {
                write!(f, "{kind} label {label} out of range ({classes} classes)")
            }
            ModelError::AttributeIndex { index, count } => {
                write!(f, "attribute index {index} out of range ({count} attributes)")
            }
            ModelError::EmptyBatch => write!(f, "empty batch"),
            ModelError::SingleClassSchema => write!(f, "attribute has a single class"),
            ModelError::Net(e) => write!(f, "{e}"),
            ModelError::Param(e) => write!(f, "{e}"),
            ModelError::Data(e) => write!(f, "{e}"),
            ModelError::Config(msg) => write!(f, "model config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<NnError> for ModelError {
    fn from(e: NnError) -> Self {
        ModelError::Net(e)
    }
}

impl From<ParamError> for ModelError {
    fn from(e: ParamError) -> Self {
        ModelError::Param(e)
    }
}

impl From<DataError> for ModelError {
    fn from(e: DataError) -> Self {
        ModelError::Data(e)
    }
}

/// Weights of the three loss terms: reconstruction, KL regularizer, and the
/// (negated) discriminator term.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.9,
            beta: 2.0,
            gamma: 0.2,
        }
    }
}

/// Optional convolutional front: the first two encoder layers become strided
/// convolutions and the last two decoder layers transposed convolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvFrontend {
    /// Feature channels of the two convolution stages.
    pub features: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
}

impl Default for ConvFrontend {
    fn default() -> Self {
        ConvFrontend {
            features: [16, 32],
            kernel: 5,
            stride: 2,
        }
    }
}

/// Architecture and loss configuration of the model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Discriminator hidden widths.
    pub disc_hidden: Vec<usize>,
    pub weights: LossWeights,
    #[cfg_attr(feature = "serde", serde(default))]
    pub conv_frontend: Option<ConvFrontend>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 25,
            hidden: alloc::vec![256, 128],
            disc_hidden: alloc::vec![64, 32],
            weights: LossWeights::default(),
            conv_frontend: None,
        }
    }
}

/// Latent code of one segment: posterior mean, log-variance, and the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T = f32> {
    pub mu: Vec<T>,
    pub log_var: Vec<T>,
    pub z: Vec<T>,
}

/// A synthetic segment carrying a counterfactual private label, used to keep
/// local discriminators from collapsing on single-class clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSample<T = f32> {
    pub x_star: Vec<T>,
    /// One counterfactual label per private attribute; never the true class.
    pub y_star: Vec<usize>,
    /// Public label, unchanged from the source sample.
    pub public_label: usize,
    pub z_star: LatentCode<T>,
}

/// A training batch: flat segments plus their labels.
#[derive(Debug, Clone)]
pub struct Batch<T = f32> {
    /// `[n, segment_len]`.
    pub x: Tensor<T>,
    pub public: Vec<usize>,
    /// `privates[attribute][sample]`.
    pub privates: Vec<Vec<usize>>,
}

impl<T: Element> Batch<T> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Element>(&self) -> Batch<U> {
        Batch {
            x: self.x.cast(),
            public: self.public.clone(),
            privates: self.privates.clone(),
        }
    }
}

impl Batch<f32> {
    pub fn from_segments(segments: &[&LabeledSegment]) -> Result<Self, ModelError> {
        let n = segments.len();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let dim = segments[0].x.len();
        let attrs = segments[0].private_labels.len();
        let mut data = Vec::with_capacity(n * dim);
        let mut public = Vec::with_capacity(n);
        let mut privates = alloc::vec![Vec::with_capacity(n); attrs];
        for seg in segments {
            if seg.x.len() != dim || seg.private_labels.len() != attrs {
                return Err(ModelError::Config("ragged batch".into()));
            }
            data.extend_from_slice(&seg.x);
            public.push(seg.public_label);
            for (j, &y) in seg.private_labels.iter().enumerate() {
                privates[j].push(y);
            }
        }
        Ok(Batch {
            x: Tensor::from_vec(alloc::vec![n, dim], data).expect("constructed together"),
            public,
            privates,
        })
    }
}

/// The full parameter state of a model: encoder, decoder, discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub encoder: ParameterSet<T>,
    pub decoder: ParameterSet<T>,
    pub discriminators: Vec<ParameterSet<T>>,
}

impl ModelParams<f32> {
    /// Combined checksum over all three parameter streams.
    pub fn checksum(&self) -> u64 {
        let mut h = self.encoder.checksum() ^ self.decoder.checksum().rotate_left(21);
        for (i, d) in self.discriminators.iter().enumerate() {
            h ^= d.checksum().rotate_left((7 + i) as u32);
        }
        h
    }
}

impl<T: Element> ModelParams<T> {
    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            discriminators: self.discriminators.iter().map(|d| d.cast()).collect(),
        }
    }
}

/// Gradients for the full model, aligned with [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads<T = f32> {
    pub encoder: GradientUpdate<T>,
    pub decoder: GradientUpdate<T>,
    pub discriminators: Vec<GradientUpdate<T>>,
}

impl<T: Element> ModelGrads<T> {
    pub fn add_scaled(&mut self, other: &ModelGrads<T>, scale: T) -> Result<(), ParamError> {
        self.encoder.add_scaled(&other.encoder, scale)?;
        self.decoder.add_scaled(&other.decoder, scale)?;
        if self.discriminators.len() != other.discriminators.len() {
            return Err(ParamError::Misaligned("discriminator count".into()));
        }
        for (a, b) in self.discriminators.iter_mut().zip(&other.discriminators) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.encoder.scale(factor);
        self.decoder.scale(factor);
        for d in &mut self.discriminators {
            d.scale(factor);
        }
    }

    pub fn ensure_finite(&self) -> Result<(), ParamError> {
        self.encoder.ensure_finite()?;
        self.decoder.ensure_finite()?;
        for d in &self.discriminators {
            d.ensure_finite()?;
        }
        Ok(())
    }

    pub fn norm_l2(&self) -> f64 {
        let mut sq = self.encoder.norm_l2().powi(2) + self.decoder.norm_l2().powi(2);
        for d in &self.discriminators {
            sq += d.norm_l2().powi(2);
        }
        sq.sqrt()
    }

    pub fn cast<U: Element>(&self) -> ModelGrads<U> {
        ModelGrads {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            discriminators: self.discriminators.iter().map(|d| d.cast()).collect(),
        }
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    /// Mean discriminator cross-entropy, summed over attributes.
    pub disc: f64,
    pub total: f64,
}

/// The anonymization model: encoder, conditioned decoder, and one
/// discriminator per private attribute.
#[derive(Debug, Clone)]
pub struct BlinderModel<T = f32> {
    encoder: Network<T>,
    decoder: Network<T>,
    discriminators: Vec<Network<T>>,
    schema: DatasetSchema,
    config: ModelConfig,
}

impl<T: Element> BlinderModel<T> {
    /// Builds the three networks with deterministic initialization.
    pub fn build(
        schema: &DatasetSchema,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        schema.validate()?;
        if config.latent_dim == 0 {
            return Err(ModelError::Config("latent_dim must be positive".into()));
        }
        if config.hidden.is_empty() || config.disc_hidden.is_empty() {
            return Err(ModelError::Config(
                "hidden layer lists must be non-empty".into(),
            ));
        }
        let input = schema.segment_len();
        let latent = config.latent_dim;
        let cond =
            latent + schema.public_classes + schema.private_class_counts().iter().sum::<usize>();

        let (encoder, decoder) = match &config.conv_frontend {
            None => {
                let mut enc = Vec::new();
                let mut dims = alloc::vec![input];
                dims.extend_from_slice(&config.hidden);
                for w in dims.windows(2) {
                    enc.push(LayerSpec::Dense {
                        in_dim: w[0],
                        out_dim: w[1],
                        init: Init::He,
                    });
                    enc.push(LayerSpec::LeakyRelu);
                }
                // near-zero head: the posterior starts at the prior, which
                // keeps the KL term and its exponential gradient tame early
                enc.push(LayerSpec::Dense {
                    in_dim: *dims.last().unwrap(),
                    out_dim: 2 * latent,
                    init: Init::Small,
                });
                let mut dec = Vec::new();
                let mut rdims = alloc::vec![cond];
                rdims.extend(config.hidden.iter().rev());
                for w in rdims.windows(2) {
                    dec.push(LayerSpec::Dense {
                        in_dim: w[0],
                        out_dim: w[1],
                        init: Init::He,
                    });
                    dec.push(LayerSpec::LeakyRelu);
                }
                dec.push(LayerSpec::Dense {
                    in_dim: *rdims.last().unwrap(),
                    out_dim: input,
                    init: Init::Xavier,
                });
                (
                    Network::build(&enc, seed ^ 0x01)?,
                    Network::build(&dec, seed ^ 0x02)?,
                )
            }
            Some(front) => Self::build_conv_pair(schema, config, front, seed)?,
        };

        let mut discriminators = Vec::new();
        for (j, attr) in schema.private_attributes.iter().enumerate() {
            let mut spec = Vec::new();
            let mut dims = alloc::vec![latent];
            dims.extend_from_slice(&config.disc_hidden);
            for w in dims.windows(2) {
                spec.push(LayerSpec::Dense {
                    in_dim: w[0],
                    out_dim: w[1],
                    init: Init::He,
                });
                spec.push(LayerSpec::LeakyRelu);
            }
            spec.push(LayerSpec::Dense {
                in_dim: *dims.last().unwrap(),
                out_dim: attr.classes,
                init: Init::Small,
            });
            spec.push(LayerSpec::Softmax);
            discriminators.push(Network::build(&spec, seed ^ (0x10 + j as u64))?);
        }

        Ok(BlinderModel {
            encoder,
            decoder,
            discriminators,
            schema: schema.clone(),
            config: config.clone(),
        })
    }

    /// Convolutional variant: two strided conv stages in front of the dense
    /// trunk, mirrored by transposed convolutions in the decoder. The window
    /// geometry must invert exactly so the output keeps the segment shape.
    fn build_conv_pair(
        schema: &DatasetSchema,
        config: &ModelConfig,
        front: &ConvFrontend,
        seed: u64,
    ) -> Result<(Network<T>, Network<T>), ModelError> {
        let (k, s) = (front.kernel, front.stride);
        let [f1, f2] = front.features;
        let w = schema.window;
        let l1 = conv_out(w, k, s)
            .ok_or_else(|| ModelError::Config(format!("kernel {k} exceeds window {w}")))?;
        let l2 = conv_out(l1, k, s)
            .ok_or_else(|| ModelError::Config(format!("kernel {k} exceeds length {l1}")))?;
        if (l2 - 1) * s + k != l1 || (l1 - 1) * s + k != w {
            return Err(ModelError::Config(format!(
                "window {w} is not exactly invertible by kernel {k} stride {s} \
                 (choose a window so both conv stages round-trip)"
            )));
        }
        let latent = config.latent_dim;
        let cond =
            latent + schema.public_classes + schema.private_class_counts().iter().sum::<usize>();
        let trunk = *config.hidden.last().unwrap();
        let enc = alloc::vec![
            LayerSpec::Unflatten {
                channels: schema.channels
            },
            LayerSpec::Conv1d {
                channels_in: schema.channels,
                channels_out: f1,
                kernel: k,
                stride: s,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Conv1d {
                channels_in: f1,
                channels_out: f2,
                kernel: k,
                stride: s,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_dim: f2 * l2,
                out_dim: trunk,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Dense {
                in_dim: trunk,
                out_dim: 2 * latent,
                init: Init::Small,
            },
        ];
        let dec = alloc::vec![
            LayerSpec::Dense {
                in_dim: cond,
                out_dim: trunk,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Dense {
                in_dim: trunk,
                out_dim: f2 * l2,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Unflatten { channels: f2 },
            LayerSpec::Conv1dTranspose {
                channels_in: f2,
                channels_out: f1,
                kernel: k,
                stride: s,
                init: Init::He,
            },
            LayerSpec::LeakyRelu,
            LayerSpec::Conv1dTranspose {
                channels_in: f1,
                channels_out: schema.channels,
                kernel: k,
                stride: s,
                init: Init::Xavier,
            },
            LayerSpec::Flatten,
        ];
        Ok((
            Network::build_with_input(&[schema.segment_len()], &enc, seed ^ 0x01)?,
            Network::build_with_input(&[cond], &dec, seed ^ 0x02)?,
        ))
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn attribute_count(&self) -> usize {
        self.discriminators.len()
    }

    /// Snapshot of all parameters.
    pub fn params(&self) -> ModelParams<T> {
        ModelParams {
            encoder: self.encoder.params().clone(),
            decoder: self.decoder.params().clone(),
            discriminators: self
                .discriminators
                .iter()
                .map(|d| d.params().clone())
                .collect(),
        }
    }

    /// Installs a parameter snapshot (structure must match).
    pub fn set_params(&mut self, params: &ModelParams<T>) -> Result<(), ModelError> {
        if params.discriminators.len() != self.discriminators.len() {
            return Err(ModelError::Param(ParamError::Misaligned(
                "discriminator count".into(),
            )));
        }
        self.encoder.set_params(&params.encoder)?;
        self.decoder.set_params(&params.decoder)?;
        for (net, p) in self.discriminators.iter_mut().zip(&params.discriminators) {
            net.set_params(p)?;
        }
        Ok(())
    }

    /// Zero-valued gradients aligned with this model's parameters.
    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            encoder: self.encoder.params().zero_update(),
            decoder: self.decoder.params().zero_update(),
            discriminators: self
                .discriminators
                .iter()
                .map(|d| d.params().zero_update())
                .collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> BlinderModel<U> {
        let mut out = BlinderModel::<U>::build(&self.schema, &self.config, 0)
            .expect("same config built once already");
        out.set_params(&self.params().cast()).expect("same structure");
        out
    }

    /// Posterior parameters of a batch: `(mu, log_var)`, each `[n, latent]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let out = self.encoder.forward_inference(x)?;
        Ok(split_halves(&out, self.config.latent_dim))
    }

    /// Decodes latent codes under the given labels; output has the segment
    /// shape `[n, segment_len]` regardless of the labels.
    pub fn decode(
        &self,
        z: &Tensor<T>,
        public: &[usize],
        privates: &[Vec<usize>],
    ) -> Result<Tensor<T>, ModelError> {
        let cond = self.condition(z, public, privates)?;
        Ok(self.decoder.forward_inference(&cond)?)
    }

    /// Class probabilities the adversary for attribute `j` assigns to a batch
    /// of latent codes.
    pub fn discriminate(&self, z: &Tensor<T>, attribute: usize) -> Result<Tensor<T>, ModelError> {
        let net = self
            .discriminators
            .get(attribute)
            .ok_or(ModelError::AttributeIndex {
                index: attribute,
                count: self.discriminators.len(),
            })?;
        Ok(net.forward_inference(z)?)
    }

    /// Concatenates `z` with one-hot private labels and the one-hot public
    /// label, in that order.
    fn condition(
        &self,
        z: &Tensor<T>,
        public: &[usize],
        privates: &[Vec<usize>],
    ) -> Result<Tensor<T>, ModelError> {
        let n = z.shape()[0];
        let latent = self.config.latent_dim;
        if z.shape() != [n, latent] {
            return Err(ModelError::Net(NnError::ShapeError(format!(
                "latent batch {:?}, expected [n, {latent}]",
                z.shape()
            ))));
        }
        if public.len() != n || privates.len() != self.schema.private_attributes.len() {
            return Err(ModelError::Config("labels do not cover the batch".into()));
        }
        let counts = self.schema.private_class_counts();
        let cond_dim = latent + self.schema.public_classes + counts.iter().sum::<usize>();
        let mut data = alloc::vec![T::zero(); n * cond_dim];
        for i in 0..n {
            let row = &mut data[i * cond_dim..(i + 1) * cond_dim];
            row[..latent].copy_from_slice(&z.data()[i * latent..(i + 1) * latent]);
            let mut off = latent;
            for (j, labels) in privates.iter().enumerate() {
                if labels.len() != n {
                    return Err(ModelError::Config("labels do not cover the batch".into()));
                }
                let y = labels[i];
                if y >= counts[j] {
                    return Err(ModelError::InvalidLabel {
                        kind: "private",
                        label: y,
                        classes: counts[j],
                    });
                }
                row[off + y] = T::one();
                off += counts[j];
            }
            let p = public[i];
            if p >= self.schema.public_classes {
                return Err(ModelError::InvalidLabel {
                    kind: "public",
                    label: p,
                    classes: self.schema.public_classes,
                });
            }
            row[off + p] = T::one();
        }
        Ok(Tensor::from_vec(alloc::vec![n, cond_dim], data).expect("constructed together"))
    }

    /// Gradients of the total loss w.r.t. encoder and decoder parameters,
    /// with the discriminators frozen. `eps` is the reparameterization noise
    /// (`[n, latent]`), passed explicitly so steps are reproducible and
    /// finite-difference checkable.
    pub fn vae_grads(
        &mut self,
        batch: &Batch<T>,
        eps: &Tensor<T>,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, GradientUpdate<T>, GradientUpdate<T>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = batch.len();
        let latent = self.config.latent_dim;
        let enc_out = self.encoder.forward(&batch.x)?;
        let (mu, log_var) = split_halves(&enc_out, latent);
        let z = reparameterize(&mu, &log_var, eps);

        let cond = self.condition(&z, &batch.public, &batch.privates)?;
        let x_hat = self.decoder.forward(&cond)?;

        let (recon, mut d_xhat) = mse_mean_grad(&batch.x, &x_hat);
        let kl = kl_divergence(&mu, &log_var);

        // Decoder path: alpha * dRecon/dx_hat.
        d_xhat.scale(T::from_f64(weights.alpha));
        let dec_bp = self.decoder.backward(&d_xhat)?;
        let mut dz = slice_columns(&dec_bp.input_grad, 0, latent);

        // Discriminator paths: -gamma * dDisc_j/dz, parameters frozen.
        let mut disc_total = 0.0;
        for j in 0..self.discriminators.len() {
            let probs = self.discriminators[j].forward(&z)?;
            let (loss_j, mut d_probs) = cross_entropy_grad(&probs, &batch.privates[j]);
            disc_total += loss_j;
            d_probs.scale(T::from_f64(-weights.gamma));
            let bp = self.discriminators[j].backward(&d_probs)?;
            dz.add_scaled(&bp.input_grad, T::one())
                .map_err(|_| ParamError::Misaligned("latent grad".into()))?;
        }

        // Through the reparameterization into (mu, log_var), plus the KL term.
        let mut d_mu = dz.clone();
        let mut d_lv = Tensor::zeros(dz.shape());
        for i in 0..dz.len() {
            let half_std = T::from_f64(0.5) * (log_var.data()[i] * T::from_f64(0.5)).exp();
            d_lv.data_mut()[i] = dz.data()[i] * eps.data()[i] * half_std;
        }
        let beta_n = T::from_f64(weights.beta / n as f64);
        for i in 0..d_mu.len() {
            d_mu.data_mut()[i] = d_mu.data()[i] + beta_n * mu.data()[i];
            let dkl_dlv = T::from_f64(0.5) * (log_var.data()[i].exp() - T::one());
            d_lv.data_mut()[i] = d_lv.data()[i] + beta_n * dkl_dlv;
        }
        let enc_bp = self.encoder.backward(&concat_halves(&d_mu, &d_lv))?;

        let total = weights.alpha * recon + weights.beta * kl - weights.gamma * disc_total;
        Ok((
            LossBreakdown {
                recon,
                kl,
                disc: disc_total,
                total,
            },
            enc_bp.grads,
            dec_bp.grads,
        ))
    }

    /// Cross-entropy losses and parameter gradients of every discriminator
    /// on the given latent batch, with the encoder frozen.
    pub fn disc_grads(
        &mut self,
        z: &Tensor<T>,
        labels: &[Vec<usize>],
    ) -> Result<(Vec<f64>, Vec<GradientUpdate<T>>), ModelError> {
        if labels.len() != self.discriminators.len() {
            return Err(ModelError::Config(
                "label set / discriminator mismatch".into(),
            ));
        }
        let mut losses = Vec::with_capacity(labels.len());
        let mut grads = Vec::with_capacity(labels.len());
        for (j, y) in labels.iter().enumerate() {
            let probs = self.discriminators[j].forward(z)?;
            let (loss, d_probs) = cross_entropy_grad(&probs, y);
            let bp: Backprop<T> = self.discriminators[j].backward(&d_probs)?;
            losses.push(loss);
            grads.push(bp.grads);
        }
        Ok((losses, grads))
    }

    /// Evaluates the loss terms on a batch without touching any tape, using
    /// the provided noise. Used for before/after comparisons.
    pub fn evaluate_losses(
        &self,
        batch: &Batch<T>,
        eps: &Tensor<T>,
        weights: &LossWeights,
    ) -> Result<LossBreakdown, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (mu, log_var) = self.encode(&batch.x)?;
        let z = reparameterize(&mu, &log_var, eps);
        let x_hat = self.decode(&z, &batch.public, &batch.privates)?;
        let (recon, kl) = vae_loss(&batch.x, &x_hat, &mu, &log_var);
        let mut disc = 0.0;
        for j in 0..self.discriminators.len() {
            let probs = self.discriminate(&z, j)?;
            disc += disc_loss(&probs, &batch.privates[j]);
        }
        Ok(LossBreakdown {
            recon,
            kl,
            disc,
            total: weights.alpha * recon + weights.beta * kl - weights.gamma * disc,
        })
    }

    /// Assembles the latent batch the discriminators train on: the real
    /// samples' latent codes, plus — when `shadow` is set — the re-encoded
    /// codes of freshly synthesized shadow samples with their counterfactual
    /// labels.
    pub fn disc_training_batch<R: Rng + ?Sized>(
        &self,
        batch: &Batch<T>,
        shadow: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<Vec<usize>>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let latent = self.config.latent_dim;
        let (mu, log_var) = self.encode(&batch.x)?;
        let eps = normal_tensor(mu.shape(), rng);
        let z_real = reparameterize(&mu, &log_var, &eps);
        if !shadow {
            return Ok((z_real, batch.privates.clone()));
        }
        let shadows = self.generate_shadow_samples(batch, rng)?;
        let n_shadow = shadows.len();
        let dim = batch.x.shape()[1];
        let mut xs = Vec::with_capacity(n_shadow * dim);
        for s in &shadows {
            xs.extend_from_slice(&s.x_star);
        }
        let x_shadow =
            Tensor::from_vec(alloc::vec![n_shadow, dim], xs).expect("constructed together");
        let (mu_s, lv_s) = self.encode(&x_shadow)?;
        let eps_s = normal_tensor(mu_s.shape(), rng);
        let z_shadow = reparameterize(&mu_s, &lv_s, &eps_s);

        let n = batch.len() + n_shadow;
        let mut data = z_real.into_data();
        data.extend_from_slice(z_shadow.data());
        let mut labels = batch.privates.clone();
        for (j, lab) in labels.iter_mut().enumerate() {
            lab.extend(shadows.iter().map(|s| s.y_star[j]));
        }
        Ok((
            Tensor::from_vec(alloc::vec![n, latent], data).expect("constructed together"),
            labels,
        ))
    }

    /// One SGD step on every discriminator with the given gradients.
    pub fn sgd_discriminators(
        &mut self,
        grads: &[GradientUpdate<T>],
        lr: f64,
    ) -> Result<(), ModelError> {
        if grads.len() != self.discriminators.len() {
            return Err(ModelError::Config(
                "gradient set / discriminator mismatch".into(),
            ));
        }
        for (net, g) in self.discriminators.iter_mut().zip(grads) {
            let mut opt = Optimizer::sgd(T::from_f64(lr));
            optimizer_step(net.params_mut(), g, &mut opt)?;
        }
        Ok(())
    }

    /// One SGD step on encoder and decoder with the given gradients.
    pub fn sgd_encoder_decoder(
        &mut self,
        enc: &GradientUpdate<T>,
        dec: &GradientUpdate<T>,
        lr: f64,
    ) -> Result<(), ModelError> {
        let mut opt = Optimizer::sgd(T::from_f64(lr));
        optimizer_step(self.encoder.params_mut(), enc, &mut opt)?;
        let mut opt = Optimizer::sgd(T::from_f64(lr));
        optimizer_step(self.decoder.params_mut(), dec, &mut opt)?;
        Ok(())
    }

    /// One SGD step on all three networks at once (the server-side update).
    pub fn apply_update(&mut self, grads: &ModelGrads<T>, lr: f64) -> Result<(), ModelError> {
        self.sgd_encoder_decoder(&grads.encoder, &grads.decoder, lr)?;
        self.sgd_discriminators(&grads.discriminators, lr)?;
        Ok(())
    }

    /// Phase one of the adversarial step: one SGD update of every
    /// discriminator on the batch's latent codes (encoder frozen). Shadow
    /// samples, when enabled, are synthesized from the batch, re-encoded and
    /// mixed into the discriminator batch with their counterfactual labels.
    pub fn discriminator_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<T>,
        local_lr: f64,
        shadow: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>, ModelError> {
        let (z_train, labels) = self.disc_training_batch(batch, shadow, rng)?;
        let (losses, grads) = self.disc_grads(&z_train, &labels)?;
        if local_lr != 0.0 {
            self.sgd_discriminators(&grads, local_lr)?;
        }
        Ok(losses)
    }

    /// Phase two of the adversarial step: one SGD update of encoder and
    /// decoder on the total loss, discriminators frozen.
    pub fn generator_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<T>,
        local_lr: f64,
        rng: &mut R,
    ) -> Result<LossBreakdown, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let eps = normal_tensor(&[batch.len(), self.config.latent_dim], rng);
        let weights = self.config.weights;
        let (losses, enc_g, dec_g) = self.vae_grads(batch, &eps, &weights)?;
        if local_lr != 0.0 {
            self.sgd_encoder_decoder(&enc_g, &dec_g, local_lr)?;
        }
        Ok(losses)
    }

    /// One adversarial training step: discriminators first (encoder frozen),
    /// then encoder/decoder (discriminators frozen), in that order.
    pub fn adversarial_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<T>,
        local_lr: f64,
        shadow: bool,
        rng: &mut R,
    ) -> Result<LossBreakdown, ModelError> {
        self.discriminator_step(batch, local_lr, shadow, rng)?;
        self.generator_step(batch, local_lr, rng)
    }

    /// Synthesizes one shadow sample per batch sample: the latent code of the
    /// real sample is decoded under a uniformly drawn counterfactual private
    /// label (never the true one), keeping the public label.
    pub fn generate_shadow_samples<R: Rng + ?Sized>(
        &self,
        batch: &Batch<T>,
        rng: &mut R,
    ) -> Result<Vec<ShadowSample<T>>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let counts = self.schema.private_class_counts();
        if counts.iter().any(|&c| c < 2) {
            return Err(ModelError::SingleClassSchema);
        }
        let n = batch.len();
        let latent = self.config.latent_dim;
        let (mu, log_var) = self.encode(&batch.x)?;
        let eps = normal_tensor(mu.shape(), rng);
        let z_star = reparameterize(&mu, &log_var, &eps);

        // Counterfactual labels: uniform over the classes that are not true.
        let mut y_stars: Vec<Vec<usize>> = Vec::with_capacity(counts.len());
        for (j, &classes) in counts.iter().enumerate() {
            let mut col = Vec::with_capacity(n);
            for i in 0..n {
                let truth = batch.privates[j][i];
                let pick = rng.gen_range(0..classes - 1);
                col.push(if pick >= truth { pick + 1 } else { pick });
            }
            y_stars.push(col);
        }
        let x_star = self.decode(&z_star, &batch.public, &y_stars)?;

        let dim = x_star.shape()[1];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(ShadowSample {
                x_star: x_star.data()[i * dim..(i + 1) * dim].to_vec(),
                y_star: y_stars.iter().map(|col| col[i]).collect(),
                public_label: batch.public[i],
                z_star: LatentCode {
                    mu: mu.data()[i * latent..(i + 1) * latent].to_vec(),
                    log_var: log_var.data()[i * latent..(i + 1) * latent].to_vec(),
                    z: z_star.data()[i * latent..(i + 1) * latent].to_vec(),
                },
            });
        }
        Ok(out)
    }
}

impl BlinderModel<f32> {
    /// Uniform draw over every private attribute's classes; this is the
    /// label source used by [`BlinderModel::anonymize`].
    pub fn draw_private_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.schema
            .private_class_counts()
            .iter()
            .map(|&c| rng.gen_range(0..c))
            .collect()
    }

    /// Anonymizes one segment: encode, sample the latent code, predict the
    /// public label with the provided pre-trained predictor, draw every
    /// private label uniformly at random, decode. Output shape equals input
    /// shape.
    pub fn anonymize<R: Rng + ?Sized>(
        &self,
        x: &[f32],
        public_predictor: &dyn LabelPredictor,
        rng: &mut R,
    ) -> Result<Vec<f32>, ModelError> {
        let input = Tensor::from_vec(alloc::vec![1, x.len()], x.to_vec())
            .map_err(|e| ModelError::Net(NnError::ShapeError(format!("{e}"))))?;
        let (mu, log_var) = self.encode(&input)?;
        let eps = normal_tensor(mu.shape(), rng);
        let z = reparameterize(&mu, &log_var, &eps);
        let public = alloc::vec![public_predictor.predict_class(x)];
        let privates: Vec<Vec<usize>> = self
            .draw_private_labels(rng)
            .into_iter()
            .map(|y| alloc::vec![y])
            .collect();
        Ok(self.decode(&z, &public, &privates)?.into_data())
    }

    /// Anonymizes a set of segments, preserving their true labels so the
    /// result can be scored against them.
    pub fn anonymize_segments<R: Rng + ?Sized>(
        &self,
        segments: &[LabeledSegment],
        public_predictor: &dyn LabelPredictor,
        rng: &mut R,
    ) -> Result<Vec<LabeledSegment>, ModelError> {
        let mut out = Vec::with_capacity(segments.len());
        for seg in segments {
            let x = self.anonymize(&seg.x, public_predictor, rng)?;
            out.push(LabeledSegment {
                x,
                public_label: seg.public_label,
                private_labels: seg.private_labels.clone(),
                client_id: seg.client_id,
            });
        }
        Ok(out)
    }
}

fn conv_out(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel > len {
        None
    } else {
        Some((len - kernel) / stride + 1)
    }
}

/// `z = mu + eps * exp(log_var / 2)`, elementwise.
pub fn reparameterize<T: Element>(
    mu: &Tensor<T>,
    log_var: &Tensor<T>,
    eps: &Tensor<T>,
) -> Tensor<T> {
    debug_assert_eq!(mu.shape(), log_var.shape());
    debug_assert_eq!(mu.shape(), eps.shape());
    let data = mu
        .data()
        .iter()
        .zip(log_var.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + e * (lv * T::from_f64(0.5)).exp())
        .collect();
    Tensor::from_vec(mu.shape().to_vec(), data).expect("same shape")
}

/// Reconstruction (mean squared error over all elements) and KL divergence
/// of the diagonal posterior from the standard normal prior, averaged over
/// the batch.
pub fn vae_loss<T: Element>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    mu: &Tensor<T>,
    log_var: &Tensor<T>,
) -> (f64, f64) {
    let (recon, _) = mse_mean_grad(x, x_hat);
    (recon, kl_divergence(mu, log_var))
}

fn mse_mean_grad<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> (f64, Tensor<T>) {
    debug_assert_eq!(x.shape(), x_hat.shape());
    let count = x.len() as f64;
    let mut grad = Tensor::zeros(x.shape());
    let mut sum = 0.0f64;
    for (i, (&a, &b)) in x_hat.data().iter().zip(x.data()).enumerate() {
        let d = (a - b).into_f64();
        sum += d * d;
        grad.data_mut()[i] = T::from_f64(2.0 * d / count);
    }
    (sum / count, grad)
}

/// `KL(N(mu, exp(log_var)) || N(0, I))`:
/// `0.5 * sum_i(exp(lv_i) + mu_i^2 - 1 - lv_i)` per sample, batch mean.
pub fn kl_divergence<T: Element>(mu: &Tensor<T>, log_var: &Tensor<T>) -> f64 {
    let n = mu.shape()[0] as f64;
    let mut sum = 0.0f64;
    for (&m, &lv) in mu.data().iter().zip(log_var.data()) {
        let (m, lv) = (m.into_f64(), lv.into_f64());
        sum += lv.exp() + m * m - 1.0 - lv;
    }
    0.5 * sum / n
}

/// Mean cross-entropy `-log p(y_true)` with probabilities floored at 1e-12.
pub fn disc_loss<T: Element>(probs: &Tensor<T>, y_true: &[usize]) -> f64 {
    cross_entropy_grad(probs, y_true).0
}

pub(crate) fn cross_entropy_grad<T: Element>(
    probs: &Tensor<T>,
    y_true: &[usize],
) -> (f64, Tensor<T>) {
    let n = probs.shape()[0];
    let classes = probs.shape()[1];
    debug_assert_eq!(n, y_true.len());
    let mut grad = Tensor::zeros(probs.shape());
    let mut sum = 0.0f64;
    for (i, &y) in y_true.iter().enumerate() {
        let p = probs.data()[i * classes + y].into_f64().max(PROB_FLOOR);
        sum += -p.ln();
        grad.data_mut()[i * classes + y] = T::from_f64(-1.0 / (p * n as f64));
    }
    (sum / n as f64, grad)
}

/// Total objective: `alpha * recon + beta * kl - gamma * sum_j disc_j`.
pub fn total_loss(recon: f64, kl: f64, disc_losses: &[f64], weights: &LossWeights) -> f64 {
    weights.alpha * recon + weights.beta * kl - weights.gamma * disc_losses.iter().sum::<f64>()
}

fn split_halves<T: Element>(t: &Tensor<T>, half: usize) -> (Tensor<T>, Tensor<T>) {
    let n = t.shape()[0];
    debug_assert_eq!(t.shape()[1], 2 * half);
    let mut a = Tensor::zeros(&[n, half]);
    let mut b = Tensor::zeros(&[n, half]);
    for i in 0..n {
        let row = &t.data()[i * 2 * half..(i + 1) * 2 * half];
        a.data_mut()[i * half..(i + 1) * half].copy_from_slice(&row[..half]);
        b.data_mut()[i * half..(i + 1) * half].copy_from_slice(&row[half..]);
    }
    (a, b)
}

fn concat_halves<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = a.shape()[0];
    let half = a.shape()[1];
    let mut out = Tensor::zeros(&[n, 2 * half]);
    for i in 0..n {
        out.data_mut()[i * 2 * half..i * 2 * half + half]
            .copy_from_slice(&a.data()[i * half..(i + 1) * half]);
        out.data_mut()[i * 2 * half + half..(i + 1) * 2 * half]
            .copy_from_slice(&b.data()[i * half..(i + 1) * half]);
    }
    out
}

fn slice_columns<T: Element>(t: &Tensor<T>, start: usize, width: usize) -> Tensor<T> {
    let n = t.shape()[0];
    let cols = t.shape()[1];
    let mut out = Tensor::zeros(&[n, width]);
    for i in 0..n {
        out.data_mut()[i * width..(i + 1) * width]
            .copy_from_slice(&t.data()[i * cols + start..i * cols + start + width]);
    }
    out
}

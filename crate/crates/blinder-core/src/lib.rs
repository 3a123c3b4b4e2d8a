//! Format-preserving sensor-data anonymization built on a conditional
//! variational autoencoder with adversarial discriminators, trained on
//! decentralized per-client data through a meta-learned federated protocol.
//!
//! The crate is split along the stages of that pipeline:
//!
//! - [`tensor`], [`nn`], [`optim`], [`params`]: a minimal differentiable
//!   network core (dense and 1-D convolutional layers, reverse-mode
//!   gradients, SGD/Adam, binary parameter serialization).
//! - [`anonymizer`]: the anonymization model itself — probabilistic encoder,
//!   label-conditioned decoder, per-attribute discriminators, the combined
//!   loss, stochastic anonymization and shadow-sample synthesis.
//! - [`fed`]: the federated training protocol — client selection,
//!   support/query meta steps, gradient aggregation, a FedAvg baseline and
//!   post-hoc local personalization.
//! - [`data`]: dataset segmentation, standardization, class rebalancing,
//!   heterogeneity skewing and a synthetic planted-signal generator.
//! - [`eval`]: intrusive/desired inference CNNs, accuracy/F1 scoring, PCA
//!   and mutual-information analysis of the privacy/utility trade-off.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything that touches
//! files lives in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod anonymizer;
pub mod data;
pub mod eval;
pub mod fed;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use anonymizer::{BlinderModel, LossWeights, ModelConfig, ModelParams};
pub use data::{DatasetSchema, LabeledSegment};
pub use fed::{ClientDataset, FedConfig};
pub use nn::{LayerSpec, Network};
pub use params::{GradientUpdate, ParameterSet};
pub use tensor::{Element, Tensor};

//! Experiment configuration: a flat `key = value` text format mirroring the
//! training, model, data and evaluation settings, with CLI flag overrides.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys and malformed
//! values are reported with their line number.

use std::path::{Path, PathBuf};

use blinder_core::anonymizer::ModelConfig;
use blinder_core::data::HeterogeneityConfig;
use blinder_core::fed::{Aggregation, FedConfig};

use crate::error::CliError;

/// Synthetic population settings (the `synth` command).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SynthSettings {
    pub clients: usize,
    pub segments_per_client: usize,
    pub bout_segments: usize,
    pub noise_std: f64,
    pub client_jitter: f64,
    /// Scales the planted private signatures (0 removes them).
    pub signature_scale: f64,
    /// Public-class imbalance at generation time.
    pub public_ratio: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            clients: 12,
            segments_per_client: 1500,
            bout_segments: 40,
            noise_std: 0.1,
            client_jitter: 0.35,
            signature_scale: 1.0,
            public_ratio: 1.0,
        }
    }
}

/// Dataset preparation settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DataSettings {
    /// Rebalance public classes on each client's training split.
    pub rebalance: bool,
    pub smote_neighbors: usize,
    pub train_fraction: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            rebalance: true,
            smote_neighbors: 5,
            train_fraction: 0.8,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalSettings {
    /// Seeds averaged over when a command repeats an experiment.
    pub seeds: usize,
    pub cnn_max_epochs: usize,
    pub cnn_batch: usize,
    /// Cap on classifier training samples (0 = use everything).
    pub cnn_train_cap: usize,
    pub pca_components: usize,
    pub mi_neighbors: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            seeds: 3,
            cnn_max_epochs: 50,
            cnn_batch: 64,
            cnn_train_cap: 0,
            pca_components: 25,
            mi_neighbors: 3,
        }
    }
}

/// Personalization settings (the `adapt` command).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AdaptSettings {
    pub iterations: usize,
    /// Fraction of the client's local data used for adaptation; must be
    /// positive and below 0.05.
    pub fraction: f64,
    /// Adaptation learning rate.
    pub lr: f64,
    /// Adapt only encoder and discriminators, keeping the decoder's label
    /// conditioning intact.
    pub freeze_decoder: bool,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings {
            iterations: 80,
            fraction: 0.04,
            lr: 0.08,
            freeze_decoder: true,
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schema_path: PathBuf,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub fed: FedConfig,
    pub model: ModelConfig,
    pub hetero: HeterogeneityConfig,
    pub data: DataSettings,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
    pub adapt: AdaptSettings,
    /// Restrict anonymization to these private attributes (by name), in
    /// order; empty means all attributes from the schema.
    pub attributes: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            schema_path: PathBuf::from("schema.json"),
            data_dir: PathBuf::from("clients"),
            out_dir: PathBuf::from("out"),
            fed: FedConfig::default(),
            model: ModelConfig::default(),
            hetero: HeterogeneityConfig::default(),
            data: DataSettings::default(),
            eval: EvalSettings::default(),
            synth: SynthSettings::default(),
            adapt: AdaptSettings::default(),
            attributes: Vec::new(),
        }
    }
}

fn bad(line: usize, key: &str, what: &str) -> CliError {
    CliError::config(format!("line {line}: key `{key}`: {what}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| bad(line, key, &format!("cannot parse `{value}`")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(line, key, &format!("expected a boolean, got `{value}`"))),
    }
}

fn parse_usize_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|part| parse_num::<usize>(line, key, part.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Parses the flat key/value file format.
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {line}: expected `key = value`, got `{stripped}`"
                )));
            };
            config.apply(line, key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_str(&text)?;
        // Relative paths resolve against the config file location.
        if let Some(dir) = path.parent() {
            for p in [
                &mut config.schema_path,
                &mut config.data_dir,
                &mut config.out_dir,
            ] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        Ok(config)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse_num(line, key, value)?,
            "schema" => self.schema_path = PathBuf::from(value),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "attributes" => {
                self.attributes = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }

            "fed.selection_fraction" => self.fed.selection_fraction = parse_num(line, key, value)?,
            "fed.meta_lr" => self.fed.meta_lr = parse_num(line, key, value)?,
            "fed.local_lr" => self.fed.local_lr = parse_num(line, key, value)?,
            "fed.support" => self.fed.support_size = parse_num(line, key, value)?,
            "fed.query" => self.fed.query_size = parse_num(line, key, value)?,
            "fed.rounds_per_epoch" => {
                self.fed.rounds_per_epoch = if value == "auto" {
                    None
                } else {
                    Some(parse_num(line, key, value)?)
                }
            }
            "fed.epochs" => self.fed.epochs = parse_num(line, key, value)?,
            "fed.local_steps" => self.fed.local_steps_per_round = parse_num(line, key, value)?,
            "fed.aggregation" => {
                self.fed.aggregation = match value {
                    "meta" => Aggregation::MetaFedSgd,
                    "fedavg" => Aggregation::FedAvg,
                    _ => return Err(bad(line, key, "expected `meta` or `fedavg`")),
                }
            }
            "fed.fedavg_local_rounds" => {
                self.fed.fedavg_local_rounds = parse_num(line, key, value)?
            }
            "fed.shadow_samples" => self.fed.shadow_samples = parse_bool(line, key, value)?,
            "fed.second_order" => self.fed.second_order = parse_bool(line, key, value)?,

            "loss.alpha" => self.model.weights.alpha = parse_num(line, key, value)?,
            "loss.beta" => self.model.weights.beta = parse_num(line, key, value)?,
            "loss.gamma" => self.model.weights.gamma = parse_num(line, key, value)?,

            "model.latent_dim" => self.model.latent_dim = parse_num(line, key, value)?,
            "model.hidden" => self.model.hidden = parse_usize_list(line, key, value)?,
            "model.disc_hidden" => self.model.disc_hidden = parse_usize_list(line, key, value)?,
            "model.conv_frontend" => {
                self.model.conv_frontend = if parse_bool(line, key, value)? {
                    Some(self.model.conv_frontend.take().unwrap_or_default())
                } else {
                    None
                }
            }
            "model.conv_kernel" => {
                self.model.conv_frontend.get_or_insert_with(Default::default).kernel =
                    parse_num(line, key, value)?
            }
            "model.conv_stride" => {
                self.model.conv_frontend.get_or_insert_with(Default::default).stride =
                    parse_num(line, key, value)?
            }
            "model.conv_features" => {
                let list = parse_usize_list(line, key, value)?;
                if list.len() != 2 {
                    return Err(bad(line, key, "expected two feature counts"));
                }
                self.model.conv_frontend.get_or_insert_with(Default::default).features =
                    [list[0], list[1]];
            }

            "hetero.rd" => self.hetero.imbalance_ratio = parse_num(line, key, value)?,
            "hetero.ru" => self.hetero.participation_ratio = parse_num(line, key, value)?,

            "data.rebalance" => self.data.rebalance = parse_bool(line, key, value)?,
            "data.smote_neighbors" => self.data.smote_neighbors = parse_num(line, key, value)?,
            "data.train_fraction" => self.data.train_fraction = parse_num(line, key, value)?,

            "eval.seeds" => self.eval.seeds = parse_num(line, key, value)?,
            "eval.cnn_max_epochs" => self.eval.cnn_max_epochs = parse_num(line, key, value)?,
            "eval.cnn_batch" => self.eval.cnn_batch = parse_num(line, key, value)?,
            "eval.cnn_train_cap" => self.eval.cnn_train_cap = parse_num(line, key, value)?,
            "eval.pca_components" => self.eval.pca_components = parse_num(line, key, value)?,
            "eval.mi_neighbors" => self.eval.mi_neighbors = parse_num(line, key, value)?,

            "synth.clients" => self.synth.clients = parse_num(line, key, value)?,
            "synth.segments_per_client" => {
                self.synth.segments_per_client = parse_num(line, key, value)?
            }
            "synth.bout_segments" => self.synth.bout_segments = parse_num(line, key, value)?,
            "synth.noise_std" => self.synth.noise_std = parse_num(line, key, value)?,
            "synth.client_jitter" => self.synth.client_jitter = parse_num(line, key, value)?,
            "synth.signature_scale" => {
                self.synth.signature_scale = parse_num(line, key, value)?
            }
            "synth.public_ratio" => self.synth.public_ratio = parse_num(line, key, value)?,

            "adapt.iterations" => self.adapt.iterations = parse_num(line, key, value)?,
            "adapt.fraction" => self.adapt.fraction = parse_num(line, key, value)?,
            "adapt.lr" => self.adapt.lr = parse_num(line, key, value)?,
            "adapt.freeze_decoder" => self.adapt.freeze_decoder = parse_bool(line, key, value)?,

            _ => return Err(bad(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Applies command-line overrides; flags win over the file.
    #[allow(clippy::too_many_arguments)]
    pub fn override_with(
        &mut self,
        seed: Option<u64>,
        aggregation: Option<&str>,
        rd: Option<f64>,
        ru: Option<f64>,
        epochs: Option<usize>,
        batch: Option<usize>,
        multi_attr: Option<&str>,
        out: Option<&Path>,
    ) -> Result<(), CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(a) = aggregation {
            self.fed.aggregation = match a {
                "meta" => Aggregation::MetaFedSgd,
                "fedavg" => Aggregation::FedAvg,
                _ => return Err(CliError::config("--aggregation expects `meta` or `fedavg`")),
            };
            // The FedAvg baseline trains plainly: no shadow samples and no
            // rebalancing unless the config explicitly re-enables them.
            if self.fed.aggregation == Aggregation::FedAvg {
                self.fed.shadow_samples = false;
                self.data.rebalance = false;
            }
        }
        if let Some(rd) = rd {
            self.hetero.imbalance_ratio = rd;
        }
        if let Some(ru) = ru {
            self.hetero.participation_ratio = ru;
        }
        if let Some(e) = epochs {
            self.fed.epochs = e;
        }
        if let Some(b) = batch {
            self.set_batch_size(b)?;
        }
        if let Some(attrs) = multi_attr {
            self.attributes = attrs
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
        }
        if let Some(o) = out {
            self.out_dir = o.to_path_buf();
        }
        Ok(())
    }

    /// Sets the batch size `b = s + q`, scaling support and query sizes
    /// proportionally from the current split.
    pub fn set_batch_size(&mut self, batch: usize) -> Result<(), CliError> {
        let old = self.fed.batch_size();
        if batch == 0 {
            return Err(CliError::config("--batch must be positive"));
        }
        let s = ((self.fed.support_size * batch) as f64 / old as f64).round() as usize;
        let s = s.clamp(1, batch - 1);
        self.fed.support_size = s;
        self.fed.query_size = batch - s;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.fed.validate().map_err(CliError::from)?;
        self.hetero.validate().map_err(CliError::from)?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::config("data.train_fraction must be in (0, 1)"));
        }
        Ok(())
    }

    /// Echo of the effective configuration for report provenance.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "schema": self.schema_path.display().to_string(),
            "data_dir": self.data_dir.display().to_string(),
            "out_dir": self.out_dir.display().to_string(),
            "fed": self.fed,
            "model": self.model,
            "hetero": self.hetero,
            "data": self.data,
            "eval": self.eval,
            "synth": self.synth,
            "adapt": self.adapt,
            "attributes": self.attributes,
        })
    }
}

//! Experiment wiring shared by the CLI commands and the acceptance suite:
//! synthesis, preparation, training, classifier fitting and scoring. Every
//! random choice flows from the config seed through named sub-streams.

use blinder_core::anonymizer::BlinderModel;
use blinder_core::data::{
    self, generate_synthetic_population, DatasetSchema, LabeledSegment, PrivateAttribute,
    RawRecording, SignalSpec,
};
use blinder_core::eval::{
    privacy_utility_curve, score, train_inference_cnn, CnnConfig, CurvePoint, InferenceModel,
    MetricsReport, TargetAttribute,
};
use blinder_core::fed::{run_training, ClientDataset, TrainOutcome};
use blinder_core::rng::Seeder;

use crate::config::ExperimentConfig;
use crate::dataset::{PreparedClient, PreparedData};
use crate::error::CliError;

/// The default planted-signal schema: three channels, 64-sample windows,
/// four public classes, one binary private attribute.
pub fn default_planted_schema() -> DatasetSchema {
    DatasetSchema {
        channels: 3,
        window: 64,
        stride: 8,
        public_classes: 4,
        private_attributes: vec![PrivateAttribute {
            name: "marker".into(),
            classes: 2,
        }],
        magnitude_mode: false,
    }
}

/// Builds the signal description for a schema from the synth settings.
pub fn signal_spec(schema: &DatasetSchema, config: &ExperimentConfig) -> SignalSpec {
    let mut spec = SignalSpec::planted(schema);
    spec.noise_std = config.synth.noise_std as f32;
    spec.client_jitter = config.synth.client_jitter as f32;
    spec.segments_per_client = config.synth.segments_per_client;
    spec.bout_segments = config.synth.bout_segments;
    spec.public_ratio = config.synth.public_ratio as f32;
    spec.with_signature_scale(config.synth.signature_scale as f32)
}

/// Generates the synthetic population for a schema.
pub fn synthesize(
    config: &ExperimentConfig,
    schema: &DatasetSchema,
) -> Result<Vec<RawRecording>, CliError> {
    let spec = signal_spec(schema, config);
    let mut rng = Seeder::new(config.seed).derive("synth").rng();
    Ok(generate_synthetic_population(
        config.synth.clients,
        schema,
        &spec,
        &mut rng,
    )?)
}

/// Restricts the schema to the selected private attributes (by name, in the
/// given order). An empty selection keeps everything.
pub fn restrict_attributes(
    schema: &DatasetSchema,
    names: &[String],
) -> Result<(DatasetSchema, Vec<usize>), CliError> {
    if names.is_empty() {
        let all = (0..schema.private_attributes.len()).collect();
        return Ok((schema.clone(), all));
    }
    let mut indices = Vec::with_capacity(names.len());
    let mut attrs = Vec::with_capacity(names.len());
    for name in names {
        let idx = schema
            .private_attributes
            .iter()
            .position(|a| &a.name == name)
            .ok_or_else(|| {
                CliError::config(format!("unknown private attribute `{name}` in --multi-attr"))
            })?;
        indices.push(idx);
        attrs.push(schema.private_attributes[idx].clone());
    }
    let mut restricted = schema.clone();
    restricted.private_attributes = attrs;
    Ok((restricted, indices))
}

/// Reduces 3-axis channel groups to magnitude channels.
fn apply_magnitude(recording: &RawRecording) -> Result<RawRecording, CliError> {
    if recording.channels.len() % 3 != 0 {
        return Err(CliError::data(format!(
            "magnitude preprocessing expects 3-axis groups, got {} channels",
            recording.channels.len()
        )));
    }
    let mut channels = Vec::with_capacity(recording.channels.len() / 3);
    for triple in recording.channels.chunks(3) {
        let sub = RawRecording {
            client_id: recording.client_id,
            channels: triple.to_vec(),
            public: recording.public.clone(),
            privates: recording.privates.clone(),
        };
        channels.push(data::magnitude(&sub)?.channels.pop().unwrap());
    }
    Ok(RawRecording {
        client_id: recording.client_id,
        channels,
        public: recording.public.clone(),
        privates: recording.privates.clone(),
    })
}

/// The full preparation pipeline: magnitude (if enabled), segmentation,
/// attribute restriction, stratified train/test split, standardization with
/// training-split statistics, then optional skew and rebalancing of each
/// client's training split.
pub fn prepare(
    config: &ExperimentConfig,
    schema: &DatasetSchema,
    recordings: &[RawRecording],
) -> Result<PreparedData, CliError> {
    let (restricted, attr_indices) = restrict_attributes(schema, &config.attributes)?;
    let seeder = Seeder::new(config.seed);

    let mut split_clients = Vec::with_capacity(recordings.len());
    for recording in recordings {
        let processed;
        let rec = if schema.magnitude_mode {
            processed = apply_magnitude(recording)?;
            &processed
        } else {
            recording
        };
        let mut segments = data::segment(rec, schema)?;
        if !config.attributes.is_empty() {
            for seg in &mut segments {
                seg.private_labels = attr_indices
                    .iter()
                    .map(|&i| seg.private_labels[i])
                    .collect();
            }
        }
        let mut rng = seeder
            .derive("split")
            .derive_idx(rec.client_id as u64)
            .rng();
        let (train, test) = data::train_test_split(
            segments,
            config.data.train_fraction,
            restricted.public_classes,
            &mut rng,
        );
        split_clients.push((rec.client_id, train, test));
    }

    // Standardization statistics come from the pooled training split only.
    let pooled: Vec<LabeledSegment> = split_clients
        .iter()
        .flat_map(|(_, train, _)| train.iter().cloned())
        .collect();
    let stats = data::channel_stats(&pooled, &restricted)?;

    let mut clients = Vec::with_capacity(split_clients.len());
    for (client_id, train, test) in split_clients {
        let mut train = data::standardize(train, &stats, &restricted)?;
        let test = data::standardize(test, &stats, &restricted)?;
        if config.hetero.imbalance_ratio > 1.0 {
            let mut rng = seeder.derive("skew").derive_idx(client_id as u64).rng();
            let (skewed, _) = data::apply_skew(
                train,
                restricted.public_classes,
                config.hetero.imbalance_ratio,
                &mut rng,
            )?;
            train = skewed;
        }
        if config.data.rebalance {
            let mut rng = seeder
                .derive("rebalance")
                .derive_idx(client_id as u64)
                .rng();
            let (balanced, report) = data::rebalance_public(
                train,
                restricted.public_classes,
                config.data.smote_neighbors,
                &mut rng,
            );
            if !report.is_noop() {
                log::info!(
                    "client {client_id}: rebalanced (+{} / -{})",
                    report.total_synthesized(),
                    report.total_removed()
                );
            }
            train = balanced;
        }
        clients.push(PreparedClient {
            client_id,
            train,
            test,
        });
    }

    Ok(PreparedData {
        schema: restricted,
        clients,
        stats,
    })
}

/// A training run's outputs plus the population split it used.
#[derive(Debug, Clone)]
pub struct TrainedArtifacts {
    pub outcome: TrainOutcome,
    pub participants: Vec<u32>,
    pub unseen: Vec<u32>,
}

/// Splits the population by the participation ratio, builds the global model
/// template, and runs federated training on the participants' training data.
pub fn train(config: &ExperimentConfig, prepared: &PreparedData) -> Result<TrainedArtifacts, CliError> {
    config.validate()?;
    let seeder = Seeder::new(config.seed);
    let ids = prepared.client_ids();
    let mut rng = seeder.derive("population").rng();
    let (mut participants, mut unseen) =
        data::split_population(&ids, config.hetero.participation_ratio, &mut rng)?;
    participants.sort_unstable();
    unseen.sort_unstable();

    let template = BlinderModel::build(
        &prepared.schema,
        &config.model,
        seeder.derive("model").rng().next_u64(),
    )?;

    let mut datasets: Vec<ClientDataset> = participants
        .iter()
        .map(|&id| {
            let client = prepared.client(id).expect("participant exists");
            ClientDataset::new(id, client.train.clone())
        })
        .collect();

    let mut fed = config.fed.clone();
    fed.seed = config.seed;
    let outcome = run_training(&fed, &mut datasets, &template)?;
    Ok(TrainedArtifacts {
        outcome,
        participants,
        unseen,
    })
}

/// The trained inference classifiers: one desired (public) model plus one
/// intrusive model per private attribute, all fitted on pooled raw training
/// data — never on anonymized data or model internals.
#[derive(Debug, Clone)]
pub struct Classifiers {
    pub desired: InferenceModel,
    pub intrusive: Vec<InferenceModel>,
}

pub fn cnn_config(config: &ExperimentConfig) -> CnnConfig {
    CnnConfig {
        max_epochs: config.eval.cnn_max_epochs,
        batch_size: config.eval.cnn_batch,
        ..CnnConfig::default()
    }
}

pub fn train_classifiers(
    config: &ExperimentConfig,
    prepared: &PreparedData,
) -> Result<Classifiers, CliError> {
    let mut pooled = prepared.pooled_train();
    let cap = config.eval.cnn_train_cap;
    if cap > 0 && pooled.len() > cap {
        use rand::seq::SliceRandom;
        let mut rng = Seeder::new(config.seed).derive("cnn-cap").rng();
        pooled.shuffle(&mut rng);
        pooled.truncate(cap);
    }
    let cnn = cnn_config(config);
    let seeder = Seeder::new(config.seed).derive("cnn");
    let desired = train_inference_cnn(
        &pooled,
        &prepared.schema,
        TargetAttribute::Public,
        &cnn,
        seeder.derive("public").rng().next_u64(),
    )?;
    let mut intrusive = Vec::new();
    for j in 0..prepared.schema.private_attributes.len() {
        intrusive.push(train_inference_cnn(
            &pooled,
            &prepared.schema,
            TargetAttribute::Private(j),
            &cnn,
            seeder.derive("private").derive_idx(j as u64).rng().next_u64(),
        )?);
    }
    Ok(Classifiers { desired, intrusive })
}

/// Raw-vs-anonymized scores for one segment set.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub desired_raw: MetricsReport,
    pub desired_anonymized: MetricsReport,
    pub intrusive_raw: Vec<MetricsReport>,
    pub intrusive_anonymized: Vec<MetricsReport>,
}

/// Anonymizes the segments with the trained model (reusing the desired
/// classifier as the public-label predictor) and scores both versions.
pub fn evaluate_segments(
    config: &ExperimentConfig,
    model: &BlinderModel<f32>,
    classifiers: &Classifiers,
    segments: &[LabeledSegment],
) -> Result<EvalSummary, CliError> {
    let mut rng = Seeder::new(config.seed).derive("anonymize").rng();
    let anonymized = model.anonymize_segments(segments, &classifiers.desired, &mut rng)?;
    let desired_raw = score(&classifiers.desired, segments)?;
    let desired_anonymized = score(&classifiers.desired, &anonymized)?;
    let mut intrusive_raw = Vec::new();
    let mut intrusive_anonymized = Vec::new();
    for clf in &classifiers.intrusive {
        intrusive_raw.push(score(clf, segments)?);
        intrusive_anonymized.push(score(clf, &anonymized)?);
    }
    Ok(EvalSummary {
        desired_raw,
        desired_anonymized,
        intrusive_raw,
        intrusive_anonymized,
    })
}

/// Per-epoch privacy/utility curve over the training snapshots.
pub fn curve(
    config: &ExperimentConfig,
    artifacts: &TrainedArtifacts,
    classifiers: &Classifiers,
    segments: &[LabeledSegment],
) -> Result<Vec<CurvePoint>, CliError> {
    let mut rng = Seeder::new(config.seed).derive("curve").rng();
    Ok(privacy_utility_curve(
        &artifacts.outcome.model,
        &artifacts.outcome.epoch_snapshots,
        segments,
        &classifiers.desired,
        &classifiers.intrusive,
        config.eval.pca_components,
        config.eval.mi_neighbors,
        &mut rng,
    )?)
}

use rand::RngCore;

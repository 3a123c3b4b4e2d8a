//! The CLI subcommands. Each one is a thin layer over [`crate::experiment`]
//! plus file IO, so tests and other tooling can drive the same paths.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blinder_core::data::LabeledSegment;
use blinder_core::fed::{personalize, PersonalizeOptions};
use blinder_core::rng::Seeder;

use crate::bundle;
use crate::config::ExperimentConfig;
use crate::dataset::{
    list_client_files, read_cache, read_client_csv, read_schema, write_cache,
    write_client_csv, write_schema, PreparedData,
};
use crate::error::CliError;
use crate::experiment::{
    self, default_planted_schema, evaluate_segments, train_classifiers, Classifiers,
    TrainedArtifacts,
};
use crate::reports::{write_curve, write_report, write_round_log, ReportDocument};

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)?;
    Ok(())
}

pub fn bundle_path(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("model.bundle")
}

fn prepared_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("prepared")
}

/// Generates the synthetic population: one CSV per client plus the schema
/// descriptor, byte-stable for a fixed config and seed.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<(), CliError> {
    config.validate()?;
    let schema = if config.schema_path.exists() {
        read_schema(&config.schema_path)?
    } else {
        default_planted_schema()
    };
    let recordings = experiment::synthesize(config, &schema)?;
    ensure_dir(&config.data_dir)?;
    write_schema(&config.data_dir.join("schema.json"), &schema)?;
    for rec in &recordings {
        write_client_csv(&config.data_dir, rec)?;
    }
    println!(
        "synth: wrote {} clients to {} ({} samples each)",
        recordings.len(),
        config.data_dir.display(),
        recordings.first().map_or(0, |r| r.len()),
    );
    Ok(())
}

fn schema_path_for(config: &ExperimentConfig) -> PathBuf {
    let in_data = config.data_dir.join("schema.json");
    if in_data.exists() {
        in_data
    } else {
        config.schema_path.clone()
    }
}

/// Loads raw client CSVs and runs the preparation pipeline in memory.
fn prepare_from_csv(config: &ExperimentConfig) -> Result<PreparedData, CliError> {
    let schema = read_schema(&schema_path_for(config))?;
    let files = list_client_files(&config.data_dir)?;
    let mut recordings = Vec::with_capacity(files.len());
    for (id, path) in files {
        recordings.push(read_client_csv(
            &path,
            id,
            schema.private_attributes.len(),
        )?);
    }
    experiment::prepare(config, &schema, &recordings)
}

/// Loads the prepared cache when it exists, otherwise prepares from CSVs.
pub fn load_prepared(config: &ExperimentConfig) -> Result<PreparedData, CliError> {
    let cache = prepared_dir(config);
    if cache.join("stats.json").exists() {
        read_cache(&cache)
    } else {
        prepare_from_csv(config)
    }
}

/// Runs the preparation pipeline and writes the segment cache.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<(), CliError> {
    config.validate()?;
    let prepared = prepare_from_csv(config)?;
    ensure_dir(&config.out_dir)?;
    write_cache(&prepared_dir(config), &prepared)?;
    let train: usize = prepared.clients.iter().map(|c| c.train.len()).sum();
    let test: usize = prepared.clients.iter().map(|c| c.test.len()).sum();
    println!(
        "prepare: cached {} clients ({train} train / {test} test segments) in {}",
        prepared.clients.len(),
        prepared_dir(config).display()
    );
    Ok(())
}

/// Federated training: writes the model bundle, the round log, and the
/// population split.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(), CliError> {
    config.validate()?;
    let prepared = load_prepared(config)?;
    let artifacts = experiment::train(config, &prepared)?;
    ensure_dir(&config.out_dir)?;
    bundle::save(&bundle_path(config), &artifacts.outcome.model)?;
    write_round_log(&config.out_dir.join("rounds.csv"), &artifacts.outcome.rounds)?;
    let population = serde_json::json!({
        "participants": artifacts.participants,
        "unseen": artifacts.unseen,
    });
    fs::write(
        config.out_dir.join("population.json"),
        serde_json::to_string_pretty(&population)? + "\n",
    )?;
    println!(
        "train: {} epochs, {} rounds, {} participants -> {}",
        config.fed.epochs,
        artifacts.outcome.rounds.len(),
        artifacts.participants.len(),
        bundle_path(config).display()
    );
    Ok(())
}

fn load_bundle_or(config: &ExperimentConfig, path: Option<&Path>) -> Result<blinder_core::BlinderModel<f32>, CliError> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| bundle_path(config));
    bundle::load(&path)
}

/// Writes anonymized test segments as CSV (`client,public,priv...,x0..xN`).
pub fn cmd_anonymize(
    config: &ExperimentConfig,
    bundle_file: Option<&Path>,
    client: Option<u32>,
) -> Result<(), CliError> {
    config.validate()?;
    let prepared = load_prepared(config)?;
    let model = load_bundle_or(config, bundle_file)?;
    let classifiers = train_classifiers(config, &prepared)?;
    let segments: Vec<LabeledSegment> = match client {
        Some(id) => prepared
            .client(id)
            .ok_or_else(|| CliError::data(format!("client {id} not found")))?
            .test
            .clone(),
        None => prepared.pooled_test(),
    };
    let mut rng = Seeder::new(config.seed).derive("anonymize").rng();
    let anonymized = model.anonymize_segments(&segments, &classifiers.desired, &mut rng)?;

    ensure_dir(&config.out_dir)?;
    let name = match client {
        Some(id) => format!("anonymized_client_{id:03}.csv"),
        None => "anonymized.csv".to_string(),
    };
    let path = config.out_dir.join(name);
    let file = fs::File::create(&path)?;
    let mut w = BufWriter::new(file);
    write!(w, "client,public")?;
    for attr in &prepared.schema.private_attributes {
        write!(w, ",{}", attr.name)?;
    }
    for i in 0..prepared.schema.segment_len() {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for seg in &anonymized {
        write!(w, "{},{}", seg.client_id, seg.public_label)?;
        for &p in &seg.private_labels {
            write!(w, ",{p}")?;
        }
        for &v in &seg.x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    println!("anonymize: wrote {} segments to {}", anonymized.len(), path.display());
    Ok(())
}

/// Trains the inference classifiers, scores raw and anonymized test data,
/// and writes one JSON report per target.
pub fn cmd_eval(config: &ExperimentConfig, bundle_file: Option<&Path>) -> Result<(), CliError> {
    config.validate()?;
    let prepared = load_prepared(config)?;
    let model = load_bundle_or(config, bundle_file)?;
    let classifiers = train_classifiers(config, &prepared)?;
    let test = prepared.pooled_test();
    let summary = evaluate_segments(config, &model, &classifiers, &test)?;

    ensure_dir(&config.out_dir)?;
    let echo = config.echo();
    write_report(
        &config.out_dir.join("desired.json"),
        &ReportDocument {
            target: "public".into(),
            seed: config.seed,
            report: summary.desired_anonymized.clone(),
            raw_baseline: Some(summary.desired_raw.clone()),
            config: echo.clone(),
        },
    )?;
    for (j, attr) in prepared.schema.private_attributes.iter().enumerate() {
        write_report(
            &config.out_dir.join(format!("intrusive_{}.json", attr.name)),
            &ReportDocument {
                target: attr.name.clone(),
                seed: config.seed,
                report: summary.intrusive_anonymized[j].clone(),
                raw_baseline: Some(summary.intrusive_raw[j].clone()),
                config: echo.clone(),
            },
        )?;
    }
    println!(
        "eval: desired {:.4} (raw {:.4}); intrusive {}",
        summary.desired_anonymized.accuracy,
        summary.desired_raw.accuracy,
        summary
            .intrusive_anonymized
            .iter()
            .map(|r| format!("{:.4}", r.accuracy))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

/// Personalizes a trained bundle on a small fraction of one client's local
/// data and reports before/after metrics on that client's test split.
pub fn cmd_adapt(
    config: &ExperimentConfig,
    bundle_file: Option<&Path>,
    client: u32,
    iterations: Option<usize>,
    fraction: Option<f64>,
) -> Result<(), CliError> {
    config.validate()?;
    let iterations = iterations.unwrap_or(config.adapt.iterations);
    let fraction = fraction.unwrap_or(config.adapt.fraction);
    if fraction <= 0.0 {
        return Err(CliError::config("adaptation fraction must be positive"));
    }
    if fraction >= 0.05 {
        return Err(CliError::config(
            "adaptation fraction must stay below 5% of the client's data",
        ));
    }
    let prepared = load_prepared(config)?;
    let model = load_bundle_or(config, bundle_file)?;
    let client_data = prepared
        .client(client)
        .ok_or_else(|| CliError::data(format!("client {client} not found")))?;

    let local: Vec<LabeledSegment> = client_data
        .train
        .iter()
        .chain(client_data.test.iter())
        .cloned()
        .collect();
    let take = ((local.len() as f64 * fraction).floor() as usize).max(1);
    let mut rng = Seeder::new(config.seed)
        .derive("adapt")
        .derive_idx(client as u64)
        .rng();
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..local.len()).collect();
    indices.shuffle(&mut rng);
    let adaptation_set: Vec<LabeledSegment> =
        indices[..take].iter().map(|&i| local[i].clone()).collect();

    let options = PersonalizeOptions {
        iterations,
        local_lr: config.adapt.lr,
        shadow: config.fed.shadow_samples,
        batch_size: config.fed.batch_size(),
        freeze_decoder: config.adapt.freeze_decoder,
    };
    let adapted = personalize(&model, &adaptation_set, &options, &mut rng)?;

    let classifiers = train_classifiers(config, &prepared)?;
    let before = evaluate_segments(config, &model, &classifiers, &client_data.test)?;
    let after = evaluate_segments(config, &adapted, &classifiers, &client_data.test)?;
    println!(
        "adapt client {client}: desired {:.4} -> {:.4}; intrusive {} -> {}",
        before.desired_anonymized.accuracy,
        after.desired_anonymized.accuracy,
        before
            .intrusive_anonymized
            .iter()
            .map(|r| format!("{:.4}", r.accuracy))
            .collect::<Vec<_>>()
            .join("/"),
        after
            .intrusive_anonymized
            .iter()
            .map(|r| format!("{:.4}", r.accuracy))
            .collect::<Vec<_>>()
            .join("/")
    );

    ensure_dir(&config.out_dir)?;
    let out = config
        .out_dir
        .join(format!("adapted_client_{client:03}.bundle"));
    bundle::save(&out, &adapted)?;
    println!("adapt: wrote {}", out.display());
    Ok(())
}

/// Trains with per-epoch snapshots and writes the privacy/utility curve.
pub fn cmd_curve(config: &ExperimentConfig) -> Result<(), CliError> {
    config.validate()?;
    let prepared = load_prepared(config)?;
    let artifacts: TrainedArtifacts = experiment::train(config, &prepared)?;
    let classifiers: Classifiers = train_classifiers(config, &prepared)?;
    let test = prepared.pooled_test();
    let curve = experiment::curve(config, &artifacts, &classifiers, &test)?;
    ensure_dir(&config.out_dir)?;
    let path = config.out_dir.join("curve.csv");
    write_curve(&path, &curve)?;
    // raw reference values alongside the curve
    let summary = evaluate_segments(config, &artifacts.outcome.model, &classifiers, &test)?;
    let raw = serde_json::json!({
        "desired_raw": summary.desired_raw.accuracy,
        "intrusive_raw": summary
            .intrusive_raw
            .iter()
            .map(|r| r.accuracy)
            .collect::<Vec<_>>(),
    });
    fs::write(
        config.out_dir.join("curve_baselines.json"),
        serde_json::to_string_pretty(&raw)? + "\n",
    )?;
    println!("curve: wrote {} rows to {}", curve.len(), path.display());
    Ok(())
}

//! The adversary's and consumer's viewpoint: CNN classifiers trained on raw
//! data score anonymized data, and PCA + mutual information quantify how
//! much attribute information survives anonymization.

pub mod mi;
pub mod pca;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::anonymizer::{cross_entropy_grad, BlinderModel, ModelError, ModelParams};
use crate::data::{DataError, DatasetSchema, LabelPredictor, LabeledSegment};
use crate::nn::{Init, LayerSpec, Network, NnError};
use crate::optim::{optimizer_step, Optimizer};
use crate::rng::Seeder;
use crate::tensor::Tensor;

pub use mi::{mutual_information, MiEstimate};
pub use pca::Pca;

/// Errors from classifier training and scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// Training data carries fewer than two distinct classes.
    SingleClassData,
    EmptySet,
    /// Too few samples for the requested number of components.
    InsufficientSamples { needed: usize, available: usize },
    /// Labels unusable for the estimator (single class, or a class with a
    /// lone sample).
    DegenerateLabels,
    Net(NnError),
    Model(ModelError),
    Data(DataError),
    Config(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::SingleClassData => write!(f, "training data has a single class"),
            EvalError::EmptySet => write!(f, "empty evaluation set"),
            EvalError::InsufficientSamples { needed, available } => {
                write!(f, "need more than {needed} samples, have {available}")
            }
            EvalError::DegenerateLabels => write!(f, "degenerate labels"),
            EvalError::Net(e) => write!(f, "{e}"),
            EvalError::Model(e) => write!(f, "{e}"),
            EvalError::Data(e) => write!(f, "{e}"),
            EvalError::Config(msg) => write!(f, "evaluation config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

impl From<NnError> for EvalError {
    fn from(e: NnError) -> Self {
        EvalError::Net(e)
    }
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}

/// Which label a classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetAttribute {
    Public,
    Private(usize),
}

impl TargetAttribute {
    pub fn label_of(&self, seg: &LabeledSegment) -> usize {
        match self {
            TargetAttribute::Public => seg.public_label,
            TargetAttribute::Private(j) => seg.private_labels[*j],
        }
    }

    pub fn class_count(&self, schema: &DatasetSchema) -> usize {
        match self {
            TargetAttribute::Public => schema.public_classes,
            TargetAttribute::Private(j) => schema.private_attributes[*j].classes,
        }
    }
}

/// Inference CNN architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CnnConfig {
    /// Output channels of the strided convolution stack.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Dense widths between the flattened features and the class head.
    pub dense: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without relative loss improvement.
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_channels: alloc::vec![32, 64, 64, 128],
            kernel: 5,
            stride: 2,
            dense: alloc::vec![256, 128],
            learning_rate: 1e-3,
            max_epochs: 50,
            batch_size: 64,
            patience: 3,
            min_rel_improvement: 1e-3,
        }
    }
}

/// A trained inference classifier (intrusive or desired, depending on the
/// target attribute). Trained exclusively on raw training-split data.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    net: Network<f32>,
    pub target: TargetAttribute,
    pub classes: usize,
    /// Accuracy on its own training data after the final epoch.
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

impl InferenceModel {
    pub fn predict_batch(&self, x: &Tensor<f32>) -> Result<Vec<usize>, EvalError> {
        let probs = self.net.forward_inference(x)?;
        let classes = self.classes;
        Ok(probs
            .data()
            .chunks(classes)
            .map(argmax)
            .collect())
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize, EvalError> {
        let t = Tensor::from_vec(alloc::vec![1, x.len()], x.to_vec())
            .map_err(|e| EvalError::Config(alloc::format!("{e}")))?;
        Ok(self.predict_batch(&t)?[0])
    }
}

impl LabelPredictor for InferenceModel {
    fn predict_class(&self, x: &[f32]) -> usize {
        self.predict(x).unwrap_or(0)
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Builds the classifier network: strided conv stack, then dense layers,
/// then a softmax head.
fn build_cnn(
    schema: &DatasetSchema,
    classes: usize,
    config: &CnnConfig,
    seed: u64,
) -> Result<Network<f32>, EvalError> {
    let mut specs = Vec::new();
    specs.push(LayerSpec::Unflatten {
        channels: schema.channels,
    });
    let mut channels = schema.channels;
    let mut length = schema.window;
    for &out in &config.conv_channels {
        if config.kernel > length {
            return Err(EvalError::Config(alloc::format!(
                "window {} too short for a {}-layer conv stack with kernel {}",
                schema.window,
                config.conv_channels.len(),
                config.kernel
            )));
        }
        specs.push(LayerSpec::Conv1d {
            channels_in: channels,
            channels_out: out,
            kernel: config.kernel,
            stride: config.stride,
            init: Init::He,
        });
        specs.push(LayerSpec::Relu);
        length = (length - config.kernel) / config.stride + 1;
        channels = out;
    }
    specs.push(LayerSpec::Flatten);
    let mut width = channels * length;
    for &out in &config.dense {
        specs.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: out,
            init: Init::He,
        });
        specs.push(LayerSpec::Relu);
        width = out;
    }
    specs.push(LayerSpec::Dense {
        in_dim: width,
        out_dim: classes,
        init: Init::Small,
    });
    specs.push(LayerSpec::Softmax);
    Ok(Network::build_with_input(
        &[schema.segment_len()],
        &specs,
        seed,
    )?)
}

/// Trains an inference CNN on (raw) training segments with Adam and early
/// stopping on a training-loss plateau. Deterministic for a given seed.
pub fn train_inference_cnn(
    segments: &[LabeledSegment],
    schema: &DatasetSchema,
    target: TargetAttribute,
    config: &CnnConfig,
    seed: u64,
) -> Result<InferenceModel, EvalError> {
    if segments.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let classes = target.class_count(schema);
    let mut seen = alloc::vec![false; classes];
    for seg in segments {
        seen[target.label_of(seg)] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(EvalError::SingleClassData);
    }

    let mut net = build_cnn(schema, classes, config, seed)?;
    let mut opt = Optimizer::adam(config.learning_rate as f32);
    let mut rng = Seeder::new(seed).derive("cnn-shuffle").rng();
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let dim = schema.segment_len();

    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len() * dim);
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                xs.extend_from_slice(&segments[i].x);
                ys.push(target.label_of(&segments[i]));
            }
            let x = Tensor::from_vec(alloc::vec![chunk.len(), dim], xs)
                .expect("constructed together");
            let probs = net.forward(&x)?;
            let (loss, d_probs) = cross_entropy_grad(&probs, &ys);
            let bp = net.backward(&d_probs)?;
            optimizer_step(net.params_mut(), &bp.grads, &mut opt)
                .map_err(|e| EvalError::Net(NnError::Param(e)))?;
            epoch_loss += loss;
            batches += 1;
        }
        epochs_run += 1;
        let mean_loss = epoch_loss / batches as f64;
        if mean_loss < best_loss * (1.0 - config.min_rel_improvement) {
            best_loss = mean_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let mut model = InferenceModel {
        net,
        target,
        classes,
        train_accuracy: 0.0,
        epochs_run,
    };
    let train_labels: Vec<usize> = segments.iter().map(|s| target.label_of(s)).collect();
    let predictions = predict_segments(&model, segments)?;
    let correct = predictions
        .iter()
        .zip(&train_labels)
        .filter(|(p, y)| p == y)
        .count();
    model.train_accuracy = correct as f64 / segments.len() as f64;
    Ok(model)
}

fn predict_segments(
    model: &InferenceModel,
    segments: &[LabeledSegment],
) -> Result<Vec<usize>, EvalError> {
    let dim = segments.first().map_or(0, |s| s.x.len());
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(256) {
        let mut xs = Vec::with_capacity(chunk.len() * dim);
        for seg in chunk {
            xs.extend_from_slice(&seg.x);
        }
        let x = Tensor::from_vec(alloc::vec![chunk.len(), dim], xs)
            .expect("constructed together");
        out.extend(model.predict_batch(&x)?);
    }
    Ok(out)
}

/// Accuracy, macro-F1 and per-class breakdown of a prediction run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Recall per class; NaN-free (classes absent from the set score 0).
    pub per_class_accuracy: Vec<f64>,
    pub random_guess_baseline: f64,
    pub samples: usize,
}

/// Metrics from raw predictions; the building block of [`score`].
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<MetricsReport, EvalError> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(EvalError::EmptySet);
    }
    let n = predictions.len();
    let mut confusion = alloc::vec![alloc::vec![0usize; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(classes);
    let mut f1_sum = 0.0f64;
    for c in 0..classes {
        let truth: usize = confusion[c].iter().sum();
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        let hit = confusion[c][c];
        let recall = if truth > 0 { hit as f64 / truth as f64 } else { 0.0 };
        let precision = if predicted > 0 {
            hit as f64 / predicted as f64
        } else {
            0.0
        };
        per_class.push(recall);
        f1_sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1_sum / classes as f64,
        per_class_accuracy: per_class,
        random_guess_baseline: 1.0 / classes as f64,
        samples: n,
    })
}

/// Scores a trained model on a segment set against its target attribute.
pub fn score(model: &InferenceModel, segments: &[LabeledSegment]) -> Result<MetricsReport, EvalError> {
    if segments.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let predictions = predict_segments(model, segments)?;
    let labels: Vec<usize> = segments.iter().map(|s| model.target.label_of(s)).collect();
    compute_metrics(&predictions, &labels, model.classes)
}

/// One row of the per-epoch privacy/utility trade-off.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub epoch: usize,
    pub desired_accuracy: f64,
    /// Intrusive accuracy per private attribute.
    pub intrusive_accuracy: Vec<f64>,
    /// Mean per-component MI between anonymized-data PCA components and the
    /// public attribute.
    pub mi_public: f64,
    /// Same, against each private attribute.
    pub mi_private: Vec<f64>,
}

/// Evaluates each training snapshot: anonymize the evaluation set, score the
/// desired and intrusive models, and measure the PCA-component MI against
/// both attributes. Rows come back ordered by epoch.
#[allow(clippy::too_many_arguments)]
pub fn privacy_utility_curve(
    template: &BlinderModel<f32>,
    snapshots: &[ModelParams<f32>],
    eval_segments: &[LabeledSegment],
    desired: &InferenceModel,
    intrusive: &[InferenceModel],
    pca_components: usize,
    mi_neighbors: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CurvePoint>, EvalError> {
    if snapshots.is_empty() {
        return Err(EvalError::Config("no snapshots to evaluate".into()));
    }
    if eval_segments.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut out = Vec::with_capacity(snapshots.len());
    let mut model = template.clone();
    for (epoch, snap) in snapshots.iter().enumerate() {
        model.set_params(snap)?;
        let anonymized = model.anonymize_segments(eval_segments, desired, rng)?;
        let desired_accuracy = score(desired, &anonymized)?.accuracy;
        let mut intrusive_accuracy = Vec::with_capacity(intrusive.len());
        for clf in intrusive {
            intrusive_accuracy.push(score(clf, &anonymized)?.accuracy);
        }
        let rows: Vec<Vec<f64>> = anonymized
            .iter()
            .map(|s| s.x.iter().map(|&v| v as f64).collect())
            .collect();
        let pca = Pca::fit(&rows, pca_components)?;
        let projected = pca.project_rows(&rows);
        let public_labels: Vec<usize> = anonymized.iter().map(|s| s.public_label).collect();
        let mi_public = mutual_information(&projected, &public_labels, mi_neighbors)?.mean;
        let mut mi_private = Vec::new();
        for j in 0..template.schema().private_attributes.len() {
            let labels: Vec<usize> = anonymized.iter().map(|s| s.private_labels[j]).collect();
            mi_private.push(mutual_information(&projected, &labels, mi_neighbors)?.mean);
        }
        out.push(CurvePoint {
            epoch,
            desired_accuracy,
            intrusive_accuracy,
            mi_public,
            mi_private,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PrivateAttribute;
    use alloc::vec;
    use rand::Rng;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channels: 1,
            window: 16,
            stride: 8,
            public_classes: 2,
            private_attributes: vec![PrivateAttribute {
                name: "attr".into(),
                classes: 2,
            }],
            magnitude_mode: false,
        }
    }

    fn small_cnn() -> CnnConfig {
        CnnConfig {
            conv_channels: vec![4, 8],
            dense: vec![16],
            max_epochs: 30,
            batch_size: 16,
            ..CnnConfig::default()
        }
    }

    /// Two classes separated by sign: class c has mean (-1)^c.
    fn separable_segments(n: usize, seed: u64) -> Vec<LabeledSegment> {
        let mut rng = Seeder::new(seed).derive("sep").rng();
        (0..n)
            .map(|i| {
                let class = i % 2;
                let center = if class == 0 { -1.0f32 } else { 1.0 };
                LabeledSegment {
                    x: (0..16).map(|_| center + rng.gen_range(-0.3f32..0.3)).collect(),
                    public_label: class,
                    private_labels: vec![class],
                    client_id: 0,
                }
            })
            .collect()
    }

    /// Logistic-regression oracle confirming linear separability.
    fn logistic_oracle_accuracy(segments: &[LabeledSegment]) -> f64 {
        let dim = segments[0].x.len();
        let mut w = alloc::vec![0.0f64; dim + 1];
        for _ in 0..300 {
            let mut grad = alloc::vec![0.0f64; dim + 1];
            for seg in segments {
                let mut z = w[dim];
                for (wi, &xi) in w[..dim].iter().zip(&seg.x) {
                    z += wi * xi as f64;
                }
                let p = 1.0 / (1.0 + (-z).exp());
                let err = p - seg.public_label as f64;
                for (g, &xi) in grad[..dim].iter_mut().zip(&seg.x) {
                    *g += err * xi as f64;
                }
                grad[dim] += err;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= 0.5 * g / segments.len() as f64;
            }
        }
        let correct = segments
            .iter()
            .filter(|seg| {
                let mut z = w[dim];
                for (wi, &xi) in w[..dim].iter().zip(&seg.x) {
                    z += wi * xi as f64;
                }
                (z > 0.0) == (seg.public_label == 1)
            })
            .count();
        correct as f64 / segments.len() as f64
    }

    #[test]
    fn default_cnn_matches_the_fixed_hyperparameters() {
        let c = CnnConfig::default();
        assert_eq!(c.conv_channels, vec![32, 64, 64, 128]);
        assert_eq!((c.kernel, c.stride), (5, 2));
        assert_eq!(c.dense, vec![256, 128]);
        assert!((c.learning_rate - 1e-3).abs() < 1e-12);
        assert!(c.max_epochs <= 50);
    }

    #[test]
    fn separable_classes_reach_high_accuracy() {
        let train = separable_segments(200, 1);
        let test = separable_segments(100, 2);
        let oracle = logistic_oracle_accuracy(&train);
        assert!(oracle >= 0.99, "oracle says not separable: {oracle}");

        let model =
            train_inference_cnn(&train, &schema(), TargetAttribute::Public, &small_cnn(), 3)
                .unwrap();
        let report = score(&model, &test).unwrap();
        assert!(report.accuracy >= 0.99, "accuracy {}", report.accuracy);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let mut train = separable_segments(300, 4);
        let mut rng = Seeder::new(5).derive("shuffle").rng();
        let mut labels: Vec<usize> = train.iter().map(|s| s.public_label).collect();
        labels.shuffle(&mut rng);
        for (seg, y) in train.iter_mut().zip(labels) {
            seg.public_label = y;
        }
        let test = {
            let mut t = separable_segments(200, 6);
            let mut labels: Vec<usize> = t.iter().map(|s| s.public_label).collect();
            labels.shuffle(&mut rng);
            for (seg, y) in t.iter_mut().zip(labels) {
                seg.public_label = y;
            }
            t
        };
        let model =
            train_inference_cnn(&train, &schema(), TargetAttribute::Public, &small_cnn(), 7)
                .unwrap();
        let report = score(&model, &test).unwrap();
        assert!(
            (report.accuracy - 0.5).abs() <= 0.10,
            "accuracy {} should be near chance",
            report.accuracy
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train = separable_segments(64, 8);
        let cfg = CnnConfig {
            max_epochs: 3,
            ..small_cnn()
        };
        let a = train_inference_cnn(&train, &schema(), TargetAttribute::Public, &cfg, 11).unwrap();
        let b = train_inference_cnn(&train, &schema(), TargetAttribute::Public, &cfg, 11).unwrap();
        assert_eq!(a.net.params().checksum(), b.net.params().checksum());
    }

    #[test]
    fn single_class_data_is_rejected() {
        let mut train = separable_segments(32, 9);
        for seg in &mut train {
            seg.public_label = 1;
        }
        assert!(matches!(
            train_inference_cnn(&train, &schema(), TargetAttribute::Public, &small_cnn(), 1),
            Err(EvalError::SingleClassData)
        ));
    }

    #[test]
    fn metrics_identities() {
        // perfect predictor
        let labels = vec![0, 1, 0, 1, 1, 0];
        let report = compute_metrics(&labels, &labels, 2).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.per_class_accuracy, vec![1.0, 1.0]);
        assert_eq!(report.random_guess_baseline, 0.5);

        // constant predictor on a balanced binary set: acc 1/2, macro-F1 1/3
        let constant = vec![0; 100];
        let balanced: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let report = compute_metrics(&constant, &balanced, 2).unwrap();
        assert!((report.accuracy - 0.5).abs() < 1e-12);
        assert!((report.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let predictions = vec![0, 1, 1, 0, 2, 1, 0, 2];
        let labels = vec![0, 1, 2, 0, 2, 0, 1, 2];
        let a = compute_metrics(&predictions, &labels, 3).unwrap();
        let perm = [3, 1, 4, 0, 7, 2, 6, 5];
        let p2: Vec<usize> = perm.iter().map(|&i| predictions[i]).collect();
        let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = compute_metrics(&p2, &l2, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn macro_f1_equals_accuracy_for_symmetric_confusion() {
        // balanced classes, symmetric confusion: per-class precision equals
        // recall, so macro-F1 collapses to accuracy
        let mut predictions = Vec::new();
        let mut labels = Vec::new();
        for (truth, pred, count) in [
            (0, 0, 8),
            (1, 1, 8),
            (0, 1, 2),
            (1, 0, 2),
        ] {
            for _ in 0..count {
                labels.push(truth);
                predictions.push(pred);
            }
        }
        let report = compute_metrics(&predictions, &labels, 2).unwrap();
        assert!((report.macro_f1 - report.accuracy).abs() < 1e-12);
    }

    #[test]
    fn curve_rows_are_ordered_by_epoch() {
        use crate::anonymizer::ModelConfig;
        let schema = schema();
        let model_cfg = ModelConfig {
            latent_dim: 3,
            hidden: vec![8, 6],
            disc_hidden: vec![4],
            weights: Default::default(),
            conv_frontend: None,
        };
        let model = BlinderModel::<f32>::build(&schema, &model_cfg, 21).unwrap();
        let snapshots = vec![model.params(), model.params(), model.params()];
        let segments = separable_segments(120, 22);
        let cfg = small_cnn();
        let desired =
            train_inference_cnn(&segments, &schema, TargetAttribute::Public, &cfg, 23).unwrap();
        let intrusive =
            train_inference_cnn(&segments, &schema, TargetAttribute::Private(0), &cfg, 24)
                .unwrap();
        let mut rng = Seeder::new(25).derive("curve").rng();
        let curve = privacy_utility_curve(
            &model,
            &snapshots,
            &segments,
            &desired,
            &[intrusive],
            4,
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(curve.len(), 3);
        for (i, row) in curve.iter().enumerate() {
            assert_eq!(row.epoch, i);
            assert!(row.desired_accuracy.is_finite());
            assert!(row.mi_public.is_finite());
            assert!(row.mi_private[0] >= 0.0);
        }
    }
}

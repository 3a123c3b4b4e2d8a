//! Dataset ingestion primitives: schema, windowed segmentation,
//! standardization, axis magnitude, train/test and population splits.
//!
//! Sensor data enters as per-client [`RawRecording`]s (one sample stream per
//! channel with per-sample labels) and is cut into fixed-length
//! [`LabeledSegment`]s by a sliding window. All transforms are pure
//! functions; nothing here touches files.

pub mod rebalance;
pub mod synth;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::seq::SliceRandom;
use rand::Rng;

pub use rebalance::{apply_skew, quality_gate, rebalance_public, LabelPredictor, RebalanceReport};
pub use synth::{generate_synthetic_population, PrivateSignature, SignalSpec};

/// Errors from dataset validation and preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    InvalidSchema(String),
    /// Recording (or a labeled region of it) is shorter than the window.
    RecordingTooShort { region: usize, window: usize },
    /// Channel streams have unequal lengths, or labels do not cover samples.
    RaggedRecording,
    /// A label exceeds the class count declared in the schema.
    LabelOutOfRange { kind: &'static str, label: usize },
    /// A channel has (near-)zero variance, so it cannot be standardized.
    ZeroVariance { channel: usize },
    /// Magnitude requires exactly three axes.
    AxisCount { found: usize },
    /// Skew ratio below one.
    InvalidRatio { ratio: f64 },
    /// Synthetic signal description inconsistent with the schema.
    InvalidSpec(String),
    /// Not enough samples to perform the requested draw.
    InsufficientData { needed: usize, available: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::InvalidSchema(msg) => write!(f, "invalid schema: {msg}"),
            DataError::RecordingTooShort { region, window } => {
                write!(f, "labeled region of {region} samples is shorter than window {window}")
            }
            DataError::RaggedRecording => write!(f, "recording channels/labels have unequal lengths"),
            DataError::LabelOutOfRange { kind, label } => {
                write!(f, "{kind} label {label} out of range")
            }
            DataError::ZeroVariance { channel } => {
                write!(f, "channel {channel} has zero variance")
            }
            DataError::AxisCount { found } => {
                write!(f, "magnitude needs exactly 3 axes, found {found}")
            }
            DataError::InvalidRatio { ratio } => write!(f, "imbalance ratio {ratio} must be >= 1"),
            DataError::InvalidSpec(msg) => write!(f, "invalid signal spec: {msg}"),
            DataError::InsufficientData { needed, available } => {
                write!(f, "needed {needed} samples, have {available}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

/// One private attribute: a name and its (categorical) class count.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivateAttribute {
    pub name: String,
    pub classes: usize,
}

/// Knobs that control how non-i.i.d. the training population is.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeterogeneityConfig {
    /// Majority/minority public-class count ratio per client (>= 1).
    pub imbalance_ratio: f64,
    /// Fraction of clients that participate in training, in (0, 1].
    pub participation_ratio: f64,
}

impl Default for HeterogeneityConfig {
    fn default() -> Self {
        HeterogeneityConfig {
            imbalance_ratio: 1.0,
            participation_ratio: 1.0,
        }
    }
}

impl HeterogeneityConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.imbalance_ratio < 1.0 {
            return Err(DataError::InvalidRatio {
                ratio: self.imbalance_ratio,
            });
        }
        if !(self.participation_ratio > 0.0 && self.participation_ratio <= 1.0) {
            return Err(DataError::InvalidRatio {
                ratio: self.participation_ratio,
            });
        }
        Ok(())
    }
}

/// Shape of a dataset: channel/window geometry and label spaces.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSchema {
    /// Channels after preprocessing (magnitude already applied if enabled).
    pub channels: usize,
    /// Sliding-window length in samples.
    pub window: usize,
    /// Sliding-window stride in samples.
    pub stride: usize,
    pub public_classes: usize,
    pub private_attributes: Vec<PrivateAttribute>,
    /// Raw channels come in 3-axis groups that are reduced to magnitudes.
    #[cfg_attr(feature = "serde", serde(default))]
    pub magnitude_mode: bool,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.window == 0 || self.stride == 0 || self.channels == 0 {
            return Err(DataError::InvalidSchema(
                "window, stride and channels must be positive".into(),
            ));
        }
        if self.public_classes < 2 {
            return Err(DataError::InvalidSchema(
                "need at least two public classes".into(),
            ));
        }
        if self.private_attributes.is_empty() {
            return Err(DataError::InvalidSchema(
                "need at least one private attribute".into(),
            ));
        }
        for attr in &self.private_attributes {
            if attr.classes < 2 {
                return Err(DataError::InvalidSchema(format!(
                    "private attribute {} needs at least two classes",
                    attr.name
                )));
            }
        }
        Ok(())
    }

    /// Flattened segment length: channels concatenated window-by-window.
    pub fn segment_len(&self) -> usize {
        self.channels * self.window
    }

    pub fn private_class_counts(&self) -> Vec<usize> {
        self.private_attributes.iter().map(|a| a.classes).collect()
    }
}

/// One fixed-length windowed segment with its labels.
///
/// `x` is the channel-major concatenation of the window: all of channel 0,
/// then all of channel 1, and so on — `channels * window` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub x: Vec<f32>,
    pub public_label: usize,
    pub private_labels: Vec<usize>,
    pub client_id: u32,
}

/// A client's raw multi-channel stream with per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub client_id: u32,
    /// One sample array per channel; equal lengths.
    pub channels: Vec<Vec<f32>>,
    /// Public label per sample.
    pub public: Vec<usize>,
    /// Per private attribute, a label per sample.
    pub privates: Vec<Vec<usize>>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_consistent(&self) -> Result<(), DataError> {
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n)
            || self.public.len() != n
            || self.privates.iter().any(|p| p.len() != n)
        {
            return Err(DataError::RaggedRecording);
        }
        Ok(())
    }
}

/// Cuts a recording into sliding-window segments, one run per maximal region
/// of constant labels. Yields `(L - window) / stride + 1` segments per region
/// of length `L`; regions shorter than the window are an error.
pub fn segment(recording: &RawRecording, schema: &DatasetSchema) -> Result<Vec<LabeledSegment>, DataError> {
    schema.validate()?;
    recording.check_consistent()?;
    if recording.channels.len() != schema.channels {
        return Err(DataError::InvalidSchema(format!(
            "recording has {} channels, schema expects {}",
            recording.channels.len(),
            schema.channels
        )));
    }
    if recording.privates.len() != schema.private_attributes.len() {
        return Err(DataError::InvalidSchema(format!(
            "recording has {} private attributes, schema expects {}",
            recording.privates.len(),
            schema.private_attributes.len()
        )));
    }
    let n = recording.len();
    if n < schema.window {
        return Err(DataError::RecordingTooShort {
            region: n,
            window: schema.window,
        });
    }

    let mut segments = Vec::new();
    let mut region_start = 0;
    for t in 1..=n {
        let boundary = t == n
            || recording.public[t] != recording.public[region_start]
            || recording
                .privates
                .iter()
                .any(|p| p[t] != p[region_start]);
        if !boundary {
            continue;
        }
        let region_len = t - region_start;
        if region_len < schema.window {
            return Err(DataError::RecordingTooShort {
                region: region_len,
                window: schema.window,
            });
        }
        let public_label = recording.public[region_start];
        if public_label >= schema.public_classes {
            return Err(DataError::LabelOutOfRange {
                kind: "public",
                label: public_label,
            });
        }
        let private_labels: Vec<usize> = recording
            .privates
            .iter()
            .map(|p| p[region_start])
            .collect();
        for (attr, &label) in schema.private_attributes.iter().zip(&private_labels) {
            if label >= attr.classes {
                return Err(DataError::LabelOutOfRange {
                    kind: "private",
                    label,
                });
            }
        }
        let count = (region_len - schema.window) / schema.stride + 1;
        for k in 0..count {
            let start = region_start + k * schema.stride;
            let mut x = Vec::with_capacity(schema.segment_len());
            for ch in &recording.channels {
                x.extend_from_slice(&ch[start..start + schema.window]);
            }
            segments.push(LabeledSegment {
                x,
                public_label,
                private_labels: private_labels.clone(),
                client_id: recording.client_id,
            });
        }
        region_start = t;
    }
    Ok(segments)
}

/// Per-channel mean and standard deviation, computed on a training split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Computes per-channel statistics over a set of segments. Must only ever be
/// fed training-split segments so no test information leaks into the scaler.
pub fn channel_stats(
    segments: &[LabeledSegment],
    schema: &DatasetSchema,
) -> Result<ChannelStats, DataError> {
    let window = schema.window;
    let mut mean = alloc::vec![0.0f64; schema.channels];
    let mut sq = alloc::vec![0.0f64; schema.channels];
    let count = (segments.len() * window) as f64;
    if segments.is_empty() {
        return Err(DataError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    for seg in segments {
        for ch in 0..schema.channels {
            for &v in &seg.x[ch * window..(ch + 1) * window] {
                mean[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let mut std = alloc::vec![0.0f64; schema.channels];
    for ch in 0..schema.channels {
        mean[ch] /= count;
        let var = (sq[ch] / count - mean[ch] * mean[ch]).max(0.0);
        std[ch] = var.sqrt();
        if std[ch] < 1e-9 {
            return Err(DataError::ZeroVariance { channel: ch });
        }
    }
    Ok(ChannelStats { mean, std })
}

/// Applies per-channel standardization with the provided (training) stats.
pub fn standardize(
    mut segments: Vec<LabeledSegment>,
    stats: &ChannelStats,
    schema: &DatasetSchema,
) -> Result<Vec<LabeledSegment>, DataError> {
    if stats.mean.len() != schema.channels || stats.std.len() != schema.channels {
        return Err(DataError::InvalidSchema("stats/schema channel mismatch".into()));
    }
    if let Some(ch) = stats.std.iter().position(|&s| s < 1e-9) {
        return Err(DataError::ZeroVariance { channel: ch });
    }
    for seg in &mut segments {
        for ch in 0..schema.channels {
            let (m, s) = (stats.mean[ch] as f32, stats.std[ch] as f32);
            for v in &mut seg.x[ch * schema.window..(ch + 1) * schema.window] {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(segments)
}

/// Reduces a 3-axis recording to a single magnitude channel
/// (`sqrt(x^2 + y^2 + z^2)` per sample). Labels are preserved.
pub fn magnitude(recording: &RawRecording) -> Result<RawRecording, DataError> {
    recording.check_consistent()?;
    if recording.channels.len() != 3 {
        return Err(DataError::AxisCount {
            found: recording.channels.len(),
        });
    }
    let n = recording.len();
    let mut mag = Vec::with_capacity(n);
    for i in 0..n {
        let x = recording.channels[0][i];
        let y = recording.channels[1][i];
        let z = recording.channels[2][i];
        mag.push((x * x + y * y + z * z).sqrt());
    }
    Ok(RawRecording {
        client_id: recording.client_id,
        channels: alloc::vec![mag],
        public: recording.public.clone(),
        privates: recording.privates.clone(),
    })
}

/// Stratified train/test split by public class. `train_fraction` of each
/// class (rounded down, at least one sample if the class is non-empty) goes
/// to the training split.
pub fn train_test_split<R: Rng + ?Sized>(
    segments: Vec<LabeledSegment>,
    train_fraction: f64,
    public_classes: usize,
    rng: &mut R,
) -> (Vec<LabeledSegment>, Vec<LabeledSegment>) {
    let mut by_class: Vec<Vec<LabeledSegment>> = (0..public_classes).map(|_| Vec::new()).collect();
    for seg in segments {
        by_class[seg.public_label].push(seg);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut class in by_class {
        class.shuffle(rng);
        let n_train = ((class.len() as f64 * train_fraction) as usize).min(class.len());
        let n_train = if class.is_empty() { 0 } else { n_train.max(1) };
        for (i, seg) in class.into_iter().enumerate() {
            if i < n_train {
                train.push(seg);
            } else {
                test.push(seg);
            }
        }
    }
    (train, test)
}

/// Splits client ids into `floor(participation_ratio * N)` participants and
/// the remaining unseen clients.
pub fn split_population<R: Rng + ?Sized>(
    clients: &[u32],
    participation_ratio: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>), DataError> {
    if !(participation_ratio > 0.0 && participation_ratio <= 1.0) {
        return Err(DataError::InvalidRatio {
            ratio: participation_ratio,
        });
    }
    let mut ids = clients.to_vec();
    ids.shuffle(rng);
    let n_participants = ((clients.len() as f64) * participation_ratio) as usize;
    let unseen = ids.split_off(n_participants.min(ids.len()));
    Ok((ids, unseen))
}

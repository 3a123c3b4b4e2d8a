//! Synthetic population generator with planted class signals.
//!
//! Each public class carries a distinct base waveform; each private class
//! adds a signature on top (a small DC offset plus a high-frequency
//! component). Private labels are constant per client — every client holds
//! exactly one private class per attribute, the hardest federated regime —
//! and public classes alternate between bouts of contiguous activity.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::seq::SliceRandom;
use rand::Rng;

use super::{DataError, DatasetSchema, RawRecording};
use crate::rng::standard_normal;

const TAU: f32 = core::f32::consts::TAU;

/// Additive per-class marker: `dc + hf_amplitude * sin(2*pi*hf_frequency*t/window)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivateSignature {
    pub dc: f32,
    pub hf_amplitude: f32,
    /// Cycles per window.
    pub hf_frequency: f32,
}

/// Declarative description of the planted signals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignalSpec {
    /// Base sinusoid amplitude per public class.
    pub base_amplitude: Vec<f32>,
    /// Base sinusoid frequency per public class, in cycles per window.
    pub base_frequency: Vec<f32>,
    /// `signatures[attribute][class]` additive private markers.
    pub signatures: Vec<Vec<PrivateSignature>>,
    /// Standard deviation of per-sample Gaussian noise.
    pub noise_std: f32,
    /// Strength of per-client gain/phase variation (0 = identical clients).
    pub client_jitter: f32,
    /// Approximate number of window segments each client should yield.
    pub segments_per_client: usize,
    /// Segments per contiguous activity bout.
    pub bout_segments: usize,
    /// Public-class imbalance ratio at generation time (1 = balanced).
    pub public_ratio: f32,
}

impl SignalSpec {
    /// A default planted configuration for the given schema: well separated
    /// base frequencies per public class, and private signatures that mix a
    /// small DC offset with a strong near-Nyquist component.
    pub fn planted(schema: &DatasetSchema) -> Self {
        let classes = schema.public_classes;
        let base_frequency = (0..classes).map(|c| 2.0 + 3.0 * c as f32).collect();
        let base_amplitude = (0..classes).map(|c| 1.0 + 0.15 * c as f32).collect();
        let signatures = schema
            .private_attributes
            .iter()
            .enumerate()
            .map(|(j, attr)| {
                let span = (attr.classes - 1) as f32;
                (0..attr.classes)
                    .map(|v| PrivateSignature {
                        dc: -0.15 + 0.3 * v as f32 / span,
                        hf_amplitude: 0.45 * v as f32 / span,
                        hf_frequency: 29.0 - 2.0 * j as f32,
                    })
                    .collect()
            })
            .collect();
        SignalSpec {
            base_amplitude,
            base_frequency,
            signatures,
            noise_std: 0.1,
            client_jitter: 0.35,
            segments_per_client: 1500,
            bout_segments: 40,
            public_ratio: 1.0,
        }
    }

    /// Scales every private signature's amplitude (useful to zero them out).
    pub fn with_signature_scale(mut self, scale: f32) -> Self {
        for attr in &mut self.signatures {
            for sig in attr.iter_mut() {
                sig.dc *= scale;
                sig.hf_amplitude *= scale;
            }
        }
        self
    }

    fn validate(&self, schema: &DatasetSchema) -> Result<(), DataError> {
        if self.base_amplitude.len() != schema.public_classes
            || self.base_frequency.len() != schema.public_classes
        {
            return Err(DataError::InvalidSpec(format!(
                "base waveforms cover {} classes, schema has {}",
                self.base_amplitude.len(),
                schema.public_classes
            )));
        }
        if self.signatures.len() != schema.private_attributes.len() {
            return Err(DataError::InvalidSpec(format!(
                "signatures cover {} attributes, schema has {}",
                self.signatures.len(),
                schema.private_attributes.len()
            )));
        }
        for (sig, attr) in self.signatures.iter().zip(&schema.private_attributes) {
            if sig.len() != attr.classes {
                return Err(DataError::InvalidSpec(format!(
                    "attribute {} has {} classes but {} signatures",
                    attr.name,
                    attr.classes,
                    sig.len()
                )));
            }
        }
        if self.segments_per_client == 0 || self.bout_segments == 0 {
            return Err(DataError::InvalidSpec("empty population".into()));
        }
        if self.public_ratio < 1.0 {
            return Err(DataError::InvalidSpec("public_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

/// Private class assignment for client `i`: mixed-radix digits over the
/// attribute class counts, so multi-attribute combinations are covered evenly.
fn private_assignment(client: usize, counts: &[usize], offsets: &[usize]) -> Vec<usize> {
    let mut idx = client;
    counts
        .iter()
        .zip(offsets)
        .map(|(&c, &off)| {
            let v = (idx + off) % c;
            idx /= c;
            v
        })
        .collect()
}

/// Generates one recording per client with planted public/private signals.
/// Every client carries exactly one private class per attribute.
pub fn generate_synthetic_population<R: Rng + ?Sized>(
    n_clients: usize,
    schema: &DatasetSchema,
    spec: &SignalSpec,
    rng: &mut R,
) -> Result<Vec<RawRecording>, DataError> {
    schema.validate()?;
    spec.validate(schema)?;
    let counts = schema.private_class_counts();
    let offsets: Vec<usize> = counts.iter().map(|&c| rng.gen_range(0..c)).collect();

    let window = schema.window;
    let stride = schema.stride;
    let bout_len = window + stride * (spec.bout_segments - 1);
    let n_bouts = spec.segments_per_client.div_ceil(spec.bout_segments);

    // Heterogeneity traits (gain, frequency offset, channel mixing) are
    // shared by blocks of `period` consecutive clients; within a block every
    // private-class combination appears exactly once. A matched-trait design
    // keeps client identity from ever standing in for the private class.
    let period: usize = counts.iter().product();
    let n_groups = n_clients.div_ceil(period);
    struct GroupTraits {
        gain: f32,
        phase: f32,
        freq: f32,
        mixing: Vec<Vec<f32>>,
    }
    let jitter = spec.client_jitter;
    let n_ch = schema.channels;
    let groups: Vec<GroupTraits> = (0..n_groups)
        .map(|_| GroupTraits {
            gain: 1.0 + jitter * rng.gen_range(-0.5f32..0.5),
            phase: rng.gen_range(0.0..TAU),
            freq: jitter * 0.7 * rng.gen_range(-0.5f32..0.5),
            // channel mixing, the sensor-orientation analogue: each observed
            // channel is a normalized blend of the source channels
            mixing: (0..n_ch)
                .map(|ch| {
                    let mut row: Vec<f32> = (0..n_ch)
                        .map(|k| {
                            let identity = if k == ch { 1.0 } else { 0.0 };
                            identity + jitter * 0.8 * rng.gen_range(-1.0f32..1.0)
                        })
                        .collect();
                    let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
                    let gain = (1.0 - 0.12 * ch as f32) / norm;
                    for v in &mut row {
                        *v *= gain;
                    }
                    row
                })
                .collect(),
        })
        .collect();

    let mut clients = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let privates = private_assignment(i, &counts, &offsets);
        let traits = &groups[i / period];
        let client_gain = traits.gain;
        let client_phase = traits.phase;
        let client_freq = traits.freq;
        let mixing = &traits.mixing;

        // Bout public classes: balanced cycle, or skewed toward one majority.
        let mut bout_classes: Vec<usize> = Vec::with_capacity(n_bouts);
        if spec.public_ratio > 1.0 {
            let majority = rng.gen_range(0..schema.public_classes);
            let weights: Vec<f32> = (0..schema.public_classes)
                .map(|c| if c == majority { spec.public_ratio } else { 1.0 })
                .collect();
            let total: f32 = weights.iter().sum();
            for _ in 0..n_bouts {
                let mut pick = rng.gen_range(0.0..total);
                let mut chosen = 0;
                for (c, &w) in weights.iter().enumerate() {
                    if pick < w {
                        chosen = c;
                        break;
                    }
                    pick -= w;
                }
                bout_classes.push(chosen);
            }
        } else {
            for b in 0..n_bouts {
                bout_classes.push(b % schema.public_classes);
            }
            bout_classes.shuffle(rng);
        }

        let total_len = n_bouts * bout_len;
        let mut channels = alloc::vec![Vec::with_capacity(total_len); schema.channels];
        let mut public = Vec::with_capacity(total_len);

        for &class in &bout_classes {
            let amp = spec.base_amplitude[class] * client_gain;
            let freq = spec.base_frequency[class] + client_freq;
            let bout_phase: f32 = client_phase + rng.gen_range(0.0..TAU);
            let sig_phases: Vec<f32> = (0..schema.private_attributes.len())
                .map(|_| rng.gen_range(0.0..TAU))
                .collect();
            let mut sources = alloc::vec![0.0f32; n_ch];
            for t in 0..bout_len {
                let tt = t as f32 / window as f32;
                let mut marker = 0.0f32;
                for (j, &label) in privates.iter().enumerate() {
                    let sig = &spec.signatures[j][label];
                    marker += sig.dc
                        + sig.hf_amplitude * (TAU * sig.hf_frequency * tt + sig_phases[j]).sin();
                }
                for (k, source) in sources.iter_mut().enumerate() {
                    let ch_phase = 0.4 * TAU * k as f32 / n_ch as f32;
                    *source = amp * (TAU * freq * tt + bout_phase + ch_phase).sin();
                }
                for (ch, channel) in channels.iter_mut().enumerate() {
                    let mixed: f32 = mixing[ch]
                        .iter()
                        .zip(&sources)
                        .map(|(&m, &s)| m * s)
                        .sum();
                    let noise: f32 = standard_normal::<f32, _>(rng) * spec.noise_std;
                    channel.push(mixed + marker + noise);
                }
                public.push(class);
            }
        }

        clients.push(RawRecording {
            client_id: i as u32,
            channels,
            public,
            privates: privates
                .iter()
                .map(|&v| alloc::vec![v; total_len])
                .collect(),
        });
    }
    Ok(clients)
}

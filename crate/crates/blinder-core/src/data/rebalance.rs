//! Public-attribute class rebalancing: SMOTE-style oversampling of minority
//! classes, random undersampling of an overwhelming majority, and the skew
//! transform used to manufacture non-i.i.d. training data.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::seq::SliceRandom;
use rand::Rng;

use super::{DataError, LabeledSegment};

/// Rebalancing kicks in when the majority class has at least this many times
/// more samples than the minority class.
pub const IMBALANCE_TRIGGER: f64 = 2.0;

/// When the majority exceeds the minority by more than this factor it is
/// first undersampled down to the factor before SMOTE fills the rest.
pub const UNDERSAMPLE_CAP: f64 = 10.0;

/// Book-keeping of what a rebalancing pass did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RebalanceReport {
    /// SMOTE samples added per public class.
    pub synthesized: Vec<(usize, usize)>,
    /// Majority originals removed per public class.
    pub removed: Vec<(usize, usize)>,
    /// Classes that fell back to duplication noise for lack of neighbors.
    pub duplicated_classes: Vec<usize>,
}

impl RebalanceReport {
    pub fn total_synthesized(&self) -> usize {
        self.synthesized.iter().map(|&(_, n)| n).sum()
    }

    pub fn total_removed(&self) -> usize {
        self.removed.iter().map(|&(_, n)| n).sum()
    }

    pub fn is_noop(&self) -> bool {
        self.synthesized.is_empty() && self.removed.is_empty()
    }
}

/// Anything that can predict a class index from a flat segment; implemented
/// by the evaluation CNNs and by simple probes in tests.
pub trait LabelPredictor {
    fn predict_class(&self, x: &[f32]) -> usize;
}

impl<F: Fn(&[f32]) -> usize> LabelPredictor for F {
    fn predict_class(&self, x: &[f32]) -> usize {
        self(x)
    }
}

fn class_counts(segments: &[LabeledSegment], classes: usize) -> Vec<usize> {
    let mut counts = alloc::vec![0usize; classes];
    for seg in segments {
        counts[seg.public_label] += 1;
    }
    counts
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Nearest same-class neighbor indices (into `members`) for each member.
fn knn_table(members: &[&LabeledSegment], k: usize) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut table = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (squared_distance(&members[i].x, &members[j].x), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        table.push(dists.into_iter().take(k).map(|(_, j)| j).collect());
    }
    table
}

/// Synthesizes `count` new samples for one class by interpolating members
/// toward their nearest same-class neighbors: `x + u * (x_nn - x)`, `u ~ U(0,1)`.
fn smote_class<R: Rng + ?Sized>(
    members: &[&LabeledSegment],
    count: usize,
    k_neighbors: usize,
    rng: &mut R,
    fallback_noted: &mut bool,
) -> Vec<LabeledSegment> {
    let mut out = Vec::with_capacity(count);
    if members.len() < 2 {
        // Too few samples for neighbor interpolation; duplicate with noise.
        *fallback_noted = true;
        log::warn!(
            "smote: class with {} sample(s), falling back to jittered duplication",
            members.len()
        );
        if members.is_empty() {
            return out;
        }
        for _ in 0..count {
            let seed = members[0];
            let mut seg = seed.clone();
            for v in &mut seg.x {
                *v += rng.gen_range(-1e-3f32..1e-3);
            }
            out.push(seg);
        }
        return out;
    }
    let table = knn_table(members, k_neighbors.min(members.len() - 1));
    for _ in 0..count {
        let i = rng.gen_range(0..members.len());
        let neighbors = &table[i];
        let j = neighbors[rng.gen_range(0..neighbors.len())];
        let u: f32 = rng.gen_range(0.0..1.0);
        let seed = members[i];
        let mut x = seed.x.clone();
        for (v, &nv) in x.iter_mut().zip(&members[j].x) {
            *v += u * (nv - *v);
        }
        out.push(LabeledSegment {
            x,
            public_label: seed.public_label,
            private_labels: seed.private_labels.clone(),
            client_id: seed.client_id,
        });
    }
    out
}

/// Balances the public-attribute distribution of one client's segments.
///
/// Triggered only when the majority class holds at least twice as many
/// samples as the minority. An overwhelming majority (beyond 10x) is first
/// randomly undersampled to the 10x cap; every class is then topped up to
/// the (possibly reduced) majority count with SMOTE samples.
pub fn rebalance_public<R: Rng + ?Sized>(
    segments: Vec<LabeledSegment>,
    public_classes: usize,
    k_neighbors: usize,
    rng: &mut R,
) -> (Vec<LabeledSegment>, RebalanceReport) {
    let mut report = RebalanceReport::default();
    let counts = class_counts(&segments, public_classes);
    let present: Vec<usize> = (0..public_classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return (segments, report);
    }
    let max = present.iter().map(|&c| counts[c]).max().unwrap();
    let min = present.iter().map(|&c| counts[c]).min().unwrap();
    if (max as f64) < IMBALANCE_TRIGGER * (min as f64) {
        return (segments, report);
    }

    let cap = ((min as f64) * UNDERSAMPLE_CAP) as usize;
    let mut kept = segments;
    if max as f64 > UNDERSAMPLE_CAP * min as f64 {
        // Undersample every class above the cap.
        let mut by_class: Vec<Vec<LabeledSegment>> =
            (0..public_classes).map(|_| Vec::new()).collect();
        for seg in kept {
            by_class[seg.public_label].push(seg);
        }
        kept = Vec::new();
        for (c, mut class) in by_class.into_iter().enumerate() {
            if class.len() > cap {
                class.shuffle(rng);
                let removed = class.len() - cap;
                class.truncate(cap);
                report.removed.push((c, removed));
                log::info!("rebalance: undersampled class {c} by {removed} samples");
            }
            kept.extend(class);
        }
    }

    let counts = class_counts(&kept, public_classes);
    let target = present.iter().map(|&c| counts[c]).max().unwrap();
    let mut synthesized = Vec::new();
    for &c in &present {
        if counts[c] >= target {
            continue;
        }
        let members: Vec<&LabeledSegment> =
            kept.iter().filter(|s| s.public_label == c).collect();
        let mut fallback = false;
        let new = smote_class(&members, target - counts[c], k_neighbors, rng, &mut fallback);
        if fallback {
            report.duplicated_classes.push(c);
        }
        report.synthesized.push((c, new.len()));
        synthesized.extend(new);
    }
    kept.extend(synthesized);
    (kept, report)
}

/// Fraction of synthetic segments whose predicted public and private labels
/// both match the labels they were synthesized with. Warns below 0.9.
pub fn quality_gate(
    synthetic: &[LabeledSegment],
    public_clf: &dyn LabelPredictor,
    private_clf: &dyn LabelPredictor,
    private_attribute: usize,
) -> f64 {
    if synthetic.is_empty() {
        return 1.0;
    }
    let mut pass = 0usize;
    for seg in synthetic {
        let ok_public = public_clf.predict_class(&seg.x) == seg.public_label;
        let ok_private = private_clf.predict_class(&seg.x) == seg.private_labels[private_attribute];
        if ok_public && ok_private {
            pass += 1;
        }
    }
    let ratio = pass as f64 / synthetic.len() as f64;
    if ratio < 0.9 {
        log::warn!("quality gate: only {ratio:.3} of synthetic samples verified");
    }
    ratio
}

/// Skews one client's public-class distribution to a target imbalance ratio:
/// one randomly chosen majority class ends up with `ratio` times the samples
/// of each minority class, reusing the SMOTE/undersampling primitives.
pub fn apply_skew<R: Rng + ?Sized>(
    segments: Vec<LabeledSegment>,
    public_classes: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<(Vec<LabeledSegment>, RebalanceReport), DataError> {
    if ratio < 1.0 {
        return Err(DataError::InvalidRatio { ratio });
    }
    let counts = class_counts(&segments, public_classes);
    let present: Vec<usize> = (0..public_classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Ok((segments, RebalanceReport::default()));
    }
    let majority = present[rng.gen_range(0..present.len())];
    let total: usize = present.iter().map(|&c| counts[c]).sum();
    let minority_target =
        ((total as f64) / (ratio + (present.len() - 1) as f64)).floor() as usize;
    let minority_target = minority_target.max(2);
    let majority_target = ((minority_target as f64) * ratio).round() as usize;

    let mut report = RebalanceReport::default();
    let mut by_class: Vec<Vec<LabeledSegment>> = (0..public_classes).map(|_| Vec::new()).collect();
    for seg in segments {
        by_class[seg.public_label].push(seg);
    }
    let mut out = Vec::new();
    for &c in &present {
        let target = if c == majority {
            majority_target
        } else {
            minority_target
        };
        let class = &mut by_class[c];
        if class.len() > target {
            class.shuffle(rng);
            let removed = class.len() - target;
            class.truncate(target);
            report.removed.push((c, removed));
        } else if class.len() < target {
            let members: Vec<&LabeledSegment> = class.iter().collect();
            let mut fallback = false;
            let new = smote_class(&members, target - class.len(), 5, rng, &mut fallback);
            if fallback {
                report.duplicated_classes.push(c);
            }
            report.synthesized.push((c, new.len()));
            class.extend(new);
        }
        out.append(class);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seeder;
    use alloc::vec;

    fn seg(label: usize, x: Vec<f32>) -> LabeledSegment {
        LabeledSegment {
            x,
            public_label: label,
            private_labels: vec![0],
            client_id: 0,
        }
    }

    fn population(counts: &[usize]) -> Vec<LabeledSegment> {
        let mut rng = Seeder::new(3).derive("pop").rng();
        let mut out = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let base = label as f32 * 10.0;
                out.push(seg(
                    label,
                    (0..6).map(|_| base + rng.gen_range(-1.0f32..1.0)).collect(),
                ));
            }
        }
        out
    }

    fn counts_of(segments: &[LabeledSegment], classes: usize) -> Vec<usize> {
        class_counts(segments, classes)
    }

    #[test]
    fn balanced_data_is_untouched() {
        let pop = population(&[50, 60, 55]);
        let mut rng = Seeder::new(1).derive("reb").rng();
        let (out, report) = rebalance_public(pop.clone(), 3, 5, &mut rng);
        assert!(report.is_noop());
        assert_eq!(out, pop);
    }

    #[test]
    fn imbalanced_classes_are_topped_up_to_majority() {
        let pop = population(&[100, 30, 20]);
        let mut rng = Seeder::new(2).derive("reb").rng();
        let (out, report) = rebalance_public(pop, 3, 5, &mut rng);
        let counts = counts_of(&out, 3);
        assert_eq!(counts, vec![100, 100, 100]);
        assert_eq!(report.total_synthesized(), 150);
        assert_eq!(report.total_removed(), 0);
    }

    #[test]
    fn overwhelming_majority_is_undersampled_first() {
        let pop = population(&[500, 10]);
        let mut rng = Seeder::new(4).derive("reb").rng();
        let (out, report) = rebalance_public(pop, 2, 5, &mut rng);
        let counts = counts_of(&out, 2);
        assert_eq!(counts, vec![100, 100]); // capped at 10x min, then topped up
        assert_eq!(report.total_removed(), 400);
        assert_eq!(report.total_synthesized(), 90);
    }

    #[test]
    fn originals_are_preserved_when_only_oversampling() {
        let pop = population(&[40, 10]);
        let mut rng = Seeder::new(5).derive("reb").rng();
        let (out, _) = rebalance_public(pop.clone(), 2, 5, &mut rng);
        for original in &pop {
            assert!(out.contains(original));
        }
    }

    #[test]
    fn identical_minority_points_synthesize_identical_points() {
        let mut pop = population(&[10]);
        let twin = seg(1, vec![7.0; 6]);
        pop.push(twin.clone());
        pop.push(twin.clone());
        let mut rng = Seeder::new(6).derive("reb").rng();
        let (out, _) = rebalance_public(pop, 2, 5, &mut rng);
        for s in out.iter().filter(|s| s.public_label == 1) {
            assert_eq!(s.x, twin.x);
        }
    }

    #[test]
    fn synthetic_lies_on_the_connecting_segment_for_two_points() {
        let mut pop = population(&[30]);
        let a = vec![0.0f32; 4];
        let b = vec![1.0f32, 2.0, -1.0, 0.5];
        pop.push(LabeledSegment {
            x: a.clone(),
            public_label: 1,
            private_labels: vec![0],
            client_id: 0,
        });
        pop.push(LabeledSegment {
            x: b.clone(),
            public_label: 1,
            private_labels: vec![0],
            client_id: 0,
        });
        for s in &mut pop {
            s.x.truncate(4);
        }
        let mut rng = Seeder::new(7).derive("reb").rng();
        let (out, _) = rebalance_public(pop, 2, 1, &mut rng);
        for s in out.iter().filter(|s| s.public_label == 1) {
            // x = a + u*(b - a): per-coordinate parameter u must agree and lie in [0, 1]
            let u = if (b[1] - a[1]).abs() > 1e-9 {
                (s.x[1] - a[1]) / (b[1] - a[1])
            } else {
                0.0
            };
            assert!((-1e-5..=1.0 + 1e-5).contains(&u), "u = {u}");
            for i in 0..4 {
                let expect = a[i] + u * (b[i] - a[i]);
                assert!((s.x[i] - expect).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn single_sample_class_falls_back_to_duplication() {
        let mut pop = population(&[8]);
        pop.push(seg(1, vec![5.0; 6]));
        let mut rng = Seeder::new(8).derive("reb").rng();
        let (out, report) = rebalance_public(pop, 2, 5, &mut rng);
        assert_eq!(report.duplicated_classes, vec![1]);
        assert_eq!(counts_of(&out, 2), vec![8, 8]);
    }

    #[test]
    fn skew_reaches_requested_ratio() {
        let pop = population(&[80, 80, 80, 80]);
        let mut rng = Seeder::new(9).derive("skew").rng();
        let (out, _) = apply_skew(pop, 4, 9.0, &mut rng).unwrap();
        let counts = counts_of(&out, 4);
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().filter(|&&c| c > 0).min().unwrap();
        let ratio = max as f64 / min as f64;
        assert!((ratio - 9.0).abs() <= 9.0 / min as f64 + 0.05, "ratio {ratio}");
    }

    #[test]
    fn skew_ratio_one_balances_counts() {
        let pop = population(&[100, 50, 30, 70]);
        let mut rng = Seeder::new(10).derive("skew").rng();
        let (out, _) = apply_skew(pop, 4, 1.0, &mut rng).unwrap();
        let counts = counts_of(&out, 4);
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1, "{counts:?}");
    }

    #[test]
    fn skew_bookkeeping_conserves_counts() {
        let pop = population(&[60, 60]);
        let before = counts_of(&pop, 2);
        let mut rng = Seeder::new(11).derive("skew").rng();
        let (out, report) = apply_skew(pop, 2, 4.0, &mut rng).unwrap();
        let after = counts_of(&out, 2);
        for c in 0..2 {
            let added: usize = report
                .synthesized
                .iter()
                .filter(|&&(cls, _)| cls == c)
                .map(|&(_, n)| n)
                .sum();
            let removed: usize = report
                .removed
                .iter()
                .filter(|&&(cls, _)| cls == c)
                .map(|&(_, n)| n)
                .sum();
            assert_eq!(after[c], before[c] + added - removed);
        }
    }

    #[test]
    fn skew_rejects_ratio_below_one() {
        let pop = population(&[10, 10]);
        let mut rng = Seeder::new(12).derive("skew").rng();
        assert!(matches!(
            apply_skew(pop, 2, 0.5, &mut rng),
            Err(DataError::InvalidRatio { .. })
        ));
    }

    #[test]
    fn quality_gate_counts_matching_predictions() {
        let segs: Vec<LabeledSegment> = (0..10)
            .map(|i| LabeledSegment {
                x: vec![i as f32],
                public_label: i % 2,
                private_labels: vec![0],
                client_id: 0,
            })
            .collect();
        let public = |x: &[f32]| (x[0] as usize) % 2;
        let private = |_: &[f32]| 0usize;
        let ratio = quality_gate(&segs, &public, &private, 0);
        assert_eq!(ratio, 1.0);
        let wrong = |_: &[f32]| 1usize;
        let ratio = quality_gate(&segs, &public, &wrong, 0);
        assert_eq!(ratio, 0.0);
    }
}

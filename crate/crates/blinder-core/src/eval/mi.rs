//! Mutual information between continuous components and discrete labels via
//! the nearest-neighbor estimator for mixed pairs: for each sample, the
//! distance to its k-th nearest neighbor within the same class sets a radius,
//! and the number of neighbors of any class inside that radius enters a
//! digamma average. Negative estimates are clamped to zero.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std

use super::EvalError;

/// Per-component estimates plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    pub per_component: Vec<f64>,
    pub mean: f64,
}

/// Estimates MI (in nats) between each column of `components` and the labels.
///
/// `components` is row-major: one row per sample. Every class must have at
/// least two samples, and at least two classes must be present.
pub fn mutual_information(
    components: &[Vec<f64>],
    labels: &[usize],
    k: usize,
) -> Result<MiEstimate, EvalError> {
    let n = components.len();
    if n == 0 || labels.len() != n {
        return Err(EvalError::EmptySet);
    }
    if k == 0 {
        return Err(EvalError::Config("k must be positive".into()));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = alloc::vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 || present.iter().any(|&c| counts[c] < 2) {
        return Err(EvalError::DegenerateLabels);
    }

    let width = components[0].len();
    let mut per_component = Vec::with_capacity(width);
    for col in 0..width {
        let values: Vec<f64> = components.iter().map(|row| row[col]).collect();
        per_component.push(mi_column(&values, labels, &counts, k));
    }
    let mean = per_component.iter().sum::<f64>() / width.max(1) as f64;
    Ok(MiEstimate {
        per_component,
        mean,
    })
}

fn mi_column(values: &[f64], labels: &[usize], class_counts: &[usize], k: usize) -> f64 {
    let n = values.len();

    // globally sorted values for radius counting
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // per-class sorted value lists
    let mut by_class: Vec<Vec<f64>> = class_counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for (&v, &y) in values.iter().zip(labels) {
        by_class[y].push(v);
    }
    for list in &mut by_class {
        list.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    let mut sum_psi_k = 0.0f64;
    let mut sum_psi_m = 0.0f64;
    let mut sum_psi_nc = 0.0f64;
    for (&x, &y) in values.iter().zip(labels) {
        let class = &by_class[y];
        let ki = k.min(class.len() - 1);
        let radius = kth_neighbor_distance(class, x, ki);
        // neighbors of any class within the radius (closed ball), minus self
        let lo = sorted.partition_point(|&v| v < x - radius);
        let hi = sorted.partition_point(|&v| v <= x + radius);
        let m = (hi - lo).saturating_sub(1).max(ki);
        sum_psi_k += digamma(ki as f64);
        sum_psi_m += digamma(m as f64);
        sum_psi_nc += digamma(class.len() as f64);
    }
    let nf = n as f64;
    let mi = digamma(nf) - sum_psi_nc / nf + sum_psi_k / nf - sum_psi_m / nf;
    if mi < 0.0 {
        log::debug!("mi estimate {mi:.4} clamped to 0");
        0.0
    } else {
        mi
    }
}

/// Distance from `x` to its k-th nearest neighbor in `sorted` (excluding one
/// occurrence of `x` itself).
fn kth_neighbor_distance(sorted: &[f64], x: f64, k: usize) -> f64 {
    let pos = sorted.partition_point(|&v| v < x);
    // walk outward, skipping the first exact self-match
    let mut left = pos;
    let mut right = pos;
    let mut skipped_self = false;
    let mut found = 0usize;
    let mut dist = 0.0f64;
    while found < k {
        let left_d = if left > 0 {
            Some((x - sorted[left - 1]).abs())
        } else {
            None
        };
        let right_d = if right < sorted.len() {
            Some((sorted[right] - x).abs())
        } else {
            None
        };
        let take_left = match (left_d, right_d) {
            (Some(l), Some(r)) => l <= r,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        let d = if take_left {
            left -= 1;
            (x - sorted[left]).abs()
        } else {
            right += 1;
            (sorted[right - 1] - x).abs()
        };
        if !skipped_self && d == 0.0 {
            skipped_self = true;
            continue;
        }
        found += 1;
        dist = d;
    }
    dist
}

/// Digamma via the recurrence to push the argument above 10, then the
/// asymptotic series (absolute error below 1e-10).
pub fn digamma(mut x: f64) -> f64 {
    let mut result = 0.0;
    while x < 10.0 {
        result -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    result + x.ln() - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0))
}

//! Principal component analysis via Jacobi eigendecomposition of the sample
//! covariance. Small-dimension data (hundreds of features), f64 throughout.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std

use super::EvalError;

/// A fitted projection: centering mean plus the leading eigenvectors of the
/// covariance, ordered by decreasing explained variance.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One row per component.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Fraction of total variance per component; non-increasing, sums <= 1.
    pub explained_ratio: Vec<f64>,
}

impl Pca {
    /// Fits up to `n_components` components. If the data has lower rank the
    /// component list is truncated to the available rank (logged).
    pub fn fit(rows: &[Vec<f64>], n_components: usize) -> Result<Pca, EvalError> {
        let n = rows.len();
        if n <= n_components {
            return Err(EvalError::InsufficientSamples {
                needed: n_components,
                available: n,
            });
        }
        let dim = rows[0].len();
        let mut mean = alloc::vec![0.0; dim];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        // covariance (upper triangle, then mirrored)
        let mut cov = alloc::vec![alloc::vec![0.0f64; dim]; dim];
        let mut centered = alloc::vec![0.0f64; dim];
        for row in rows {
            for (c, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                let target = &mut cov[i];
                for (j, &cj) in centered.iter().enumerate().skip(i) {
                    target[j] += ci * cj;
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                cov[i][j] /= denom;
                cov[j][i] = cov[i][j];
            }
        }

        let (eigenvalues, eigenvectors) = jacobi_eigen(&mut cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

        let total: f64 = eigenvalues.iter().map(|&v| v.max(0.0)).sum();
        let rank_floor = total.max(1e-300) * 1e-12;
        let mut components = Vec::new();
        let mut explained_variance = Vec::new();
        for &idx in order.iter().take(n_components) {
            let ev = eigenvalues[idx];
            if ev <= rank_floor {
                log::info!(
                    "pca: rank deficient, keeping {} of {} requested components",
                    components.len(),
                    n_components
                );
                break;
            }
            explained_variance.push(ev);
            components.push(eigenvectors.iter().map(|row| row[idx]).collect());
        }
        let explained_ratio = explained_variance
            .iter()
            .map(|&v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Pca {
            mean,
            components,
            explained_variance,
            explained_ratio,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Projects one centered row onto the components.
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|comp| {
                comp.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(&c, (&v, &m))| c * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn project_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.project(r)).collect()
    }

    /// Inverse map: mean plus the component combination.
    pub fn reconstruct(&self, projected: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (comp, &p) in self.components.iter().zip(projected) {
            for (o, &c) in out.iter_mut().zip(comp) {
                *o += p * c;
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (destroyed in
/// place). Returns (eigenvalues, eigenvector matrix with vectors in columns).
fn jacobi_eigen(a: &mut [Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = alloc::vec![alloc::vec![0.0f64; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seeder;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn exact_rank_k_data_reconstructs_perfectly() {
        // rows live in a 2-dimensional subspace of R^5
        let mut rng = Seeder::new(1).derive("pca").rng();
        let basis = [
            [1.0, 0.5, -0.5, 0.25, 0.0],
            [0.0, 1.0, 1.0, -1.0, 0.5],
        ];
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a: f64 = rng.gen_range(-2.0..2.0);
                let b: f64 = rng.gen_range(-2.0..2.0);
                (0..5).map(|i| a * basis[0][i] + b * basis[1][i]).collect()
            })
            .collect();
        let pca = Pca::fit(&rows, 2).unwrap();
        assert_eq!(pca.n_components(), 2);
        for row in &rows {
            let rec = pca.reconstruct(&pca.project(row));
            for (u, w) in row.iter().zip(&rec) {
                assert!((u - w).abs() < 1e-9, "{u} vs {w}");
            }
        }
    }

    #[test]
    fn axis_aligned_data_recovers_axes_up_to_sign() {
        let mut rng = Seeder::new(2).derive("pca").rng();
        let scales = [3.0, 1.5, 0.5];
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                (0..3)
                    .map(|i| scales[i] * crate::rng::standard_normal::<f64, _>(&mut rng))
                    .collect()
            })
            .collect();
        let pca = Pca::fit(&rows, 3).unwrap();
        for (comp, expected_axis) in pca.components.iter().zip(0..3) {
            let mut max_idx = 0;
            for (i, &c) in comp.iter().enumerate() {
                if c.abs() > comp[max_idx].abs() {
                    max_idx = i;
                }
            }
            assert_eq!(max_idx, expected_axis);
            assert!(comp[max_idx].abs() > 0.99, "component not axis-aligned");
        }
        // explained variances close to the squared scales
        for (ev, s) in pca.explained_variance.iter().zip(scales) {
            assert!((ev - s * s).abs() < 0.15 * s * s, "{ev} vs {}", s * s);
        }
    }

    #[test]
    fn ratios_are_nonincreasing_and_sum_to_at_most_one() {
        let mut rng = Seeder::new(3).derive("pca").rng();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let pca = Pca::fit(&rows, 5).unwrap();
        let sum: f64 = pca.explained_ratio.iter().sum();
        assert!(sum <= 1.0 + 1e-9, "sum {sum}");
        for pair in pca.explained_ratio.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_truncates_components() {
        // rank-1 data, 3 components requested
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let a = i as f64 - 10.0;
                vec![a, 2.0 * a, -a]
            })
            .collect();
        let pca = Pca::fit(&rows, 3).unwrap();
        assert_eq!(pca.n_components(), 1);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 4]).collect();
        assert!(matches!(
            Pca::fit(&rows, 5),
            Err(EvalError::InsufficientSamples { .. })
        ));
    }
}

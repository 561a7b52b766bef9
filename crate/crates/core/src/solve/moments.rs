//! Group moments: means, population covariances, and rank-revealing
//! Cholesky-like factors used by the Gelbrich machinery.

use crate::instance::GroupedPopulation;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-group mean vectors, covariance matrices (population normalization
/// `1/m_a`), and pivoted factors `L_a` with `L_a L_a^T = Sigma_a`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMoments {
    pub means: Vec<Vec<f64>>,
    /// Row-major `kappa x kappa` covariance per group.
    pub covariances: Vec<Vec<f64>>,
    /// Row-major `kappa x rank` factor per group.
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Factor {
    pub kappa: usize,
    pub rank: usize,
    /// Row-major `kappa x rank`.
    pub l: Vec<f64>,
}

impl Factor {
    /// `L^T r`, length `rank`.
    pub fn transpose_apply(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.rank];
        for i in 0..self.kappa {
            for k in 0..self.rank {
                z[k] += self.l[i * self.rank + k] * r[i];
            }
        }
        z
    }

    /// Column `k` of `L` as a dense vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.kappa).map(|i| self.l[i * self.rank + k]).collect()
    }
}

/// Empirical group moments with the population normalization.
pub fn group_moments(population: &GroupedPopulation) -> Result<GroupMoments> {
    let kappa = population.dim();
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    let mut factors = Vec::new();
    for a in 0..population.group_count() {
        let members = population.group(a);
        let ma = members.len() as f64;
        let mut mean = vec![0.0; kappa];
        for &i in members {
            for (k, v) in population.scenario(i).iter().enumerate() {
                mean[k] += v / ma;
            }
        }
        let mut cov = vec![0.0; kappa * kappa];
        for &i in members {
            let s = population.scenario(i);
            for p in 0..kappa {
                for q in 0..kappa {
                    cov[p * kappa + q] += (s[p] - mean[p]) * (s[q] - mean[q]) / ma;
                }
            }
        }
        let factor = pivoted_cholesky(&cov, kappa)?;
        // Factor must reconstruct the covariance.
        for p in 0..kappa {
            for q in 0..kappa {
                let mut v = 0.0;
                for k in 0..factor.rank {
                    v += factor.l[p * factor.rank + k] * factor.l[q * factor.rank + k];
                }
                if (v - cov[p * kappa + q]).abs() > 1e-8 {
                    return Err(Error::domain(format!(
                        "cholesky reconstruction error {} at ({p},{q}) for group {a}",
                        (v - cov[p * kappa + q]).abs()
                    )));
                }
            }
        }
        means.push(mean);
        covariances.push(cov);
        factors.push(factor);
    }
    Ok(GroupMoments { means, covariances, factors })
}

/// Pivoted (rank-revealing) Cholesky for a symmetric PSD matrix; tolerates
/// exact rank deficiency.
fn pivoted_cholesky(a: &[f64], n: usize) -> Result<Factor> {
    // Symmetry sanity.
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-10 {
                return Err(Error::domain("covariance matrix is not symmetric"));
            }
        }
    }
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    // Columns of L in permuted row order; l[step][orig_row].
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0usize;
    for step in 0..n {
        // Pivot: the largest remaining diagonal.
        let (piv_pos, piv_val) = (step..n)
            .map(|p| (p, d[perm[p]]))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if piv_val <= tol {
            break;
        }
        perm.swap(step, piv_pos);
        let pivot = perm[step];
        let root = piv_val.sqrt();
        let mut col = vec![0.0; n];
        col[pivot] = root;
        for p in step + 1..n {
            let row = perm[p];
            let mut v = a[row * n + pivot];
            for prev in cols.iter() {
                v -= prev[row] * prev[pivot];
            }
            col[row] = v / root;
            d[row] -= col[row] * col[row];
        }
        cols.push(col);
        rank = step + 1;
    }
    let mut l = vec![0.0; n * rank];
    for (k, col) in cols.iter().enumerate() {
        for row in 0..n {
            l[row * rank + k] = col[row];
        }
    }
    Ok(Factor { kappa: n, rank, l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::GroupedPopulation;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_scenario_zero_covariance() {
        let pop = GroupedPopulation::new(
            vec![vec![1.0, 2.0], vec![0.0, 0.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let m = group_moments(&pop).unwrap();
        assert_eq!(m.means[0], vec![1.0, 2.0]);
        assert!(m.covariances[0].iter().all(|&v| v == 0.0));
        assert_eq!(m.factors[0].rank, 0);
    }

    #[test]
    fn scalar_population_variance() {
        let pop = GroupedPopulation::new(
            vec![vec![0.0], vec![2.0], vec![9.0]],
            vec!["a".into(), "a".into(), "b".into()],
        )
        .unwrap();
        let m = group_moments(&pop).unwrap();
        assert_relative_eq!(m.means[0][0], 1.0);
        // Population normalization: ((0-1)^2 + (2-1)^2) / 2 = 1.
        assert_relative_eq!(m.covariances[0][0], 1.0);
        assert_relative_eq!(m.factors[0].l[0], 1.0);
    }

    #[test]
    fn factor_reconstructs_random_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scenarios: Vec<Vec<f64>> =
            (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = vec!["a".into(), "a".into(), "a".into(), "a".into(), "b".into()];
        let pop = GroupedPopulation::new(scenarios, labels).unwrap();
        let m = group_moments(&pop).unwrap();
        let f = &m.factors[0];
        for p in 0..3 {
            for q in 0..3 {
                let mut v = 0.0;
                for k in 0..f.rank {
                    v += f.l[p * f.rank + k] * f.l[q * f.rank + k];
                }
                assert_relative_eq!(v, m.covariances[0][p * 3 + q], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_duplicated_features() {
        // Second feature is a copy of the first: covariance has rank 1.
        let pop = GroupedPopulation::new(
            vec![vec![1.0, 1.0], vec![3.0, 3.0], vec![0.0, 0.0]],
            vec!["a".into(), "a".into(), "b".into()],
        )
        .unwrap();
        let m = group_moments(&pop).unwrap();
        assert_eq!(m.factors[0].rank, 1);
    }
}

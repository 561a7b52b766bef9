//! Deterministic synthetic populations for the experiment protocols.

use crate::instance::GroupedPopulation;
use crate::Result;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Regression population: `kappa - 1` features drawn uniformly with
/// group-dependent ranges plus a sensitive-attribute component in `{-1, 1}`,
/// responses generated from a hidden coefficient vector with bounded
/// multiplicative noise.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub population: GroupedPopulation,
    pub responses: Vec<f64>,
    /// Hidden generating coefficients.
    pub x0: Vec<f64>,
}

/// Generates the hypothetical regression scheme: the first `ceil(m/2)`
/// individuals carry attribute `-1` with feature `j` from `Unif(0, j)`, the
/// rest carry `+1` with feature `j` from `Unif(0, j+2)`.
pub fn synth_regression(m: usize, kappa: usize, seed: u64) -> Result<RegressionData> {
    assert!(m >= 2 && kappa >= 2, "need m >= 2 and kappa >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = kappa / 2;
    let mut x0 = Vec::with_capacity(kappa);
    for _ in 0..half {
        x0.push(rng.random_range(-1.0..0.0));
    }
    for _ in 0..half.saturating_sub(1) {
        x0.push(rng.random_range(0.0..10.0));
    }
    while x0.len() < kappa {
        x0.push(0.0);
    }
    x0[kappa - 1] = 0.0;

    let first = m.div_ceil(2);
    let mut scenarios = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let minority = i < first;
        let mut xi = Vec::with_capacity(kappa);
        for j in 1..kappa {
            let hi = if minority { j as f64 } else { j as f64 + 2.0 };
            xi.push(rng.random_range(0.0..hi));
        }
        xi.push(if minority { -1.0 } else { 1.0 });
        scenarios.push(xi);
        labels.push(if minority { "-1".to_string() } else { "1".to_string() });
    }

    // Mixture mean of the features, for the noise magnitude.
    let mut mean = vec![0.0; kappa];
    for j in 1..kappa {
        let lo_mean = j as f64 / 2.0;
        let hi_mean = (j as f64 + 2.0) / 2.0;
        mean[j - 1] =
            (first as f64 * lo_mean + (m - first) as f64 * hi_mean) / m as f64;
    }
    mean[kappa - 1] = ((m - first) as f64 - first as f64) / m as f64;
    let signal: f64 = mean.iter().zip(&x0).map(|(a, b)| a * b).sum();

    let responses = scenarios
        .iter()
        .map(|xi| {
            let base: f64 = xi.iter().zip(&x0).map(|(a, b)| a * b).sum();
            base + rng.random_range(-0.1..0.1) * signal
        })
        .collect();

    Ok(RegressionData {
        population: GroupedPopulation::new(scenarios, labels)?,
        responses,
        x0,
    })
}

/// Knapsack population: integer weights from `Unif{1, 100}`; the first
/// `ceil(m/2)` items carry values from `Unif{w+10, w+30}`, the rest from
/// `Unif{w+20, w+60}`. Scenario `i` is the value vector `v_i e_i`.
#[derive(Debug, Clone)]
pub struct KnapsackData {
    pub population: GroupedPopulation,
    pub weights: Vec<u64>,
    pub values: Vec<u64>,
}

pub fn synth_knapsack(m: usize, seed: u64) -> Result<KnapsackData> {
    assert!(m >= 2, "need at least two items");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<u64> = (0..m).map(|_| rng.random_range(1..=100u64)).collect();
    let first = m.div_ceil(2);
    let values: Vec<u64> = (0..m)
        .map(|i| {
            let w = weights[i];
            if i < first {
                rng.random_range(w + 10..=w + 30)
            } else {
                rng.random_range(w + 20..=w + 60)
            }
        })
        .collect();
    let mut scenarios = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let mut xi = vec![0.0; m];
        xi[i] = values[i] as f64;
        scenarios.push(xi);
        labels.push(if i < first { "a".to_string() } else { "b".to_string() });
    }
    Ok(KnapsackData {
        population: GroupedPopulation::new(scenarios, labels)?,
        weights,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_scheme_is_deterministic() {
        let a = synth_regression(20, 10, 7).unwrap();
        let b = synth_regression(20, 10, 7).unwrap();
        assert_eq!(a.population, b.population);
        assert_eq!(a.responses, b.responses);
        let c = synth_regression(20, 10, 8).unwrap();
        assert_ne!(a.responses, c.responses);
    }

    #[test]
    fn regression_feature_ranges() {
        let d = synth_regression(40, 10, 3).unwrap();
        let first = 20;
        for (i, xi) in d.population.scenarios().iter().enumerate() {
            for j in 1..10 {
                let hi = if i < first { j as f64 } else { j as f64 + 2.0 };
                assert!(xi[j - 1] >= 0.0 && xi[j - 1] <= hi, "feature {j} out of range");
            }
            assert_eq!(xi[9].abs(), 1.0);
        }
        assert_eq!(d.population.group_size(0), 20);
        assert_eq!(d.population.group_size(1), 20);
    }

    #[test]
    fn regression_noise_is_bounded() {
        let d = synth_regression(60, 10, 11).unwrap();
        // Noise magnitude <= 0.1 |E[xi] . x0| by the stated law.
        let mut mean = vec![0.0; 10];
        for j in 1..10usize {
            mean[j - 1] = (30.0 * (j as f64 / 2.0) + 30.0 * ((j as f64 + 2.0) / 2.0)) / 60.0;
        }
        let signal: f64 = mean.iter().zip(&d.x0).map(|(a, b)| a * b).sum();
        for (xi, y) in d.population.scenarios().iter().zip(&d.responses) {
            let base: f64 = xi.iter().zip(&d.x0).map(|(a, b)| a * b).sum();
            assert!((y - base).abs() <= 0.1 * signal.abs() + 1e-12);
        }
    }

    #[test]
    fn knapsack_scheme_ranges() {
        let d = synth_knapsack(9, 5).unwrap();
        assert_eq!(d.population.group_size(0), 5);
        assert_eq!(d.population.group_size(1), 4);
        for (i, (&w, &v)) in d.weights.iter().zip(&d.values).enumerate() {
            assert!((1..=100).contains(&w));
            if i < 5 {
                assert!((w + 10..=w + 30).contains(&v));
            } else {
                assert!((w + 20..=w + 60).contains(&v));
            }
        }
    }
}

//! Full-dataset EM for a shared-covariance Gaussian mixture. Serves as the
//! reference point the online recursion is checked against.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{softmax, CholeskyFactor, SquareMatrix};
use crate::state::ClassTextEmbeddings;

#[derive(Debug, Clone)]
pub struct BatchEmOptions {
    /// Convergence threshold on the change of the mean per-sample
    /// log-likelihood between iterations.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub regularization_epsilon: f64,
}

impl Default for BatchEmOptions {
    fn default() -> Self {
        BatchEmOptions {
            tolerance: 1e-8,
            max_iterations: 500,
            regularization_epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchEmResult {
    pub means: Vec<Vec<f64>>,
    pub covariance: SquareMatrix,
    pub priors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean per-sample log-likelihood at the returned parameters.
    pub log_likelihood: f64,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Runs EM from means = text embeddings, Σ = I, uniform priors. `features`
/// and `text` must already be prepared (normalized or not) the same way as
/// for the online run.
pub fn batch_em(
    features: &[Vec<f64>],
    text: &ClassTextEmbeddings,
    options: &BatchEmOptions,
) -> Result<BatchEmResult> {
    let k = text.num_classes();
    let d = text.dim();
    if features.is_empty() {
        return Err(Error::invalid("batch EM needs at least one sample"));
    }
    if features.iter().any(|x| x.len() != d) {
        return Err(Error::invalid(
            "feature dimension does not match text embeddings",
        ));
    }
    let n = features.len();

    let mut means: Vec<Vec<f64>> = text.rows().to_vec();
    let mut covariance = SquareMatrix::identity(d);
    let mut priors = vec![1.0 / k as f64; k];
    let mut gamma = vec![vec![0.0; k]; n];
    let mut previous = f64::NEG_INFINITY;
    let mut log_likelihood = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut diff = vec![0.0; d];
    let mut scores = vec![0.0; k];

    while iterations < options.max_iterations {
        let mut regularized = covariance.clone();
        regularized.symmetrize();
        regularized
            .add_diagonal(options.regularization_epsilon * covariance.trace().abs() / d as f64);
        let factor = CholeskyFactor::factorize(&regularized)?;
        let normalizer = -0.5 * (d as f64 * (2.0 * PI).ln() + factor.log_determinant());

        let mut total = 0.0;
        for (x, g) in features.iter().zip(&mut gamma) {
            for (y, mean) in means.iter().enumerate() {
                for ((t, a), b) in diff.iter_mut().zip(x).zip(mean) {
                    *t = a - b;
                }
                scores[y] =
                    priors[y].ln() + normalizer - 0.5 * factor.inverse_quadratic_form(&diff);
            }
            total += log_sum_exp(&scores);
            g.copy_from_slice(&softmax(&scores));
        }
        log_likelihood = total / n as f64;
        iterations += 1;
        if (log_likelihood - previous).abs() < options.tolerance {
            converged = true;
            break;
        }
        previous = log_likelihood;

        for y in 0..k {
            let mass: f64 = gamma.iter().map(|g| g[y]).sum();
            priors[y] = (mass / n as f64).max(f64::MIN_POSITIVE);
            if mass > 0.0 {
                let mut m = vec![0.0; d];
                for (x, g) in features.iter().zip(&gamma) {
                    for (mi, xi) in m.iter_mut().zip(x) {
                        *mi += g[y] * xi;
                    }
                }
                m.iter_mut().for_each(|v| *v /= mass);
                means[y] = m;
            }
        }
        let mut cov = SquareMatrix::zeros(d);
        for (x, g) in features.iter().zip(&gamma) {
            for (mean, &gy) in means.iter().zip(g) {
                if gy == 0.0 {
                    continue;
                }
                for ((t, a), b) in diff.iter_mut().zip(x).zip(mean) {
                    *t = a - b;
                }
                cov.add_outer(gy, &diff);
            }
        }
        cov.scale(1.0 / n as f64);
        covariance = cov;
    }

    Ok(BatchEmResult {
        means,
        covariance,
        priors,
        iterations,
        converged,
        log_likelihood,
    })
}
